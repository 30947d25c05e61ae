//! Block paving of the torus, polymers, their neighbourhoods and the
//! reblocking maps between consecutive scales.
//!
//! A `k`-block is a translate of `[−(L^k−1)/2, (L^k−1)/2]^d` centred at a
//! point of `(L^k Z)^d`. Blocks at scale `k` are identified by the
//! natural-order index of their centre on the block grid of side `L^{N−k}`.

use std::collections::{BTreeSet, HashSet};

use gradlab_core::torus::TorusSpec;
use gradlab_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Dimension-dependent constants of the block geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeometryConstants {
    pub d: usize,
    /// Number of derivatives in the weight operators, `2⌊d/2⌋ + 3`.
    pub m: usize,
    /// Range of the neighbourhoods.
    pub r: usize,
}

impl GeometryConstants {
    pub fn new(d: usize) -> Self {
        let m = 2 * (d / 2) + 3;
        Self { d, m, r: m }
    }

    /// Same `M`, explicit range (for the alternative `2⌊d/3⌋ + 3` reading).
    pub fn with_range(d: usize, r: usize) -> Self {
        Self { r, ..Self::new(d) }
    }

    /// `2^d`, the small-set threshold.
    pub fn small_limit(&self) -> usize {
        1 << self.d
    }

    /// Radius of `X*` for `X ∈ 𝒫_k`.
    pub fn star_radius(&self, l: usize, k: usize) -> i64 {
        let p = self.small_limit() as i64;
        match k {
            0 => self.r as i64,
            1 => p + self.r as i64,
            _ => p * (l as i64).pow(k as u32 - 1),
        }
    }

    /// Radius of `X⁺`.
    pub fn plus_radius(&self, l: usize, k: usize) -> i64 {
        if k == 0 {
            self.r as i64
        } else {
            (l as i64).pow(k as u32)
        }
    }

    /// Radius of `B̂`.
    pub fn hat_radius(&self, l: usize, k: usize) -> i64 {
        let p = self.small_limit() as i64;
        if k == 0 {
            p + self.r as i64
        } else {
            p * (l as i64).pow(k as u32)
        }
    }

    /// `L₀ = max{2^{d+3} + 16R, 4d(2^d + R)}`.
    pub fn l0(&self) -> u64 {
        let p = 1u64 << self.d;
        let r = self.r as u64;
        (8 * p + 16 * r).max(4 * self.d as u64 * (p + r))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub name: String,
    pub required: u64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub l: u64,
    pub constants: GeometryConstants,
    pub l0: u64,
    pub checks: Vec<ConstraintCheck>,
    pub desk_regime: bool,
    /// All constraints hold, or the desk regime accepts the failures.
    pub accepted: bool,
    pub warnings: Vec<String>,
}

impl ConstraintReport {
    pub fn all_hold(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }
}

/// Evaluate the lower bounds on `L` required by the geometric, projection,
/// weight-function and smoothness arguments.
pub fn validate_constants(l: u64, constants: GeometryConstants, desk_regime: bool) -> ConstraintReport {
    let p = 1u64 << constants.d;
    let r = constants.r as u64;
    let d = constants.d as u64;
    let bounds = [
        ("odd L >= 5 (B+ does not wrap)", 5),
        ("L >= 2^d + R (projection bounds)", p + r),
        ("L >= 2^(d+1) + 4R (neighbourhood inclusions)", 2 * p + 4 * r),
        ("L >= 2^(d+3) + 16R (weight functions)", 8 * p + 16 * r),
        ("L >= 4d(2^d + R) (smoothness)", 4 * d * (p + r)),
    ];
    let mut checks: Vec<ConstraintCheck> = bounds
        .iter()
        .map(|(name, req)| ConstraintCheck { name: name.to_string(), required: *req, holds: l >= *req })
        .collect();
    checks[0].holds &= l % 2 == 1;
    let warnings: Vec<String> = checks
        .iter()
        .filter(|c| !c.holds)
        .map(|c| format!("{} fails at L = {l} (needs {})", c.name, c.required))
        .collect();
    let all = warnings.is_empty();
    ConstraintReport {
        l,
        constants,
        l0: constants.l0(),
        checks,
        desk_regime,
        accepted: all || desk_regime,
        warnings,
    }
}

/// A set of `k`-blocks, stored as sorted block ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Polymer {
    k: usize,
    blocks: Vec<usize>,
}

impl Polymer {
    pub fn scale(&self) -> usize {
        self.k
    }
    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }
    /// `|X|_k`.
    pub fn size(&self) -> usize {
        self.blocks.len()
    }
    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
    pub fn contains_block(&self, b: usize) -> bool {
        self.blocks.binary_search(&b).is_ok()
    }
    pub fn is_subset_of(&self, other: &Polymer) -> bool {
        self.k == other.k && self.blocks.iter().all(|b| other.contains_block(*b))
    }
    pub fn union(&self, other: &Polymer) -> Polymer {
        debug_assert_eq!(self.k, other.k);
        let set: BTreeSet<usize> = self.blocks.iter().chain(&other.blocks).copied().collect();
        Polymer { k: self.k, blocks: set.into_iter().collect() }
    }
    pub fn intersects(&self, other: &Polymer) -> bool {
        self.blocks.iter().any(|b| other.contains_block(*b))
    }
}

/// The Minkowski sum of a polymer with the cube `[−radius, radius]^d`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    pub base: Polymer,
    pub radius: i64,
}

/// Serialized polymer: scale plus centred block-grid coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolymerJson {
    pub scale: usize,
    pub blocks: Vec<Vec<i64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RangeCheck {
    pub distance: i64,
    pub required: f64,
    pub holds: bool,
}

/// The block paving of one torus at every scale `0 ≤ k ≤ N`.
#[derive(Debug, Clone)]
pub struct Geometry {
    torus: TorusSpec,
    constants: GeometryConstants,
}

impl Geometry {
    pub fn new(torus: &TorusSpec, constants: GeometryConstants) -> Result<Self> {
        if constants.d != torus.d() {
            return Err(Error::Mismatch(format!("constants for d = {} on a {}-torus", constants.d, torus.d())));
        }
        Ok(Self { torus: torus.clone(), constants })
    }

    pub fn torus(&self) -> &TorusSpec {
        &self.torus
    }
    pub fn constants(&self) -> &GeometryConstants {
        &self.constants
    }

    fn check_scale(&self, k: usize) -> Result<()> {
        if k > self.torus.n() {
            return Err(Error::InvalidParam(format!("scale {k} exceeds N = {}", self.torus.n())));
        }
        Ok(())
    }

    /// `L^k`.
    pub fn block_side(&self, k: usize) -> i64 {
        (self.torus.l() as i64).pow(k as u32)
    }

    /// `L^{N−k}`.
    pub fn grid_side(&self, k: usize) -> usize {
        self.torus.l().pow((self.torus.n() - k) as u32)
    }

    /// `L^{d(N−k)}`.
    pub fn block_count(&self, k: usize) -> usize {
        self.grid_side(k).pow(self.torus.d() as u32)
    }

    fn grid_wrap(&self, k: usize, c: i64) -> i64 {
        let s = self.grid_side(k) as i64;
        let r = c.rem_euclid(s);
        if r > (s - 1) / 2 {
            r - s
        } else {
            r
        }
    }

    fn grid_index(&self, k: usize, c: &[i64]) -> usize {
        let s = self.grid_side(k);
        c.iter().fold(0usize, |acc, &v| acc * s + v.rem_euclid(s as i64) as usize)
    }

    /// Centred block-grid coordinates of a block id.
    pub fn block_coords(&self, k: usize, id: usize) -> Vec<i64> {
        let s = self.grid_side(k);
        let d = self.torus.d();
        let mut c = vec![0i64; d];
        let mut rest = id;
        for a in (0..d).rev() {
            c[a] = self.grid_wrap(k, (rest % s) as i64);
            rest /= s;
        }
        c
    }

    pub fn block_id(&self, k: usize, grid: &[i64]) -> usize {
        self.grid_index(k, grid)
    }

    /// Site coordinates of the block centre.
    pub fn block_center(&self, k: usize, id: usize) -> Vec<i64> {
        let s = self.block_side(k);
        self.block_coords(k, id).iter().map(|c| c * s).collect()
    }

    /// The `k`-block containing a site (natural-order index).
    pub fn block_of(&self, k: usize, site: usize) -> usize {
        let s = self.block_side(k);
        let h = (s - 1) / 2;
        let c: Vec<i64> = self.torus.coords(site).iter().map(|&x| (x + h).div_euclid(s)).collect();
        self.grid_index(k, &c)
    }

    /// Natural-order site indices of a block.
    pub fn block_sites(&self, k: usize, id: usize) -> Vec<usize> {
        let s = self.block_side(k);
        let h = (s - 1) / 2;
        let center = self.block_center(k, id);
        cube_points(&center, h).iter().map(|p| self.torus.index_of(p)).collect()
    }

    /// The `(k+1)`-block containing a `k`-block.
    pub fn parent(&self, k: usize, id: usize) -> usize {
        let l = self.torus.l() as i64;
        let h = (l - 1) / 2;
        let c: Vec<i64> = self.block_coords(k, id).iter().map(|&x| (x + h).div_euclid(l)).collect();
        self.grid_index(k + 1, &c)
    }

    /// The `k`-blocks inside a `(k+1)`-block.
    pub fn children(&self, k: usize, parent: usize) -> Vec<usize> {
        let l = self.torus.l() as i64;
        let center: Vec<i64> = self.block_coords(k + 1, parent).iter().map(|c| c * l).collect();
        let mut ids: Vec<usize> = cube_points(&center, (l - 1) / 2).iter().map(|p| self.grid_index(k, p)).collect();
        ids.sort_unstable();
        ids
    }

    pub fn polymer(&self, k: usize, blocks: impl IntoIterator<Item = usize>) -> Result<Polymer> {
        self.check_scale(k)?;
        let n = self.block_count(k);
        let set: BTreeSet<usize> = blocks.into_iter().collect();
        if let Some(&b) = set.iter().next_back() {
            if b >= n {
                return Err(Error::InvalidParam(format!("block id {b} out of range at scale {k}")));
            }
        }
        Ok(Polymer { k, blocks: set.into_iter().collect() })
    }

    pub fn empty(&self, k: usize) -> Polymer {
        Polymer { k, blocks: Vec::new() }
    }

    pub fn whole(&self, k: usize) -> Polymer {
        Polymer { k, blocks: (0..self.block_count(k)).collect() }
    }

    pub fn polymer_from_coords(&self, k: usize, coords: &[Vec<i64>]) -> Result<Polymer> {
        if coords.iter().any(|c| c.len() != self.torus.d()) {
            return Err(Error::Mismatch("block coordinates of the wrong dimension".into()));
        }
        self.polymer(k, coords.iter().map(|c| self.grid_index(k, c)))
    }

    pub fn to_json(&self, x: &Polymer) -> PolymerJson {
        PolymerJson { scale: x.k, blocks: x.blocks.iter().map(|&b| self.block_coords(x.k, b)).collect() }
    }

    pub fn from_json(&self, j: &PolymerJson) -> Result<Polymer> {
        self.polymer_from_coords(j.scale, &j.blocks)
    }

    /// All sites of the polymer, sorted.
    pub fn sites(&self, x: &Polymer) -> Vec<usize> {
        let mut s: Vec<usize> = x.blocks.iter().flat_map(|&b| self.block_sites(x.k, b)).collect();
        s.sort_unstable();
        s
    }

    /// `∞`-distance between blocks measured on the block grid (minimal image).
    fn grid_distance(&self, k: usize, a: usize, b: usize) -> i64 {
        let ca = self.block_coords(k, a);
        let cb = self.block_coords(k, b);
        ca.iter().zip(&cb).map(|(x, y)| self.grid_wrap(k, x - y).abs()).max().unwrap_or(0)
    }

    /// Blocks touch (share a site pair at `∞`-distance at most one).
    pub fn blocks_adjacent(&self, k: usize, a: usize, b: usize) -> bool {
        self.grid_distance(k, a, b) <= 1
    }

    /// Connected components under `E_∞`, ordered by smallest block id.
    pub fn components(&self, x: &Polymer) -> Vec<Polymer> {
        let n = x.blocks.len();
        let mut label = vec![usize::MAX; n];
        let mut out = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            let c = out.len();
            label[start] = c;
            let mut stack = vec![start];
            let mut members = vec![x.blocks[start]];
            while let Some(i) = stack.pop() {
                for j in 0..n {
                    if label[j] == usize::MAX && self.blocks_adjacent(x.k, x.blocks[i], x.blocks[j]) {
                        label[j] = c;
                        stack.push(j);
                        members.push(x.blocks[j]);
                    }
                }
            }
            members.sort_unstable();
            out.push(Polymer { k: x.k, blocks: members });
        }
        out
    }

    pub fn is_connected(&self, x: &Polymer) -> bool {
        self.components(x).len() <= 1
    }

    /// `|X|_k ≤ 2^d` for a connected polymer.
    pub fn is_small(&self, x: &Polymer) -> Result<bool> {
        if !self.is_connected(x) {
            return Err(Error::InvalidParam("smallness is defined for connected polymers only".into()));
        }
        Ok(x.size() <= self.constants.small_limit())
    }

    /// `∞`-distance between two blocks measured in sites.
    pub fn block_distance(&self, k: usize, a: usize, b: usize) -> i64 {
        let s = self.block_side(k);
        let ca = self.block_coords(k, a);
        let cb = self.block_coords(k, b);
        ca.iter()
            .zip(&cb)
            .map(|(x, y)| {
                let g = self.grid_wrap(k, x - y).abs();
                if g == 0 {
                    0
                } else {
                    (g - 1) * s + 1
                }
            })
            .max()
            .unwrap_or(0)
    }

    /// `dist_∞(X, Y)` in sites; `i64::MAX` when either is empty.
    pub fn distance(&self, x: &Polymer, y: &Polymer) -> i64 {
        let mut best = i64::MAX;
        for &a in &x.blocks {
            for &b in &y.blocks {
                best = best.min(self.block_distance(x.k, a, b));
            }
        }
        best
    }

    /// Nonempty and every site pair at `∞`-distance greater than one.
    pub fn strictly_disjoint(&self, x: &Polymer, y: &Polymer) -> bool {
        !x.is_empty() && !y.is_empty() && self.distance(x, y) > 1
    }

    /// Smallest `(k+1)`-polymer containing `X`.
    pub fn closure(&self, x: &Polymer) -> Result<Polymer> {
        if x.k >= self.torus.n() {
            return Err(Error::InvalidParam(format!("no scale above {}", x.k)));
        }
        self.polymer(x.k + 1, x.blocks.iter().map(|&b| self.parent(x.k, b)))
    }

    pub fn star_radius(&self, k: usize) -> i64 {
        self.constants.star_radius(self.torus.l(), k)
    }

    pub fn plus_radius(&self, k: usize) -> i64 {
        self.constants.plus_radius(self.torus.l(), k)
    }

    pub fn hat_radius(&self, k: usize) -> i64 {
        self.constants.hat_radius(self.torus.l(), k)
    }

    /// Small neighbourhood `X*`.
    pub fn star(&self, x: &Polymer) -> Neighborhood {
        Neighborhood { base: x.clone(), radius: self.star_radius(x.k) }
    }

    /// Large neighbourhood `X⁺`.
    pub fn plus(&self, x: &Polymer) -> Neighborhood {
        Neighborhood { base: x.clone(), radius: self.plus_radius(x.k) }
    }

    /// `B̂` for a single block.
    pub fn hat(&self, k: usize, block: usize) -> Neighborhood {
        Neighborhood { base: Polymer { k, blocks: vec![block] }, radius: self.hat_radius(k) }
    }

    /// `∞`-distance from a site to a block.
    pub fn site_block_distance(&self, site: &[i64], k: usize, block: usize) -> i64 {
        let h = (self.block_side(k) - 1) / 2;
        let c = self.block_center(k, block);
        site.iter()
            .zip(&c)
            .map(|(&x, &y)| (self.torus.wrap_coord(x - y).abs() - h).max(0))
            .max()
            .unwrap_or(0)
    }

    pub fn in_neighborhood(&self, nb: &Neighborhood, site: &[i64]) -> bool {
        nb.base.blocks.iter().any(|&b| self.site_block_distance(site, nb.base.k, b) <= nb.radius)
    }

    /// Sites of a neighbourhood as sorted natural-order indices.
    pub fn neighborhood_sites(&self, nb: &Neighborhood) -> Vec<usize> {
        let side = self.torus.side() as i64;
        let h = (self.block_side(nb.base.k) - 1) / 2 + nb.radius;
        if 2 * h + 1 >= side {
            if nb.base.is_empty() {
                return Vec::new();
            }
            return (0..self.torus.volume()).collect();
        }
        let mut set = HashSet::new();
        for &b in &nb.base.blocks {
            let c = self.block_center(nb.base.k, b);
            for p in cube_points(&c, h) {
                set.insert(self.torus.index_of(&p));
            }
        }
        let mut v: Vec<usize> = set.into_iter().collect();
        v.sort_unstable();
        v
    }

    /// Site-level inclusion `A ⊆ B`, decided cube by cube: each cube of `A`
    /// is cut along the faces of the (periodic images of the) cubes of `B`
    /// and one point per cell is tested.
    pub fn neighborhood_subset(&self, a: &Neighborhood, b: &Neighborhood) -> bool {
        let side = self.torus.side() as i64;
        let half = (side - 1) / 2;
        let ha = ((self.block_side(a.base.k) - 1) / 2 + a.radius).min(half);
        let hb = (self.block_side(b.base.k) - 1) / 2 + b.radius;
        let d = self.torus.d();
        for &ba in &a.base.blocks {
            let ca = self.block_center(a.base.k, ba);
            // Boxes of B relative to the centre of this cube of A.
            let mut boxes: Vec<Vec<(i64, i64)>> = Vec::new();
            for &bb in &b.base.blocks {
                let cb = self.block_center(b.base.k, bb);
                let off: Vec<i64> = cb.iter().zip(&ca).map(|(y, x)| self.torus.wrap_coord(y - x)).collect();
                if 2 * hb + 1 >= side {
                    boxes.push(vec![(-half, half); d]);
                    continue;
                }
                for img in cube_points(&vec![0; d], 1) {
                    boxes.push(off.iter().zip(&img).map(|(o, s)| (o + s * side - hb, o + s * side + hb)).collect());
                }
            }
            let cuts: Vec<Vec<i64>> = (0..d)
                .map(|axis| {
                    let mut c: BTreeSet<i64> = BTreeSet::new();
                    c.insert(-ha);
                    for bx in &boxes {
                        for e in [bx[axis].0, bx[axis].1 + 1] {
                            if e > -ha && e <= ha {
                                c.insert(e);
                            }
                        }
                    }
                    c.into_iter().collect()
                })
                .collect();
            let mut idx = vec![0usize; d];
            loop {
                let p: Vec<i64> = (0..d).map(|axis| cuts[axis][idx[axis]]).collect();
                if !boxes.iter().any(|bx| bx.iter().zip(&p).all(|((lo, hi), x)| lo <= x && x <= hi)) {
                    return false;
                }
                let mut axis = d;
                loop {
                    if axis == 0 {
                        break;
                    }
                    axis -= 1;
                    if idx[axis] + 1 < cuts[axis].len() {
                        idx[axis] += 1;
                        break;
                    }
                    idx[axis] = 0;
                }
                if idx.iter().all(|&i| i == 0) {
                    break;
                }
            }
        }
        true
    }

    /// Lexicographically least site of a connected polymer, unwrapped
    /// around its first block so the choice commutes with translations.
    fn least_site(&self, x: &Polymer) -> Vec<i64> {
        let h = (self.block_side(x.k) - 1) / 2;
        let anchor = self.block_center(x.k, x.blocks[0]);
        let mut best: Option<Vec<i64>> = None;
        for &b in &x.blocks {
            let c = self.block_center(x.k, b);
            let corner: Vec<i64> = c.iter().zip(&anchor).map(|(&ci, &ai)| ai + self.torus.wrap_coord(ci - ai) - h).collect();
            if best.as_ref().is_none_or(|cur| corner < *cur) {
                best = Some(corner);
            }
        }
        best.expect("nonempty polymer")
    }

    /// `π_k`: large components go to their closure, each small nonempty
    /// component to the `(k+1)`-block containing its lexicographically least
    /// site.
    pub fn pi_map(&self, x: &Polymer) -> Result<Polymer> {
        if x.k >= self.torus.n() {
            return Err(Error::InvalidParam(format!("no scale above {}", x.k)));
        }
        let mut out = self.empty(x.k + 1);
        for comp in self.components(x) {
            let image = if comp.size() <= self.constants.small_limit() {
                let site = self.least_site(&comp);
                let idx = self.torus.index_of(&site);
                Polymer { k: x.k + 1, blocks: vec![self.block_of(x.k + 1, idx)] }
            } else {
                self.closure(&comp)?
            };
            out = out.union(&image);
        }
        Ok(out)
    }

    /// Translate by a whole number of `k`-blocks.
    pub fn translate(&self, x: &Polymer, grid_offset: &[i64]) -> Polymer {
        let mut blocks: Vec<usize> = x
            .blocks
            .iter()
            .map(|&b| {
                let c: Vec<i64> = self.block_coords(x.k, b).iter().zip(grid_offset).map(|(a, o)| a + o).collect();
                self.grid_index(x.k, &c)
            })
            .collect();
        blocks.sort_unstable();
        Polymer { k: x.k, blocks }
    }

    /// `dist_∞(U₁*, U₂*) ≥ L^{k+1}/2 + 1` for strictly disjoint polymers at
    /// scale `k+1 = U₁.scale()`.
    pub fn range_inequality(&self, u1: &Polymer, u2: &Polymer) -> Result<RangeCheck> {
        if u1.k != u2.k {
            return Err(Error::Mismatch("polymers at different scales".into()));
        }
        if !self.strictly_disjoint(u1, u2) {
            return Err(Error::InvalidParam("range inequality needs strictly disjoint polymers".into()));
        }
        let r = self.star_radius(u1.k);
        let distance = (self.distance(u1, u2) - 2 * r).max(0);
        let required = self.block_side(u1.k) as f64 / 2.0 + 1.0;
        Ok(RangeCheck { distance, required, holds: distance as f64 >= required })
    }

    /// Connected polymers of size `1..=max_size` whose lexicographically
    /// least block (in grid coordinates relative to `anchor`) is `anchor`.
    pub fn connected_polymers_at(&self, k: usize, anchor: usize, max_size: usize) -> Vec<Polymer> {
        let base = self.block_coords(k, anchor);
        let reach = self.grid_side(k) as i64;
        connected_shapes(self.torus.d(), max_size)
            .into_iter()
            .filter(|shape| shape.iter().all(|c| c.iter().all(|v| 2 * v.abs() < reach)))
            .filter_map(|shape| {
                let ids: BTreeSet<usize> = shape
                    .iter()
                    .map(|c| {
                        let g: Vec<i64> = c.iter().zip(&base).map(|(a, b)| a + b).collect();
                        self.grid_index(k, &g)
                    })
                    .collect();
                (ids.len() == shape.len()).then(|| Polymer { k, blocks: ids.into_iter().collect() })
            })
            .collect()
    }
}

/// Outcome of one family of geometric checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteCheck {
    pub name: String,
    pub cases: usize,
    pub violations: usize,
    /// First violating instance, as block-grid coordinates.
    pub example: Option<String>,
}

impl SuiteCheck {
    fn new(name: &str) -> Self {
        Self { name: name.to_string(), cases: 0, violations: 0, example: None }
    }

    fn record(&mut self, ok: bool, describe: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.violations += 1;
            if self.example.is_none() {
                self.example = Some(describe());
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometrySuiteReport {
    pub l: usize,
    pub n: usize,
    pub d: usize,
    pub r: usize,
    pub max_size: usize,
    pub polymers: usize,
    pub checks: Vec<SuiteCheck>,
}

impl GeometrySuiteReport {
    pub fn violations(&self) -> usize {
        self.checks.iter().map(|c| c.violations).sum()
    }
}

/// Exhaustive neighbourhood, reblocking and range checks over connected
/// polymers with at most `max_size` blocks.
///
/// Every inclusion is invariant under translations by whole `k`-blocks and
/// `π_k` commutes with translations by whole `(k+1)`-blocks (checked here as
/// well), so polymers are anchored at the `k`-blocks of one `(k+1)`-block.
pub fn geometry_suite(geom: &Geometry, max_size: usize) -> GeometrySuiteReport {
    let t = geom.torus();
    let (n, d) = (t.n(), t.d());
    let mut star_plus = SuiteCheck::new("X* within X+");
    let mut plus_star = SuiteCheck::new("X+ within Y* for small X meeting the (k+1)-polymer Y");
    let mut star_pi = SuiteCheck::new("X* within pi(X)*");
    let mut pi_cases = SuiteCheck::new("pi case table (closure if large, one meeting block if small, connected image)");
    let mut pi_shift = SuiteCheck::new("pi commutes with (k+1)-block translations");
    let mut range = SuiteCheck::new("range inequality for strictly disjoint (k+1)-polymers");
    let show = |x: &Polymer| format!("k={} {:?}", x.k, geom.to_json(x).blocks);
    let mut polymers = 0;
    for k in 0..=n {
        let anchors = if k < n { geom.children(k, geom.block_id(k + 1, &vec![0; d])) } else { vec![0] };
        for &anchor in &anchors {
            for x in geom.connected_polymers_at(k, anchor, max_size) {
                polymers += 1;
                star_plus.record(geom.neighborhood_subset(&geom.star(&x), &geom.plus(&x)), || show(&x));
                if k == n {
                    continue;
                }
                let closure = geom.closure(&x).expect("k < N");
                if x.size() <= geom.constants.small_limit() {
                    for &b in closure.blocks() {
                        let y = Polymer { k: k + 1, blocks: vec![b] };
                        plus_star.record(geom.neighborhood_subset(&geom.plus(&x), &geom.star(&y)), || format!("{} in block {b}", show(&x)));
                    }
                }
                let image = geom.pi_map(&x).expect("k < N");
                star_pi.record(geom.neighborhood_subset(&geom.star(&x), &geom.star(&image)), || show(&x));
                let case_ok = if x.size() > geom.constants.small_limit() {
                    image == closure
                } else {
                    image.size() == 1 && closure.contains_block(image.blocks[0])
                };
                pi_cases.record(case_ok && geom.is_connected(&image), || show(&x));
                for axis in 0..d {
                    let mut unit = vec![0i64; d];
                    unit[axis] = 1;
                    let fine: Vec<i64> = unit.iter().map(|u| u * t.l() as i64).collect();
                    let moved = geom.pi_map(&geom.translate(&x, &fine)).expect("k < N");
                    pi_shift.record(moved == geom.translate(&image, &unit), || format!("{} along axis {axis}", show(&x)));
                }
            }
        }
    }
    // The range inequality only sees the closest pair of blocks, so a
    // connected polymer against every single block covers all pairs.
    for k in 1..=n {
        for u1 in geom.connected_polymers_at(k, 0, max_size) {
            for b in 0..geom.block_count(k) {
                let u2 = Polymer { k, blocks: vec![b] };
                if !geom.strictly_disjoint(&u1, &u2) {
                    continue;
                }
                let check = geom.range_inequality(&u1, &u2).expect("strictly disjoint");
                range.record(check.holds, || {
                    format!("{} vs block {:?}: distance {} < {}", show(&u1), geom.block_coords(k, b), check.distance, check.required)
                });
            }
        }
    }
    GeometrySuiteReport {
        l: t.l(),
        n,
        d,
        r: geom.constants.r,
        max_size,
        polymers,
        checks: vec![star_plus, plus_star, star_pi, pi_cases, pi_shift, range],
    }
}

/// Points of the cube `center + [−h, h]^d` in row-major order.
fn cube_points(center: &[i64], h: i64) -> Vec<Vec<i64>> {
    let d = center.len();
    let mut out = Vec::with_capacity(((2 * h + 1) as usize).pow(d as u32));
    let mut off = vec![-h; d];
    loop {
        out.push(center.iter().zip(&off).map(|(c, o)| c + o).collect());
        let mut a = d;
        loop {
            if a == 0 {
                return out;
            }
            a -= 1;
            if off[a] < h {
                off[a] += 1;
                break;
            }
            off[a] = -h;
        }
    }
}

/// Fixed `E_∞`-connected shapes of `1..=max_size` cells in `Z^d`, each
/// listed once with the origin as its lexicographically least cell
/// (Redelmeier's enumeration).
pub fn connected_shapes(d: usize, max_size: usize) -> Vec<Vec<Vec<i64>>> {
    let origin = vec![0i64; d];
    let mut out = Vec::new();
    if max_size == 0 {
        return out;
    }
    let mut seen: HashSet<Vec<i64>> = HashSet::new();
    seen.insert(origin.clone());
    let mut poly = Vec::new();
    redelmeier(&mut poly, vec![origin], &mut seen, max_size, &mut out);
    out
}

fn redelmeier(
    poly: &mut Vec<Vec<i64>>,
    mut untried: Vec<Vec<i64>>,
    seen: &mut HashSet<Vec<i64>>,
    max_size: usize,
    out: &mut Vec<Vec<Vec<i64>>>,
) {
    while let Some(cell) = untried.pop() {
        poly.push(cell.clone());
        out.push(poly.clone());
        if poly.len() < max_size {
            let zero = vec![0i64; cell.len()];
            let mut fresh = Vec::new();
            for off in cube_points(&zero, 1) {
                let n: Vec<i64> = cell.iter().zip(&off).map(|(a, b)| a + b).collect();
                let allowed = n > zero;
                if allowed && !seen.contains(&n) {
                    fresh.push(n);
                }
            }
            for n in &fresh {
                seen.insert(n.clone());
            }
            let mut next = untried.clone();
            next.extend(fresh.iter().cloned());
            redelmeier(poly, next, seen, max_size, out);
            for n in &fresh {
                seen.remove(n);
            }
        }
        poly.pop();
    }
}
