//! Relevant Hamiltonians, polynomial block functionals, field norms and
//! their dual norms at zero field, the projection `Π₂` onto relevant
//! Hamiltonians, and the linear operators `A_k`, `B_k` of one step.
//!
//! Functionals are explicit sparse polynomials in the variables `v_i(x)`,
//! `x ∈ Z^d`. A block neighbourhood never wraps around the torus for the
//! sizes used here, so all local computations run on `Z^d` coordinates and
//! only the Gaussian kernels are evaluated on the torus.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use gradlab_core::fields::VectorField;
use gradlab_core::gaussian::{wick_moment, CovarianceKernel};
use gradlab_core::torus::{multi_diff, MultiIndex};
use gradlab_core::{Error, Result};
use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rg_geom::{Geometry, GeometryConstants, Polymer};

/// Taylor order of the norms, `r₀`.
pub const R0: usize = 3;

/// Largest polynomial degree handled.
pub const MAX_DEGREE: usize = 6;

/// `C(t, k)` for integer `t` of either sign; zero for negative `k`.
pub fn binomial(t: i64, k: i64) -> f64 {
    if k < 0 {
        return 0.0;
    }
    let mut v = 1.0;
    for m in 0..k {
        v *= (t - m) as f64 / (m + 1) as f64;
    }
    v
}

/// `b_α(x) = Π_a C(x_a, α_a)`.
pub fn binomial_basis(alpha: &MultiIndex, x: &[i64]) -> f64 {
    alpha.0.iter().zip(x).map(|(&a, &xa)| binomial(xa, a as i64)).product()
}

/// `b_{α'−α}(x)`, zero unless `α ≤ α'`.
fn basis_difference(upper: &MultiIndex, lower: &MultiIndex, x: &[i64]) -> f64 {
    upper
        .0
        .iter()
        .zip(&lower.0)
        .zip(x)
        .map(|((&u, &l), &xa)| binomial(xa, u as i64 - l as i64))
        .product()
}

/// Coefficients of `∇^α f(x) = Σ_{β ≤ α} c_β f(x + β)`.
pub fn difference_stencil(alpha: &MultiIndex) -> Vec<(Vec<i64>, f64)> {
    alpha
        .below()
        .into_iter()
        .map(|beta| {
            let sign = if (alpha.order() - beta.order()) % 2 == 0 { 1.0 } else { -1.0 };
            let c: f64 = alpha.0.iter().zip(&beta.0).map(|(&a, &b)| binomial(a as i64, b as i64)).product();
            (beta.0.iter().map(|&b| b as i64).collect(), sign * c)
        })
        .collect()
}

/// Scale parameters of the field norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub l: usize,
    pub d: usize,
    pub h: f64,
}

impl NormParams {
    pub fn new(l: usize, d: usize, h: f64) -> Result<Self> {
        if !(h >= 1.0) {
            return Err(Error::InvalidParam(format!("norm parameter h must be at least 1, got {h}")));
        }
        if l < 2 || d == 0 {
            return Err(Error::InvalidParam("need L >= 2 and d >= 1".into()));
        }
        Ok(Self { l, d, h })
    }

    /// `h_j = 2^j h`.
    pub fn h_scale(&self, j: usize) -> f64 {
        self.h * 2f64.powi(j as i32)
    }

    /// `𝔴_j(α) = h_j L^{−j(d+2|α|)/2}` for `|α| = order`.
    pub fn weight(&self, j: usize, order: usize) -> f64 {
        self.h_scale(j) * (self.l as f64).powf(-(j as f64) * (self.d + 2 * order) as f64 / 2.0)
    }

    /// Highest derivative order in the field norm, `⌊d/2⌋ + 1`.
    pub fn max_derivative(&self) -> usize {
        self.d / 2 + 1
    }
}

/// The variable `v_comp(site)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Var {
    pub site: Vec<i64>,
    pub comp: usize,
}

impl Var {
    pub fn new(site: Vec<i64>, comp: usize) -> Self {
        Self { site, comp }
    }

    fn shifted(&self, offset: &[i64]) -> Self {
        Self { site: self.site.iter().zip(offset).map(|(a, b)| a + b).collect(), comp: self.comp }
    }
}

/// `m!` of a sorted monomial: product of the factorials of multiplicities.
fn multiplicity_factorial(mono: &[Var]) -> f64 {
    let mut f = 1.0;
    let mut run = 1usize;
    for w in mono.windows(2) {
        if w[0] == w[1] {
            run += 1;
            f *= run as f64;
        } else {
            run = 1;
        }
    }
    f
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Sparse polynomial in the variables `v_i(x)`; monomials are sorted
/// multisets of variables.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialFunctional {
    d: usize,
    terms: BTreeMap<Vec<Var>, f64>,
}

impl PolynomialFunctional {
    pub fn zero(d: usize) -> Self {
        Self { d, terms: BTreeMap::new() }
    }

    pub fn constant(d: usize, c: f64) -> Self {
        let mut p = Self::zero(d);
        p.terms.insert(Vec::new(), c);
        p
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn add_term(&mut self, mut vars: Vec<Var>, coeff: f64) -> Result<()> {
        if vars.len() > MAX_DEGREE {
            return Err(Error::Order { order: vars.len(), max: MAX_DEGREE });
        }
        if vars.iter().any(|v| v.site.len() != self.d || v.comp >= self.d) {
            return Err(Error::Mismatch(format!("variable does not live on (R^{})^(Z^{})", self.d, self.d)));
        }
        vars.sort();
        *self.terms.entry(vars).or_insert(0.0) += coeff;
        Ok(())
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<Var>, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn degree(&self) -> usize {
        self.terms.keys().map(|m| m.len()).max().unwrap_or(0)
    }

    /// Monomials of degree `r`.
    pub fn order_terms(&self, r: usize) -> Vec<(Vec<Var>, f64)> {
        self.terms.iter().filter(|(m, _)| m.len() == r).map(|(m, &c)| (m.clone(), c)).collect()
    }

    /// `F(0)`.
    pub fn value_at_zero(&self) -> f64 {
        self.terms.get(&Vec::new()).copied().unwrap_or(0.0)
    }

    pub fn eval(&self, v: impl Fn(&Var) -> f64) -> f64 {
        self.terms.iter().map(|(m, &c)| c * m.iter().map(&v).product::<f64>()).sum()
    }

    pub fn sites(&self) -> BTreeSet<Vec<i64>> {
        self.terms.keys().flat_map(|m| m.iter().map(|v| v.site.clone())).collect()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { d: self.d, terms: self.terms.iter().map(|(m, &c)| (m.clone(), s * c)).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            *out.terms.entry(m.clone()).or_insert(0.0) += c;
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scaled(-1.0))
    }

    pub fn translated(&self, offset: &[i64]) -> Self {
        Self {
            d: self.d,
            terms: self.terms.iter().map(|(m, &c)| (m.iter().map(|v| v.shifted(offset)).collect(), c)).collect(),
        }
    }

    /// Expand every monomial `Π(x_a + y_a)` over subsets and keep the
    /// `x`-part as a monomial with weight `factor(y-part)`.
    fn expand(&self, mut factor: impl FnMut(&[Var]) -> Result<f64>) -> Result<Self> {
        let mut out = Self::zero(self.d);
        for (m, &c) in &self.terms {
            let n = m.len();
            for mask in 0u32..(1 << n) {
                let kept: Vec<Var> = (0..n).filter(|&t| mask & (1 << t) != 0).map(|t| m[t].clone()).collect();
                let rest: Vec<Var> = (0..n).filter(|&t| mask & (1 << t) == 0).map(|t| m[t].clone()).collect();
                let w = factor(&rest)?;
                if w != 0.0 {
                    *out.terms.entry(kept).or_insert(0.0) += c * w;
                }
            }
        }
        Ok(out)
    }

    /// `w ↦ F(v + w)`.
    pub fn shifted(&self, v: impl Fn(&Var) -> f64) -> Self {
        self.expand(|rest| Ok(rest.iter().map(&v).product())).expect("infallible")
    }

    /// `v ↦ E[F(v + η)]` for the centred Gaussian gradient field `η` with
    /// kernel `𝒞^∇`, by Wick's theorem.
    pub fn wick_integrate(&self, kernel: &CovarianceKernel) -> Result<Self> {
        let torus = &kernel.torus;
        if torus.d() != self.d {
            return Err(Error::Mismatch("kernel dimension differs from the functional".into()));
        }
        let mut cache: HashMap<Vec<Var>, f64> = HashMap::new();
        self.expand(|rest| {
            if rest.len() % 2 == 1 {
                return Ok(0.0);
            }
            if let Some(&v) = cache.get(rest) {
                return Ok(v);
            }
            let mono: Vec<(usize, usize)> = rest.iter().map(|v| (torus.index_of(&v.site), v.comp)).collect();
            let m = wick_moment(kernel, &mono)?;
            cache.insert(rest.to_vec(), m);
            Ok(m)
        })
    }
}

/// Random polynomial with a constant and `terms_per_degree` monomials of
/// each degree `1..=max_degree` over the given sites.
pub fn random_polynomial<R: Rng>(d: usize, sites: &[Vec<i64>], max_degree: usize, terms_per_degree: usize, rng: &mut R) -> PolynomialFunctional {
    let mut p = PolynomialFunctional::constant(d, rng.sample(StandardNormal));
    for deg in 1..=max_degree {
        for _ in 0..terms_per_degree {
            let vars = (0..deg).map(|_| Var::new(sites[rng.random_range(0..sites.len())].clone(), rng.random_range(0..d))).collect();
            p.add_term(vars, rng.sample(StandardNormal)).expect("valid variables");
        }
    }
    p
}

/// Test tensor of one order, with entries on ordered variable tuples.
#[derive(Debug, Clone, Default)]
pub struct TestTensor {
    pub order: usize,
    pub entries: HashMap<Vec<Var>, f64>,
}

impl TestTensor {
    pub fn scalar(c: f64) -> Self {
        let mut entries = HashMap::new();
        entries.insert(Vec::new(), c);
        Self { order: 0, entries }
    }

    pub fn point(vars: Vec<Var>, value: f64) -> Self {
        let mut entries = HashMap::new();
        let order = vars.len();
        entries.insert(vars, value);
        Self { order, entries }
    }

    /// `g₁ ⊗ ⋯ ⊗ g_r` from sparse factors.
    pub fn product(factors: &[HashMap<Var, f64>]) -> Self {
        let mut entries: HashMap<Vec<Var>, f64> = HashMap::new();
        entries.insert(Vec::new(), 1.0);
        for f in factors {
            let mut next = HashMap::new();
            for (tuple, &w) in &entries {
                for (v, &x) in f {
                    let mut t = tuple.clone();
                    t.push(v.clone());
                    next.insert(t, w * x);
                }
            }
            entries = next;
        }
        Self { order: factors.len(), entries }
    }
}

/// `Σ_r Tay_v^{(r)} F(g^{(r)})` with `Tay^{(r)}F(g) = (1/r!) Σ D^rF(v) g`.
pub fn taylor_pair(f: &PolynomialFunctional, v: impl Fn(&Var) -> f64, g: &[TestTensor]) -> Result<f64> {
    let shifted = f.shifted(v);
    let mut total = 0.0;
    for t in g {
        if t.order > R0 {
            return Err(Error::Order { order: t.order, max: R0 });
        }
        for (tuple, &x) in &t.entries {
            if tuple.len() != t.order {
                return Err(Error::Mismatch("test tensor entry of the wrong order".into()));
            }
            let mut key = tuple.clone();
            key.sort();
            if let Some(&c) = shifted.terms.get(&key) {
                total += c * multiplicity_factorial(&key) / factorial(t.order) * x;
            }
        }
    }
    Ok(total)
}

/// A finite set of sites of `Z^d`, typically a neighbourhood `X*`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDomain {
    d: usize,
    sites: Vec<Vec<i64>>,
    set: HashSet<Vec<i64>>,
}

impl LocalDomain {
    pub fn from_sites(d: usize, sites: impl IntoIterator<Item = Vec<i64>>) -> Self {
        let set: BTreeSet<Vec<i64>> = sites.into_iter().collect();
        let sites: Vec<Vec<i64>> = set.into_iter().collect();
        let set = sites.iter().cloned().collect();
        Self { d, sites, set }
    }

    /// `center + [−radius, radius]^d`.
    pub fn cube(center: &[i64], radius: i64) -> Self {
        Self::from_sites(center.len(), cube(center, radius))
    }

    pub fn d(&self) -> usize {
        self.d
    }
    pub fn sites(&self) -> &[Vec<i64>] {
        &self.sites
    }
    pub fn contains(&self, site: &[i64]) -> bool {
        self.set.contains(site)
    }
    pub fn len(&self) -> usize {
        self.sites.len()
    }
    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }
}

fn cube(center: &[i64], radius: i64) -> Vec<Vec<i64>> {
    let d = center.len();
    let mut out = Vec::new();
    let mut off = vec![-radius; d];
    loop {
        out.push(center.iter().zip(&off).map(|(c, o)| c + o).collect());
        let mut a = d;
        loop {
            if a == 0 {
                return out;
            }
            a -= 1;
            if off[a] < radius {
                off[a] += 1;
                break;
            }
            off[a] = -radius;
        }
    }
}

/// A `k`-block in `Z^d` with its neighbourhoods `B⁺` and `B*`.
#[derive(Debug, Clone)]
pub struct BlockFrame {
    pub k: usize,
    pub l: usize,
    pub center: Vec<i64>,
    pub block: Vec<Vec<i64>>,
    pub plus: LocalDomain,
    pub star: LocalDomain,
}

impl BlockFrame {
    pub fn new(constants: &GeometryConstants, l: usize, k: usize, center: Vec<i64>) -> Result<Self> {
        if l < 5 || l % 2 == 0 {
            return Err(Error::InvalidParam(format!("block frames need odd L >= 5, got {l}")));
        }
        if center.len() != constants.d {
            return Err(Error::Mismatch("block centre of the wrong dimension".into()));
        }
        let h = ((l as i64).pow(k as u32) - 1) / 2;
        let block = cube(&center, h);
        let plus = LocalDomain::cube(&center, h + constants.plus_radius(l, k));
        let star = LocalDomain::cube(&center, h + constants.star_radius(l, k));
        Ok(Self { k, l, center, block, plus, star })
    }

    /// Frame of a block of a torus geometry, in centred coordinates
    /// unwrapped around the block centre. Fails if `B⁺` or `B*` wraps.
    pub fn from_geometry(geom: &Geometry, k: usize, block: usize) -> Result<Self> {
        let t = geom.torus();
        let frame = Self::new(geom.constants(), t.l(), k, geom.block_center(k, block))?;
        let h = ((t.l() as i64).pow(k as u32) - 1) / 2;
        let reach = h + geom.plus_radius(k).max(geom.star_radius(k));
        if 2 * reach + 1 > t.side() as i64 {
            return Err(Error::InvalidParam(format!("block neighbourhood of width {} wraps a torus of side {}", 2 * reach + 1, t.side())));
        }
        Ok(frame)
    }

    pub fn d(&self) -> usize {
        self.center.len()
    }

    /// `|B| = L^{dk}`.
    pub fn volume(&self) -> usize {
        self.block.len()
    }

    pub fn translated(&self, offset: &[i64]) -> Self {
        let shift = |s: &Vec<i64>| -> Vec<i64> { s.iter().zip(offset).map(|(a, b)| a + b).collect() };
        Self {
            k: self.k,
            l: self.l,
            center: shift(&self.center),
            block: self.block.iter().map(shift).collect(),
            plus: LocalDomain::from_sites(self.d(), self.plus.sites.iter().map(shift)),
            star: LocalDomain::from_sites(self.d(), self.star.sites.iter().map(shift)),
        }
    }
}

/// `|v|_{j,X} = sup_{x ∈ X*, i, |α| ≤ ⌊d/2⌋+1} 𝔴_j(α)^{−1} |∇^α v_i(x)|`
/// for a vector field on the torus.
pub fn field_norm(v: &VectorField, x: &Polymer, geom: &Geometry, j: usize, params: &NormParams) -> Result<f64> {
    let t = geom.torus();
    if v.spec != *t {
        return Err(Error::Mismatch("field and geometry live on different tori".into()));
    }
    let sites = geom.neighborhood_sites(&geom.star(x));
    let mut best = 0.0f64;
    for comp in &v.comps {
        for alpha in MultiIndex::all(t.d(), 0, params.max_derivative()) {
            let dv = multi_diff(t, comp, &alpha, params.max_derivative())?;
            let w = params.weight(j, alpha.order());
            for &s in &sites {
                best = best.max(dv[s].abs() / w);
            }
        }
    }
    Ok(best)
}

/// Same norm for a field given pointwise on `Z^d`, over a local domain.
pub fn field_norm_local(v: impl Fn(&Var) -> f64, domain: &LocalDomain, j: usize, params: &NormParams) -> f64 {
    let d = domain.d();
    let mut best = 0.0f64;
    for alpha in MultiIndex::all(d, 0, params.max_derivative()) {
        let stencil = difference_stencil(&alpha);
        let w = params.weight(j, alpha.order());
        for x in domain.sites() {
            for i in 0..d {
                let val: f64 = stencil
                    .iter()
                    .map(|(beta, c)| c * v(&Var::new(x.iter().zip(beta).map(|(a, b)| a + b).collect(), i)))
                    .sum();
                best = best.max(val.abs() / w);
            }
        }
    }
    best
}

/// Per-order estimates of the dual norm `|F|_{j,X,0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualNorm {
    /// Exact for orders 0 and 1 (linear programme); for orders 2 and 3 the
    /// best product test tensor found, hence a lower bound.
    pub by_order: [f64; R0 + 1],
    /// Upper bound from the pointwise constraint `|g| ≤ 𝔴_j(0)^r` alone.
    pub upper: [f64; R0 + 1],
}

impl DualNorm {
    pub fn value(&self) -> f64 {
        self.by_order.iter().sum()
    }
    pub fn upper_value(&self) -> f64 {
        self.upper.iter().sum()
    }
}

/// Linear programmes over the unit ball of `|·|_{j,X}` restricted to one
/// vector component.
#[derive(Debug, Clone)]
pub struct DualNormSolver {
    params: NormParams,
    j: usize,
    domain: LocalDomain,
    ext: Vec<Vec<i64>>,
    ext_index: HashMap<Vec<i64>, usize>,
    /// `(site, stencil over ext indices, bound relative to 𝔴_j(0))`.
    rows: Vec<(Vec<(usize, f64)>, f64)>,
    starts: usize,
    seed: u64,
}

impl DualNormSolver {
    pub fn new(domain: &LocalDomain, params: &NormParams, j: usize) -> Self {
        let d = domain.d();
        let n = params.max_derivative();
        let mut ext_set: BTreeSet<Vec<i64>> = BTreeSet::new();
        let fwd = MultiIndex::all(d, 0, n);
        for x in domain.sites() {
            for beta in &fwd {
                ext_set.insert(x.iter().zip(&beta.0).map(|(a, &b)| a + b as i64).collect());
            }
        }
        let ext: Vec<Vec<i64>> = ext_set.into_iter().collect();
        let ext_index: HashMap<Vec<i64>, usize> = ext.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let w0 = params.weight(j, 0);
        let mut rows = Vec::new();
        for alpha in MultiIndex::all(d, 1, n) {
            let stencil = difference_stencil(&alpha);
            let bound = params.weight(j, alpha.order()) / w0;
            for x in domain.sites() {
                let row = stencil
                    .iter()
                    .map(|(beta, c)| (ext_index[&x.iter().zip(beta).map(|(a, b)| a + b).collect::<Vec<i64>>()], *c))
                    .collect();
                rows.push((row, bound));
            }
        }
        Self { params: *params, j, domain: domain.clone(), ext, ext_index, rows, starts: 3, seed: 0x5eed }
    }

    /// Number of starting points for the product searches (at least 1).
    pub fn with_starts(mut self, starts: usize, seed: u64) -> Self {
        self.starts = starts.max(1);
        self.seed = seed;
        self
    }

    pub fn domain(&self) -> &LocalDomain {
        &self.domain
    }

    /// `sup { Σ c(a) g(a) : |g|_{j,X} ≤ 1 }` and a maximiser (zero on
    /// components without coefficients).
    pub fn maximize_linear(&self, coeffs: &HashMap<Var, f64>) -> Result<(f64, HashMap<Var, f64>)> {
        let d = self.domain.d();
        let w0 = self.params.weight(self.j, 0);
        let mut total = 0.0;
        let mut arg = HashMap::new();
        for comp in 0..d {
            let mut obj = vec![0.0; self.ext.len()];
            let mut any = false;
            for (v, &c) in coeffs {
                if v.comp != comp || c == 0.0 {
                    continue;
                }
                if !self.domain.contains(&v.site) {
                    return Err(Error::InvalidParam(format!("functional depends on {:?} outside the domain", v.site)));
                }
                obj[self.ext_index[&v.site]] += c * w0;
                any = true;
            }
            if !any {
                continue;
            }
            let mut lp = Problem::new(OptimizationDirection::Maximize);
            let vars: Vec<_> = self
                .ext
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let bounds = if self.domain.contains(s) { (-1.0, 1.0) } else { (f64::NEG_INFINITY, f64::INFINITY) };
                    lp.add_var(obj[i], bounds)
                })
                .collect();
            for (row, bound) in &self.rows {
                let slack = lp.add_var(0.0, (-bound, *bound));
                let mut expr: Vec<(minilp::Variable, f64)> = row.iter().map(|&(i, c)| (vars[i], c)).collect();
                expr.push((slack, -1.0));
                lp.add_constraint(expr, ComparisonOp::Eq, 0.0);
            }
            let sol = lp.solve().map_err(|e| Error::Numerical(format!("dual norm LP: {e:?}")))?;
            total += sol.objective();
            for (i, s) in self.ext.iter().enumerate() {
                if self.domain.contains(s) {
                    arg.insert(Var::new(s.clone(), comp), sol[vars[i]] * w0);
                }
            }
        }
        Ok((total, arg))
    }

    fn constant_field(&self, signs: &[f64]) -> HashMap<Var, f64> {
        let w0 = self.params.weight(self.j, 0);
        let mut g = HashMap::new();
        for s in self.domain.sites() {
            for (i, &sg) in signs.iter().enumerate() {
                g.insert(Var::new(s.clone(), i), sg * w0);
            }
        }
        g
    }

    /// Best product tensor `g₁ ⊗ ⋯ ⊗ g_r` by alternating maximisation.
    fn product_search(&self, terms: &[(Vec<Var>, f64)], r: usize) -> Result<f64> {
        if terms.is_empty() {
            return Ok(0.0);
        }
        let d = self.domain.d();
        let perms = permutations(r);
        let norm = factorial(r);
        let value = |gs: &[HashMap<Var, f64>]| -> f64 {
            let mut s = 0.0;
            for (m, c) in terms {
                for p in &perms {
                    s += c * (0..r).map(|l| gs[p[l]].get(&m[l]).copied().unwrap_or(0.0)).product::<f64>();
                }
            }
            s / norm
        };
        let gradient = |gs: &[HashMap<Var, f64>], slot: usize| -> HashMap<Var, f64> {
            let mut g: HashMap<Var, f64> = HashMap::new();
            for (m, c) in terms {
                for p in &perms {
                    let row = (0..r).find(|&l| p[l] == slot).expect("permutation");
                    let rest: f64 = (0..r).filter(|&l| l != row).map(|l| gs[p[l]].get(&m[l]).copied().unwrap_or(0.0)).product();
                    *g.entry(m[row].clone()).or_insert(0.0) += c * rest / norm;
                }
            }
            g
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut best = 0.0f64;
        for start in 0..self.starts {
            let mut gs: Vec<HashMap<Var, f64>> = match start {
                0 => vec![self.constant_field(&vec![1.0; d]); r],
                1 => {
                    let signs: Vec<f64> = (0..d).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
                    vec![self.constant_field(&signs); r]
                }
                _ => {
                    let mut v = Vec::with_capacity(r);
                    for _ in 0..r {
                        let c: HashMap<Var, f64> = self
                            .domain
                            .sites()
                            .iter()
                            .flat_map(|s| (0..d).map(move |i| Var::new(s.clone(), i)))
                            .map(|v| (v, rng.sample::<f64, _>(StandardNormal)))
                            .collect();
                        v.push(self.maximize_linear(&c)?.1);
                    }
                    v
                }
            };
            let mut current = value(&gs);
            for _ in 0..40 {
                for slot in 0..r {
                    let g = gradient(&gs, slot);
                    gs[slot] = self.maximize_linear(&g)?.1;
                }
                let next = value(&gs);
                let done = next <= current + 1e-12 * next.abs().max(1e-300);
                current = next;
                if done {
                    break;
                }
            }
            best = best.max(current.abs());
        }
        Ok(best)
    }

    /// Per-order dual norm of the Taylor polynomial at zero.
    pub fn norm(&self, f: &PolynomialFunctional) -> Result<DualNorm> {
        let w0 = self.params.weight(self.j, 0);
        let mut by_order = [0.0; R0 + 1];
        let mut upper = [0.0; R0 + 1];
        by_order[0] = f.value_at_zero().abs();
        upper[0] = by_order[0];
        let lin: HashMap<Var, f64> = f.order_terms(1).into_iter().map(|(m, c)| (m[0].clone(), c)).collect();
        by_order[1] = self.maximize_linear(&lin)?.0;
        upper[1] = w0 * lin.values().map(|c| c.abs()).sum::<f64>();
        for r in 2..=R0 {
            let terms = f.order_terms(r);
            for (m, _) in &terms {
                if let Some(v) = m.iter().find(|v| !self.domain.contains(&v.site)) {
                    return Err(Error::InvalidParam(format!("functional depends on {:?} outside the domain", v.site)));
                }
            }
            upper[r] = w0.powi(r as i32) * terms.iter().map(|(_, c)| c.abs()).sum::<f64>();
            by_order[r] = self.product_search(&terms, r)?.min(upper[r]);
        }
        Ok(DualNorm { by_order, upper })
    }
}

fn permutations(r: usize) -> Vec<Vec<usize>> {
    if r == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(r - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, r - 1);
            out.push(q);
        }
    }
    out
}

/// Index set `𝔪 = {1..d} × {α : |α| ≤ ⌊d/2⌋}` in the storage order of
/// [`RelevantHamiltonian::a`].
pub fn relevant_index(d: usize) -> Vec<(usize, MultiIndex)> {
    let alphas = MultiIndex::all(d, 0, d / 2);
    (0..d).flat_map(|i| alphas.iter().map(move |a| (i, a.clone()))).collect()
}

/// Per-site coordinates `(λ, a, d)` of a relevant Hamiltonian at scale `k`:
/// `ℋ({x}, v) = λ + Σ_m a_m ∇^m v(x) + ½ Σ_{ij} d_ij v_i(x) v_j(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevantHamiltonian {
    pub k: usize,
    pub d: usize,
    pub lambda: f64,
    /// Linear coefficients in the order of [`relevant_index`].
    pub a: Vec<f64>,
    pub dmat: Vec<Vec<f64>>,
}

impl RelevantHamiltonian {
    pub fn zero(k: usize, d: usize) -> Self {
        Self { k, d, lambda: 0.0, a: vec![0.0; relevant_index(d).len()], dmat: vec![vec![0.0; d]; d] }
    }

    pub fn new(k: usize, d: usize, lambda: f64, a: Vec<f64>, dmat: Vec<Vec<f64>>) -> Result<Self> {
        if a.len() != relevant_index(d).len() || dmat.len() != d || dmat.iter().any(|r| r.len() != d) {
            return Err(Error::Mismatch("relevant Hamiltonian coordinates of the wrong shape".into()));
        }
        for i in 0..d {
            for j in 0..i {
                if (dmat[i][j] - dmat[j][i]).abs() > 1e-12 * (dmat[i][j].abs() + dmat[j][i].abs()).max(1.0) {
                    return Err(Error::InvalidParam("quadratic coefficients must be symmetric".into()));
                }
            }
        }
        Ok(Self { k, d, lambda, a, dmat })
    }

    pub fn random<R: Rng>(k: usize, d: usize, rng: &mut R) -> Self {
        let mut h = Self::zero(k, d);
        h.lambda = rng.sample(StandardNormal);
        for a in &mut h.a {
            *a = rng.sample(StandardNormal);
        }
        for i in 0..d {
            for j in 0..=i {
                let x: f64 = rng.sample(StandardNormal);
                h.dmat[i][j] = x;
                h.dmat[j][i] = x;
            }
        }
        h
    }

    /// `H(B, v) = Σ_{x ∈ B} ℋ({x}, v)` as a polynomial.
    pub fn as_functional(&self, frame: &BlockFrame) -> PolynomialFunctional {
        let d = self.d;
        let mut p = PolynomialFunctional::constant(d, frame.volume() as f64 * self.lambda);
        let index = relevant_index(d);
        for x in &frame.block {
            for (m, (i, alpha)) in index.iter().enumerate() {
                if self.a[m] == 0.0 {
                    continue;
                }
                for (beta, c) in difference_stencil(alpha) {
                    let site = x.iter().zip(&beta).map(|(a, b)| a + b).collect();
                    p.add_term(vec![Var::new(site, *i)], self.a[m] * c).expect("valid");
                }
            }
            for i in 0..d {
                for j in i..d {
                    let c = if i == j { 0.5 * self.dmat[i][i] } else { self.dmat[i][j] };
                    if c != 0.0 {
                        p.add_term(vec![Var::new(x.clone(), i), Var::new(x.clone(), j)], c).expect("valid");
                    }
                }
            }
        }
        p
    }

    /// Largest coordinate difference.
    pub fn max_diff(&self, other: &Self) -> f64 {
        let mut m = (self.lambda - other.lambda).abs();
        for (a, b) in self.a.iter().zip(&other.a) {
            m = m.max((a - b).abs());
        }
        for (ra, rb) in self.dmat.iter().zip(&other.dmat) {
            for (a, b) in ra.iter().zip(rb) {
                m = m.max((a - b).abs());
            }
        }
        m
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            k: self.k,
            d: self.d,
            lambda: self.lambda - other.lambda,
            a: self.a.iter().zip(&other.a).map(|(x, y)| x - y).collect(),
            dmat: self.dmat.iter().zip(&other.dmat).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x - y).collect()).collect(),
        }
    }

    /// Named coordinates for reports.
    pub fn coordinate_map(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert("lambda".to_string(), self.lambda);
        for (v, (i, alpha)) in self.a.iter().zip(relevant_index(self.d)) {
            m.insert(format!("a[{};{:?}]", i + 1, alpha.0), *v);
        }
        for i in 0..self.d {
            for j in 0..self.d {
                m.insert(format!("d[{},{}]", i + 1, j + 1), self.dmat[i][j]);
            }
        }
        m
    }
}

/// `‖H‖_{k,0} = L^{dk}|λ| + Σ_m h_k L^{k(d−2|α|)/2}|a_m| + ½ Σ_ij h_k² |d_ij|`.
pub fn hamiltonian_norm(h: &RelevantHamiltonian, params: &NormParams) -> f64 {
    let k = h.k as f64;
    let l = params.l as f64;
    let d = h.d as f64;
    let hk = params.h_scale(h.k);
    let mut s = l.powf(d * k) * h.lambda.abs();
    for (v, (_, alpha)) in h.a.iter().zip(relevant_index(h.d)) {
        s += hk * l.powf(k * (d - 2.0 * alpha.order() as f64) / 2.0) * v.abs();
    }
    s + 0.5 * hk * hk * h.dmat.iter().flatten().map(|x| x.abs()).sum::<f64>()
}

/// `Π₂ K(B)` with the binomial basis centred at the block centre.
pub fn pi2(k_fn: &PolynomialFunctional, frame: &BlockFrame) -> Result<RelevantHamiltonian> {
    pi2_with_origin(k_fn, frame, &frame.center.clone())
}

/// `Π₂ K(B)` with the binomial basis in coordinates relative to `origin`.
pub fn pi2_with_origin(k_fn: &PolynomialFunctional, frame: &BlockFrame, origin: &[i64]) -> Result<RelevantHamiltonian> {
    let d = frame.d();
    if k_fn.d() != d {
        return Err(Error::Mismatch("functional and block have different dimensions".into()));
    }
    if let Some(s) = k_fn.sites().into_iter().find(|s| !frame.plus.contains(s)) {
        return Err(Error::InvalidParam(format!("functional depends on {s:?} outside B+")));
    }
    let vol = frame.volume() as f64;
    let mut h = RelevantHamiltonian::zero(frame.k, d);
    h.lambda = k_fn.value_at_zero() / vol;
    for (m, c) in k_fn.order_terms(2) {
        let (i, j) = (m[0].comp, m[1].comp);
        if m[0] == m[1] {
            h.dmat[i][i] += 2.0 * c;
        } else {
            h.dmat[i][j] += c;
            h.dmat[j][i] += c;
        }
    }
    h.dmat.iter_mut().flatten().for_each(|x| *x /= vol);
    let rel = |x: &[i64]| -> Vec<i64> { x.iter().zip(origin).map(|(a, b)| a - b).collect() };
    let alphas = MultiIndex::all(d, 0, d / 2);
    let lin = k_fn.order_terms(1);
    let block_rel: Vec<Vec<i64>> = frame.block.iter().map(|x| rel(x)).collect();
    let index = relevant_index(d);
    for i in 0..d {
        // Lower-triangular system, multi-indices ordered by |α|.
        let mut sol: Vec<f64> = Vec::with_capacity(alphas.len());
        for (r, ap) in alphas.iter().enumerate() {
            let rhs: f64 = lin.iter().filter(|(m, _)| m[0].comp == i).map(|(m, c)| c * binomial_basis(ap, &rel(&m[0].site))).sum();
            let mut acc = rhs;
            for (c, a) in alphas.iter().enumerate().take(r) {
                if a.le(ap) {
                    let coeff: f64 = block_rel.iter().map(|x| basis_difference(ap, a, x)).sum();
                    acc -= coeff * sol[c];
                }
            }
            sol.push(acc / vol);
        }
        for (a_idx, val) in sol.into_iter().enumerate() {
            let m = index.iter().position(|(ii, al)| *ii == i && *al == alphas[a_idx]).expect("index");
            h.a[m] = val;
        }
    }
    Ok(h)
}

fn kernel_at_zero(kernel: &CovarianceKernel, i: usize, j: usize) -> f64 {
    kernel.grad_at(i, j, &vec![0; kernel.torus.d()])
}

fn check_kernel(h: &RelevantHamiltonian, kernel: &CovarianceKernel) -> Result<()> {
    if kernel.torus.d() != h.d {
        return Err(Error::Mismatch("kernel dimension differs from the Hamiltonian".into()));
    }
    Ok(())
}

/// `A_k`: integrate against the scale-`(k+1)` gradient field and reblock.
/// Per site only the constant moves: `λ' = λ + ½ Σ_ij d_ij 𝒞^∇_ij(0)`.
pub fn rg_a(h: &RelevantHamiltonian, kernel: &CovarianceKernel) -> Result<RelevantHamiltonian> {
    check_kernel(h, kernel)?;
    let mut out = h.clone();
    out.k = h.k + 1;
    for i in 0..h.d {
        for j in 0..h.d {
            out.lambda += 0.5 * h.dmat[i][j] * kernel_at_zero(kernel, i, j);
        }
    }
    Ok(out)
}

/// Inverse of [`rg_a`] on coordinates.
pub fn rg_a_inverse(h: &RelevantHamiltonian, kernel: &CovarianceKernel) -> Result<RelevantHamiltonian> {
    check_kernel(h, kernel)?;
    if h.k == 0 {
        return Err(Error::InvalidParam("no scale below 0".into()));
    }
    let mut out = h.clone();
    out.k = h.k - 1;
    for i in 0..h.d {
        for j in 0..h.d {
            out.lambda -= 0.5 * h.dmat[i][j] * kernel_at_zero(kernel, i, j);
        }
    }
    Ok(out)
}

/// `B_k K(B') = −Σ_{B ⊂ B'} Π₂(R_{k+1} K)(B)` for a translation-invariant
/// family given by its polynomial on the reference block `frame`. Returns
/// per-site coordinates at scale `k+1`.
pub fn rg_b(k_fn: &PolynomialFunctional, frame: &BlockFrame, kernel: &CovarianceKernel) -> Result<RelevantHamiltonian> {
    let integrated = k_fn.wick_integrate(kernel)?;
    let l = frame.l as i64;
    let side = l.pow(frame.k as u32);
    let parent: Vec<i64> = frame.center.iter().map(|&c| (c + (side * l - 1) / 2).div_euclid(side * l) * side * l).collect();
    let children = cube(&vec![0; frame.d()], (l - 1) / 2);
    let mut acc = RelevantHamiltonian::zero(frame.k + 1, frame.d());
    for child in &children {
        let offset: Vec<i64> = child.iter().zip(&parent).zip(&frame.center).map(|((c, p), f)| c * side + p - f).collect();
        let h = pi2(&integrated.translated(&offset), &frame.translated(&offset))?;
        acc.lambda += h.lambda;
        for (x, y) in acc.a.iter_mut().zip(&h.a) {
            *x += y;
        }
        for (r, s) in acc.dmat.iter_mut().zip(&h.dmat) {
            for (x, y) in r.iter_mut().zip(s) {
                *x += y;
            }
        }
    }
    let n = -(children.len() as f64);
    acc.lambda /= n;
    acc.a.iter_mut().for_each(|x| *x /= n);
    acc.dmat.iter_mut().flatten().for_each(|x| *x /= n);
    Ok(acc)
}

/// Settings of the contraction probe for `(1 − Π₂)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub d: usize,
    pub ls: Vec<usize>,
    pub k: usize,
    pub samples: usize,
    pub terms_per_degree: usize,
    pub h: f64,
    pub seed: u64,
    /// Starting points of the product-tensor searches.
    pub starts: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { d: 2, ls: vec![5, 9, 17], k: 0, samples: 6, terms_per_degree: 3, h: 2.0, seed: 17, starts: 3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeRow {
    pub l: usize,
    pub sample: usize,
    /// `|(1 − Π₂)K|_{k+1,B,0} / |K|_{k,B,0}`.
    pub ratio: f64,
    pub remainder: DualNorm,
    pub input: DualNorm,
    /// `‖Π₂K‖_{k,0} / |K|_{k,B,0}`.
    pub projection_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    pub config: ProbeConfig,
    pub rows: Vec<ProbeRow>,
    /// Largest ratio per `L`.
    pub max_ratio: Vec<(usize, f64)>,
    /// Least-squares slope of `log max_ratio` against `log L`.
    pub slope: f64,
    /// `d/2 + ⌊d/2⌋ + 1`.
    pub exponent: f64,
    /// Smallest `C` with `r(L) ≤ C L^{−exponent}` for every row.
    pub constant: f64,
    /// Largest `‖Π₂K‖_{k,0} / |K|_{k,B,0}` per `L`.
    pub projection_constant: Vec<(usize, f64)>,
    /// Largest ratio over relevant inputs (zero up to rounding).
    pub relevant_ratio: f64,
}

/// Measure `|(1 − Π₂)K|_{k+1,B,0} / |K|_{k,B,0}` for random degree-3
/// functionals on one block over several `L`.
pub fn contraction_probe(cfg: &ProbeConfig) -> Result<ProbeReport> {
    let constants = GeometryConstants::new(cfg.d);
    let exponent = cfg.d as f64 / 2.0 + (cfg.d / 2) as f64 + 1.0;
    let mut rows = Vec::new();
    let mut max_ratio = Vec::new();
    let mut projection_constant = Vec::new();
    let mut relevant_ratio = 0.0f64;
    for &l in &cfg.ls {
        if (l as u64) < (constants.small_limit() + constants.r) as u64 && l < 5 {
            return Err(Error::InvalidParam(format!("L = {l} too small for a block frame")));
        }
        let params = NormParams::new(l, cfg.d, cfg.h)?;
        let frame = BlockFrame::new(&constants, l, cfg.k, vec![0; cfg.d])?;
        let domain = frame.star.clone();
        let inner = DualNormSolver::new(&domain, &params, cfg.k).with_starts(cfg.starts, cfg.seed);
        let outer = DualNormSolver::new(&domain, &params, cfg.k + 1).with_starts(cfg.starts, cfg.seed);
        let sites: Vec<Vec<i64>> = domain.sites().iter().filter(|s| frame.plus.contains(s)).cloned().collect();
        let mut worst = 0.0f64;
        let mut worst_proj = 0.0f64;
        for s in 0..cfg.samples {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(s as u64));
            let k_fn = random_polynomial(cfg.d, &sites, R0, cfg.terms_per_degree, &mut rng);
            let h = pi2(&k_fn, &frame)?;
            let remainder = k_fn.sub(&h.as_functional(&frame));
            let input = inner.norm(&k_fn)?;
            let rem = outer.norm(&remainder)?;
            let ratio = rem.value() / input.value();
            let projection_ratio = hamiltonian_norm(&h, &params) / input.value();
            worst = worst.max(ratio);
            worst_proj = worst_proj.max(projection_ratio);
            rows.push(ProbeRow { l, sample: s, ratio, remainder: rem, input, projection_ratio });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xfeed);
        for _ in 0..3 {
            let h = RelevantHamiltonian::random(cfg.k, cfg.d, &mut rng);
            let f = h.as_functional(&frame);
            let rem = f.sub(&pi2(&f, &frame)?.as_functional(&frame));
            relevant_ratio = relevant_ratio.max(outer.norm(&rem)?.value() / inner.norm(&f)?.value());
        }
        max_ratio.push((l, worst));
        projection_constant.push((l, worst_proj));
    }
    let slope = log_log_slope(&max_ratio);
    let constant = rows.iter().map(|r| r.ratio * (r.l as f64).powf(exponent)).fold(0.0, f64::max);
    Ok(ProbeReport { config: cfg.clone(), rows, max_ratio, slope, exponent, constant, projection_constant, relevant_ratio })
}

fn log_log_slope(points: &[(usize, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|(l, _)| (*l as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, r)| r.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
