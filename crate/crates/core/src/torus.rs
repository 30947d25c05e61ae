//! The discrete torus `(Z / L^N Z)^d`, its centered coordinates and the
//! multi-index difference calculus on scalar lattice functions.
//!
//! Lattice functions are plain slices in *natural order*: the site with
//! centered coordinates `x` sits at index `Σ_a (x_a mod side) · side^(d-1-a)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on multi-index orders (three derivatives for the norms plus
/// three more for their regularity).
pub const DEFAULT_MAX_ORDER: usize = 6;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusSpec {
    l: usize,
    n: usize,
    d: usize,
    side: usize,
    volume: usize,
}

impl TorusSpec {
    /// `l` must be odd and larger than 3. `d = 1` is accepted for the small
    /// one-dimensional checks used throughout the tests.
    pub fn new(l: usize, n: usize, d: usize) -> Result<Self> {
        if l <= 3 || l % 2 == 0 {
            return Err(Error::InvalidParam(format!("L must be odd and > 3, got {l}")));
        }
        if n == 0 {
            return Err(Error::InvalidParam("N must be positive".into()));
        }
        if d == 0 {
            return Err(Error::InvalidParam("d must be positive".into()));
        }
        let side = l
            .checked_pow(n as u32)
            .ok_or_else(|| Error::InvalidParam("L^N overflows".into()))?;
        let volume = side
            .checked_pow(d as u32)
            .ok_or_else(|| Error::InvalidParam("L^(dN) overflows".into()))?;
        Ok(Self { l, n, d, side, volume })
    }

    pub fn l(&self) -> usize {
        self.l
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn d(&self) -> usize {
        self.d
    }
    /// `L^N`.
    pub fn side(&self) -> usize {
        self.side
    }
    /// Number of sites `L^(dN)`.
    pub fn volume(&self) -> usize {
        self.volume
    }
    /// Largest centered coordinate `(L^N - 1) / 2`.
    pub fn half(&self) -> i64 {
        (self.side as i64 - 1) / 2
    }

    /// Centered representative of a single coordinate.
    pub fn wrap_coord(&self, c: i64) -> i64 {
        let s = self.side as i64;
        let r = c.rem_euclid(s);
        if r > self.half() {
            r - s
        } else {
            r
        }
    }

    pub fn wrap(&self, raw: &[i64]) -> LatticeSite {
        LatticeSite {
            side: self.side,
            coords: raw.iter().map(|&c| self.wrap_coord(c)).collect(),
        }
    }

    pub fn origin(&self) -> LatticeSite {
        LatticeSite { side: self.side, coords: vec![0; self.d] }
    }

    /// Stride of axis `a` in natural order.
    pub fn stride(&self, axis: usize) -> usize {
        self.side.pow((self.d - 1 - axis) as u32)
    }

    /// Natural-order index of raw (possibly unwrapped) coordinates.
    pub fn index_of(&self, raw: &[i64]) -> usize {
        let s = self.side as i64;
        raw.iter().fold(0usize, |acc, &c| acc * self.side + c.rem_euclid(s) as usize)
    }

    pub fn index(&self, site: &LatticeSite) -> usize {
        self.index_of(&site.coords)
    }

    /// Centered coordinates of a natural-order index.
    pub fn coords(&self, mut idx: usize) -> Vec<i64> {
        let mut c = vec![0i64; self.d];
        for a in (0..self.d).rev() {
            c[a] = self.wrap_coord((idx % self.side) as i64);
            idx /= self.side;
        }
        c
    }

    pub fn site(&self, idx: usize) -> LatticeSite {
        LatticeSite { side: self.side, coords: self.coords(idx) }
    }

    /// Index of the site `idx + step·e_axis`.
    pub fn shift(&self, idx: usize, axis: usize, step: i64) -> usize {
        let stride = self.stride(axis);
        let c = (idx / stride) % self.side;
        let s = self.side as i64;
        let nc = (c as i64 + step).rem_euclid(s) as usize;
        idx + nc * stride - c * stride
    }

    /// Index of `idx + offset`.
    pub fn translate(&self, idx: usize, offset: &[i64]) -> usize {
        let mut j = idx;
        for (a, &o) in offset.iter().enumerate() {
            if o != 0 {
                j = self.shift(j, a, o);
            }
        }
        j
    }

    /// Table `t[idx] = idx + step·e_axis` for every site.
    pub fn shift_table(&self, axis: usize, step: i64) -> Vec<usize> {
        (0..self.volume).map(|i| self.shift(i, axis, step)).collect()
    }

    /// Natural-order indices listed in centered row-major order (axis 0
    /// slowest), the order used for serialized snapshots.
    pub fn centered_order(&self) -> Vec<usize> {
        let h = self.half();
        let mut out = Vec::with_capacity(self.volume);
        let mut c = vec![-h; self.d];
        loop {
            out.push(self.index_of(&c));
            let mut a = self.d;
            loop {
                if a == 0 {
                    return out;
                }
                a -= 1;
                if c[a] < h {
                    c[a] += 1;
                    break;
                }
                c[a] = -h;
            }
        }
    }

    pub fn check_axis(&self, axis: usize) -> Result<()> {
        if axis >= self.d {
            Err(Error::Axis { axis, d: self.d })
        } else {
            Ok(())
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.volume {
            Err(Error::Mismatch(format!("function has {len} values, torus has {}", self.volume)))
        } else {
            Ok(())
        }
    }

    /// `∞`-distance between sites, minimised over periodic images.
    pub fn distance(&self, x: &LatticeSite, y: &LatticeSite) -> Result<i64> {
        if x.side != self.side || y.side != self.side || x.coords.len() != self.d || y.coords.len() != self.d {
            return Err(Error::Mismatch("sites belong to a different torus".into()));
        }
        Ok(self.distance_raw(&x.coords, &y.coords))
    }

    pub fn distance_raw(&self, x: &[i64], y: &[i64]) -> i64 {
        x.iter().zip(y).map(|(&a, &b)| self.wrap_coord(a - b).abs()).max().unwrap_or(0)
    }
}

/// A site in centered coordinates, tagged with the side length of its torus.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeSite {
    side: usize,
    coords: Vec<i64>,
}

impl LatticeSite {
    pub fn coords(&self) -> &[i64] {
        &self.coords
    }
}

/// `α ∈ N_0^d`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn zero(d: usize) -> Self {
        Self(vec![0; d])
    }

    pub fn unit(d: usize, axis: usize) -> Self {
        let mut a = vec![0; d];
        a[axis] = 1;
        Self(a)
    }

    pub fn order(&self) -> usize {
        self.0.iter().map(|&a| a as usize).sum()
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// `α!`.
    pub fn factorial(&self) -> f64 {
        self.0.iter().map(|&a| (1..=a).map(f64::from).product::<f64>()).product()
    }

    pub fn add(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// Componentwise `β ≤ α`.
    pub fn le(&self, other: &Self) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    /// All multi-indices with `min ≤ |α| ≤ max`, ordered by `|α|` then
    /// lexicographically (descending in the first coordinate).
    pub fn all(d: usize, min: usize, max: usize) -> Vec<Self> {
        let mut out = Vec::new();
        for ord in min..=max {
            let mut cur = vec![0u32; d];
            compositions(d, ord, 0, &mut cur, &mut out);
        }
        out
    }

    /// All `β ≤ α`.
    pub fn below(&self) -> Vec<Self> {
        let mut out = vec![Self(Vec::new())];
        for &a in &self.0 {
            let mut next = Vec::with_capacity(out.len() * (a as usize + 1));
            for b in &out {
                for v in 0..=a {
                    let mut c = b.0.clone();
                    c.push(v);
                    next.push(Self(c));
                }
            }
            out = next;
        }
        out
    }
}

fn compositions(d: usize, remaining: usize, pos: usize, cur: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
    if d == 0 {
        if remaining == 0 {
            out.push(MultiIndex(Vec::new()));
        }
        return;
    }
    if pos == d - 1 {
        cur[pos] = remaining as u32;
        out.push(MultiIndex(cur.clone()));
        return;
    }
    for v in (0..=remaining).rev() {
        cur[pos] = v as u32;
        compositions(d, remaining - v, pos + 1, cur, out);
    }
    cur[pos] = 0;
}

/// `(∇_i f)(x) = f(x + e_i) − f(x)`.
pub fn forward_diff(spec: &TorusSpec, f: &[f64], axis: usize) -> Result<Vec<f64>> {
    spec.check_axis(axis)?;
    spec.check_len(f.len())?;
    Ok((0..spec.volume).map(|x| f[spec.shift(x, axis, 1)] - f[x]).collect())
}

/// `(∇*_i f)(x) = f(x − e_i) − f(x)`, the adjoint of [`forward_diff`].
pub fn backward_diff(spec: &TorusSpec, f: &[f64], axis: usize) -> Result<Vec<f64>> {
    spec.check_axis(axis)?;
    spec.check_len(f.len())?;
    Ok((0..spec.volume).map(|x| f[spec.shift(x, axis, -1)] - f[x]).collect())
}

/// `∇^α f = ∇_1^{α_1} ⋯ ∇_d^{α_d} f`.
pub fn multi_diff(spec: &TorusSpec, f: &[f64], alpha: &MultiIndex, max_order: usize) -> Result<Vec<f64>> {
    if alpha.dim() != spec.d {
        return Err(Error::Mismatch(format!("multi-index of length {} on a {}-torus", alpha.dim(), spec.d)));
    }
    if alpha.order() > max_order {
        return Err(Error::Order { order: alpha.order(), max: max_order });
    }
    spec.check_len(f.len())?;
    let mut g = f.to_vec();
    for (axis, &a) in alpha.0.iter().enumerate() {
        for _ in 0..a {
            g = forward_diff(spec, &g, axis)?;
        }
    }
    Ok(g)
}

/// Standard scalar product `Σ_x f(x) g(x)`.
pub fn dot(f: &[f64], g: &[f64]) -> f64 {
    f.iter().zip(g).map(|(a, b)| a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_examples() {
        let t = TorusSpec::new(5, 1, 1).unwrap();
        assert_eq!(t.wrap(&[3]).coords(), &[-2]);
        assert_eq!(t.wrap(&[5]).coords(), &[0]);
        assert_eq!(t.wrap(&[-2]).coords(), &[-2]);
        let t2 = TorusSpec::new(5, 2, 2).unwrap();
        assert_eq!(t2.wrap(&[25, 0]), t2.origin());
    }

    #[test]
    fn distance_examples() {
        let t = TorusSpec::new(5, 1, 1).unwrap();
        let a = t.wrap(&[-2]);
        let b = t.wrap(&[2]);
        assert_eq!(t.distance(&a, &b).unwrap(), 1);
        assert_eq!(t.distance(&a, &a).unwrap(), 0);
        let other = TorusSpec::new(7, 1, 1).unwrap();
        assert!(t.distance(&a, &other.wrap(&[1])).is_err());
    }

    #[test]
    fn rejects_bad_side() {
        assert!(TorusSpec::new(3, 1, 2).is_err());
        assert!(TorusSpec::new(6, 1, 2).is_err());
        assert!(TorusSpec::new(5, 0, 2).is_err());
    }

    #[test]
    fn index_roundtrip() {
        let t = TorusSpec::new(5, 1, 3).unwrap();
        for i in 0..t.volume() {
            assert_eq!(t.index(&t.site(i)), i);
        }
        let order = t.centered_order();
        assert_eq!(order.len(), t.volume());
        assert_eq!(t.coords(order[0]), vec![-2, -2, -2]);
        assert_eq!(t.coords(order[1]), vec![-2, -2, -1]);
    }

    #[test]
    fn indicator_derivatives() {
        let t = TorusSpec::new(5, 1, 1).unwrap();
        let mut f = vec![0.0; 5];
        f[t.index_of(&[0])] = 1.0;
        let g = forward_diff(&t, &f, 0).unwrap();
        for x in -2..=2i64 {
            let expect = match x {
                -1 => 1.0,
                0 => -1.0,
                _ => 0.0,
            };
            assert_eq!(g[t.index_of(&[x])], expect);
        }
        let lap = backward_diff(&t, &g, 0).unwrap();
        assert_eq!(lap[t.index_of(&[0])], 2.0);
        assert!(forward_diff(&t, &f, 1).is_err());
    }

    #[test]
    fn binomial_polynomial_second_difference() {
        // b(x) = x(x-1)/2 on a large torus; its second difference is 1 away
        // from the wrap seam.
        let t = TorusSpec::new(41, 1, 1).unwrap();
        let f: Vec<f64> = (0..t.volume())
            .map(|i| {
                let x = t.coords(i)[0] as f64;
                x * (x - 1.0) / 2.0
            })
            .collect();
        let g = multi_diff(&t, &f, &MultiIndex(vec![2]), DEFAULT_MAX_ORDER).unwrap();
        for x in -15..=15i64 {
            assert!((g[t.index_of(&[x])] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn multi_index_enumeration() {
        let all = MultiIndex::all(2, 0, 2);
        assert_eq!(all.len(), 6);
        assert_eq!(all[0], MultiIndex(vec![0, 0]));
        assert_eq!(all[1], MultiIndex(vec![1, 0]));
        assert_eq!(MultiIndex(vec![1, 2]).below().len(), 6);
        assert_eq!(MultiIndex(vec![2, 3]).factorial(), 12.0);
        assert!(multi_diff(&TorusSpec::new(5, 1, 2).unwrap(), &[0.0; 25], &MultiIndex(vec![4, 3]), 6).is_err());
    }
}
