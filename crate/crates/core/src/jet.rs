//! Truncated multivariate Taylor polynomials ("jets"). A jet of `f` at `z`
//! stores `c_α` with `f(z + h) = Σ_{|α| ≤ r} c_α h^α + O(|h|^{r+1})`, so that
//! `∂^α f(z) = α! c_α`. Arithmetic is exact up to the truncation order.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::torus::MultiIndex;

#[derive(Debug)]
pub struct JetSpace {
    d: usize,
    order: usize,
    monos: Vec<MultiIndex>,
    index: HashMap<MultiIndex, usize>,
    products: Vec<(usize, usize, usize)>,
}

impl JetSpace {
    fn build(d: usize, order: usize) -> Self {
        let monos = MultiIndex::all(d, 0, order);
        let index: HashMap<MultiIndex, usize> = monos.iter().cloned().enumerate().map(|(i, m)| (m, i)).collect();
        let mut products = Vec::new();
        for (i, a) in monos.iter().enumerate() {
            for (j, b) in monos.iter().enumerate() {
                if a.order() + b.order() <= order {
                    products.push((i, j, index[&a.add(b)]));
                }
            }
        }
        Self { d, order, monos, index, products }
    }

    /// Shared space for `(d, order)`; built once per process.
    pub fn get(d: usize, order: usize) -> Arc<JetSpace> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<JetSpace>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("jet cache poisoned");
        guard.entry((d, order)).or_insert_with(|| Arc::new(Self::build(d, order))).clone()
    }

    pub fn dim(&self) -> usize {
        self.d
    }
    pub fn order(&self) -> usize {
        self.order
    }
    pub fn monomials(&self) -> &[MultiIndex] {
        &self.monos
    }
    pub fn position(&self, alpha: &MultiIndex) -> Option<usize> {
        self.index.get(alpha).copied()
    }
}

#[derive(Clone, Debug)]
pub struct Jet {
    space: Arc<JetSpace>,
    pub coeffs: Vec<f64>,
}

impl Jet {
    pub fn zero(d: usize, order: usize) -> Self {
        let space = JetSpace::get(d, order);
        let n = space.monos.len();
        Self { space, coeffs: vec![0.0; n] }
    }

    pub fn constant(d: usize, order: usize, c: f64) -> Self {
        let mut j = Self::zero(d, order);
        j.coeffs[0] = c;
        j
    }

    /// The affine jet `c + Σ_i w_i h_i`.
    pub fn affine(d: usize, order: usize, c: f64, w: &[f64]) -> Self {
        let mut j = Self::constant(d, order, c);
        if order >= 1 {
            for (i, &wi) in w.iter().enumerate() {
                let pos = j.space.index[&MultiIndex::unit(d, i)];
                j.coeffs[pos] = wi;
            }
        }
        j
    }

    /// Jet of the coordinate function `h ↦ z_i + h_i`.
    pub fn variable(d: usize, order: usize, axis: usize, value: f64) -> Self {
        let mut w = vec![0.0; d];
        w[axis] = 1.0;
        Self::affine(d, order, value, &w)
    }

    pub fn space(&self) -> &Arc<JetSpace> {
        &self.space
    }
    pub fn dim(&self) -> usize {
        self.space.d
    }
    pub fn order(&self) -> usize {
        self.space.order
    }
    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn coeff(&self, alpha: &MultiIndex) -> f64 {
        self.space.position(alpha).map_or(0.0, |p| self.coeffs[p])
    }

    /// `∂^α f(z) = α! c_α`.
    pub fn derivative(&self, alpha: &MultiIndex) -> f64 {
        alpha.factorial() * self.coeff(alpha)
    }

    /// Iterator over `(α, c_α)`.
    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.space.monos.iter().zip(self.coeffs.iter().copied())
    }

    pub fn add(&self, o: &Jet) -> Jet {
        Jet { space: self.space.clone(), coeffs: self.coeffs.iter().zip(&o.coeffs).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, o: &Jet) -> Jet {
        Jet { space: self.space.clone(), coeffs: self.coeffs.iter().zip(&o.coeffs).map(|(a, b)| a - b).collect() }
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet { space: self.space.clone(), coeffs: self.coeffs.iter().map(|a| a * s).collect() }
    }

    pub fn add_const(&self, c: f64) -> Jet {
        let mut j = self.clone();
        j.coeffs[0] += c;
        j
    }

    pub fn mul(&self, o: &Jet) -> Jet {
        let mut out = vec![0.0; self.coeffs.len()];
        for &(i, j, k) in &self.space.products {
            out[k] += self.coeffs[i] * o.coeffs[j];
        }
        Jet { space: self.space.clone(), coeffs: out }
    }

    /// Jet of `h ↦ f(s·h)`: `c_α ↦ s^{|α|} c_α`.
    pub fn rescaled(&self, s: f64) -> Jet {
        let coeffs = self.terms().map(|(a, c)| c * s.powi(a.order() as i32)).collect();
        Jet { space: self.space.clone(), coeffs }
    }

    /// `g ∘ self` for a univariate `g` given by its Taylor coefficients
    /// `taylor[n] = g^{(n)}(c_0)/n!` at the constant term `c_0`.
    pub fn compose(&self, taylor: &[f64]) -> Jet {
        let mut h = self.clone();
        h.coeffs[0] = 0.0;
        let mut out = Jet::constant(self.dim(), self.order(), taylor.first().copied().unwrap_or(0.0));
        let mut pow = Jet::constant(self.dim(), self.order(), 1.0);
        for t in taylor.iter().take(self.order() + 1).skip(1) {
            pow = pow.mul(&h);
            out = out.add(&pow.scale(*t));
        }
        out
    }

    pub fn exp(&self) -> Jet {
        let e = self.value().exp();
        let taylor: Vec<f64> = (0..=self.order()).map(|n| e / factorial(n)).collect();
        self.compose(&taylor)
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.value().sin_cos();
        // cos^{(n)} cycles through cos, -sin, -cos, sin.
        let taylor: Vec<f64> = (0..=self.order())
            .map(|n| {
                let v = match n % 4 {
                    0 => c,
                    1 => -s,
                    2 => -c,
                    _ => s,
                };
                v / factorial(n)
            })
            .collect();
        self.compose(&taylor)
    }
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Univariate truncated power series helpers (coefficient vectors).
pub mod series {
    /// `log(a(t))` for a series with `a_0 > 0`.
    pub fn log(a: &[f64]) -> Vec<f64> {
        let n = a.len();
        let mut out = vec![0.0; n];
        out[0] = a[0].ln();
        // b' a = a'  =>  k b_k a_0 = k a_k - Σ_{j=1}^{k-1} j b_j a_{k-j}
        for k in 1..n {
            let mut s = k as f64 * a[k];
            for j in 1..k {
                s -= j as f64 * out[j] * a[k - j];
            }
            out[k] = s / (k as f64 * a[0]);
        }
        out
    }

    /// Taylor coefficients of `t ↦ e^{c·t}` scaled by `w`.
    pub fn scaled_exp(w: f64, c: f64, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        let mut term = w;
        for (k, o) in out.iter_mut().enumerate() {
            *o = term;
            term *= c / (k + 1) as f64;
        }
        out
    }
}
