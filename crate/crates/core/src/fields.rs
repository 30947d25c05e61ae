//! Scalar and vector fields on the torus, the gradient bijection between
//! zero-sum scalar fields and gradient vector fields, and the orthogonal
//! splitting of vector fields into gradient and non-gradient parts.
//!
//! Fourier conventions: `f̂(p) = Σ_x f(x) e^{-i⟨p,x⟩}` (unnormalised) and the
//! inverse carries `1/L^{dN}`. Momenta are `p = 2πk/L^N` with `k` stored in
//! the same natural order as sites.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::{forward_diff, TorusSpec};

/// Relative tolerance for membership tests (gradient fields, zero sums).
pub const MEMBERSHIP_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub spec: TorusSpec,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub spec: TorusSpec,
    /// One natural-order array per component.
    pub comps: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct FourierField {
    pub spec: TorusSpec,
    pub coeffs: Vec<Complex64>,
}

impl ScalarField {
    pub fn zeros(spec: &TorusSpec) -> Self {
        Self { spec: spec.clone(), values: vec![0.0; spec.volume()] }
    }

    pub fn new(spec: &TorusSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.volume() {
            return Err(Error::Mismatch(format!("{} values for {} sites", values.len(), spec.volume())));
        }
        Ok(Self { spec: spec.clone(), values })
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn is_zero_sum(&self) -> bool {
        let scale = self.values.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        self.sum().abs() <= MEMBERSHIP_TOL * scale
    }

    /// Subtract the mean so the field lies in the zero-sum space.
    pub fn centered(mut self) -> Self {
        let m = self.sum() / self.values.len() as f64;
        self.values.iter_mut().for_each(|v| *v -= m);
        self
    }

    pub fn dot(&self, other: &Self) -> f64 {
        crate::torus::dot(&self.values, &other.values)
    }
}

impl VectorField {
    pub fn zeros(spec: &TorusSpec) -> Self {
        Self { spec: spec.clone(), comps: vec![vec![0.0; spec.volume()]; spec.d()] }
    }

    /// The constant field `x ↦ c`.
    pub fn constant(spec: &TorusSpec, c: &[f64]) -> Self {
        Self { spec: spec.clone(), comps: c.iter().map(|&ci| vec![ci; spec.volume()]).collect() }
    }

    /// `(η, ς) = Σ_x Σ_i η_i(x) ς_i(x)`.
    pub fn inner(&self, other: &Self) -> f64 {
        self.comps.iter().zip(&other.comps).map(|(a, b)| crate::torus::dot(a, b)).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.inner(self)
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            spec: self.spec.clone(),
            comps: self.comps.iter().zip(&other.comps).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect()).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            spec: self.spec.clone(),
            comps: self.comps.iter().zip(&other.comps).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect()).collect(),
        }
    }

    /// Flat vector with the component index fastest: entry `d·x + i`.
    pub fn to_flat(&self) -> Vec<f64> {
        let d = self.spec.d();
        let mut out = vec![0.0; d * self.spec.volume()];
        for (i, c) in self.comps.iter().enumerate() {
            for (x, &v) in c.iter().enumerate() {
                out[d * x + i] = v;
            }
        }
        out
    }

    pub fn from_flat(spec: &TorusSpec, flat: &[f64]) -> Result<Self> {
        let d = spec.d();
        if flat.len() != d * spec.volume() {
            return Err(Error::Mismatch(format!("{} entries for {} components", flat.len(), d * spec.volume())));
        }
        let comps = (0..d).map(|i| (0..spec.volume()).map(|x| flat[d * x + i]).collect()).collect();
        Ok(Self { spec: spec.clone(), comps })
    }
}

/// Cached n-dimensional FFT plans for one torus.
#[derive(Clone)]
pub struct FftEngine {
    spec: TorusSpec,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FftEngine {
    pub fn new(spec: &TorusSpec) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            spec: spec.clone(),
            forward: planner.plan_fft_forward(spec.side()),
            inverse: planner.plan_fft_inverse(spec.side()),
        }
    }

    pub fn spec(&self) -> &TorusSpec {
        &self.spec
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let side = self.spec.side();
        let plan = if inverse { &self.inverse } else { &self.forward };
        let mut line = vec![Complex64::new(0.0, 0.0); side];
        for axis in 0..self.spec.d() {
            let stride = self.spec.stride(axis);
            let block = stride * side;
            for start in (0..data.len()).step_by(block) {
                for off in 0..stride {
                    let base = start + off;
                    for (k, v) in line.iter_mut().enumerate() {
                        *v = data[base + k * stride];
                    }
                    plan.process(&mut line);
                    for (k, v) in line.iter().enumerate() {
                        data[base + k * stride] = *v;
                    }
                }
            }
        }
        if inverse {
            let s = 1.0 / data.len() as f64;
            data.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, false)
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, true)
    }

    pub fn forward_real(&self, f: &[f64]) -> Vec<Complex64> {
        let mut c: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut c);
        c
    }

    pub fn inverse_real(&self, mut c: Vec<Complex64>) -> Vec<f64> {
        self.inverse(&mut c);
        c.into_iter().map(|v| v.re).collect()
    }
}

/// Momentum vector `p = 2πk/L^N` of the natural-order mode index.
pub fn momentum(spec: &TorusSpec, idx: usize) -> Vec<f64> {
    let side = spec.side() as f64;
    spec.coords(idx).into_iter().map(|k| 2.0 * PI * k as f64 / side).collect()
}

/// `q_j(p) = e^{ip_j} − 1` for every axis.
pub fn q_vector(spec: &TorusSpec, idx: usize) -> Vec<Complex64> {
    momentum(spec, idx).into_iter().map(|p| Complex64::new(p.cos() - 1.0, p.sin())).collect()
}

pub fn fft(field: &ScalarField) -> FourierField {
    let eng = FftEngine::new(&field.spec);
    FourierField { spec: field.spec.clone(), coeffs: eng.forward_real(&field.values) }
}

/// Real part of the inverse transform; the imaginary part vanishes for
/// conjugate-symmetric inputs.
pub fn ifft(f: &FourierField) -> Result<ScalarField> {
    if f.coeffs.len() != f.spec.volume() {
        return Err(Error::Mismatch("Fourier coefficient count does not match the torus".into()));
    }
    let eng = FftEngine::new(&f.spec);
    ScalarField::new(&f.spec, eng.inverse_real(f.coeffs.clone()))
}

pub fn gradient_map(phi: &ScalarField) -> Result<VectorField> {
    if !phi.is_zero_sum() {
        return Err(Error::NotZeroSum(phi.sum()));
    }
    Ok(gradient_unchecked(&phi.spec, &phi.values))
}

/// Componentwise forward differences without the zero-sum check.
pub fn gradient_unchecked(spec: &TorusSpec, f: &[f64]) -> VectorField {
    let comps = (0..spec.d()).map(|i| forward_diff(spec, f, i).expect("axis in range")).collect();
    VectorField { spec: spec.clone(), comps }
}

/// Spectral least-squares solve of `∇φ = η` followed by a residual check.
pub fn inverse_gradient(eta: &VectorField) -> Result<ScalarField> {
    let spec = &eta.spec;
    let eng = FftEngine::new(spec);
    let hats: Vec<Vec<Complex64>> = eta.comps.iter().map(|c| eng.forward_real(c)).collect();
    let mut phi_hat = vec![Complex64::new(0.0, 0.0); spec.volume()];
    for (p, out) in phi_hat.iter_mut().enumerate().skip(1) {
        let q = q_vector(spec, p);
        let qq: f64 = q.iter().map(|z| z.norm_sqr()).sum();
        let num: Complex64 = q.iter().zip(&hats).map(|(qj, h)| qj.conj() * h[p]).sum();
        *out = num / qq;
    }
    let phi = ScalarField::new(spec, eng.inverse_real(phi_hat))?.centered();
    let back = gradient_unchecked(spec, &phi.values);
    let residual = back.sub(eta).norm_sq().sqrt() / eta.norm_sq().sqrt().max(1.0);
    if residual > MEMBERSHIP_TOL {
        return Err(Error::NotGradient { residual });
    }
    Ok(phi)
}

/// `v = v_O + v_⊥` with `v_O = ∇Δ^{-1}∇* v` the orthogonal projection onto
/// gradient fields.
pub fn project_gradient(v: &VectorField) -> (VectorField, VectorField) {
    let spec = &v.spec;
    let eng = FftEngine::new(spec);
    let hats: Vec<Vec<Complex64>> = v.comps.iter().map(|c| eng.forward_real(c)).collect();
    let d = spec.d();
    let mut proj = vec![vec![Complex64::new(0.0, 0.0); spec.volume()]; d];
    for p in 1..spec.volume() {
        let q = q_vector(spec, p);
        let qq: f64 = q.iter().map(|z| z.norm_sqr()).sum();
        let s: Complex64 = q.iter().zip(&hats).map(|(qj, h)| qj.conj() * h[p]).sum::<Complex64>() / qq;
        for j in 0..d {
            proj[j][p] = q[j] * s;
        }
    }
    let comps: Vec<Vec<f64>> = proj.into_iter().map(|c| eng.inverse_real(c)).collect();
    let v_o = VectorField { spec: spec.clone(), comps };
    let v_perp = v.sub(&v_o);
    (v_o, v_perp)
}

/// True when `η` is a gradient field: every nonzero mode is parallel to
/// `q(p)` and the zero mode vanishes.
pub fn is_gradient_field(eta: &VectorField) -> bool {
    let (_, perp) = project_gradient(eta);
    perp.norm_sq().sqrt() <= MEMBERSHIP_TOL * eta.norm_sq().sqrt().max(1.0)
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct SnapshotHeader {
    pub kind: String,
    pub l: usize,
    pub n: usize,
    pub d: usize,
    pub components: usize,
    pub ordering: String,
}

const ORDERING: &str = "row-major over centered coordinates, component index fastest";

fn write_snapshot<W: Write>(w: &mut W, spec: &TorusSpec, kind: &str, comps: &[&[f64]]) -> Result<()> {
    let header = SnapshotHeader {
        kind: kind.into(),
        l: spec.l(),
        n: spec.n(),
        d: spec.d(),
        components: comps.len(),
        ordering: ORDERING.into(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for idx in spec.centered_order() {
        for c in comps {
            w.write_all(&c[idx].to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_snapshot<R: Read>(r: &mut R) -> Result<(SnapshotHeader, TorusSpec, Vec<Vec<f64>>)> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 20 {
        return Err(Error::Mismatch("snapshot header too long".into()));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: SnapshotHeader = serde_json::from_slice(&json)?;
    let spec = TorusSpec::new(header.l, header.n, header.d)?;
    let mut comps = vec![vec![0.0; spec.volume()]; header.components];
    let mut buf = [0u8; 8];
    for idx in spec.centered_order() {
        for c in comps.iter_mut() {
            r.read_exact(&mut buf)?;
            c[idx] = f64::from_le_bytes(buf);
        }
    }
    Ok((header, spec, comps))
}

impl ScalarField {
    /// Length-prefixed JSON header followed by little-endian `f64` values in
    /// centered row-major order.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        write_snapshot(w, &self.spec, "scalar", &[&self.values])
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let (h, spec, mut comps) = read_snapshot(r)?;
        if h.kind != "scalar" || comps.len() != 1 {
            return Err(Error::Mismatch(format!("expected a scalar snapshot, found {}", h.kind)));
        }
        Ok(Self { spec, values: comps.remove(0) })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }
}

impl VectorField {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let comps: Vec<&[f64]> = self.comps.iter().map(|c| c.as_slice()).collect();
        write_snapshot(w, &self.spec, "vector", &comps)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let (h, spec, comps) = read_snapshot(r)?;
        if h.kind != "vector" || comps.len() != spec.d() {
            return Err(Error::Mismatch(format!("expected a vector snapshot, found {}", h.kind)));
        }
        Ok(Self { spec, comps })
    }
}
