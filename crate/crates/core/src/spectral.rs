//! Torus geometry, truncated Fourier fields, transforms and Wick calculus.
//!
//! Convention: `u(x) = Σ_k û(k) exp(i (2π/L) k·x)` on `[0, L)^d`, so that
//! `∫ u dx = L^d û(0)` and `∫ u² dx = L^d Σ_k |û(k)|²`.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::rng::{normal, Rng};

pub use rustfft::num_complex::Complex64;

/// Torus `[0, L)^d` with Fourier truncation radius `N`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TorusSpec {
    pub d: usize,
    pub l: f64,
    pub n: usize,
}

impl TorusSpec {
    pub fn new(d: usize, l: f64, n: usize) -> Result<Self> {
        let spec = TorusSpec { d, l, n };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.d) {
            return Err(Error::InvalidSpec(format!("d = {} must be 1, 2 or 3", self.d)));
        }
        if !(self.l > 0.0 && self.l < 2.0 * PI) {
            return Err(Error::InvalidSpec(format!("L = {} must satisfy 0 < L < 2π", self.l)));
        }
        Ok(())
    }

    /// `C_L = (2π/L)²`.
    pub fn c_l(&self) -> f64 {
        let w = 2.0 * PI / self.l;
        w * w
    }

    /// `L^d`.
    pub fn volume(&self) -> f64 {
        self.l.powi(self.d as i32)
    }

    pub fn with_n(&self, n: usize) -> Self {
        TorusSpec { n, ..*self }
    }
}

/// Mass convention of the Gaussian reference: `−1 − Δ` or `2 − Δ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MassKind {
    NegativeUnit,
    PositivePlusTwo,
}

impl MassKind {
    /// Symbol eigenvalue `±m² + C_L |k|²`.
    pub fn eigenvalue(self, c_l: f64, k2: u32) -> f64 {
        match self {
            MassKind::NegativeUnit => -1.0 + c_l * k2 as f64,
            MassKind::PositivePlusTwo => 2.0 + c_l * k2 as f64,
        }
    }

    /// Whether the mode is part of the covariance (`k = 0` is excluded for
    /// the negative mass).
    pub fn admits(self, k2: u32) -> bool {
        match self {
            MassKind::NegativeUnit => k2 != 0,
            MassKind::PositivePlusTwo => true,
        }
    }
}

/// Canonically ordered mode set `K_N = {k ∈ Z^d : |k| ≤ N}`.
#[derive(Debug, Clone)]
pub struct ModeSet {
    pub spec: TorusSpec,
    pub ks: Vec<[i32; 3]>,
    pub k2: Vec<u32>,
    /// Index of `−k` for each mode.
    pub neg: Vec<usize>,
    /// Index of `k = 0`.
    pub zero: usize,
    /// Indices of modes lexicographically greater than zero.
    pub positive: Vec<usize>,
}

fn lex_positive(k: &[i32; 3]) -> bool {
    for &c in k {
        if c != 0 {
            return c > 0;
        }
    }
    false
}

impl ModeSet {
    pub fn new(spec: TorusSpec) -> Arc<Self> {
        let n = spec.n as i32;
        let n2 = (n * n) as u32;
        let range = |active: bool| if active { -n..=n } else { 0..=0 };
        let mut ks = Vec::new();
        for a in range(true) {
            for b in range(spec.d >= 2) {
                for c in range(spec.d >= 3) {
                    let k2 = (a * a + b * b + c * c) as u32;
                    if k2 <= n2 {
                        ks.push([a, b, c]);
                    }
                }
            }
        }
        let k2: Vec<u32> = ks.iter().map(|k| (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as u32).collect();
        // Lexicographic order makes the list antisymmetric: −ks[i] = ks[len-1-i].
        let len = ks.len();
        let neg: Vec<usize> = (0..len).map(|i| len - 1 - i).collect();
        let zero = len / 2;
        let positive = (0..len).filter(|&i| lex_positive(&ks[i])).collect();
        Arc::new(ModeSet { spec, ks, k2, neg, zero, positive })
    }

    pub fn len(&self) -> usize {
        self.ks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ks.is_empty()
    }

    pub fn index_of(&self, k: [i32; 3]) -> Option<usize> {
        self.ks.binary_search(&k).ok()
    }
}

/// The canonical ordered list of wave vectors in `K_N`.
pub fn mode_set(spec: TorusSpec) -> Vec<[i32; 3]> {
    ModeSet::new(spec).ks.clone()
}

/// Hermitian-symmetric truncated Fourier coefficients of a real field.
#[derive(Debug, Clone)]
pub struct SpectralField {
    pub modes: Arc<ModeSet>,
    pub c: Vec<Complex64>,
}

impl PartialEq for SpectralField {
    fn eq(&self, other: &Self) -> bool {
        self.modes.spec == other.modes.spec && self.c == other.c
    }
}

impl SpectralField {
    pub fn zeros(modes: &Arc<ModeSet>) -> Self {
        SpectralField { modes: modes.clone(), c: vec![Complex64::new(0.0, 0.0); modes.len()] }
    }

    pub fn constant(modes: &Arc<ModeSet>, value: f64) -> Self {
        let mut f = Self::zeros(modes);
        f.c[modes.zero] = Complex64::new(value, 0.0);
        f
    }

    pub fn spec(&self) -> TorusSpec {
        self.modes.spec
    }

    pub fn get(&self, k: [i32; 3]) -> Option<Complex64> {
        self.modes.index_of(k).map(|i| self.c[i])
    }

    /// Sets `û(k)` and `û(−k)` consistently.
    pub fn set(&mut self, k: [i32; 3], value: Complex64) {
        let i = self.modes.index_of(k).expect("mode outside K_N");
        let j = self.modes.neg[i];
        if i == j {
            self.c[i] = Complex64::new(value.re, 0.0);
        } else {
            self.c[i] = value;
            self.c[j] = value.conj();
        }
    }

    pub fn zero_mode(&self) -> f64 {
        self.c[self.modes.zero].re
    }

    /// Restores exact Hermitian symmetry by averaging each `(k, −k)` pair.
    pub fn enforce_hermitian(&mut self) {
        enforce_hermitian(&self.modes, &mut self.c);
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let m = &self.modes;
        (0..m.len()).all(|i| (self.c[i] - self.c[m.neg[i]].conj()).norm() <= tol)
    }

    /// Keeps coefficients with `|k| ≤ n_prime`.
    pub fn project(&self, n_prime: usize) -> Self {
        let cut = (n_prime * n_prime) as u32;
        let mut out = self.clone();
        for (c, &k2) in out.c.iter_mut().zip(&self.modes.k2) {
            if k2 > cut {
                *c = Complex64::new(0.0, 0.0);
            }
        }
        out
    }

    /// Removes the zero mode.
    pub fn project_perp(&self) -> Self {
        let mut out = self.clone();
        out.c[self.modes.zero] = Complex64::new(0.0, 0.0);
        out
    }

    /// `(Σ_k ⟨k⟩^{2s} |û(k)|²)^{1/2}` with `⟨k⟩ = (1 + |k|²)^{1/2}`.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        self.c
            .iter()
            .zip(&self.modes.k2)
            .map(|(c, &k2)| (1.0 + k2 as f64).powf(s) * c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// `∫ u² dx`.
    pub fn l2_sq(&self) -> f64 {
        self.spec().volume() * self.c.iter().map(|c| c.norm_sqr()).sum::<f64>()
    }

    pub fn add_scaled(&mut self, a: f64, other: &SpectralField) {
        for (x, y) in self.c.iter_mut().zip(&other.c) {
            *x += y * a;
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        SpectralField { modes: self.modes.clone(), c: self.c.iter().map(|c| c * a).collect() }
    }

    pub fn max_abs_diff(&self, other: &SpectralField) -> f64 {
        self.c.iter().zip(&other.c).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }
}

pub fn enforce_hermitian(modes: &ModeSet, c: &mut [Complex64]) {
    for &i in &modes.positive {
        let j = modes.neg[i];
        let avg = (c[i] + c[j].conj()) * 0.5;
        c[i] = avg;
        c[j] = avg.conj();
    }
    let z = modes.zero;
    c[z] = Complex64::new(c[z].re, 0.0);
}

/// Fills `c` with independent centred complex Gaussians, Hermitian-paired:
/// `E|c_k|² = var(k)`, zero mode real with variance `var(0)`. A variance of
/// zero leaves the mode at zero.
pub fn fill_gaussian(modes: &ModeSet, c: &mut [Complex64], rng: &mut Rng, var: impl Fn(usize) -> f64) {
    for i in 0..modes.len() {
        if i == modes.zero {
            let v = var(i);
            c[i] = Complex64::new(if v > 0.0 { v.sqrt() * normal(rng) } else { 0.0 }, 0.0);
        } else if lex_positive(&modes.ks[i]) {
            let v = var(i);
            let s = if v > 0.0 { (0.5 * v).sqrt() } else { 0.0 };
            let z = Complex64::new(s * normal(rng), s * normal(rng));
            c[i] = z;
            c[modes.neg[i]] = z.conj();
        }
    }
}

/// Smallest `2^a 3^b 5^c` that is at least `min`.
pub fn fft_size(min: usize) -> usize {
    let mut m = min.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Planned transforms between `K_N` coefficients and an `M^d` grid.
///
/// Owns its scratch buffers; one instance per thread.
pub struct Transformer {
    pub modes: Arc<ModeSet>,
    pub m: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    grid: Vec<Complex64>,
    line: Vec<Complex64>,
    scratch: Vec<Complex64>,
    idx: Vec<usize>,
}

impl Transformer {
    pub fn new(modes: &Arc<ModeSet>, m: usize) -> Result<Self> {
        let required = 2 * modes.spec.n + 1;
        if m < required {
            return Err(Error::GridTooSmall { m, required });
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(m);
        let inv = planner.plan_fft_inverse(m);
        let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        let d = modes.spec.d;
        let total = m.pow(d as u32);
        let idx = modes
            .ks
            .iter()
            .map(|k| {
                let mut flat = 0;
                let mut stride = 1;
                for &ka in k.iter().take(d) {
                    flat += (ka.rem_euclid(m as i32) as usize) * stride;
                    stride *= m;
                }
                flat
            })
            .collect();
        Ok(Transformer {
            modes: modes.clone(),
            m,
            fwd,
            inv,
            grid: vec![Complex64::new(0.0, 0.0); total],
            line: vec![Complex64::new(0.0, 0.0); m],
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            idx,
        })
    }

    /// Number of grid points `M^d`.
    pub fn grid_len(&self) -> usize {
        self.grid.len()
    }

    fn transform_grid(&mut self, inverse: bool) {
        let m = self.m;
        let d = self.modes.spec.d;
        let fft = if inverse { &self.inv } else { &self.fwd };
        // Axis 0 is contiguous.
        fft.process_with_scratch(&mut self.grid, &mut self.scratch);
        let total = self.grid.len();
        let mut stride = m;
        for _axis in 1..d {
            let block = stride * m;
            for base in (0..total).step_by(block) {
                for off in 0..stride {
                    let start = base + off;
                    for j in 0..m {
                        self.line[j] = self.grid[start + j * stride];
                    }
                    fft.process_with_scratch(&mut self.line, &mut self.scratch);
                    for j in 0..m {
                        self.grid[start + j * stride] = self.line[j];
                    }
                }
            }
            stride = block;
        }
    }

    /// Grid values `u(x_j)`, `x_j = j L / M`, written into `out`.
    pub fn to_physical_into(&mut self, c: &[Complex64], out: &mut [f64]) {
        self.grid.iter_mut().for_each(|g| *g = Complex64::new(0.0, 0.0));
        for (&flat, &v) in self.idx.iter().zip(c) {
            self.grid[flat] = v;
        }
        self.transform_grid(true);
        for (o, g) in out.iter_mut().zip(&self.grid) {
            *o = g.re;
        }
    }

    /// Largest imaginary part of the last inverse transform, relative to the
    /// largest real part.
    pub fn last_imaginary_ratio(&self) -> f64 {
        let re = self.grid.iter().map(|g| g.re.abs()).fold(0.0, f64::max);
        let im = self.grid.iter().map(|g| g.im.abs()).fold(0.0, f64::max);
        if re > 0.0 {
            im / re
        } else {
            im
        }
    }

    /// Forward transform of real grid values followed by projection onto
    /// `K_N`, with Hermitian symmetry restored exactly.
    pub fn to_spectral_into(&mut self, g: &[f64], out: &mut [Complex64]) {
        for (dst, &v) in self.grid.iter_mut().zip(g) {
            *dst = Complex64::new(v, 0.0);
        }
        self.transform_grid(false);
        let norm = 1.0 / self.grid.len() as f64;
        for (o, &flat) in out.iter_mut().zip(&self.idx) {
            *o = self.grid[flat] * norm;
        }
        enforce_hermitian(&self.modes, out);
    }

    pub fn to_physical(&mut self, f: &SpectralField) -> Vec<f64> {
        let mut out = vec![0.0; self.grid_len()];
        self.to_physical_into(&f.c, &mut out);
        out
    }

    pub fn to_spectral(&mut self, g: &[f64]) -> SpectralField {
        let mut f = SpectralField::zeros(&self.modes);
        self.to_spectral_into(g, &mut f.c);
        f
    }
}

/// Inverse transform onto an `M^d` grid (axis 0 fastest).
pub fn to_physical(f: &SpectralField, m: usize) -> Result<Vec<f64>> {
    Ok(Transformer::new(&f.modes, m)?.to_physical(f))
}

/// Forward transform of an `M^d` grid followed by projection onto `K_N`.
pub fn to_spectral(g: &[f64], spec: TorusSpec) -> Result<SpectralField> {
    let m = (g.len() as f64).powf(1.0 / spec.d as f64).round() as usize;
    if m.pow(spec.d as u32) != g.len() {
        return Err(Error::InvalidArgument(format!("{} values do not form a {}-dimensional cube", g.len(), spec.d)));
    }
    let modes = ModeSet::new(spec);
    Ok(Transformer::new(&modes, m)?.to_spectral(g))
}

/// Probabilists' Hermite polynomial with variance parameter `c`.
#[inline]
pub fn hermite(j: usize, x: f64, c: f64) -> f64 {
    match j {
        0 => 1.0,
        1 => x,
        2 => x * x - c,
        3 => x * x * x - 3.0 * c * x,
        4 => {
            let x2 = x * x;
            x2 * x2 - 6.0 * c * x2 + 3.0 * c * c
        }
        _ => panic!("Hermite degree {j} not supported"),
    }
}

/// Pointwise polynomial evaluation on a dealiased grid.
pub struct PointwiseKernel {
    pub tr: Transformer,
    phys: Vec<f64>,
}

impl PointwiseKernel {
    /// Kernel exact for products up to degree `degree`.
    pub fn new(modes: &Arc<ModeSet>, degree: usize) -> Self {
        let m = fft_size((degree + 1) * modes.spec.n + 1);
        let tr = Transformer::new(modes, m).expect("dealiased grid is large enough");
        let len = tr.grid_len();
        PointwiseKernel { tr, phys: vec![0.0; len] }
    }

    pub fn cubic(modes: &Arc<ModeSet>) -> Self {
        Self::new(modes, 3)
    }

    /// `P_N H_j(u; C)` into `out`.
    pub fn wick_power_into(&mut self, c: &[Complex64], j: usize, wick_c: f64, out: &mut [Complex64]) {
        self.tr.to_physical_into(c, &mut self.phys);
        for x in self.phys.iter_mut() {
            *x = hermite(j, *x, wick_c);
        }
        self.tr.to_spectral_into(&self.phys, out);
    }

    /// Wave-equation force `−P_N(u³) + 3C u` into `out`; returns the grid
    /// mean of `u⁴`, which equals `(1/L^d) ∫ u⁴` for a cubic-exact grid.
    pub fn force_into(&mut self, c: &[Complex64], wick_c: f64, out: &mut [Complex64]) -> f64 {
        self.tr.to_physical_into(c, &mut self.phys);
        let mut q = 0.0;
        for x in self.phys.iter_mut() {
            let u = *x;
            let u2 = u * u;
            q += u2 * u2;
            *x = -u2 * u;
        }
        self.tr.to_spectral_into(&self.phys, out);
        if wick_c != 0.0 {
            for (o, ci) in out.iter_mut().zip(c) {
                *o += ci * (3.0 * wick_c);
            }
        }
        q / self.phys.len() as f64
    }

    /// Grid mean of `u⁴`.
    pub fn quartic_mean(&mut self, c: &[Complex64]) -> f64 {
        self.tr.to_physical_into(c, &mut self.phys);
        self.phys.iter().map(|u| (u * u) * (u * u)).sum::<f64>() / self.phys.len() as f64
    }

    /// Grid mean of `H_j(u; C)`, equal to `(1/L^d) ∫ :u^j: dx` when exact.
    pub fn wick_mean(&mut self, c: &[Complex64], j: usize, wick_c: f64) -> f64 {
        self.tr.to_physical_into(c, &mut self.phys);
        self.phys.iter().map(|&u| hermite(j, u, wick_c)).sum::<f64>() / self.phys.len() as f64
    }
}

/// Wick constant `C_{N,β,±}` at sharp truncation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WickConstants {
    pub spec: TorusSpec,
    pub mass_kind: MassKind,
    pub beta: f64,
    pub c: f64,
}

/// `C = (1/L^d) Σ_{k ∈ K_N} 1/(β(±m² + C_L|k|²))`, `k = 0` omitted for the
/// negative mass. `β = ∞` gives zero.
pub fn wick_constant(spec: TorusSpec, mass_kind: MassKind, beta: f64) -> WickConstants {
    let c = if beta.is_infinite() {
        0.0
    } else {
        wick_sum(spec, mass_kind) / spec.volume() / beta
    };
    WickConstants { spec, mass_kind, beta, c }
}

/// Wick constant of the double-well model: the negative-mass constant at
/// `β` when `renormalize` is set, zero otherwise.
pub fn model_wick_constant(spec: TorusSpec, beta: f64, renormalize: bool) -> f64 {
    if renormalize {
        wick_constant(spec, MassKind::NegativeUnit, beta).c
    } else {
        0.0
    }
}

/// Renormalization default: on for `d ≥ 2`, off in one dimension.
pub fn default_renormalize(spec: TorusSpec) -> bool {
    spec.d >= 2
}

/// `Σ_{k ∈ K_N} 1/(±m² + C_L|k|²)` summed by shells of equal `|k|²`.
pub fn wick_sum(spec: TorusSpec, mass_kind: MassKind) -> f64 {
    let c_l = spec.c_l();
    shell_counts(spec)
        .iter()
        .enumerate()
        .filter(|&(k2, &count)| count > 0 && mass_kind.admits(k2 as u32))
        .map(|(k2, &count)| count as f64 / mass_kind.eigenvalue(c_l, k2 as u32))
        .sum()
}

/// Number of lattice points with each value of `|k|² ≤ N²`.
pub fn shell_counts(spec: TorusSpec) -> Vec<u64> {
    let n = spec.n as i64;
    let n2 = n * n;
    let mut counts = vec![0u64; n2 as usize + 1];
    let r = |active: bool| if active { -n..=n } else { 0..=0 };
    for a in r(true) {
        for b in r(spec.d >= 2) {
            let ab = a * a + b * b;
            if ab > n2 {
                continue;
            }
            for c in r(spec.d >= 3) {
                let k2 = ab + c * c;
                if k2 <= n2 {
                    counts[k2 as usize] += 1;
                }
            }
        }
    }
    counts
}

/// `P_N H_j(u; C)` for `j ∈ 1..=4`.
pub fn wick_power(f: &SpectralField, j: usize, wick_c: f64) -> Result<SpectralField> {
    if !(1..=4).contains(&j) {
        return Err(Error::InvalidArgument(format!("Wick power j = {j} must be in 1..=4")));
    }
    let mut kernel = PointwiseKernel::new(&f.modes, j);
    let mut out = SpectralField::zeros(&f.modes);
    kernel.wick_power_into(&f.c, j, wick_c, &mut out.c);
    Ok(out)
}

/// `P_N(u³) − 3C u`.
pub fn wick_cubic_drift(f: &SpectralField, wick_c: f64) -> SpectralField {
    wick_power(f, 3, wick_c).expect("degree 3 is valid")
}

/// Position and velocity of the wave equation.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub u: SpectralField,
    pub v: SpectralField,
}

impl PhaseState {
    pub fn new(u: SpectralField, v: SpectralField) -> Result<Self> {
        if u.spec() != v.spec() {
            return Err(Error::InvalidArgument("position and velocity live on different tori".into()));
        }
        Ok(PhaseState { u, v })
    }

    pub fn zeros(modes: &Arc<ModeSet>) -> Self {
        PhaseState { u: SpectralField::zeros(modes), v: SpectralField::zeros(modes) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn spec(d: usize, l: f64, n: usize) -> TorusSpec {
        TorusSpec::new(d, l, n).unwrap()
    }

    fn random_field(modes: &Arc<ModeSet>, seed: u64) -> SpectralField {
        let mut f = SpectralField::zeros(modes);
        let mut rng = stream(seed, 0);
        fill_gaussian(modes, &mut f.c, &mut rng, |_| 1.0);
        f
    }

    /// Direct DFT oracle: `u(x_j) = Σ_k û(k) e^{2πi k·j/M}`.
    fn direct_physical(f: &SpectralField, m: usize) -> Vec<f64> {
        let d = f.spec().d;
        let total = m.pow(d as u32);
        (0..total)
            .map(|flat| {
                let mut j = [0usize; 3];
                let mut r = flat;
                for ja in j.iter_mut().take(d) {
                    *ja = r % m;
                    r /= m;
                }
                f.modes
                    .ks
                    .iter()
                    .zip(&f.c)
                    .map(|(k, c)| {
                        let phase: f64 = (0..d).map(|a| k[a] as f64 * j[a] as f64).sum::<f64>() * 2.0 * PI / m as f64;
                        (c * Complex64::from_polar(1.0, phase)).re
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn torus_validation() {
        assert!(TorusSpec::new(1, 7.0, 2).is_err());
        assert!(TorusSpec::new(4, 1.0, 2).is_err());
        let s = spec(2, 1.0, 3);
        assert!((s.c_l() - (2.0 * PI).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn mode_set_examples() {
        assert_eq!(mode_set(spec(1, 1.0, 1)), vec![[-1, 0, 0], [0, 0, 0], [1, 0, 0]]);
        assert_eq!(mode_set(spec(2, 1.0, 1)).len(), 5);
        // Brute-force count of |k|² ≤ 4 in Z³.
        let mut count = 0;
        for a in -2i32..=2 {
            for b in -2i32..=2 {
                for c in -2i32..=2 {
                    if a * a + b * b + c * c <= 4 {
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(count, 33);
        assert_eq!(mode_set(spec(3, 1.0, 2)).len(), 33);
        assert_eq!(mode_set(spec(2, 1.0, 0)), vec![[0, 0, 0]]);
    }

    #[test]
    fn mode_set_pairs_and_order() {
        for d in 1..=3 {
            let m = ModeSet::new(spec(d, 1.0, 3));
            for i in 0..m.len() {
                let k = m.ks[i];
                assert_eq!(m.ks[m.neg[i]], [-k[0], -k[1], -k[2]]);
                if i > 0 {
                    assert!(m.ks[i - 1] < m.ks[i]);
                }
            }
            assert_eq!(m.ks[m.zero], [0, 0, 0]);
            assert_eq!(m.positive.len() * 2 + 1, m.len());
        }
    }

    #[test]
    fn physical_examples() {
        let modes = ModeSet::new(spec(1, 1.0, 2));
        let f = SpectralField::constant(&modes, 0.7);
        let g = to_physical(&f, 9).unwrap();
        assert!(g.iter().all(|&x| (x - 0.7).abs() < 1e-14));

        let mut f = SpectralField::zeros(&modes);
        f.set([1, 0, 0], Complex64::new(0.5, 0.0));
        let m = 16;
        let g = to_physical(&f, m).unwrap();
        for (j, &x) in g.iter().enumerate() {
            assert!((x - (2.0 * PI * j as f64 / m as f64).cos()).abs() < 1e-14);
        }
        let back = to_spectral(&g, modes.spec).unwrap();
        assert!((back.get([1, 0, 0]).unwrap() - Complex64::new(0.5, 0.0)).norm() < 1e-14);
        assert!((back.get([-1, 0, 0]).unwrap() - Complex64::new(0.5, 0.0)).norm() < 1e-14);
        assert!(back.zero_mode().abs() < 1e-14);

        let back = to_spectral(&[0.3; 16], modes.spec).unwrap();
        assert!((back.zero_mode() - 0.3).abs() < 1e-15);
        assert!(back.project_perp().c.iter().all(|c| c.norm() < 1e-15));
    }

    #[test]
    fn grid_minimum_enforced() {
        let modes = ModeSet::new(spec(1, 1.0, 4));
        assert_eq!(Transformer::new(&modes, 8).err(), Some(Error::GridTooSmall { m: 8, required: 9 }));
        assert!(to_spectral(&[0.0; 8], modes.spec).is_err());
    }

    #[test]
    fn transform_matches_direct_dft() {
        for d in 1..=3 {
            let n = if d == 3 { 2 } else { 4 };
            let modes = ModeSet::new(spec(d, 1.3, n));
            let f = random_field(&modes, d as u64);
            let m = 2 * n + 3;
            let fast = to_physical(&f, m).unwrap();
            let slow = direct_physical(&f, m);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-11, "d={d}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn round_trip_n8_m64() {
        let modes = ModeSet::new(spec(1, 1.0, 8));
        let f = random_field(&modes, 11);
        let g = to_physical(&f, 64).unwrap();
        let back = to_spectral(&g, modes.spec).unwrap();
        assert!(back.max_abs_diff(&f) < 1e-12);
        let slow = direct_physical(&f, 64);
        assert!(g.iter().zip(&slow).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn round_trip_up_to_n32() {
        for n in [0, 1, 5, 17, 32] {
            let modes = ModeSet::new(spec(1, 2.0, n));
            let f = random_field(&modes, n as u64);
            let mut tr = Transformer::new(&modes, 2 * n + 1).unwrap();
            let g = tr.to_physical(&f);
            assert!(tr.last_imaginary_ratio() < 1e-12);
            let back = tr.to_spectral(&g);
            let scale = f.c.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1e-300);
            assert!(back.max_abs_diff(&f) / scale < 1e-10);
        }
        let modes = ModeSet::new(spec(2, 1.0, 6));
        let f = random_field(&modes, 3);
        let mut tr = Transformer::new(&modes, 13).unwrap();
        let g = tr.to_physical(&f);
        let back = tr.to_spectral(&g);
        assert!(back.max_abs_diff(&f) < 1e-12);
    }

    #[test]
    fn projections() {
        let modes = ModeSet::new(spec(2, 1.0, 3));
        let f = random_field(&modes, 5);
        assert_eq!(f.project(3), f);
        assert_eq!(f.project_perp().zero_mode(), 0.0);
        let c = SpectralField::constant(&modes, 2.0);
        assert!(c.project_perp().c.iter().all(|z| z.norm() == 0.0));
        let p = f.project(1);
        for (i, &k2) in modes.k2.iter().enumerate() {
            if k2 > 1 {
                assert_eq!(p.c[i].norm(), 0.0);
            } else {
                assert_eq!(p.c[i], f.c[i]);
            }
        }
    }

    #[test]
    fn sobolev_examples() {
        let modes = ModeSet::new(spec(1, 1.0, 2));
        assert_eq!(SpectralField::zeros(&modes).sobolev_norm(0.5), 0.0);
        assert!((SpectralField::constant(&modes, 1.0).sobolev_norm(-3.0) - 1.0).abs() < 1e-15);
        let mut f = SpectralField::zeros(&modes);
        f.set([1, 0, 0], Complex64::new(1.0, 0.0));
        assert!((f.sobolev_norm(1.0) - 2.0).abs() < 1e-14);
        let g = random_field(&modes, 9);
        let parseval: f64 = g.c.iter().map(|c| c.norm_sqr()).sum();
        assert!((g.sobolev_norm(0.0).powi(2) - parseval).abs() < 1e-13);
    }

    #[test]
    fn wick_constant_examples() {
        let c = wick_constant(spec(2, 1.0, 0), MassKind::PositivePlusTwo, 1.0).c;
        assert!((c - 0.5).abs() < 1e-15);
        assert_eq!(wick_constant(spec(2, 1.0, 0), MassKind::NegativeUnit, 1.0).c, 0.0);
        let c = wick_constant(spec(1, 1.0, 1), MassKind::NegativeUnit, 1.0).c;
        let oracle = 2.0 / (4.0 * PI * PI - 1.0);
        assert!((c - oracle).abs() < 1e-15);
        assert!((c - 0.051977).abs() < 1e-6);
    }

    #[test]
    fn wick_constant_matches_mode_sum_and_monotone() {
        for d in 1..=3 {
            for mass in [MassKind::NegativeUnit, MassKind::PositivePlusTwo] {
                let mut prev = 0.0;
                for n in 0..6 {
                    let s = spec(d, 0.9, n);
                    let modes = ModeSet::new(s);
                    let direct: f64 = modes
                        .k2
                        .iter()
                        .filter(|&&k2| mass.admits(k2))
                        .map(|&k2| 1.0 / mass.eigenvalue(s.c_l(), k2))
                        .sum::<f64>()
                        / s.volume();
                    let c1 = wick_constant(s, mass, 1.0).c;
                    assert!((c1 - direct).abs() < 1e-13 * direct.max(1.0));
                    assert!(c1 >= prev);
                    prev = c1;
                    assert_eq!(wick_constant(s, mass, 3.0).c, c1 / 3.0);
                }
            }
        }
    }

    #[test]
    fn wick_power_examples() {
        let modes = ModeSet::new(spec(2, 1.0, 3));
        let x = 0.8;
        let f = SpectralField::constant(&modes, x);
        let w2 = wick_power(&f, 2, 0.3).unwrap();
        assert!((w2.zero_mode() - (x * x - 0.3)).abs() < 1e-14);
        assert!(w2.project_perp().c.iter().all(|c| c.norm() < 1e-14));
        let one = SpectralField::constant(&modes, 1.0);
        assert!((wick_power(&one, 3, 1.0).unwrap().zero_mode() + 2.0).abs() < 1e-14);
        assert!(wick_power(&one, 5, 1.0).is_err());
        assert!(wick_cubic_drift(&SpectralField::zeros(&modes), 0.4).c.iter().all(|c| c.norm() == 0.0));
        let d = wick_cubic_drift(&f, 0.2);
        assert!((d.zero_mode() - (x.powi(3) - 0.6 * x)).abs() < 1e-14);
    }

    /// Exact convolution `Σ_{k1+k2+k3=k} û(k1)û(k2)û(k3)` restricted to K_N.
    fn triple_convolution(f: &SpectralField) -> SpectralField {
        let modes = &f.modes;
        let mut out = SpectralField::zeros(modes);
        for (i, a) in modes.ks.iter().enumerate() {
            for (j, b) in modes.ks.iter().enumerate() {
                let ab = f.c[i] * f.c[j];
                for (l, c) in modes.ks.iter().enumerate() {
                    let k = [a[0] + b[0] + c[0], a[1] + b[1] + c[1], a[2] + b[2] + c[2]];
                    if let Some(t) = modes.index_of(k) {
                        out.c[t] += ab * f.c[l];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn square_matches_dense_product() {
        let modes = ModeSet::new(spec(1, 1.0, 6));
        let f = random_field(&modes, 21);
        let w = wick_power(&f, 2, 0.0).unwrap();
        let mut dense = SpectralField::zeros(&modes);
        for (i, a) in modes.ks.iter().enumerate() {
            for (j, b) in modes.ks.iter().enumerate() {
                if let Some(t) = modes.index_of([a[0] + b[0], 0, 0]) {
                    dense.c[t] += f.c[i] * f.c[j];
                }
            }
        }
        assert!(w.max_abs_diff(&dense) < 1e-10);
    }

    #[test]
    fn dealiased_cubic_matches_triple_convolution() {
        for (d, n) in [(1, 8), (2, 4), (3, 2)] {
            let modes = ModeSet::new(spec(d, 1.0, n));
            let f = random_field(&modes, 30 + d as u64);
            let mut kernel = PointwiseKernel::cubic(&modes);
            assert!(kernel.tr.m > 4 * n);
            let mut out = vec![Complex64::new(0.0, 0.0); modes.len()];
            kernel.wick_power_into(&f.c, 3, 0.0, &mut out);
            let oracle = triple_convolution(&f);
            let err = out.iter().zip(&oracle.c).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-10, "d={d} N={n}: {err}");
        }
    }

    #[test]
    fn force_is_negative_wick_cube() {
        let modes = ModeSet::new(spec(1, 1.0, 5));
        let f = random_field(&modes, 2);
        let mut kernel = PointwiseKernel::cubic(&modes);
        let mut force = vec![Complex64::new(0.0, 0.0); modes.len()];
        let q = kernel.force_into(&f.c, 0.37, &mut force);
        let drift = wick_cubic_drift(&f, 0.37);
        for (a, b) in force.iter().zip(&drift.c) {
            assert!((a + b).norm() < 1e-12);
        }
        assert!((q - kernel.quartic_mean(&f.c)).abs() < 1e-14);
    }
}
