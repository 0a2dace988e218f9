//! Chaos sums for the 3D renormalization constants `γ_N`, the leading `δ_N`
//! term and the Wick-constant difference, plus the lattice convolution bound.
//!
//! Brackets follow the `J_t` multiplier: `⟨n⟩² = ±m² + C_L|n|²`. Time
//! integrals run over the schedule grid of [`RhoSchedule`] with Simpson's
//! rule on each cell.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::spectral::{shell_counts, wick_constant, MassKind, ModeSet, TorusSpec};
use crate::stats::KahanSum;
use crate::variational::RhoSchedule;

/// Combinatorial prefactor of the chaos sums.
pub const CHAOS_PREFACTOR: f64 = 576.0;
/// Sign-carrying prefactor in front of `E∫(J_tW²)²` in the signed form of
/// `γ_N`; the values returned here are in the positive convention.
pub const GAMMA_SIGNED_PREFACTOR: f64 = -0.5;
/// Largest `N` for the pair sum in `γ_N`.
pub const MAX_PAIR_N: usize = 12;
/// Largest `N` for the triple sum in `δ_N`.
pub const MAX_TRIPLE_N: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChaosSumConfig {
    /// Time-grid points per doubling of `⟨t⟩`.
    pub per_octave: usize,
}

impl Default for ChaosSumConfig {
    fn default() -> Self {
        ChaosSumConfig { per_octave: 64 }
    }
}

/// `∫₀^t f` at every node, Simpson on each half cell.
pub fn cumulative_simpson(f: impl Fn(f64) -> f64, nodes: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; nodes.len()];
    for j in 1..nodes.len() {
        let (a, b) = (nodes[j - 1], nodes[j]);
        out[j] = out[j - 1] + (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b));
    }
    out
}

/// Schedule curves per magnitude class `|k|² ≤ K` on the Simpson nodes
/// (grid points and cell midpoints).
#[derive(Clone, Debug)]
pub struct ChaosQuadrature {
    pub schedule: RhoSchedule,
    pub nodes: Vec<f64>,
    weights: Vec<f64>,
    rho2: Vec<Vec<f64>>,
    sig2: Vec<Vec<f64>>,
}

impl ChaosQuadrature {
    /// Curves for classes `0..=max_k2` on the schedule of `spec`.
    pub fn new(spec: TorusSpec, max_k2: u32, config: ChaosSumConfig) -> Result<Self> {
        let schedule = RhoSchedule::with_grid(spec, MassKind::PositivePlusTwo, 2.0 * spec.n as f64 + 2.0, config.per_octave)?;
        // Break cells where a class switches on or off so that every
        // integrand is smooth on each cell.
        let mut breaks = schedule.times.clone();
        for k2 in 0..=max_k2 {
            for t in [(k2 as f64).sqrt(), (3.0 + 4.0 * k2 as f64).sqrt()] {
                if t > 0.0 && t < schedule.t_end {
                    breaks.push(t);
                }
            }
        }
        breaks.sort_by(f64::total_cmp);
        breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        let cells = breaks.len() - 1;
        let mut nodes = Vec::with_capacity(2 * cells + 1);
        let mut weights = vec![0.0; 2 * cells + 1];
        for (i, w) in breaks.windows(2).enumerate() {
            let h = w[1] - w[0];
            nodes.push(w[0]);
            nodes.push(0.5 * (w[0] + w[1]));
            weights[2 * i] += h / 6.0;
            weights[2 * i + 1] += 4.0 * h / 6.0;
            weights[2 * i + 2] += h / 6.0;
        }
        nodes.push(schedule.t_end);
        let rho2 = (0..=max_k2).map(|k2| nodes.iter().map(|&t| schedule.rho_t(k2, t).powi(2)).collect()).collect();
        let sig2 = (0..=max_k2).map(|k2| nodes.iter().map(|&t| schedule.sigma_sq(k2, t)).collect()).collect();
        Ok(ChaosQuadrature { schedule, nodes, weights, rho2, sig2 })
    }

    pub fn max_k2(&self) -> u32 {
        self.rho2.len() as u32 - 1
    }

    /// `g(a,b) = ∫₀^T σ_t(a)² ρ_t(b)² dt`.
    pub fn g(&self, a: u32, b: u32) -> f64 {
        let (sa, rb) = (&self.sig2[a as usize], &self.rho2[b as usize]);
        (0..self.nodes.len()).map(|j| self.weights[j] * sa[j] * rb[j]).sum()
    }

    /// `∫₀^T σ_t(c)² ∫₀^t σ_{t₁}(a)² ρ_{t₁}(b)² dt₁ dt`, evaluated after
    /// exchanging the order of integration.
    pub fn h(&self, c: u32, a: u32, b: u32) -> f64 {
        let (sa, rb, rc) = (&self.sig2[a as usize], &self.rho2[b as usize], &self.rho2[c as usize]);
        let last = *rc.last().expect("non-empty");
        (0..self.nodes.len()).map(|j| self.weights[j] * sa[j] * rb[j] * (last - rc[j])).sum()
    }

    /// Same integral as [`ChaosQuadrature::h`] by nested cumulative quadrature.
    pub fn h_nested(&self, c: u32, a: u32, b: u32) -> f64 {
        let s = &self.schedule;
        let inner = cumulative_simpson(|t| s.sigma_sq(a, t) * s.rho_t(b, t).powi(2), &self.nodes);
        let sc = &self.sig2[c as usize];
        (0..self.nodes.len()).map(|j| self.weights[j] * sc[j] * inner[j]).sum()
    }

    /// Ordered four-time integral
    /// `∫_{t₃<t₂<t₁<t<T} σ_t(d)² σ_{t₁}(a)² σ_{t₂}(b)² σ_{t₃}(c)²`.
    pub fn ordered4(&self, d: u32, a: u32, b: u32, c: u32) -> f64 {
        let s = &self.schedule;
        let inner = cumulative_simpson(|t| s.sigma_sq(b, t) * s.rho_t(c, t).powi(2), &self.nodes);
        let (sa, rd) = (&self.sig2[a as usize], &self.rho2[d as usize]);
        let last = *rd.last().expect("non-empty");
        (0..self.nodes.len()).map(|j| self.weights[j] * sa[j] * inner[j] * (last - rd[j])).sum()
    }
}

/// `g(a,b)` over the magnitude classes occurring in `K_N`.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialTimeTable {
    pub classes: Vec<u32>,
    /// `g[i][j] = g(classes[i], classes[j])`.
    pub g: Vec<Vec<f64>>,
}

pub fn radial_time_table(spec: TorusSpec, config: ChaosSumConfig) -> Result<RadialTimeTable> {
    let n2 = (spec.n * spec.n) as u32;
    let quad = ChaosQuadrature::new(spec, n2, config)?;
    let classes: Vec<u32> = shell_counts(spec).iter().enumerate().filter(|(_, &c)| c > 0).map(|(k2, _)| k2 as u32).collect();
    let g = classes.iter().map(|&a| classes.iter().map(|&b| quad.g(a, b)).collect()).collect();
    Ok(RadialTimeTable { classes, g })
}

fn check_3d(spec: TorusSpec) -> Result<()> {
    spec.validate()?;
    if spec.d != 3 {
        return Err(Error::InvalidArgument(format!("chaos sums need d = 3, got d = {}", spec.d)));
    }
    Ok(())
}

fn inv_bracket(mass_kind: MassKind, c_l: f64, k2: u32) -> f64 {
    if mass_kind.admits(k2) {
        1.0 / mass_kind.eigenvalue(c_l, k2)
    } else {
        0.0
    }
}

/// `γ_N = 24² Σ_{n₁,n₂} ∫σ_t(n₁₂)² ∫₀^t σ_{t₁}(n₁)² ρ_{t₁}(n₂)² / (⟨n₁₂⟩²⟨n₁⟩²⟨n₂⟩²)`
/// with `|n₁₂| ≤ N`, grouped by magnitude classes.
pub fn gamma_n(spec: TorusSpec, mass_kind: MassKind, config: ChaosSumConfig) -> Result<f64> {
    check_3d(spec)?;
    if spec.n > MAX_PAIR_N {
        return Err(Error::Budget(format!("γ_N pair sum limited to N ≤ {MAX_PAIR_N}, got {}", spec.n)));
    }
    let modes = ModeSet::new(spec);
    let n2 = (spec.n * spec.n) as u32;
    let m = n2 as usize + 1;
    let c_l = spec.c_l();
    let counts = modes
        .ks
        .par_iter()
        .fold(
            || vec![0u32; m * m * m],
            |mut acc, n1| {
                let a = (n1[0] * n1[0] + n1[1] * n1[1] + n1[2] * n1[2]) as u32;
                if !mass_kind.admits(a) {
                    return acc;
                }
                for (n2v, &b) in modes.ks.iter().zip(&modes.k2) {
                    let s = [n1[0] + n2v[0], n1[1] + n2v[1], n1[2] + n2v[2]];
                    let c = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]) as u32;
                    if c <= n2 && mass_kind.admits(b) && mass_kind.admits(c) {
                        acc[(c as usize * m + a as usize) * m + b as usize] += 1;
                    }
                }
                acc
            },
        )
        .reduce(|| vec![0u32; m * m * m], |mut x, y| {
            x.iter_mut().zip(&y).for_each(|(a, b)| *a += b);
            x
        });
    let quad = ChaosQuadrature::new(spec, n2, config)?;
    let partial: Vec<KahanSum> = (0..m)
        .into_par_iter()
        .map(|c| {
            let mut sum = KahanSum::default();
            for a in 0..m {
                for b in 0..m {
                    let count = counts[(c * m + a) * m + b];
                    if count > 0 {
                        let w = inv_bracket(mass_kind, c_l, c as u32) * inv_bracket(mass_kind, c_l, a as u32) * inv_bracket(mass_kind, c_l, b as u32);
                        sum.add(count as f64 * w * quad.h(c as u32, a as u32, b as u32));
                    }
                }
            }
            sum
        })
        .collect();
    let mut total = KahanSum::default();
    partial.iter().for_each(|s| total.add(s.value()));
    Ok(CHAOS_PREFACTOR * total.value())
}

/// Ungrouped pair sum for [`gamma_n`]; `symmetrize` averages the two
/// labelings of each pair.
pub fn gamma_n_brute(spec: TorusSpec, mass_kind: MassKind, config: ChaosSumConfig, symmetrize: bool) -> Result<f64> {
    check_3d(spec)?;
    let modes = ModeSet::new(spec);
    let n2 = (spec.n * spec.n) as u32;
    let quad = ChaosQuadrature::new(spec, n2, config)?;
    let c_l = spec.c_l();
    let mut total = KahanSum::default();
    for (n1, &a) in modes.ks.iter().zip(&modes.k2) {
        for (n2v, &b) in modes.ks.iter().zip(&modes.k2) {
            let s = [n1[0] + n2v[0], n1[1] + n2v[1], n1[2] + n2v[2]];
            let c = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]) as u32;
            if c > n2 {
                continue;
            }
            let w = inv_bracket(mass_kind, c_l, c) * inv_bracket(mass_kind, c_l, a) * inv_bracket(mass_kind, c_l, b);
            if w == 0.0 {
                continue;
            }
            let h = if symmetrize { 0.5 * (quad.h(c, a, b) + quad.h(c, b, a)) } else { quad.h(c, a, b) };
            total.add(w * h);
        }
    }
    Ok(CHAOS_PREFACTOR * total.value())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GammaDiffRow {
    pub n: usize,
    pub gamma_plus: f64,
    pub gamma_minus: f64,
    pub diff: f64,
    /// Change of `diff` from the previous row.
    pub increment: Option<f64>,
}

pub fn gamma_diff_table(spec: TorusSpec, ns: &[usize], config: ChaosSumConfig) -> Result<Vec<GammaDiffRow>> {
    let mut rows: Vec<GammaDiffRow> = Vec::with_capacity(ns.len());
    for &n in ns {
        let s = spec.with_n(n);
        let gamma_plus = gamma_n(s, MassKind::PositivePlusTwo, config)?;
        let gamma_minus = gamma_n(s, MassKind::NegativeUnit, config)?;
        let diff = gamma_plus - gamma_minus;
        let increment = rows.last().map(|r| diff - r.diff);
        rows.push(GammaDiffRow { n, gamma_plus, gamma_minus, diff, increment });
    }
    Ok(rows)
}

/// `C_{N,+} − C_{N,−}` at `β = 1` and the `N`-uniform bound
/// `L^{−d}(½ + Σ_{k≠0} |1/(C_L|k|²+2) − 1/(C_L|k|²−1)|)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CDiff {
    pub value: f64,
    /// Oscillatory part, `value − 1/(2L^d)`.
    pub oscillatory: f64,
    pub bound: f64,
    /// `k = 0` term of the bound before the volume factor.
    pub k0_term: f64,
    /// Estimated lattice sum beyond the summation radius.
    pub remainder: f64,
}

/// Radius of the explicit lattice sum in the bound of [`c_diff`].
pub const C_DIFF_BOUND_RADIUS: usize = 48;

pub fn c_diff(spec: TorusSpec) -> Result<CDiff> {
    spec.validate()?;
    let value = wick_constant(spec, MassKind::PositivePlusTwo, 1.0).c - wick_constant(spec, MassKind::NegativeUnit, 1.0).c;
    let oscillatory = value - 0.5 / spec.volume();
    let c_l = spec.c_l();
    let r = C_DIFF_BOUND_RADIUS.max(spec.n);
    let mut sum = KahanSum::default();
    for (k2, &count) in shell_counts(spec.with_n(r)).iter().enumerate().skip(1) {
        if count > 0 {
            let y = c_l * k2 as f64;
            sum.add(count as f64 * (1.0 / (y + 2.0) - 1.0 / (y - 1.0)).abs());
        }
    }
    let d = spec.d as i32;
    let area = match spec.d {
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 4.0 * PI,
    };
    let rf = r as f64 + 0.5;
    let remainder = 3.0 * area * rf.powi(d - 4) / (c_l * c_l * (4 - d) as f64);
    let k0_term = 0.5;
    let bound = (k0_term + sum.value() + remainder) / spec.volume();
    Ok(CDiff { value, oscillatory, bound, k0_term, remainder })
}

/// Leading `δ_N` term `−(λ²/2)·24² Σ_{n₁,n₂,n₃} Q / (⟨n₁₂₃⟩² ∏⟨n_i⟩²)`, `λ = 1/(4β)`,
/// with `Q` the ordered four-time integral and `|n₁₂₃| ≤ N`.
pub fn delta_leading(spec: TorusSpec, mass_kind: MassKind, beta: f64, config: ChaosSumConfig) -> Result<f64> {
    check_3d(spec)?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("β = {beta} must be positive and finite")));
    }
    if spec.n > MAX_TRIPLE_N {
        return Err(Error::Budget(format!("δ_N triple sum limited to N ≤ {MAX_TRIPLE_N}, got {}", spec.n)));
    }
    let lambda = 1.0 / (4.0 * beta);
    Ok(-0.5 * lambda * lambda * delta_chaos_sum(spec, mass_kind, config)?)
}

/// `24² Σ Q / (⟨n₁₂₃⟩² ∏⟨n_i⟩²)` without the coupling prefactor.
pub fn delta_chaos_sum(spec: TorusSpec, mass_kind: MassKind, config: ChaosSumConfig) -> Result<f64> {
    check_3d(spec)?;
    let modes = ModeSet::new(spec);
    let n2 = (spec.n * spec.n) as u32;
    let m = n2 as usize + 1;
    let c_l = spec.c_l();
    let mut counts = vec![0u32; m * m * m * m];
    let admitted: Vec<usize> = (0..modes.len()).filter(|&i| mass_kind.admits(modes.k2[i])).collect();
    for &i in &admitted {
        for &j in &admitted {
            for &k in &admitted {
                let (x, y, z) = (modes.ks[i], modes.ks[j], modes.ks[k]);
                let s = [x[0] + y[0] + z[0], x[1] + y[1] + z[1], x[2] + y[2] + z[2]];
                let d = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]) as u32;
                if d <= n2 && mass_kind.admits(d) {
                    let (a, b, c) = (modes.k2[i] as usize, modes.k2[j] as usize, modes.k2[k] as usize);
                    counts[((d as usize * m + a) * m + b) * m + c] += 1;
                }
            }
        }
    }
    let quad = ChaosQuadrature::new(spec, n2, config)?;
    let mut total = KahanSum::default();
    for (idx, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let c = (idx % m) as u32;
        let b = ((idx / m) % m) as u32;
        let a = ((idx / (m * m)) % m) as u32;
        let d = (idx / (m * m * m)) as u32;
        let w = [d, a, b, c].iter().map(|&k| inv_bracket(mass_kind, c_l, k)).product::<f64>();
        total.add(count as f64 * w * quad.ordered4(d, a, b, c));
    }
    Ok(CHAOS_PREFACTOR * total.value())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenormConstants3D {
    pub spec: TorusSpec,
    pub beta: f64,
    pub c_plus: f64,
    pub c_minus: f64,
    pub gamma_plus: f64,
    pub gamma_minus: f64,
    /// Present for `N ≤ MAX_TRIPLE_N`.
    pub delta_leading_plus: Option<f64>,
    pub delta_leading_minus: Option<f64>,
}

impl RenormConstants3D {
    pub fn compute(spec: TorusSpec, beta: f64, config: ChaosSumConfig) -> Result<Self> {
        check_3d(spec)?;
        let delta = |kind| if spec.n <= MAX_TRIPLE_N { delta_leading(spec, kind, beta, config).map(Some) } else { Ok(None) };
        Ok(RenormConstants3D {
            spec,
            beta,
            c_plus: wick_constant(spec, MassKind::PositivePlusTwo, beta).c,
            c_minus: wick_constant(spec, MassKind::NegativeUnit, beta).c,
            gamma_plus: gamma_n(spec, MassKind::PositivePlusTwo, config)?,
            gamma_minus: gamma_n(spec, MassKind::NegativeUnit, config)?,
            delta_leading_plus: delta(MassKind::PositivePlusTwo)?,
            delta_leading_minus: delta(MassKind::NegativeUnit)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvolutionRow {
    pub n: i64,
    pub sum: f64,
    /// `S(n)/⟨n⟩^{d−α−β}`.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvolutionCheck {
    pub rows: Vec<ConvolutionRow>,
    pub max_ratio: f64,
    pub min_ratio: f64,
    pub tail: f64,
}

/// `S(n) = Σ_{n₁ ∈ Z^d} ⟨n₁⟩^{−α}⟨n − n₁⟩^{−β}` for `n = (n, 0, …)`, summed over
/// the ball `|n₁| ≤ R` plus the continuum tail `|S^{d−1}| R^{d−α−β}/(α+β−d)`.
pub fn convolution_bound_check(alpha: f64, beta_exp: f64, d: usize, ns: &[i64], radius: usize) -> Result<ConvolutionCheck> {
    let df = d as f64;
    if !(1..=3).contains(&d) || !(alpha < df && beta_exp < df && alpha + beta_exp > df) {
        return Err(Error::InvalidArgument(format!("need α, β < d < α + β, got α = {alpha}, β = {beta_exp}, d = {d}")));
    }
    let nmax = ns.iter().map(|n| n.unsigned_abs()).max().unwrap_or(0) as usize;
    let r = radius.max(4 * nmax) as i64;
    let area = match d {
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 4.0 * PI,
    };
    let tail = area * (r as f64).powf(df - alpha - beta_exp) / (alpha + beta_exp - df);
    let (rb, rc) = (r, if d >= 2 { r } else { 0 });
    let rz = if d >= 3 { r } else { 0 };
    let rows = ns
        .par_iter()
        .map(|&n| {
            let mut sum = KahanSum::default();
            for a in -rb..=rb {
                for b in -rc..=rc {
                    for c in -rz..=rz {
                        let q = a * a + b * b + c * c;
                        if q > r * r {
                            continue;
                        }
                        let p = (n - a) * (n - a) + b * b + c * c;
                        sum.add((1.0 + q as f64).powf(-0.5 * alpha) * (1.0 + p as f64).powf(-0.5 * beta_exp));
                    }
                }
            }
            let s = sum.value() + tail;
            let ratio = s / (1.0 + (n * n) as f64).powf(0.5 * (df - alpha - beta_exp));
            ConvolutionRow { n, sum: s, ratio }
        })
        .collect::<Vec<_>>();
    let max_ratio = rows.iter().map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max);
    let min_ratio = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    Ok(ConvolutionCheck { rows, max_ratio, min_ratio, tail })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::spectral::Complex64;
    use crate::stats::mean_se;
    use crate::variational::BrownianPath;

    fn spec3(n: usize) -> TorusSpec {
        TorusSpec::new(3, 1.0, n).unwrap()
    }

    fn cfg() -> ChaosSumConfig {
        ChaosSumConfig::default()
    }

    #[test]
    fn cumulative_simpson_exact_on_cubics() {
        let nodes: Vec<f64> = (0..=10).map(|i| (i as f64 * 0.3).powf(1.5)).collect();
        let out = cumulative_simpson(|t| 3.0 * t * t - t, &nodes);
        for (o, t) in out.iter().zip(&nodes) {
            assert!((o - (t * t * t - 0.5 * t * t)).abs() < 1e-12);
        }
    }

    #[test]
    fn radial_table_examples() {
        let spec = spec3(4);
        let t = radial_time_table(spec, cfg()).unwrap();
        assert_eq!(t.classes.first(), Some(&0));
        assert!(t.g.iter().flatten().all(|&x| (-1e-9..=1.0 + 1e-9).contains(&x)));
        let q = ChaosQuadrature::new(spec, 16, cfg()).unwrap();
        // b switched on before a: g = ρ_T(a)²/… = 1.
        assert!((q.g(0, 0) - 0.5).abs() < 1e-7);
        assert!((q.g(16, 0) - 1.0).abs() < 1e-6);
        let fine = ChaosQuadrature::new(spec, 16, ChaosSumConfig { per_octave: 128 }).unwrap();
        for &(a, b) in &[(0, 0), (1, 4), (9, 2), (16, 16)] {
            assert!((q.g(a, b) - fine.g(a, b)).abs() < 1e-7);
        }
        // A class outside the schedule's window never switches on.
        let short = ChaosQuadrature::new(spec3(1), 100, cfg()).unwrap();
        assert_eq!(short.g(100, 0), 0.0);
    }

    #[test]
    fn swapped_order_matches_nested() {
        let q = ChaosQuadrature::new(spec3(3), 9, cfg()).unwrap();
        for &(c, a, b) in &[(0, 0, 0), (1, 2, 3), (9, 4, 1), (5, 5, 0)] {
            assert!((q.h(c, a, b) - q.h_nested(c, a, b)).abs() < 1e-8, "{c} {a} {b}");
        }
        // One class: ∫ r' r²/2 = 1/6.
        assert!((q.h(0, 0, 0) - 1.0 / 6.0).abs() < 1e-7);
        assert!((q.ordered4(0, 0, 0, 0) - 1.0 / 24.0).abs() < 1e-7);
    }

    #[test]
    fn gamma_degenerate_cases() {
        let g = gamma_n(spec3(0), MassKind::PositivePlusTwo, cfg()).unwrap();
        assert!((g - 12.0).abs() < 1e-6 * 12.0, "{g}");
        assert_eq!(gamma_n(spec3(0), MassKind::NegativeUnit, cfg()).unwrap(), 0.0);
        assert!(matches!(gamma_n(spec3(13), MassKind::NegativeUnit, cfg()), Err(Error::Budget(_))));
        assert!(gamma_n(TorusSpec::new(2, 1.0, 2).unwrap(), MassKind::NegativeUnit, cfg()).is_err());
    }

    #[test]
    fn grouped_matches_brute_force() {
        for kind in [MassKind::PositivePlusTwo, MassKind::NegativeUnit] {
            for n in [1, 2] {
                let grouped = gamma_n(spec3(n), kind, cfg()).unwrap();
                let brute = gamma_n_brute(spec3(n), kind, cfg(), false).unwrap();
                let sym = gamma_n_brute(spec3(n), kind, cfg(), true).unwrap();
                assert!((grouped - brute).abs() < 1e-10 * grouped.abs().max(1.0), "{grouped} {brute}");
                assert!((sym - brute).abs() < 1e-10 * brute.abs().max(1.0));
            }
        }
    }

    #[test]
    fn gamma_monotone_and_difference_settles() {
        let spec = TorusSpec::new(3, 3.0, 0).unwrap();
        let rows = gamma_diff_table(spec, &[0, 2, 4, 6, 8], cfg()).unwrap();
        assert_eq!(rows[0].gamma_minus, 0.0);
        assert_eq!(rows[0].diff, rows[0].gamma_plus);
        for w in rows.windows(2) {
            assert!(w[1].gamma_plus > w[0].gamma_plus && w[1].gamma_minus > w[0].gamma_minus);
        }
        let inc: Vec<f64> = rows.iter().skip(2).map(|r| r.increment.unwrap().abs()).collect();
        assert!(inc.windows(2).all(|w| w[1] < w[0]), "{inc:?}");
        let growth = rows[4].gamma_minus - rows[1].gamma_minus;
        assert!((rows[4].diff - rows[1].diff).abs() < growth, "{rows:?}");
    }

    #[test]
    fn c_diff_examples() {
        let d = c_diff(spec3(4)).unwrap();
        assert_eq!(d.k0_term, 0.5);
        let (d4, d8, d16) = (c_diff(spec3(4)).unwrap(), c_diff(spec3(8)).unwrap(), c_diff(spec3(16)).unwrap());
        assert!((d16.value - d8.value).abs() < (d8.value - d4.value).abs());
        for x in [&d4, &d8, &d16] {
            assert!(x.value.abs() <= x.bound);
            assert!(x.oscillatory < 0.0);
        }
        let d2: Vec<f64> = [4, 8, 16, 32].iter().map(|&n| c_diff(TorusSpec::new(2, 1.0, n).unwrap()).unwrap().value).collect();
        let b2 = c_diff(TorusSpec::new(2, 1.0, 32).unwrap()).unwrap().bound;
        assert!(d2.iter().all(|v| v.abs() <= b2), "{d2:?} {b2}");
    }

    #[test]
    fn delta_examples() {
        assert_eq!(delta_leading(spec3(0), MassKind::NegativeUnit, 2.0, cfg()).unwrap(), 0.0);
        let d0 = delta_leading(spec3(0), MassKind::PositivePlusTwo, 1.0, cfg()).unwrap();
        // 24²·(1/24)/2⁴, times −λ²/2 with λ = 1/4.
        assert!((d0 + 0.5 / 16.0 * 576.0 / 24.0 / 16.0).abs() < 1e-6 * d0.abs(), "{d0}");
        let (a, b) = (
            delta_leading(spec3(1), MassKind::PositivePlusTwo, 1.0, cfg()).unwrap(),
            delta_leading(spec3(1), MassKind::PositivePlusTwo, 3.0, cfg()).unwrap(),
        );
        assert!((a / b - 9.0).abs() < 1e-12);
        assert!(matches!(delta_leading(spec3(4), MassKind::PositivePlusTwo, 1.0, cfg()), Err(Error::Budget(_))));
    }

    /// Monte-Carlo of `E∫∫(J_t :W_t^p:)²` over simulated Gaussian paths,
    /// trapezoidal in time.
    fn chaos_mc(spec: TorusSpec, kind: MassKind, p: usize, paths: usize, seed: u64) -> (f64, f64) {
        let sched = RhoSchedule::with_grid(spec, kind, 2.0 * spec.n as f64 + 2.0, 64).unwrap();
        let modes = sched.modes.clone();
        let len = modes.len();
        let vol = spec.volume();
        let c_l = spec.c_l();
        let wick = |t: f64| -> f64 {
            (0..len)
                .filter(|&i| kind.admits(modes.k2[i]))
                .map(|i| sched.rho_t(modes.k2[i], t).powi(2) / (vol * kind.eigenvalue(c_l, modes.k2[i])))
                .sum()
        };
        let power = |w: &[Complex64], c: f64| -> Vec<Complex64> {
            let mut out = vec![Complex64::new(0.0, 0.0); len];
            for i in 0..len {
                for j in 0..len {
                    let kij = [modes.ks[i][0] + modes.ks[j][0], modes.ks[i][1] + modes.ks[j][1], modes.ks[i][2] + modes.ks[j][2]];
                    if p == 2 {
                        if let Some(o) = modes.index_of(kij) {
                            out[o] += w[i] * w[j];
                        }
                    } else {
                        for l in 0..len {
                            let k = [kij[0] + modes.ks[l][0], kij[1] + modes.ks[l][1], kij[2] + modes.ks[l][2]];
                            if let Some(o) = modes.index_of(k) {
                                out[o] += w[i] * w[j] * w[l];
                            }
                        }
                    }
                }
            }
            if p == 2 {
                out[modes.zero] -= c;
            } else {
                for i in 0..len {
                    out[i] -= w[i] * (3.0 * c);
                }
            }
            out
        };
        let energy = |f: &[Complex64], cell: usize| -> f64 {
            (0..len).map(|i| sched.jbar(cell)[i].powi(2) * f[i].norm_sqr()).sum::<f64>() * vol
        };
        let mut rng = stream(seed, 0);
        let samples: Vec<f64> = (0..paths)
            .map(|_| {
                let path = BrownianPath::sample(&sched, &mut rng);
                let mut w = vec![Complex64::new(0.0, 0.0); len];
                let mut prev = power(&w, 0.0);
                let mut acc = 0.0;
                for (i, inc) in path.increments.iter().enumerate() {
                    for ((x, b), j) in w.iter_mut().zip(inc).zip(sched.jbar(i)) {
                        *x += b * *j;
                    }
                    let next = power(&w, wick(sched.times[i + 1]));
                    let dt = sched.times[i + 1] - sched.times[i];
                    acc += 0.5 * dt * (energy(&prev, i) + energy(&next, i));
                    prev = next;
                }
                acc
            })
            .collect();
        mean_se(&samples)
    }

    #[test]
    fn gamma_matches_chaos_monte_carlo() {
        // Σ ρ_t(n₁)²ρ_t(n₂)² symmetrizes to two ordered integrals and the
        // Wick square has two pairings, so γ = 24²/4 · E∫∫(J_t:W_t²:)².
        for (n, kind) in [(0, MassKind::PositivePlusTwo), (1, MassKind::PositivePlusTwo), (2, MassKind::NegativeUnit)] {
            let (m, se) = chaos_mc(spec3(n), kind, 2, 4000, 11 + n as u64);
            let g = gamma_n(spec3(n), kind, cfg()).unwrap();
            assert!((144.0 * m - g).abs() < 3.0 * 144.0 * se + 1e-3 * g.max(1e-12), "N = {n}: {} ± {} vs {g}", 144.0 * m, 144.0 * se);
        }
    }

    #[test]
    fn delta_matches_chaos_monte_carlo() {
        // Three times: 3! orderings and 3! pairings.
        let spec = spec3(1);
        let beta = 2.0;
        let lambda = 1.0 / (4.0 * beta);
        let (m, se) = chaos_mc(spec, MassKind::PositivePlusTwo, 3, 4000, 21);
        let scale = -0.5 * lambda * lambda * 576.0 / 36.0;
        let d = delta_leading(spec, MassKind::PositivePlusTwo, beta, cfg()).unwrap();
        assert!((scale * m - d).abs() < 3.0 * scale.abs() * se + 1e-3 * d.abs(), "{} ± {} vs {d}", scale * m, scale.abs() * se);
    }

    #[test]
    fn renorm_constants_bundle() {
        let r = RenormConstants3D::compute(spec3(2), 2.0, cfg()).unwrap();
        assert!(r.gamma_plus > 0.0 && r.gamma_minus > 0.0);
        assert!(r.c_plus - 0.5 / (2.0 * 1.0) < r.c_minus);
        assert!(r.delta_leading_plus.unwrap() < 0.0 && r.delta_leading_minus.unwrap() < 0.0);
        assert!(RenormConstants3D::compute(spec3(5), 2.0, cfg()).unwrap().delta_leading_plus.is_none());
    }

    #[test]
    fn convolution_examples() {
        let c = convolution_bound_check(2.0, 2.0, 3, &[4, 8, 16], 48).unwrap();
        assert!(c.max_ratio / c.min_ratio < 1.2 / 0.8, "{c:?}");
        let s = convolution_bound_check(2.0, 2.0, 3, &[5, -5, 0], 24).unwrap();
        assert!((s.rows[0].sum - s.rows[1].sum).abs() < 1e-13 * s.rows[0].sum);
        let direct: f64 = {
            let r = 24i64;
            let mut acc = KahanSum::default();
            for a in -r..=r {
                for b in -r..=r {
                    for c in -r..=r {
                        let q = a * a + b * b + c * c;
                        if q <= r * r {
                            acc.add((1.0 + q as f64).powi(-2));
                        }
                    }
                }
            }
            acc.value()
        };
        assert!((s.rows[2].sum - s.tail - direct).abs() < 1e-12 * direct);
        assert!(convolution_bound_check(3.0, 2.0, 3, &[1], 8).is_err());
        assert!(convolution_bound_check(1.0, 1.0, 3, &[1], 8).is_err());
    }
}
