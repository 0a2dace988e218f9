//! Small statistical helpers shared by the estimators.

/// Sample mean and standard error of the mean.
pub fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Mean and batch-means standard error using `batches` contiguous batches.
/// Trailing samples that do not fill a batch are dropped from the error
/// estimate but kept in the mean.
pub fn batch_means(x: &[f64], batches: usize) -> (f64, f64) {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let size = n / batches.max(1);
    if batches < 2 || size == 0 {
        return (mean, f64::NAN);
    }
    let b: Vec<f64> = (0..batches).map(|i| x[i * size..(i + 1) * size].iter().sum::<f64>() / size as f64).collect();
    (mean, mean_se(&b).1)
}

/// Wilson score interval for `k` successes out of `n` at normal quantile `z`.
pub fn wilson(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// 97.5% standard normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Two-sample Kolmogorov–Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let x = a[i].min(b[j]);
        while i < na && a[i] <= x {
            i += 1;
        }
        while j < nb && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let ne = (na * nb) as f64 / (na + nb) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_q(lambda))
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Least-squares slope of `y` on `x` with its standard error.
pub fn regression_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let resid: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
    (slope, (resid / (n - 2.0) / sxx).sqrt())
}

/// Integrated autocorrelation time with Sokal's automatic window (c = 5).
pub fn integrated_autocorr_time(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return 1.0;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    if var == 0.0 {
        return 1.0;
    }
    let mut tau = 1.0;
    for lag in 1..n / 2 {
        let c: f64 = (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum::<f64>() / n as f64;
        tau += 2.0 * c / var;
        if lag as f64 >= 5.0 * tau {
            break;
        }
    }
    tau.max(1.0)
}

/// Sampler health summary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerDiagnostics {
    pub acceptance: f64,
    pub iat: f64,
    pub ess: f64,
}

impl SamplerDiagnostics {
    pub fn from_series(accepted: usize, proposed: usize, zero_mode: &[f64]) -> Self {
        let iat = integrated_autocorr_time(zero_mode);
        let n = zero_mode.len() as f64;
        SamplerDiagnostics {
            acceptance: if proposed > 0 { accepted as f64 / proposed as f64 } else { 0.0 },
            iat,
            ess: (n / iat).min(n),
        }
    }
}

/// Neumaier-compensated sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, stream};

    #[test]
    fn wilson_known_values() {
        let (lo, hi) = wilson(50, 100, Z95);
        assert!((lo - 0.4038).abs() < 1e-4 && (hi - 0.5962).abs() < 1e-4);
        let (lo, hi) = wilson(10, 10, Z95);
        assert!((hi - 1.0).abs() < 1e-12 && (lo - 0.7225).abs() < 1e-4);
    }

    #[test]
    fn ks_detects_shift_and_accepts_null() {
        let mut rng = stream(1, 0);
        let a: Vec<f64> = (0..2000).map(|_| normal(&mut rng)).collect();
        let b: Vec<f64> = (0..2000).map(|_| normal(&mut rng)).collect();
        let c: Vec<f64> = (0..2000).map(|_| normal(&mut rng) + 0.2).collect();
        assert!(ks_two_sample(&a, &b).1 > 0.01);
        assert!(ks_two_sample(&a, &c).1 < 1e-4);
        assert!((kolmogorov_q(1.36) - 0.0493).abs() < 1e-3);
    }

    #[test]
    fn regression_recovers_slope() {
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let (s, se) = regression_slope(&x, &y);
        assert!((s - 2.0).abs() < 1e-12 && se < 1e-10);
    }

    #[test]
    fn iat_of_ar1() {
        let mut rng = stream(2, 0);
        let rho: f64 = 0.8;
        let mut x = 0.0;
        let series: Vec<f64> = (0..200_000)
            .map(|_| {
                x = rho * x + (1.0 - rho * rho).sqrt() * normal(&mut rng);
                x
            })
            .collect();
        let tau = integrated_autocorr_time(&series);
        let exact = (1.0 + rho) / (1.0 - rho);
        assert!((tau - exact).abs() / exact < 0.1, "{tau}");
    }

    #[test]
    fn batch_means_iid() {
        let mut rng = stream(3, 0);
        let x: Vec<f64> = (0..10_000).map(|_| normal(&mut rng)).collect();
        let (_, se) = batch_means(&x, 20);
        assert!((se - 0.01).abs() < 0.004);
    }

    #[test]
    fn compensated_sum() {
        let mut s = KahanSum::default();
        s.add(1e16);
        s.add(1.0);
        s.add(-1e16);
        assert_eq!(s.value(), 1.0);
    }
}
