//! Mergeable Monte Carlo statistics, two-sample Kolmogorov–Smirnov and
//! least-squares fits.

use serde::{Deserialize, Serialize};

/// Values are accumulated as fixed-point integers with this many fractional
/// bits, which makes merging exactly associative and commutative.
const FRAC_BITS: i32 = 64;
const MAX_ABS: f64 = 1e9;

fn to_fixed(x: f64) -> i128 {
    (x * 2f64.powi(FRAC_BITS)).round() as i128
}

fn from_fixed(v: i128) -> f64 {
    v as f64 * 2f64.powi(-FRAC_BITS)
}

/// Running sums for one estimator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Accumulator {
    sum: i128,
    sum_sq: i128,
    n: u64,
    censored: u64,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add one sample. `censored` marks samples whose path was stopped by
    /// the near-boundary rule.
    pub fn push(&mut self, x: f64, censored: bool) {
        assert!(
            x.is_finite() && x.abs() < MAX_ABS,
            "sample {x} outside the accumulator range"
        );
        self.sum += to_fixed(x);
        self.sum_sq += to_fixed(x * x);
        self.n += 1;
        if censored {
            self.censored += 1;
        }
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self {
            sum: self.sum + other.sum,
            sum_sq: self.sum_sq + other.sum_sq,
            n: self.n + other.n,
            censored: self.censored + other.censored,
        }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn estimate(&self) -> Estimate {
        let n = self.n;
        if n == 0 {
            return Estimate {
                acc: *self,
                ..Estimate::default()
            };
        }
        let nf = n as f64;
        let mean = from_fixed(self.sum) / nf;
        let var = if n > 1 {
            ((from_fixed(self.sum_sq) - nf * mean * mean) / (nf - 1.0)).max(0.0)
        } else {
            0.0
        };
        Estimate {
            mean,
            stderr: (var / nf).sqrt(),
            n,
            censored_fraction: self.censored as f64 / nf,
            acc: *self,
        }
    }
}

/// Mean, standard error, count and the fraction of censored samples.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
    pub censored_fraction: f64,
    #[serde(skip)]
    acc: Accumulator,
}

impl PartialEq for Estimate {
    fn eq(&self, other: &Self) -> bool {
        self.acc == other.acc
    }
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let mut acc = Accumulator::new();
        for &x in xs {
            acc.push(x, false);
        }
        acc.estimate()
    }

    pub fn merge(&self, other: &Self) -> Self {
        self.acc.merge(&other.acc).estimate()
    }

    pub fn accumulator(&self) -> Accumulator {
        self.acc
    }

    /// Worst-case bracket when censored samples could have contributed up
    /// to 1 each.
    pub fn censor_bracket(&self) -> (f64, f64) {
        (self.mean, self.mean + self.censored_fraction)
    }

    /// `(self - other) / sqrt(se₁² + se₂²)`.
    pub fn zscore(&self, other: &Self) -> f64 {
        let se = (self.stderr.powi(2) + other.stderr.powi(2)).sqrt();
        if se == 0.0 {
            if self.mean == other.mean {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - other.mean) / se
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Kolmogorov survival function `Q(t) = 2 Σ (-1)^{k-1} e^{-2k²t²}`.
fn kolmogorov_q(t: f64) -> f64 {
    if t < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * t * t).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample KS test with the asymptotic p-value (Stephens' correction).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    assert!(!a.is_empty() && !b.is_empty());
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let sq = ne.sqrt();
    KsResult {
        statistic: d,
        p_value: kolmogorov_q((sq + 0.12 + 0.11 / sq) * d),
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares `y = slope·x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    LinearFit { slope, intercept, r2 }
}

/// Least squares through the origin, `y = slope·x`. The reported R² is the
/// centered one, so a flat cloud does not score well just because it sits
/// away from zero.
pub fn fit_through_origin(xs: &[f64], ys: &[f64]) -> LinearFit {
    assert_eq!(xs.len(), ys.len());
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let slope = sxy / sxx;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    LinearFit {
        slope,
        intercept: 0.0,
        r2,
    }
}

/// Slope of `log|y|` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> LinearFit {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.abs().ln()).collect();
    linear_fit(&lx, &ly)
}
