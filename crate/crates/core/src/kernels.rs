//! Normalization constants, Lévy intensities and the characteristic / Lévy
//! exponents of the process family `X^a = B + a·Y`, where `B` has generator
//! `Δ` and `Y` is the rotationally symmetric α-stable process.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{param, Error, Result};
use crate::quad::{integrate_pieces, QuadOptions};

/// Analytic knobs shared by every module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// Dimension.
    pub d: usize,
    /// Stability index in `(0, 2)`.
    pub alpha: f64,
    /// Weight of the stable part. `a = 0` is pure Brownian motion.
    pub a: f64,
    /// Upper bound `M` for the weight.
    pub m_cap: f64,
    /// Truncation radius of the jump kernel; `None` means untruncated.
    #[serde(default)]
    pub lambda: Option<f64>,
}

impl Params {
    pub fn new(d: usize, alpha: f64, a: f64, m_cap: f64, lambda: Option<f64>) -> Result<Self> {
        let p = Self {
            d,
            alpha,
            a,
            m_cap,
            lambda,
        };
        p.validate()?;
        Ok(p)
    }

    /// Untruncated parameters with `M = max(a, 1)`.
    pub fn untruncated(d: usize, alpha: f64, a: f64) -> Result<Self> {
        Self::new(d, alpha, a, a.max(1.0), None)
    }

    pub fn validate(&self) -> Result<()> {
        check_index(self.d, self.alpha)?;
        if !(self.m_cap > 0.0) || !self.m_cap.is_finite() {
            return param(format!("m_cap must be positive and finite, got {}", self.m_cap));
        }
        if !(self.a >= 0.0 && self.a <= self.m_cap) {
            return param(format!("a must lie in [0, M={}], got {}", self.m_cap, self.a));
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0) {
                return param(format!("lambda must be positive, got {l}"));
            }
        }
        Ok(())
    }

    pub fn with_a(mut self, a: f64) -> Self {
        self.a = a;
        if a > self.m_cap {
            self.m_cap = a;
        }
        self
    }

    pub fn with_lambda(mut self, lambda: Option<f64>) -> Self {
        self.lambda = lambda;
        self
    }

    /// `a^α`, the weight multiplying the stable jump kernel.
    pub fn jump_weight(&self) -> f64 {
        if self.a == 0.0 {
            0.0
        } else {
            self.a.powf(self.alpha)
        }
    }

    /// Truncation radius, infinite when absent.
    pub fn lambda_or_inf(&self) -> f64 {
        self.lambda.unwrap_or(f64::INFINITY)
    }
}

fn check_index(d: usize, alpha: f64) -> Result<()> {
    if d < 1 {
        return param("dimension must be at least 1");
    }
    if !(alpha > 0.0 && alpha < 2.0) {
        return param(format!("alpha must lie in (0, 2), got {alpha}"));
    }
    Ok(())
}

/// Surface measure of the unit sphere `S^{d-1} ⊂ R^d` (`2` for `d = 1`).
pub fn unit_sphere_area(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    2.0 * PI.powf(h) / gamma(h)
}

/// `A(d, α) = α 2^{α-1} π^{-d/2} Γ((d+α)/2) / Γ(1-α/2)`.
pub fn normalization_constant(d: usize, alpha: f64) -> Result<f64> {
    check_index(d, alpha)?;
    let df = d as f64;
    Ok(alpha * 2f64.powf(alpha - 1.0) * PI.powf(-df / 2.0) * gamma((df + alpha) / 2.0) / gamma(1.0 - alpha / 2.0))
}

fn distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Radial profile `a^α A(d,α) r^{-(d+α)}`, cut at the truncation radius.
pub fn levy_intensity_radial(params: &Params, r: f64) -> Result<f64> {
    if r <= 0.0 {
        return Err(Error::Singularity("jump kernel is singular on the diagonal".into()));
    }
    if let Some(l) = params.lambda {
        if r >= l {
            return Ok(0.0);
        }
    }
    let c = normalization_constant(params.d, params.alpha)?;
    Ok(params.jump_weight() * c * r.powf(-(params.d as f64 + params.alpha)))
}

/// Jump intensity `J^a(x, y)` (or `J^{a,λ}` when truncated).
pub fn levy_intensity(params: &Params, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != params.d || y.len() != params.d {
        return param("point dimension does not match params.d");
    }
    levy_intensity_radial(params, distance(x, y))
}

/// `Φ^a(ξ) = |ξ|² + a^α |ξ|^α`.
pub fn char_exponent(params: &Params, xi: &[f64]) -> f64 {
    let n2: f64 = xi.iter().map(|v| v * v).sum();
    if n2 == 0.0 {
        return 0.0;
    }
    n2 + params.jump_weight() * n2.sqrt().powf(params.alpha)
}

const OSC_SWITCH: f64 = 64.0;

/// `∫_{S^{d-1}} cos(s ω₁) dσ(ω)`.
fn sphere_cos_average(d: usize, s: f64) -> f64 {
    match d {
        1 => 2.0 * s.cos(),
        3 => {
            if s == 0.0 {
                4.0 * PI
            } else {
                4.0 * PI * s.sin() / s
            }
        }
        _ if d.is_multiple_of(2) => {
            // periodic entire integrand: the trapezoid rule on the full
            // circle converges geometrically once the node count exceeds s
            let k = (d - 2) as i32;
            let n = 2 * (s.ceil() as usize) + 64;
            let h = 2.0 * PI / n as f64;
            let sum: f64 = (0..n)
                .map(|j| {
                    let t = h * j as f64;
                    (s * t.cos()).cos() * t.sin().powi(k)
                })
                .sum();
            unit_sphere_area(d - 1) * 0.5 * h * sum
        }
        _ => {
            let k = (d - 2) as i32;
            let opts = QuadOptions::new(1e-15, 1e-13);
            let n = ((s / PI).ceil() as usize).max(1);
            let pts: Vec<f64> = (0..=n).map(|i| PI * i as f64 / n as f64).collect();
            let r = integrate_pieces(|t: f64| (s * t.cos()).cos() * t.sin().powi(k), &pts, &opts);
            unit_sphere_area(d - 1) * r.value
        }
    }
}

/// `g_d(s) = ∫_{S^{d-1}} (1 - cos(s ω₁)) dσ(ω)` for `s ≥ 1`.
fn sphere_one_minus_cos(d: usize, s: f64) -> f64 {
    unit_sphere_area(d) - sphere_cos_average(d, s)
}

/// `∫_0^{s0} s^{-1-α} g_d(s) ds` for `s0 ≤ 1` through the moment series of
/// `1 - cos`, which avoids the cancellation near the origin.
fn inner_series(d: usize, alpha: f64, s0: f64) -> f64 {
    let df = d as f64;
    let mut moment = 1.0; // ∫ ω₁^{2k} dσ / σ_{d-1}
    let mut fact = 1.0; // (2k)!
    let mut pow = 1.0; // s0^{2k}
    let mut sum = 0.0;
    for k in 1..40 {
        let kf = k as f64;
        moment *= (2.0 * kf - 1.0) / (df + 2.0 * kf - 2.0);
        fact *= (2.0 * kf - 1.0) * (2.0 * kf);
        pow *= s0 * s0;
        let term = moment * pow / (fact * (2.0 * kf - alpha));
        let signed = if k % 2 == 1 { term } else { -term };
        sum += signed;
        if term < 1e-18 * sum.abs() {
            break;
        }
    }
    unit_sphere_area(d) * sum * s0.powf(-alpha)
}

/// Hankel coefficient `a_k(ν)`.
fn hankel_coeffs(nu: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut a = 1.0;
    out.push(a);
    for k in 1..n {
        let kf = k as f64;
        a *= (4.0 * nu * nu - (2.0 * kf - 1.0).powi(2)) / (kf * 8.0);
        out.push(a);
    }
    out
}

/// Asymptotic antiderivative of `s^{-β} e^{is}` (vanishing at infinity).
fn osc_antiderivative(beta: f64, s: f64) -> Complex64 {
    if s.is_infinite() {
        return Complex64::new(0.0, 0.0);
    }
    let mut sum = Complex64::new(0.0, 0.0);
    let mut coeff = s.powf(-beta); // (β)_m s^{-β-m}
    let mut phase = Complex64::new(1.0, 0.0); // (-i)^m
    let mut last = f64::INFINITY;
    for m in 0..30 {
        let term = phase * coeff;
        let mag = term.norm();
        if mag > last {
            break;
        }
        sum += term;
        if mag < 1e-18 * sum.norm() {
            break;
        }
        last = mag;
        coeff *= (beta + m as f64) / s;
        phase *= Complex64::new(0.0, -1.0);
    }
    Complex64::new(0.0, -1.0) * Complex64::from_polar(1.0, s) * sum
}

/// `∫_a^b s^{-1-α} ∫_{S^{d-1}} cos(s ω₁) dσ ds` for `a ≥ OSC_SWITCH` via the
/// Hankel expansion of the spherical Bessel transform.
fn oscillatory_tail(d: usize, alpha: f64, a: f64, b: f64) -> f64 {
    let nu = d as f64 / 2.0 - 1.0;
    let phase = nu * PI / 2.0 + PI / 4.0;
    let prefac = (2.0 * PI).powf(d as f64 / 2.0) * (2.0 / PI).sqrt();
    let coeffs = hankel_coeffs(nu, 12);
    let mut total = Complex64::new(0.0, 0.0);
    let mut ik = Complex64::new(1.0, 0.0);
    for (k, ak) in coeffs.iter().enumerate() {
        if *ak == 0.0 {
            break;
        }
        let beta = 1.0 + alpha + (d as f64 - 1.0) / 2.0 + k as f64;
        let diff = osc_antiderivative(beta, b) - osc_antiderivative(beta, a);
        total += ik * *ak * diff;
        ik *= Complex64::new(0.0, 1.0);
    }
    prefac * (Complex64::from_polar(1.0, -phase) * total).re
}

/// `J(L) = ∫_0^L s^{-1-α} g_d(s) ds`, so that `ψ^λ(ξ) = A |ξ|^α J(λ|ξ|)`.
pub(crate) fn radial_exponent_integral(d: usize, alpha: f64, upper: f64) -> f64 {
    let s0 = upper.min(1.0);
    let mut total = inner_series(d, alpha, s0);
    if upper <= 1.0 {
        return total;
    }
    let mid_end = upper.min(OSC_SWITCH);
    let opts = QuadOptions::new(1e-15, 1e-13);
    let n = (((mid_end - 1.0) / PI).ceil() as usize).max(1);
    let pts: Vec<f64> = (0..=n).map(|i| 1.0 + (mid_end - 1.0) * i as f64 / n as f64).collect();
    total += integrate_pieces(|s: f64| s.powf(-1.0 - alpha) * sphere_one_minus_cos(d, s), &pts, &opts).value;
    if upper > OSC_SWITCH {
        let sigma = unit_sphere_area(d);
        let smooth = if upper.is_infinite() {
            sigma * OSC_SWITCH.powf(-alpha) / alpha
        } else {
            sigma * (OSC_SWITCH.powf(-alpha) - upper.powf(-alpha)) / alpha
        };
        total += smooth - oscillatory_tail(d, alpha, OSC_SWITCH, upper);
    }
    total
}

/// Lévy exponent of the λ-truncated stable part,
/// `ψ^λ(ξ) = A(d,α) ∫_{|y|<λ} (1 - cos ξ·y) |y|^{-d-α} dy`.
///
/// Without a truncation radius the exact `|ξ|^α` is returned.
pub fn levy_exponent_truncated(params: &Params, xi: &[f64]) -> Result<f64> {
    check_index(params.d, params.alpha)?;
    if xi.len() != params.d {
        return param("frequency dimension does not match params.d");
    }
    let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(0.0);
    }
    let Some(lambda) = params.lambda else {
        return Ok(norm.powf(params.alpha));
    };
    let c = normalization_constant(params.d, params.alpha)?;
    let j = radial_exponent_integral(params.d, params.alpha, lambda * norm);
    Ok(c * norm.powf(params.alpha) * j)
}

/// Convenience used by the sampler checks: `∫_a^b` of a radial profile in
/// `r^{d-1} dr` form.
pub(crate) fn radial_mass(d: usize, alpha: f64, r_lo: f64, r_hi: f64) -> f64 {
    // ∫_{r_lo<|y|<r_hi} |y|^{-d-α} dy
    let lo = r_lo.powf(-alpha);
    let hi = if r_hi.is_infinite() { 0.0 } else { r_hi.powf(-alpha) };
    unit_sphere_area(d) * (lo - hi) / alpha
}
