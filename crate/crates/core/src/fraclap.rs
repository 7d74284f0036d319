//! The truncated fractional Laplacian
//! `Δ̂^{α/2}_{d,λ} u(x) = A(d,α) p.v.∫_{|y-x|<λ} (u(y) - u(x)) |y-x|^{-d-α} dy`
//! on power functions `w_p(x) = (x₁⁺)^p` (closed-form reduction) and on
//! general fields (principal-value quadrature).

use std::cell::Cell;
use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::geometry::{BoundaryChart, DomainShape};
use crate::kernels::{normalization_constant, unit_sphere_area, Params};
use crate::quad::{integrate, integrate_pieces, QuadOptions, QuadResult};
use crate::stats::loglog_slope;

/// Cutoff schedule and tolerance of the principal-value quadrature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PVQuadSpec {
    /// Cutoffs relative to the field's smooth radius at the evaluation point.
    pub epsilon_schedule: Vec<f64>,
    pub rel_tol: f64,
    /// Panel budget of the radial quadrature.
    pub max_panels: usize,
}

impl Default for PVQuadSpec {
    fn default() -> Self {
        Self {
            epsilon_schedule: vec![1e-2, 1e-3, 1e-4],
            rel_tol: 1e-6,
            max_panels: 400,
        }
    }
}

impl PVQuadSpec {
    pub fn validate(&self) -> Result<()> {
        let s = &self.epsilon_schedule;
        if s.len() < 2 {
            return param("epsilon schedule needs at least two cutoffs");
        }
        if s.iter().any(|e| !(*e > 0.0)) || s.windows(2).any(|w| w[1] >= w[0]) {
            return param("epsilon schedule must be positive and strictly decreasing");
        }
        if !(self.rel_tol > 0.0 && self.rel_tol <= 1e-2) {
            return param(format!("rel_tol must lie in (0, 1e-2], got {}", self.rel_tol));
        }
        if self.max_panels == 0 {
            return param("max_panels must be positive");
        }
        Ok(())
    }
}

/// A scalar field the operator can be applied to.
pub trait ScalarField: Sync {
    fn dim(&self) -> usize;

    fn eval(&self, y: &[f64]) -> f64;

    /// Classical Laplacian where the field is twice differentiable.
    fn laplacian(&self, _y: &[f64]) -> Option<f64> {
        None
    }

    /// Radius of a ball around `x` on which the field is smooth. The
    /// cutoff schedule is measured in this unit.
    fn smooth_radius(&self, _x: &[f64]) -> f64 {
        f64::INFINITY
    }

    /// Unit normal of the nearest kink surface, used to align the angular
    /// quadrature.
    fn kink_normal(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// A function whose zero set is the kink surface, used to place the
    /// angular breakpoints exactly when that surface is curved.
    fn kink_level(&self, _y: &[f64]) -> Option<f64> {
        None
    }

    /// A sphere `(center, radius)` across which the field jumps, used to
    /// split the radial and (for `d = 2`) angular quadratures.
    fn jump_sphere(&self) -> Option<(Vec<f64>, f64)> {
        None
    }
}

/// Wraps a closure as a field that is smooth everywhere.
pub struct FnField<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> ScalarField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, y: &[f64]) -> f64 {
        (self.f)(y)
    }
}

/// `w_p(y) = (y₁⁺)^p` in `R^d`.
#[derive(Debug, Clone, Copy)]
pub struct PowerField {
    pub d: usize,
    pub p: f64,
}

impl ScalarField for PowerField {
    fn dim(&self) -> usize {
        self.d
    }

    fn eval(&self, y: &[f64]) -> f64 {
        if y[0] > 0.0 {
            y[0].powf(self.p)
        } else {
            0.0
        }
    }

    fn laplacian(&self, y: &[f64]) -> Option<f64> {
        (y[0] > 0.0).then(|| self.p * (self.p - 1.0) * y[0].powf(self.p - 2.0))
    }

    fn smooth_radius(&self, x: &[f64]) -> f64 {
        x[0].abs()
    }

    fn kink_normal(&self, _x: &[f64]) -> Option<Vec<f64>> {
        let mut n = vec![0.0; self.d];
        n[0] = 1.0;
        Some(n)
    }
}

/// Operator value together with the tolerance actually reached.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PvValue {
    pub value: f64,
    pub achieved: f64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return param(format!("alpha must lie in (0, 2), got {alpha}"));
    }
    Ok(())
}

/// Collects convergence failures of several quadratures.
#[derive(Default)]
struct Budget {
    err: f64,
    /// Largest `abs_err / abs_value` seen, for errors that propagate
    /// through an outer quadrature.
    rel: f64,
    ok: bool,
}

impl Budget {
    fn new() -> Self {
        Self {
            err: 0.0,
            rel: 0.0,
            ok: true,
        }
    }

    fn take(&mut self, r: QuadResult) -> f64 {
        self.err += r.abs_err;
        self.note_rel(&r);
        self.ok &= r.converged;
        r.value
    }

    fn note_rel(&mut self, r: &QuadResult) {
        self.note_rel_above(r, 0.0);
    }

    /// Errors below `floor` are rounding noise of a vanishing integrand and
    /// must not be propagated as relative errors.
    fn note_rel_above(&mut self, r: &QuadResult, floor: f64) {
        if r.abs_value > 0.0 && r.abs_err > floor {
            self.rel = self.rel.max(r.abs_err / r.abs_value);
        }
    }

    fn take_above(&mut self, r: QuadResult, floor: f64) -> f64 {
        self.err += r.abs_err;
        self.note_rel_above(&r, floor);
        self.ok &= r.converged;
        r.value
    }

    fn finish(&self, value: f64, requested: f64, context: &str) -> Result<f64> {
        if self.ok {
            Ok(value)
        } else {
            Err(Error::Accuracy {
                estimate: value,
                achieved: self.err,
                requested,
                context: context.into(),
            })
        }
    }
}

const SERIES_MAX: usize = 200;
const SPLIT_S: f64 = 0.25;

/// `Δ̂^{α/2}_{1,λ} w_p(x)` for `w_p(x) = (x⁺)^p`.
pub fn power_1d(alpha: f64, p: f64, x: f64, lambda: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(p > 0.0) {
        return param(format!("p must be positive, got {p}"));
    }
    if !(x > 0.0) || !x.is_finite() {
        return param(format!("x must be positive, got {x}"));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return param(format!("lambda must be positive and finite, got {lambda}"));
    }
    Ok(lambda.powf(p - alpha) * power_1d_unit(alpha, p, x / lambda)?)
}

fn power_1d_unit(alpha: f64, p: f64, x: f64) -> Result<f64> {
    let a1 = normalization_constant(1, alpha)?;
    let opts = QuadOptions::new(1e-300, 1e-13);
    let mut budget = Budget::new();
    if x >= 1.0 {
        // A x^{p-α} ∫_0^{1/x} ((1+v)^p + (1-v)^p - 2) v^{-1-α} dv
        let v_end = 1.0 / x;
        let s_end = v_end.min(0.5);
        let mut sum = 0.0;
        let mut binom = 1.0;
        for j in 0..2 * SERIES_MAX {
            binom *= (p - j as f64) / (j as f64 + 1.0);
            if j % 2 == 1 {
                let k2 = (j + 1) as f64;
                let term = 2.0 * binom * s_end.powf(k2 - alpha) / (k2 - alpha);
                sum += term;
                if term.abs() <= 1e-17 * sum.abs() || binom == 0.0 {
                    break;
                }
            }
        }
        if v_end > 0.5 {
            let r = integrate(
                |v: f64| ((1.0 + v).powf(p) + (1.0 - v).powf(p) - 2.0) * v.powf(-1.0 - alpha),
                0.5,
                v_end,
                &opts,
            );
            sum += budget.take(r);
        }
        let value = a1 * x.powf(p - alpha) * sum;
        return budget.finish(value, opts.rel_tol, "power_1d outer branch");
    }

    let z0 = x / (x + 1.0);
    // ∫_{z0}^1 (z^{α-p-1} - z^{p-1}) (1-z)^{-α} dz, the part near z = 1 as a
    // series in s = 1 - z so the two singular terms cancel analytically
    let c1 = alpha - p - 1.0;
    let c2 = p - 1.0;
    let (mut b1, mut b2) = (1.0, 1.0);
    let mut near_one = 0.0;
    for k in 1..=SERIES_MAX {
        let kf = k as f64;
        b1 *= (kf - 1.0 - c1) / kf;
        b2 *= (kf - 1.0 - c2) / kf;
        let e = kf + 1.0 - alpha;
        let term = (b1 - b2) * SPLIT_S.powf(e) / e;
        near_one += term;
        if term.abs() <= 1e-17 * near_one.abs() && k > 4 {
            break;
        }
    }
    let z_split = 1.0 - SPLIT_S;
    let mid = integrate(
        |lz: f64| {
            let z = lz.exp();
            (z.powf(alpha - p) - z.powf(p)) * (1.0 - z).powf(-alpha)
        },
        z0.ln(),
        z_split.ln(),
        &opts,
    );
    let i1 = near_one + budget.take(mid);
    // ∫_0^{z0} z^{p-1} (1-z)^{-α} dz with z = t^{1/p}
    let inv_p = 1.0 / p;
    let i2 = inv_p
        * budget.take(integrate(
            |t: f64| (1.0 - t.powf(inv_p)).powf(-alpha),
            0.0,
            z0.powf(p),
            &opts,
        ));
    let value = a1 / alpha * (2.0 * x.powf(p) - (x + 1.0).powf(p) + p * x.powf(p - alpha) * (i1 - i2));
    budget.finish(value, opts.rel_tol, "power_1d inner branch")
}

fn require_lambda(params: &Params) -> Result<f64> {
    match params.lambda {
        Some(l) if l.is_finite() => Ok(l),
        _ => param("a finite truncation radius is required"),
    }
}

/// `Δ̂^{α/2}_{d,λ} w_p` at a point with first coordinate `x1 > 0`, through the
/// reduction to `power_1d` along each direction.
pub fn power_dd(params: &Params, p: f64, x1: f64) -> Result<f64> {
    params.validate()?;
    let lambda = require_lambda(params)?;
    let (d, alpha) = (params.d, params.alpha);
    if d == 1 {
        return power_1d(alpha, p, x1, lambda);
    }
    if !(x1 > 0.0) {
        return param(format!("x1 must be positive, got {x1}"));
    }
    let ratio = normalization_constant(d, alpha)? / normalization_constant(1, alpha)?;
    let weight = ratio * unit_sphere_area(d - 1);
    let k = (d - 2) as i32;
    let failure: Cell<Option<Error>> = Cell::new(None);
    let integrand = |t: f64| {
        let c = t.cos();
        if c <= 0.0 {
            return 0.0;
        }
        match power_1d(alpha, p, x1 / c, lambda) {
            Ok(v) => t.sin().powi(k) * c.powf(p) * v,
            Err(e) => {
                failure.set(Some(e));
                0.0
            }
        }
    };
    let mut pts = vec![0.0];
    if x1 < lambda {
        pts.push((x1 / lambda).acos());
    }
    pts.push(PI / 2.0);
    let opts = QuadOptions::new(1e-300, 1e-11);
    let r = integrate_pieces(integrand, &pts, &opts);
    if let Some(e) = failure.take() {
        return Err(e);
    }
    let mut budget = Budget::new();
    let v = weight * budget.take(r);
    budget.finish(v, opts.rel_tol, "power_dd angular integral")
}

/// Orthonormal frame whose first vector is `axis`.
fn frame(axis: &[f64]) -> Vec<Vec<f64>> {
    let d = axis.len();
    let norm = axis.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n: Vec<f64> = axis.iter().map(|v| v / norm).collect();
    let mut out = vec![n.clone()];
    for i in 0..d {
        if out.len() == d {
            break;
        }
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        for b in &out {
            let dot: f64 = e.iter().zip(b).map(|(a, c)| a * c).sum();
            for (ej, bj) in e.iter_mut().zip(b) {
                *ej -= dot * bj;
            }
        }
        let len = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        if len > 1e-8 {
            out.push(e.iter().map(|v| v / len).collect());
        }
    }
    out
}

struct PvContext<'a, F: ?Sized> {
    f: &'a F,
    x: &'a [f64],
    fx: f64,
    frame: Vec<Vec<f64>>,
    kink: f64,
    scale: f64,
    radius: f64,
    alpha: f64,
    inner_rel: f64,
    sphere: Option<(Vec<f64>, f64)>,
    /// Rounding level of `f(x+z) + f(x-z) - 2f(x)`.
    noise: f64,
}

impl<F: ScalarField + ?Sized> PvContext<'_, F> {
    /// `f(x + rω) + f(x - rω) - 2f(x)`.
    fn pair(&self, r: f64, omega: &[f64]) -> f64 {
        let d = self.x.len();
        let mut plus = vec![0.0; d];
        let mut minus = vec![0.0; d];
        for i in 0..d {
            plus[i] = self.x[i] + r * omega[i];
            minus[i] = self.x[i] - r * omega[i];
        }
        self.f.eval(&plus) + self.f.eval(&minus) - 2.0 * self.fx
    }

    fn direction(&self, coeffs: &[f64]) -> Vec<f64> {
        let d = self.x.len();
        let mut w = vec![0.0; d];
        for (c, b) in coeffs.iter().zip(&self.frame) {
            for i in 0..d {
                w[i] += c * b[i];
            }
        }
        w
    }

    /// `½ ∫_{S^{d-1}} (f(x+rω) + f(x-rω) - 2f(x)) dσ(ω)`.
    fn angular(&self, r: f64, budget: &mut Budget) -> f64 {
        let d = self.x.len();
        let small = (r / self.radius).min(1.0);
        let atol = (1e-13 * self.scale * small * small).max(self.noise);
        let opts = QuadOptions::new(atol, self.inner_rel).with_max_intervals(200);
        let theta_b = if r > self.kink {
            Some((self.kink / r).acos())
        } else {
            None
        };
        match d {
            1 => self.pair(r, &self.frame[0]),
            2 => {
                let mut pts = vec![0.0, PI];
                if let Some(t) = theta_b {
                    for guess in [t, PI - t] {
                        let mut refined = false;
                        for sgn in [1.0, -1.0] {
                            if let Some(root) = self.kink_angle_2d(r, sgn, guess) {
                                pts.push(root);
                                refined = true;
                            }
                        }
                        if !refined {
                            pts.push(guess);
                        }
                    }
                }
                pts.extend(self.sphere_angles_2d(r));
                pts.sort_by(f64::total_cmp);
                pts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
                let res = integrate_pieces(|t: f64| self.pair(r, &self.direction(&[t.cos(), t.sin()])), &pts, &opts);
                budget.take_above(res, atol)
            }
            _ => {
                let mut pts = vec![0.0];
                if let Some(t) = theta_b {
                    pts.push(t);
                }
                pts.push(PI / 2.0);
                let inner_opts = opts;
                let mut inner_budget = Budget::new();
                let res = integrate_pieces(
                    |t: f64| {
                        let (st, ct) = (t.sin(), t.cos());
                        let phi = integrate(
                            |ph: f64| self.pair(r, &self.direction(&[ct, st * ph.cos(), st * ph.sin()])),
                            0.0,
                            2.0 * PI,
                            &inner_opts,
                        );
                        inner_budget.ok &= phi.converged;
                        inner_budget.note_rel_above(&phi, atol);
                        st * phi.value
                    },
                    &pts,
                    &opts,
                );
                budget.ok &= inner_budget.ok;
                budget.rel = budget.rel.max(inner_budget.rel);
                budget.take_above(res, atol)
            }
        }
    }

    /// Angles in `[0, π]` where `x ± rω(θ)` crosses the jump sphere.
    fn sphere_angles_2d(&self, r: f64) -> Vec<f64> {
        let Some((c, rad)) = &self.sphere else {
            return Vec::new();
        };
        let v: Vec<f64> = c.iter().zip(self.x).map(|(a, b)| a - b).collect();
        let v0: f64 = v.iter().zip(&self.frame[0]).map(|(a, b)| a * b).sum();
        let v1: f64 = v.iter().zip(&self.frame[1]).map(|(a, b)| a * b).sum();
        let dist = v0.hypot(v1);
        if dist == 0.0 {
            return Vec::new();
        }
        let kappa = (r * r + dist * dist - rad * rad) / (2.0 * r * dist);
        if kappa.abs() > 1.0 {
            return Vec::new();
        }
        let (phi0, gamma) = (v1.atan2(v0), kappa.acos());
        [phi0 + gamma, phi0 - gamma].iter().map(|t| t.rem_euclid(PI)).collect()
    }

    /// Angle near `guess` where `x + sgn·r·ω(θ)` crosses the kink surface.
    fn kink_angle_2d(&self, r: f64, sgn: f64, guess: f64) -> Option<f64> {
        let g = |t: f64| {
            let w = self.direction(&[t.cos(), t.sin()]);
            let y: Vec<f64> = self.x.iter().zip(&w).map(|(a, b)| a + sgn * r * b).collect();
            self.f.kink_level(&y)
        };
        let g0 = g(guess)?;
        if g0 == 0.0 {
            return Some(guess);
        }
        for width in [0.02, 0.1, 0.4] {
            for (lo, hi) in [(guess - width, guess), (guess, guess + width)] {
                let (lo, hi) = (lo.max(0.0), hi.min(PI));
                let (mut a, mut b) = (lo, hi);
                let (mut ga, gb) = (g(a)?, g(b)?);
                if ga * gb > 0.0 {
                    continue;
                }
                for _ in 0..60 {
                    let m = 0.5 * (a + b);
                    let gm = g(m)?;
                    if (gm > 0.0) == (ga > 0.0) {
                        a = m;
                        ga = gm;
                    } else {
                        b = m;
                    }
                    if b - a < 1e-15 {
                        break;
                    }
                }
                return Some(0.5 * (a + b));
            }
        }
        None
    }

    /// `∫_{lo}^{hi} r^{-1-α} (angular average) dr` in the variable `ln r`.
    fn radial(&self, lo: f64, hi: f64, max_panels: usize, budget: &mut Budget) -> QuadResult {
        let mut cuts = vec![self.kink];
        if let Some((c, rad)) = &self.sphere {
            let dist = c.iter().zip(self.x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            cuts.extend([(rad - dist).abs(), rad + dist]);
        }
        cuts.retain(|r| *r > lo && *r < hi);
        cuts.sort_by(f64::total_cmp);
        let mut pts = vec![lo.ln()];
        pts.extend(cuts.iter().map(|r| r.ln()));
        pts.push(hi.ln());
        pts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        let opts = QuadOptions::new(1e-13 * self.scale * self.radius.powf(-self.alpha), self.inner_rel)
            .with_max_intervals(max_panels);
        // each angular error enters weighted by the radial measure; the
        // quadrature nodes are dense enough to integrate it by trapezoids
        let mut errs: Vec<(f64, f64)> = Vec::new();
        let mut inner_ok = true;
        let res = integrate_pieces(
            |u: f64| {
                let r = u.exp();
                let mut b = Budget::new();
                let v = self.angular(r, &mut b);
                let w = r.powf(-self.alpha);
                errs.push((u, w * (b.err + b.rel * v.abs())));
                inner_ok &= b.ok;
                w * v
            },
            &pts,
            &opts,
        );
        errs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut propagated = 0.0;
        for w in errs.windows(2) {
            propagated += 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0);
        }
        if let (Some(first), Some(last)) = (errs.first(), errs.last()) {
            propagated += first.1 * (first.0 - pts[0]) + last.1 * (pts[pts.len() - 1] - last.0);
        }
        budget.ok &= inner_ok;
        budget.err += 2.0 * propagated;
        budget.ok &= res.converged;
        budget.err += res.abs_err;
        res
    }
}

/// Principal-value quadrature of `Δ̂^{α/2}_{d,λ} f(x)` for `d ≤ 3`.
///
/// The integrand is paired as `f(x+z) + f(x-z) - 2f(x)` over the whole
/// window, integrated down to each cutoff of the schedule, and the cutoff
/// dependence `I(ε) = I₀ - c ε^{2-α}` is removed by Richardson extrapolation.
pub fn pv_apply<F: ScalarField + ?Sized>(f: &F, x: &[f64], params: &Params, spec: &PVQuadSpec) -> Result<PvValue> {
    params.validate()?;
    spec.validate()?;
    let lambda = require_lambda(params)?;
    let (d, alpha) = (params.d, params.alpha);
    if f.dim() != d || x.len() != d {
        return param("field, point and params disagree on the dimension");
    }
    if d > 3 {
        return param("principal-value quadrature supports d ≤ 3");
    }
    let kink = f.smooth_radius(x);
    let radius = kink.min(lambda);
    if !(radius > 0.0) {
        return Err(Error::Singularity(
            "evaluation point lies on a kink of the field".into(),
        ));
    }
    let axis = f.kink_normal(x).unwrap_or_else(|| {
        let mut e = vec![0.0; d];
        e[0] = 1.0;
        e
    });
    let fx = f.eval(x);
    let mut scale = fx.abs();
    for b in frame(&axis) {
        for sgn in [-1.0, 1.0] {
            let y: Vec<f64> = x.iter().zip(&b).map(|(xi, bi)| xi + sgn * radius * bi).collect();
            scale = scale.max(f.eval(&y).abs());
        }
    }
    if scale == 0.0 {
        scale = 1.0;
    }
    let ctx = PvContext {
        f,
        x,
        fx,
        frame: frame(&axis),
        kink,
        scale,
        radius,
        alpha,
        // the cutoff extrapolation dominates the error, so the panels only
        // need to be a few digits tighter than the request
        inner_rel: spec.rel_tol * 1e-3,
        sphere: f.jump_sphere(),
        // f carries the rounding of coordinates of size |x| through a slope
        // of about scale/radius
        noise: 64.0 * f64::EPSILON * (scale + scale / radius * x.iter().fold(0.0, |m: f64, v| m.max(v.abs()))),
    };
    let ad = normalization_constant(d, alpha)?;
    let eps: Vec<f64> = spec.epsilon_schedule.iter().map(|e| e * radius).collect();
    let mut budget = Budget::new();
    let outer = ctx.radial(eps[0], lambda, spec.max_panels, &mut budget);
    let mut partial = vec![outer.value];
    for w in eps.windows(2) {
        let piece = ctx.radial(w[1], w[0], spec.max_panels, &mut budget);
        let last = *partial.last().unwrap();
        partial.push(last + piece.value);
    }
    let q = 2.0 - alpha;
    let extrap: Vec<f64> = (1..eps.len())
        .map(|k| {
            let (e1, e2) = (eps[k - 1].powf(q), eps[k].powf(q));
            (partial[k] * e1 - partial[k - 1] * e2) / (e1 - e2)
        })
        .collect();
    let best = *extrap.last().unwrap();
    let spread = if extrap.len() >= 2 {
        (best - extrap[extrap.len() - 2]).abs()
    } else {
        (best - partial.last().unwrap()).abs()
    };
    let value = ad * best;
    let achieved = ad * (spread + budget.err);
    let floor = 1e-5 * ad * scale * radius.powf(-alpha);
    let requested = spec.rel_tol * value.abs().max(floor);
    if achieved > requested {
        return Err(Error::Accuracy {
            estimate: value,
            achieved,
            requested,
            context: format!("principal value at {x:?}"),
        });
    }
    Ok(PvValue { value, achieved })
}

/// `Δf(x) + a^α λ^{α-2} Δ̂^{α/2}_{d,λ} f(x)`, the generator of the scaled
/// truncated process.
pub fn generator_apply<F: ScalarField + ?Sized>(
    f: &F,
    x: &[f64],
    params: &Params,
    spec: &PVQuadSpec,
) -> Result<PvValue> {
    let lambda = require_lambda(params)?;
    let lap = f
        .laplacian(x)
        .ok_or_else(|| Error::Parameter("field has no Laplacian at this point".into()))?;
    let w = params.jump_weight();
    if w == 0.0 {
        return Ok(PvValue {
            value: lap,
            achieved: 0.0,
        });
    }
    let factor = w * lambda.powf(params.alpha - 2.0);
    let pv = pv_apply(f, x, params, spec)?;
    Ok(PvValue {
        value: lap + factor * pv.value,
        achieved: factor * pv.achieved,
    })
}

/// Pass/fail of one bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    /// Evaluation points, as the relevant boundary distance.
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub achieved: Vec<f64>,
    pub verdicts: Vec<Verdict>,
    pub empirical_constants: BTreeMap<String, f64>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }
}

/// Position of `p` relative to `α/2` and `α`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    AboveAlpha,
    AtAlpha,
    Between,
    AtHalf,
    BelowHalf,
}

const REGIME_EPS: f64 = 1e-9;
/// Largest growth rate still read as "bounded" on a log-log fit.
pub const BOUNDED_SLOPE: f64 = -0.1;
pub const SLOPE_TOL: f64 = 0.05;

pub fn regime(alpha: f64, p: f64) -> Regime {
    if (p - alpha).abs() < REGIME_EPS {
        Regime::AtAlpha
    } else if p > alpha {
        Regime::AboveAlpha
    } else if (p - alpha / 2.0).abs() < REGIME_EPS {
        Regime::AtHalf
    } else if p > alpha / 2.0 {
        Regime::Between
    } else {
        Regime::BelowHalf
    }
}

/// Sign, growth and slope verdicts for values `v` at boundary distances `xs`.
pub fn regime_verdicts(alpha: f64, p: f64, xs: &[f64], v: &[f64]) -> (Vec<Verdict>, BTreeMap<String, f64>) {
    verdicts_impl(alpha, p, xs, v, true)
}

fn verdicts_impl(
    alpha: f64,
    p: f64,
    xs: &[f64],
    v: &[f64],
    slope_verdict: bool,
) -> (Vec<Verdict>, BTreeMap<String, f64>) {
    let mut verdicts = vec![Verdict::new(
        "finite",
        v.iter().all(|x| x.is_finite()),
        format!("{} values", v.len()),
    )];
    let mut consts = BTreeMap::new();
    let target = p - alpha;
    let ratios: Vec<f64> = xs.iter().zip(v).map(|(x, y)| y / x.powf(target)).collect();
    let bracket = |r: &[f64]| {
        let lo = r.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let reg = regime(alpha, p);
    // growth is judged on the decade closest to the boundary
    let x_min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let near: Vec<usize> = (0..xs.len()).filter(|&i| xs[i] <= 10.0 * x_min).collect();
    let near_slope = |ys: &[f64]| {
        let nx: Vec<f64> = near.iter().map(|&i| xs[i]).collect();
        let ny: Vec<f64> = near.iter().map(|&i| ys[i]).collect();
        if nx.len() < 2 {
            0.0
        } else {
            loglog_slope(&nx, &ny).slope
        }
    };
    match reg {
        Regime::AboveAlpha | Regime::AtHalf => {
            let slope = near_slope(v);
            let sup = v.iter().fold(0.0f64, |m, y| m.max(y.abs()));
            consts.insert("sup_abs".into(), sup);
            consts.insert("near_slope".into(), slope);
            verdicts.push(Verdict::new(
                "bounded",
                slope > BOUNDED_SLOPE && sup.is_finite(),
                format!("sup |v| = {sup:.6e}, log-log slope near 0 {slope:.4}"),
            ));
            if reg == Regime::AtHalf {
                let (lo, hi) = bracket(v);
                consts.insert("inf".into(), lo);
                consts.insert("sup".into(), hi);
                verdicts.push(Verdict::new("negative", hi < 0.0, format!("max value {hi:.6e}")));
            }
        }
        Regime::AtAlpha => {
            let scaled: Vec<f64> = xs.iter().zip(v).map(|(x, y)| y / x.ln().abs()).collect();
            let slope = near_slope(&scaled);
            let sup = scaled.iter().fold(0.0f64, |m, y| m.max(y.abs()));
            consts.insert("sup_abs_over_log".into(), sup);
            consts.insert("near_slope".into(), slope);
            verdicts.push(Verdict::new(
                "log_bounded",
                slope > BOUNDED_SLOPE && sup.is_finite(),
                format!("sup |v|/|log x| = {sup:.6e}, slope near 0 {slope:.4}"),
            ));
        }
        Regime::Between | Regime::BelowHalf => {
            let positive = reg == Regime::Between;
            let sign_ok = if positive {
                v.iter().all(|y| *y > 0.0)
            } else {
                v.iter().all(|y| *y < 0.0)
            };
            verdicts.push(Verdict::new(
                if positive { "positive" } else { "negative" },
                sign_ok,
                String::new(),
            ));
            let abs_ratio: Vec<f64> = ratios.iter().map(|r| r.abs()).collect();
            let (lo, hi) = bracket(&abs_ratio);
            consts.insert("ratio_min".into(), lo);
            consts.insert("ratio_max".into(), hi);
            verdicts.push(Verdict::new(
                "bracket",
                lo > 0.0 && hi.is_finite(),
                format!("|v|/x^(p-α) in [{lo:.6e}, {hi:.6e}]"),
            ));
            let fit = loglog_slope(xs, v);
            consts.insert("loglog_slope".into(), fit.slope);
            if slope_verdict {
                verdicts.push(Verdict::new(
                    "slope",
                    (fit.slope - target).abs() <= SLOPE_TOL,
                    format!("fitted {:.4} vs {:.4}", fit.slope, target),
                ));
            }
        }
    }
    (verdicts, consts)
}

/// Sign and growth table of `Δ̂^{α/2}_{1,λ} w_p` on a small-x grid.
pub fn verify_lemma21(alpha: f64, p: f64, grid: &[f64], lambda: f64) -> Result<BoundReport> {
    let mut values = Vec::with_capacity(grid.len());
    for &x in grid {
        values.push(power_1d(alpha, p, x, lambda)?);
    }
    let (verdicts, empirical_constants) = regime_verdicts(alpha, p, grid, &values);
    Ok(BoundReport {
        grid: grid.to_vec(),
        achieved: vec![0.0; values.len()],
        values,
        verdicts,
        empirical_constants,
    })
}

/// `h_p(y) = ρ_Q(y)^p 1_{D ∩ B(Q, 4r₀)}(y)` for a C^{1,1} domain.
#[derive(Debug, Clone)]
pub struct HpField {
    domain: DomainShape,
    chart: BoundaryChart,
    p: f64,
    cutoff: f64,
}

impl HpField {
    pub fn new(domain: &DomainShape, q: &[f64], p: f64) -> Result<Self> {
        if !domain.is_c11() {
            return Err(Error::Geometry("h_p needs a C^{1,1} domain".into()));
        }
        if !(p > 0.0) {
            return param(format!("p must be positive, got {p}"));
        }
        let chart = domain.chart(q)?;
        Ok(Self {
            domain: domain.clone(),
            chart,
            p,
            cutoff: 4.0 * domain.r0(),
        })
    }

    pub fn chart(&self) -> &BoundaryChart {
        &self.chart
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// Replace the support radius `4r₀` (used when the field lives on a
    /// dilated domain but keeps the original `r₀`).
    pub fn with_cutoff(mut self, cutoff: f64) -> Result<Self> {
        if !(cutoff > 0.0) {
            return param("cutoff must be positive");
        }
        self.cutoff = cutoff;
        Ok(self)
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

impl ScalarField for HpField {
    fn dim(&self) -> usize {
        self.domain.d
    }

    fn eval(&self, y: &[f64]) -> f64 {
        let r2: f64 = y.iter().zip(&self.chart.q).map(|(a, b)| (a - b) * (a - b)).sum();
        if r2 >= self.cutoff * self.cutoff {
            return 0.0;
        }
        let rho = self.chart.rho_unchecked(y);
        if rho > 0.0 {
            rho.powf(self.p)
        } else {
            0.0
        }
    }

    /// `p(p-1)(1+|∇φ|²)ρ^{p-2} - pρ^{p-1}Δφ` inside the support.
    fn laplacian(&self, y: &[f64]) -> Option<f64> {
        let r2: f64 = y.iter().zip(&self.chart.q).map(|(a, b)| (a - b) * (a - b)).sum();
        let z = self.chart.to_chart(y);
        let d = z.len();
        let zt = &z[..d - 1];
        let rho = z[d - 1] - self.chart.phi(zt);
        if r2 >= self.cutoff * self.cutoff || rho <= 0.0 {
            return Some(0.0);
        }
        let p = self.p;
        let g2: f64 = self.chart.grad_phi(zt).iter().map(|v| v * v).sum();
        let first = if p == 1.0 {
            0.0
        } else {
            p * (p - 1.0) * (1.0 + g2) * rho.powf(p - 2.0)
        };
        Some(first - p * rho.powf(p - 1.0) * self.chart.laplacian_phi(zt))
    }

    fn smooth_radius(&self, x: &[f64]) -> f64 {
        self.domain.dist_to_complement(x)
    }

    // normal at the nearest boundary point, so the crossing angles of a
    // curved boundary stay centered on the axis
    fn kink_normal(&self, x: &[f64]) -> Option<Vec<f64>> {
        let h = 1e-7 * self.chart.window;
        let mut g = vec![0.0; x.len()];
        for i in 0..x.len() {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            g[i] = self.domain.signed_distance(&a) - self.domain.signed_distance(&b);
        }
        let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 && n.is_finite() {
            Some(g.iter().map(|v| v / n).collect())
        } else {
            Some(self.chart.inward_normal().to_vec())
        }
    }

    fn kink_level(&self, y: &[f64]) -> Option<f64> {
        Some(self.chart.rho_unchecked(y))
    }

    fn jump_sphere(&self) -> Option<(Vec<f64>, f64)> {
        Some((self.chart.q.clone(), self.cutoff))
    }
}

/// Regime table of `Δ̂^{α/2}_{d,λ} h_p` at interior points near `Q`, with
/// `ρ_Q(x)` in the role of the boundary distance.
///
/// Reported constants: `C5`/`C6` are the upper/lower ends of
/// `value / ρ^{p-α}` in the power regimes, `C7` the supremum of `|value|`
/// when `p > α` (divided by `|log ρ|` when `p = α`). The log-log slope is
/// reported but not judged, since only the bracket is asserted here.
pub fn verify_hp_bounds(
    domain: &DomainShape,
    q: &[f64],
    p: f64,
    params: &Params,
    grid: &[Vec<f64>],
) -> Result<BoundReport> {
    verify_hp_bounds_with(domain, q, p, params, grid, &PVQuadSpec::default())
}

pub fn verify_hp_bounds_with(
    domain: &DomainShape,
    q: &[f64],
    p: f64,
    params: &Params,
    grid: &[Vec<f64>],
    spec: &PVQuadSpec,
) -> Result<BoundReport> {
    if params.d != domain.d {
        return param("params and domain disagree on the dimension");
    }
    let field = HpField::new(domain, q, p)?;
    let r0 = domain.r0();
    let mut rhos = Vec::with_capacity(grid.len());
    let mut values = Vec::with_capacity(grid.len());
    let mut achieved = Vec::with_capacity(grid.len());
    for x in grid {
        let rho = field.chart.rho(x)?;
        if !(rho > 0.0 && rho < r0) || field.chart.tangential_norm(x) >= r0 {
            return Err(Error::Geometry(format!(
                "grid point {x:?} outside the chart box (ρ = {rho:.3e}, r₀ = {r0:.3e})"
            )));
        }
        let v = pv_apply(&field, x, params, spec)?;
        rhos.push(rho);
        values.push(v.value);
        achieved.push(v.achieved);
    }
    let (verdicts, mut consts) = verdicts_impl(params.alpha, p, &rhos, &values, false);
    let alias = [
        ("ratio_max", "C5"),
        ("ratio_min", "C6"),
        ("sup_abs", "C7"),
        ("sup_abs_over_log", "C7"),
    ];
    for (from, to) in alias {
        if let Some(v) = consts.get(from).copied() {
            consts.insert(to.into(), v);
        }
    }
    Ok(BoundReport {
        grid: rhos,
        values,
        achieved,
        verdicts,
        empirical_constants: consts,
    })
}

/// Log-spaced grid of `n ≥ 2` points on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}
