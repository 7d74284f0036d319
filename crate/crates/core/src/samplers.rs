//! Simulation of `X^a`, of the truncated process `X̂^{a,λ}`, and of the
//! subordination objects (stable subordinator, Mittag-Leffler potential
//! density), plus time stepping until the first exit from a region.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{param, Error, Result};
use crate::geometry::Region;
use crate::kernels::{normalization_constant, radial_mass, unit_sphere_area, Params};
use crate::quad::{integrate_pieces, QuadOptions};

/// `T^a_t = t + a² T_t` with `T` an `α/2`-stable subordinator normalized by
/// `E e^{-λT_t} = e^{-tλ^{α/2}}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubordinatorRep {
    pub alpha_half: f64,
    pub a: f64,
}

impl SubordinatorRep {
    pub fn new(alpha: f64, a: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return param(format!("alpha must lie in (0, 2), got {alpha}"));
        }
        if !(a >= 0.0) {
            return param(format!("a must be nonnegative, got {a}"));
        }
        Ok(Self {
            alpha_half: alpha / 2.0,
            a,
        })
    }

    /// `φ^a(λ) = λ + a^α λ^{α/2}`.
    pub fn laplace_exponent(&self, lambda: f64) -> f64 {
        let alpha = 2.0 * self.alpha_half;
        let w = if self.a == 0.0 { 0.0 } else { self.a.powf(alpha) };
        lambda + w * lambda.powf(self.alpha_half)
    }

    /// One sample of `T^a_t`.
    pub fn sample<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> f64 {
        if self.a == 0.0 {
            return t;
        }
        t + self.a * self.a * stable_subordinator_increment(self.alpha_half, t, rng)
    }
}

/// How a path left the region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitMode {
    /// A logged jump landed outside.
    JumpOut,
    /// The diffusive part crossed, either at a step end or by the bridge test.
    Continuous,
    /// The path came within the kill distance of the boundary and was stopped.
    Censored,
    /// Still inside at the observation horizon.
    Survived,
}

/// Outcome of one simulated path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitRecord {
    pub exit_time: f64,
    pub exit_position: Vec<f64>,
    pub exit_mode: ExitMode,
    pub path_steps: usize,
    /// Last position known to be inside. For a jump-out this is where the
    /// exit jump started.
    pub last_interior: Vec<f64>,
    /// Distance to the boundary when censored.
    pub censor_distance: Option<f64>,
    /// Number of jumps of size at least the small-jump cutoff.
    pub jumps: usize,
}

impl ExitRecord {
    pub fn censored(&self) -> bool {
        self.exit_mode == ExitMode::Censored
    }
}

/// Discretization knobs of the path simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepPolicy {
    pub dt_max: f64,
    /// `c_step` in `Δt = min(dt_max, c_step·δ²)`.
    pub boundary_factor: f64,
    /// Jumps below `η` are replaced by a Gaussian with the same covariance.
    pub small_jump_cutoff: f64,
    pub kill_distance: f64,
    pub bridge_correction: bool,
    /// Switch off the Brownian part (sampler validation only).
    pub brownian: bool,
    pub max_steps: usize,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self {
            dt_max: 1e-2,
            boundary_factor: 0.1,
            small_jump_cutoff: 1e-3,
            kill_distance: 1e-4,
            bridge_correction: true,
            brownian: true,
            max_steps: 2_000_000,
        }
    }
}

impl StepPolicy {
    /// Defaults scaled to a region: `η = 10⁻³·min(λ, scale)` and
    /// `ε_kill = 10⁻⁴·scale`.
    pub fn for_region(params: &Params, scale: f64) -> Self {
        let base = params.lambda_or_inf().min(scale);
        Self {
            small_jump_cutoff: 1e-3 * base,
            kill_distance: 1e-4 * scale,
            ..Self::default()
        }
    }

    /// The same policy for the region dilated by `factor`: lengths scale
    /// by `factor` and times by its square.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dt_max: self.dt_max * factor * factor,
            small_jump_cutoff: self.small_jump_cutoff * factor,
            kill_distance: self.kill_distance * factor,
            ..*self
        }
    }

    pub fn validate(&self, params: &Params) -> Result<()> {
        let pos = [
            ("dt_max", self.dt_max),
            ("boundary_factor", self.boundary_factor),
            ("small_jump_cutoff", self.small_jump_cutoff),
            ("kill_distance", self.kill_distance),
        ];
        for (name, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return param(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.small_jump_cutoff >= params.lambda_or_inf() {
            return param("small-jump cutoff must lie below the truncation radius");
        }
        if self.max_steps == 0 {
            return param("max_steps must be positive");
        }
        Ok(())
    }
}

/// Positive `β`-stable variable with `E e^{-λT_t} = e^{-tλ^β}`, by Kanter's
/// representation.
pub fn stable_subordinator_increment<R: Rng + ?Sized>(alpha_half: f64, t: f64, rng: &mut R) -> f64 {
    let b = alpha_half;
    assert!(b > 0.0 && b < 1.0, "alpha_half must lie in (0, 1)");
    assert!(t > 0.0, "duration must be positive");
    // U uniform on (0, π), kept away from the endpoints
    let u = PI * rng.random_range(f64::EPSILON..1.0);
    let e: f64 = Exp1.sample(rng);
    // in logs, since sin(u)^{-1/(1-β)} overflows near u = π for β close to 1
    let (sb, s1b) = ((b * u).sin().ln(), ((1.0 - b) * u).sin().ln());
    let log_ratio = (sb - u.sin().ln()) / (1.0 - b) + s1b - sb;
    let log_t1 = (1.0 - b) / b * (log_ratio - e.ln());
    (t.ln() / b + log_t1).exp()
}

fn gaussian_vec<R: Rng + ?Sized>(d: usize, sd: f64, rng: &mut R) -> Vec<f64> {
    (0..d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sd * z
        })
        .collect()
}

fn unit_vec<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v = gaussian_vec(d, 1.0, rng);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Exact sample of `X^a_t - X^a_0` by subordination: `W` at time `T^a_t`.
pub fn xa_increment<R: Rng + ?Sized>(params: &Params, t: f64, rng: &mut R) -> Vec<f64> {
    assert!(t > 0.0, "duration must be positive");
    let s = if params.a == 0.0 {
        t
    } else {
        t + params.a * params.a * stable_subordinator_increment(params.alpha / 2.0, t, rng)
    };
    gaussian_vec(params.d, (2.0 * s).sqrt(), rng)
}

/// One jump of the compound Poisson part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    /// Offset from the start of the step.
    pub time: f64,
    pub displacement: Vec<f64>,
}

/// Jump structure of `a·Y` split at `η`: compound Poisson for sizes in
/// `[η, λ)`, a Gaussian for the rest.
#[derive(Debug, Clone, Copy)]
struct JumpModel {
    d: usize,
    alpha: f64,
    eta: f64,
    lambda: f64,
    /// Intensity of jumps with size in `[η, λ)`.
    rate: f64,
    /// Per-coordinate variance rate of the sub-`η` Gaussian.
    small_var: f64,
}

impl JumpModel {
    fn new(params: &Params, eta: f64) -> Result<Self> {
        let w = params.jump_weight();
        let lambda = params.lambda_or_inf();
        if !(eta > 0.0 && eta < lambda) {
            return param(format!("small-jump cutoff {eta} must lie in (0, λ)"));
        }
        let (d, alpha) = (params.d, params.alpha);
        let (rate, small_var) = if w == 0.0 {
            (0.0, 0.0)
        } else {
            let c = w * normalization_constant(d, alpha)?;
            let sigma = unit_sphere_area(d);
            (
                c * radial_mass(d, alpha, eta, lambda),
                c * sigma * eta.powf(2.0 - alpha) / ((2.0 - alpha) * d as f64),
            )
        };
        Ok(Self {
            d,
            alpha,
            eta,
            lambda,
            rate,
            small_var,
        })
    }

    /// Jumps in `[0, t)`, sorted by time.
    fn sample_jumps<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> Vec<Jump> {
        let mean = self.rate * t;
        if mean == 0.0 {
            return Vec::new();
        }
        let n = Poisson::new(mean).map(|p| p.sample(rng) as usize).unwrap_or(0);
        let lo = self.eta.powf(-self.alpha);
        let hi = if self.lambda.is_finite() {
            self.lambda.powf(-self.alpha)
        } else {
            0.0
        };
        let mut jumps: Vec<Jump> = (0..n)
            .map(|_| {
                let time = rng.random_range(0.0..t);
                let u: f64 = rng.random();
                let r = (lo - u * (lo - hi)).powf(-1.0 / self.alpha);
                let dir = unit_vec(self.d, rng);
                Jump {
                    time,
                    displacement: dir.into_iter().map(|v| r * v).collect(),
                }
            })
            .collect();
        jumps.sort_by(|a, b| a.time.total_cmp(&b.time));
        jumps
    }
}

/// Approximate sample of `X̂^{a,λ}_t - X̂^{a,λ}_0` (or of `X^a` when
/// `params.lambda` is `None`): Brownian part, exact compound Poisson jumps
/// with size in `[η, λ)`, and a Gaussian standing in for the jumps below `η`.
pub fn truncated_xa_increment<R: Rng + ?Sized>(
    params: &Params,
    t: f64,
    policy: &StepPolicy,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<Jump>)> {
    params.validate()?;
    if !(t > 0.0) {
        return param(format!("duration must be positive, got {t}"));
    }
    let model = JumpModel::new(params, policy.small_jump_cutoff)?;
    let bm = if policy.brownian { 2.0 } else { 0.0 };
    let sd = ((bm + model.small_var) * t).sqrt();
    let mut x = gaussian_vec(params.d, sd, rng);
    let jumps = model.sample_jumps(t, rng);
    for j in &jumps {
        for (xi, v) in x.iter_mut().zip(&j.displacement) {
            *xi += v;
        }
    }
    Ok((x, jumps))
}

/// `M_β(t) = Σ (-t^β)^n / Γ(1 + nβ)`, the Mittag-Leffler function
/// `E_β(-t^β)`.
pub fn mittag_leffler(beta: f64, t: f64) -> f64 {
    assert!(beta > 0.0 && beta < 1.0, "beta must lie in (0, 1)");
    assert!(t >= 0.0, "t must be nonnegative");
    if t == 0.0 {
        return 1.0;
    }
    let z = t.powf(beta);
    if z <= 0.5 {
        let mut sum = 0.0;
        let mut zn = 1.0;
        for n in 0..200 {
            let term = zn / gamma(1.0 + n as f64 * beta);
            sum += if n % 2 == 0 { term } else { -term };
            if term < 1e-17 {
                break;
            }
            zn *= z;
        }
        return sum;
    }
    // E_β(-t^β) = sin(βπ)/(βπ) ∫_0^∞ exp(-t s^{1/β}) / (s² + 2s cos βπ + 1) ds
    let c = (beta * PI).cos();
    let f = |s: f64| (-t * s.powf(1.0 / beta)).exp() / (s * s + 2.0 * s * c + 1.0);
    let s_end = (50.0 / t).powf(beta).max(1.0);
    let mut pts = vec![0.0, 0.5, 1.0];
    while *pts.last().unwrap() < s_end {
        let next = 2.0 * pts.last().unwrap();
        pts.push(next.min(s_end));
    }
    let opts = QuadOptions::new(1e-17, 1e-13);
    let body = integrate_pieces(f, &pts, &opts).value;
    // beyond s_end the exponential is below e^{-50}
    (beta * PI).sin() / (beta * PI) * body
}

/// `u^a(t) = M_{1-α/2}(a^{2α/(2-α)} t)`, the density of the potential
/// measure of `T^a`.
pub fn potential_density(params: &Params, t: f64) -> Result<f64> {
    params.validate()?;
    if !(t > 0.0) {
        return param(format!("t must be positive, got {t}"));
    }
    let alpha = params.alpha;
    let scale = if params.a == 0.0 {
        0.0
    } else {
        params.a.powf(2.0 * alpha / (2.0 - alpha))
    };
    Ok(mittag_leffler(1.0 - alpha / 2.0, scale * t))
}

/// A point just outside the boundary near `y`, strictly outside so that
/// targets touching the boundary classify it.
fn exit_point<G: Region + ?Sized>(region: &G, y: &[f64]) -> Vec<f64> {
    let margin = 1e-12 * region.scale().min(1e6);
    let p = region.project_to_boundary(y);
    if region.signed_distance(&p) < -margin {
        return p;
    }
    // push outward along the projection direction
    let mut dir: Vec<f64> = if region.signed_distance(y) < 0.0 {
        y.iter().zip(&p).map(|(a, b)| a - b).collect()
    } else {
        p.iter().zip(y).map(|(a, b)| a - b).collect()
    };
    let mut n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 {
        // y sits on the boundary already; fall back to a numerical normal
        let h = 1e-7 * region.scale().min(1e6);
        dir = (0..y.len())
            .map(|i| {
                let mut a = y.to_vec();
                let mut b = y.to_vec();
                a[i] += h;
                b[i] -= h;
                region.signed_distance(&b) - region.signed_distance(&a)
            })
            .collect();
        n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 {
            return p;
        }
    }
    let mut h = margin;
    for _ in 0..80 {
        let q: Vec<f64> = p.iter().zip(&dir).map(|(a, v)| a + h * v / n).collect();
        if region.signed_distance(&q) < -margin {
            return q;
        }
        h *= 2.0;
    }
    p
}

/// Run one path of `X^a` (or `X̂^{a,λ}`) from `x0` until it leaves the region.
pub fn simulate_until_exit<G: Region + ?Sized, R: Rng + ?Sized>(
    region: &G,
    params: &Params,
    x0: &[f64],
    policy: &StepPolicy,
    rng: &mut R,
) -> Result<ExitRecord> {
    simulate_observed(region, params, x0, policy, rng, &mut |_: &[f64], _: f64| {})
}

/// Position at time `t` of the process killed on leaving the region, or
/// `None` if it has left (or been censored) by then.
pub fn simulate_killed_at<G: Region + ?Sized, R: Rng + ?Sized>(
    region: &G,
    params: &Params,
    x0: &[f64],
    t: f64,
    policy: &StepPolicy,
    rng: &mut R,
) -> Result<Option<Vec<f64>>> {
    if !(t > 0.0) {
        return param(format!("observation time must be positive, got {t}"));
    }
    let rec = run_path(region, params, x0, policy, rng, &mut |_: &[f64], _: f64| {}, t)?;
    Ok((rec.exit_mode == ExitMode::Survived).then_some(rec.exit_position))
}

/// Like [`simulate_until_exit`], reporting every piece of path between
/// jumps as `(start position, duration)` to `observe`. The pieces tile
/// `[0, τ)`.
pub fn simulate_observed<G, R, O>(
    region: &G,
    params: &Params,
    x0: &[f64],
    policy: &StepPolicy,
    rng: &mut R,
    observe: &mut O,
) -> Result<ExitRecord>
where
    G: Region + ?Sized,
    R: Rng + ?Sized,
    O: FnMut(&[f64], f64),
{
    run_path(region, params, x0, policy, rng, observe, f64::INFINITY)
}

fn run_path<G, R, O>(
    region: &G,
    params: &Params,
    x0: &[f64],
    policy: &StepPolicy,
    rng: &mut R,
    observe: &mut O,
    horizon: f64,
) -> Result<ExitRecord>
where
    G: Region + ?Sized,
    R: Rng + ?Sized,
    O: FnMut(&[f64], f64),
{
    params.validate()?;
    policy.validate(params)?;
    if x0.len() != params.d || region.dim() != params.d {
        return param("start point, region and params disagree on the dimension");
    }
    if !region.contains(x0) {
        return param("start point lies outside the region");
    }
    let d = params.d;
    let bm = if policy.brownian { 2.0 } else { 0.0 };
    let mut x = x0.to_vec();
    let mut time = 0.0;
    let mut jumps = 0usize;
    let mut steps = 0usize;
    let record = |mode: ExitMode, t: f64, pos: Vec<f64>, last: &[f64], steps: usize, jumps: usize, cd| ExitRecord {
        exit_time: t,
        exit_position: pos,
        exit_mode: mode,
        path_steps: steps,
        last_interior: last.to_vec(),
        censor_distance: cd,
        jumps,
    };
    loop {
        let delta = region.distance(&x);
        if delta < policy.kill_distance {
            let pos = exit_point(region, &x);
            return Ok(record(ExitMode::Censored, time, pos, &x, steps, jumps, Some(delta)));
        }
        if steps >= policy.max_steps {
            let partial = record(ExitMode::Censored, time, x.clone(), &x, steps, jumps, Some(delta));
            return Err(Error::Budget {
                budget: policy.max_steps,
                partial: Box::new(partial),
            });
        }
        steps += 1;
        let dt = policy
            .dt_max
            .min(policy.boundary_factor * delta * delta)
            .min(horizon - time);
        // the Gaussian stand-in must stay small against the distance to
        // the boundary, so the cutoff shrinks with δ
        let eta = policy.small_jump_cutoff.min(0.5 * delta);
        let model = JumpModel::new(params, eta)?;
        let var = bm + model.small_var;
        let step_jumps = model.sample_jumps(dt, rng);
        let mut seg_start = 0.0;
        let mut next_jump = step_jumps.iter();
        loop {
            let jump = next_jump.next();
            let seg_end = jump.map_or(dt, |j| j.time);
            let h = seg_end - seg_start;
            if h > 0.0 && var > 0.0 {
                observe(&x, h);
                let dx = gaussian_vec(d, (var * h).sqrt(), rng);
                let y: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
                let d0 = region.signed_distance(&x);
                let d1 = region.signed_distance(&y);
                if d1 <= 0.0 {
                    let pos = exit_point(region, &y);
                    return Ok(record(
                        ExitMode::Continuous,
                        time + seg_end,
                        pos,
                        &x,
                        steps,
                        jumps,
                        None,
                    ));
                }
                if policy.bridge_correction {
                    let p_cross = (-2.0 * d0 * d1 / (var * h)).exp();
                    if rng.random::<f64>() < p_cross {
                        let near = if d0 < d1 { &x } else { &y };
                        let pos = exit_point(region, near);
                        let t_exit = time + seg_start + 0.5 * h;
                        return Ok(record(ExitMode::Continuous, t_exit, pos, &x, steps, jumps, None));
                    }
                }
                x = y;
            } else if h > 0.0 {
                observe(&x, h);
            }
            let Some(j) = jump else { break };
            jumps += 1;
            let y: Vec<f64> = x.iter().zip(&j.displacement).map(|(a, b)| a + b).collect();
            if !region.contains(&y) {
                return Ok(record(ExitMode::JumpOut, time + j.time, y, &x, steps, jumps, None));
            }
            x = y;
            seg_start = j.time;
        }
        time += dt;
        if time >= horizon {
            return Ok(record(ExitMode::Survived, horizon, x.clone(), &x, steps, jumps, None));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BallRegion, Complement};
    use crate::quad::integrate;
    use crate::rng::stream_rng;
    use crate::stats::{ks_two_sample, Estimate};

    #[test]
    fn subordinator_laplace_transform() {
        let mut rng = stream_rng(1, 0);
        for beta in [0.3, 0.5, 0.8] {
            let xs: Vec<f64> = (0..200_000)
                .map(|_| (-stable_subordinator_increment(beta, 1.0, &mut rng)).exp())
                .collect();
            let e = Estimate::from_samples(&xs);
            let want = (-1.0f64).exp();
            assert!((e.mean - want).abs() < 3.0 * e.stderr, "β={beta}: {} vs {want}", e.mean);
        }
    }

    #[test]
    fn subordinator_scaling_in_time() {
        let mut rng = stream_rng(2, 0);
        let b = 0.6;
        let a: Vec<f64> = (0..10_000)
            .map(|_| stable_subordinator_increment(b, 3.0, &mut rng))
            .collect();
        let c: Vec<f64> = (0..10_000)
            .map(|_| 3f64.powf(1.0 / b) * stable_subordinator_increment(b, 1.0, &mut rng))
            .collect();
        assert!(ks_two_sample(&a, &c).p_value > 0.01);
    }

    #[test]
    fn subordinator_degenerates_toward_drift() {
        let var = |b: f64, seed| {
            let mut rng = stream_rng(seed, 0);
            // log scale keeps the heavy tail from dominating
            let xs: Vec<f64> = (0..50_000)
                .map(|_| stable_subordinator_increment(b, 1.0, &mut rng).ln())
                .collect();
            let e = Estimate::from_samples(&xs);
            e.stderr * e.stderr * xs.len() as f64
        };
        assert!(var(0.95, 3) > var(0.99, 3));
    }

    #[test]
    fn subordinator_rep_exponent() {
        let s = SubordinatorRep::new(1.0, 2.0).unwrap();
        assert!((s.laplace_exponent(4.0) - (4.0 + 2.0 * 2.0)).abs() < 1e-14);
        let mut rng = stream_rng(4, 0);
        let xs: Vec<f64> = (0..100_000).map(|_| (-s.sample(0.5, &mut rng)).exp()).collect();
        let e = Estimate::from_samples(&xs);
        let want = (-0.5 * s.laplace_exponent(1.0)).exp();
        assert!((e.mean - want).abs() < 3.0 * e.stderr);
    }

    #[test]
    fn xa_characteristic_function() {
        let params = Params::untruncated(2, 1.0, 1.0).unwrap();
        let mut rng = stream_rng(5, 0);
        let xi = [1.0, 0.0];
        let xs: Vec<f64> = (0..200_000)
            .map(|_| {
                let x = xa_increment(&params, 0.5, &mut rng);
                (xi[0] * x[0] + xi[1] * x[1]).cos()
            })
            .collect();
        let e = Estimate::from_samples(&xs);
        let want = (-1.0f64).exp();
        assert!((e.mean - want).abs() < 3.0 * e.stderr, "{} vs {want}", e.mean);
    }

    #[test]
    fn xa_without_jumps_is_brownian() {
        let params = Params::untruncated(3, 1.2, 0.0).unwrap();
        let mut rng = stream_rng(6, 0);
        let n = 50_000;
        let mut xs = vec![Vec::new(); 3];
        let mut cross = Vec::new();
        for _ in 0..n {
            let x = xa_increment(&params, 0.3, &mut rng);
            for i in 0..3 {
                xs[i].push(x[i] * x[i]);
            }
            cross.push(x[0] * x[1]);
        }
        for v in &xs {
            let e = Estimate::from_samples(v);
            assert!((e.mean - 0.6).abs() < 3.0 * e.stderr);
        }
        let c = Estimate::from_samples(&cross);
        assert!(c.mean.abs() < 3.0 * c.stderr);
    }

    #[test]
    fn truncated_matches_exact_when_nothing_is_removed() {
        let params = Params::new(1, 1.2, 1.0, 1.0, Some(1e6)).unwrap();
        let policy = StepPolicy {
            small_jump_cutoff: 1e-3,
            ..StepPolicy::default()
        };
        let mut rng = stream_rng(7, 0);
        let a: Vec<f64> = (0..10_000)
            .map(|_| truncated_xa_increment(&params, 0.2, &policy, &mut rng).unwrap().0[0])
            .collect();
        let exact = params.with_lambda(None);
        let b: Vec<f64> = (0..10_000).map(|_| xa_increment(&exact, 0.2, &mut rng)[0]).collect();
        let ks = ks_two_sample(&a, &b);
        assert!(ks.p_value > 0.01, "{ks:?}");
    }

    #[test]
    fn jump_count_is_poisson_with_the_kernel_rate() {
        let params = Params::new(2, 1.5, 1.0, 1.0, Some(1.0)).unwrap();
        let policy = StepPolicy {
            small_jump_cutoff: 0.1,
            ..StepPolicy::default()
        };
        let t = 0.5;
        let mut rng = stream_rng(8, 0);
        let counts: Vec<f64> = (0..20_000)
            .map(|_| truncated_xa_increment(&params, t, &policy, &mut rng).unwrap().1.len() as f64)
            .collect();
        let e = Estimate::from_samples(&counts);
        let a2 = normalization_constant(2, 1.5).unwrap();
        let want = t * a2 * 2.0 * PI * (0.1f64.powf(-1.5) - 1.0) / 1.5;
        assert!((e.mean - want).abs() < 3.0 * e.stderr, "{} vs {want}", e.mean);
        // truncated jumps never reach λ
        let (_, log) = truncated_xa_increment(&params, 50.0, &policy, &mut rng).unwrap();
        assert!(!log.is_empty());
        for j in &log {
            let r = j.displacement.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((0.1..1.0).contains(&r));
        }
    }

    #[test]
    fn no_jumps_without_weight() {
        let params = Params::new(2, 1.5, 0.0, 1.0, Some(1.0)).unwrap();
        let mut rng = stream_rng(9, 0);
        let (_, log) = truncated_xa_increment(&params, 10.0, &StepPolicy::default(), &mut rng).unwrap();
        assert!(log.is_empty());
        let m = JumpModel::new(&params, 1e-3).unwrap();
        assert_eq!(m.small_var, 0.0);
    }

    #[test]
    fn mittag_leffler_values() {
        assert_eq!(mittag_leffler(0.5, 0.0), 1.0);
        // M_{1/2}(1) = e erfc(1)
        let want = std::f64::consts::E * statrs::function::erf::erfc(1.0);
        assert!((mittag_leffler(0.5, 1.0) - want).abs() < 1e-10);
        for t in [0.01f64, 0.1, 0.3, 2.0, 10.0, 100.0] {
            let w = t.exp() * statrs::function::erf::erfc(t.sqrt());
            assert!((mittag_leffler(0.5, t) - w).abs() < 1e-9 * w, "t={t}");
        }
        for b in [0.25, 0.5, 0.75] {
            assert!(mittag_leffler(b, 2.0) < mittag_leffler(b, 1.0));
        }
    }

    #[test]
    fn mittag_leffler_branches_agree() {
        // z = t^β = 0.5 is the switch point
        for b in [0.25, 0.5, 0.9] {
            let t = 0.5f64.powf(1.0 / b);
            let below = mittag_leffler(b, t * (1.0 - 1e-9));
            let above = mittag_leffler(b, t * (1.0 + 1e-9));
            assert!((below - above).abs() < 1e-8, "β={b}: {below} vs {above}");
        }
    }

    #[test]
    fn potential_density_laplace_identity() {
        let params = Params::untruncated(1, 1.0, 1.0).unwrap();
        let opts = QuadOptions::new(1e-14, 1e-11);
        let f = |t: f64| (-t).exp() * potential_density(&params, t).unwrap();
        let mut total = integrate(f, 1e-300, 1.0, &opts).value;
        total += integrate_pieces(f, &[1.0, 5.0, 20.0, 60.0], &opts).value;
        assert!((total - 0.5).abs() < 1e-4 * 0.5, "{total}");
    }

    #[test]
    fn potential_density_is_decreasing_in_a() {
        let base = Params::untruncated(2, 1.2, 0.5).unwrap();
        for t in [0.1, 1.0, 10.0] {
            let lo = potential_density(&base, t).unwrap();
            let hi = potential_density(&base.with_a(2.0), t).unwrap();
            assert!(lo >= hi);
        }
        assert!((potential_density(&base, 1e-12).unwrap() - 1.0).abs() < 1e-5);
    }

    fn run_many<G: Region>(
        region: &G,
        params: &Params,
        x0: &[f64],
        policy: &StepPolicy,
        n: usize,
        seed: u64,
    ) -> Vec<ExitRecord> {
        let mut rng = stream_rng(seed, 0);
        (0..n)
            .map(|_| simulate_until_exit(region, params, x0, policy, &mut rng).unwrap())
            .collect()
    }

    #[test]
    fn brownian_exit_time_from_ball() {
        let params = Params::untruncated(2, 1.0, 0.0).unwrap();
        let ball = BallRegion::new(vec![0.0, 0.0], 1.0);
        let policy = StepPolicy::for_region(&params, 1.0);
        let recs = run_many(&ball, &params, &[0.0, 0.0], &policy, 20_000, 10);
        let times: Vec<f64> = recs.iter().map(|r| r.exit_time).collect();
        let e = Estimate::from_samples(&times);
        assert!(
            (e.mean - 0.25).abs() < 3.0 * e.stderr + 2e-3,
            "{} ± {}",
            e.mean,
            e.stderr
        );
        let upper: Vec<f64> = recs.iter().map(|r| (r.exit_position[1] > 0.0) as u8 as f64).collect();
        let h = Estimate::from_samples(&upper);
        assert!((h.mean - 0.5).abs() < 3.0 * h.stderr);
        for r in &recs {
            assert!(r.censored() || !ball.contains(&r.exit_position));
        }
    }

    #[test]
    fn paths_are_reproducible() {
        let params = Params::untruncated(2, 1.3, 1.0).unwrap();
        let ball = BallRegion::new(vec![0.0, 0.0], 1.0);
        let policy = StepPolicy::for_region(&params, 1.0);
        let a = run_many(&ball, &params, &[0.3, 0.0], &policy, 50, 11);
        let b = run_many(&ball, &params, &[0.3, 0.0], &policy, 50, 11);
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_jumps_stay_below_lambda() {
        let params = Params::new(2, 1.0, 1.0, 1.0, Some(0.2)).unwrap();
        let ball = BallRegion::new(vec![0.0, 0.0], 1.0);
        let policy = StepPolicy::for_region(&params, 1.0);
        let recs = run_many(&ball, &params, &[0.0, 0.0], &policy, 500, 12);
        for r in recs.iter().filter(|r| r.exit_mode == ExitMode::JumpOut) {
            let step: f64 = r
                .exit_position
                .iter()
                .zip(&r.last_interior)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(step < 0.2);
        }
    }

    #[test]
    fn step_budget_reports_partial_path() {
        let params = Params::untruncated(2, 1.0, 0.0).unwrap();
        let outside = Complement(BallRegion::new(vec![0.0, 0.0], 0.1));
        let policy = StepPolicy {
            max_steps: 10,
            ..StepPolicy::default()
        };
        let mut rng = stream_rng(13, 0);
        match simulate_until_exit(&outside, &params, &[5.0, 0.0], &policy, &mut rng) {
            Err(Error::Budget { budget, partial }) => {
                assert_eq!(budget, 10);
                assert_eq!(partial.path_steps, 10);
            }
            other => panic!("expected a budget error, got {other:?}"),
        }
    }

    /// `P(|X_τ| > R)` for the pure stable process started at the centre of
    /// the unit ball, by quadrature of the exit density
    /// `C (|y|²-1)^{-α/2} |y|^{-d}`. With `w = |y|^{-α}` the radial integral
    /// becomes `(1/α) ∫_0^{R^{-α}} (1 - w^{2/α})^{-α/2} dw` and `Cσ = 2 sin(πα/2)/π`.
    fn exit_tail_oracle(alpha: f64, big_r: f64) -> f64 {
        let c_sigma = 2.0 * (PI * alpha / 2.0).sin() / PI;
        let f = |w: f64| (1.0 - w.powf(2.0 / alpha)).powf(-alpha / 2.0);
        let opts = QuadOptions::new(1e-15, 1e-12);
        c_sigma / alpha * integrate(f, 0.0, big_r.powf(-alpha), &opts).value
    }

    #[test]
    fn pure_stable_exit_distribution() {
        let alpha = 1.0;
        let params = Params::untruncated(2, alpha, 1.0).unwrap();
        let ball = BallRegion::new(vec![0.0, 0.0], 1.0);
        let policy = StepPolicy {
            brownian: false,
            ..StepPolicy::for_region(&params, 1.0)
        };
        let recs = run_many(&ball, &params, &[0.0, 0.0], &policy, 20_000, 14);
        let far: Vec<f64> = recs
            .iter()
            .map(|r| (r.exit_position.iter().map(|v| v * v).sum::<f64>().sqrt() > 2.0) as u8 as f64)
            .collect();
        let e = Estimate::from_samples(&far);
        let want = exit_tail_oracle(alpha, 2.0);
        assert!(
            (e.mean - want).abs() < 3.0 * e.stderr,
            "{} ± {} vs {want}",
            e.mean,
            e.stderr
        );
        let by_jump = recs.iter().filter(|r| r.exit_mode == ExitMode::JumpOut).count();
        assert!(by_jump as f64 > 0.95 * recs.len() as f64);
    }

    #[test]
    fn exit_tail_oracle_matches_incomplete_beta() {
        // the same tail is I_{1/R²}(α/2, 1-α/2)
        for alpha in [0.5, 1.0, 1.5] {
            for r in [1.5, 2.0, 4.0] {
                let want = statrs::function::beta::beta_reg(alpha / 2.0, 1.0 - alpha / 2.0, 1.0 / (r * r));
                assert!((exit_tail_oracle(alpha, r) - want).abs() < 1e-9, "α={alpha} R={r}");
            }
        }
    }
}
