//! Experiments behind the boundary estimates. Each one returns a report
//! with its estimated constants, the grid it was sampled on and pass/fail
//! verdicts:
//!
//! * sign checks of the test functions `u₁ = h_λ + h_{λ,p}` and
//!   `u₂ = h_λ + ψ - h_{λ,p}` under the scaled truncated generator;
//! * exit estimates from the boxes `D_Q(δ₀/λ, r₀/λ)`;
//! * Harnack, Carleson and boundary Harnack constants of exit-target
//!   harmonic functions;
//! * the Brownian-type scaling of `X^a` and the escape lower bound.
//!
//! Harmonic functions are always `u(x) = P_x(X_τ ∈ E)` with `τ` the exit
//! time of `D ∩ B(Q, r)` and `E` a sector of the exterior of `B(Q, r)`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::exit_mc::{exit_statistics, run_chunked, simulate_or_censor, CensorRule, ExitStatistics};
use crate::fraclap::{generator_apply, log_grid, HpField, PVQuadSpec, ScalarField, Verdict};
use crate::geometry::{box_region, BallRegion, BoundaryChart, Complement, DomainShape, Intersection, Region};
use crate::kernels::Params;
use crate::rng::derive_seed;
use crate::samplers::{simulate_killed_at, StepPolicy};
use crate::stats::{fit_through_origin, ks_two_sample, Estimate};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Smallest admissible gap between `p` and `α`.
pub const P_GAP: f64 = 1e-3;

/// `ψ`: `coeff·|z̃|²` for `|z| ≤ inner`, the constant `level` for
/// `|z| ≥ outer`, blended by a quintic smoothstep in between. `z` are chart
/// coordinates at `Q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiBump {
    pub coeff: f64,
    pub level: f64,
    pub inner: f64,
    pub outer: f64,
}

fn smoothstep(t: f64) -> (f64, f64, f64) {
    let s = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
    let s1 = 30.0 * t * t * (t - 1.0) * (t - 1.0);
    let s2 = 60.0 * t * (2.0 * t - 1.0) * (t - 1.0);
    (s, s1, s2)
}

impl PsiBump {
    /// `coeff = 2^{p+1}/r₀²`, `level = 3·2^p`, blend on `[r₀/4, r₀/2]`.
    pub fn new(p: f64, r0: f64) -> Self {
        Self {
            coeff: 2f64.powf(p + 1.0) / (r0 * r0),
            level: 3.0 * 2f64.powf(p),
            inner: r0 / 4.0,
            outer: r0 / 2.0,
        }
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        let d = z.len();
        let q = self.coeff * z[..d - 1].iter().map(|v| v * v).sum::<f64>();
        let r = norm(z);
        if r <= self.inner {
            q
        } else if r >= self.outer {
            self.level
        } else {
            let (s, _, _) = smoothstep((r - self.inner) / (self.outer - self.inner));
            q + s * (self.level - q)
        }
    }

    pub fn laplacian(&self, z: &[f64]) -> f64 {
        let d = z.len();
        let zt2: f64 = z[..d - 1].iter().map(|v| v * v).sum();
        let q = self.coeff * zt2;
        let lap_q = 2.0 * self.coeff * (d - 1) as f64;
        let r = norm(z);
        if r <= self.inner {
            return lap_q;
        }
        if r >= self.outer {
            return 0.0;
        }
        let w = self.outer - self.inner;
        let (s, s1, s2) = smoothstep((r - self.inner) / w);
        let (g, h) = (s1 / w, s2 / (w * w));
        let lap_s = h + g * (d - 1) as f64 / r;
        let grad_dot = g / r * 2.0 * self.coeff * zt2;
        lap_q * (1.0 - s) + lap_s * (self.level - q) - 2.0 * grad_dot
    }
}

/// Knobs of the test functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestFunctionSpec {
    pub p: f64,
    pub lambda: f64,
    pub r0: f64,
    /// Window height: grid points satisfy `0 < ρ_λ ≤ delta`.
    pub delta: f64,
    pub psi: PsiBump,
}

/// The open interval `(1, 2 ∧ (3-α))` of admissible `p`.
pub fn admissible_p(alpha: f64) -> (f64, f64) {
    (1.0, 2f64.min(3.0 - alpha))
}

/// Move `p` at least [`P_GAP`] away from `α`, staying inside the interval.
fn nudge_p(alpha: f64, p: f64) -> Result<f64> {
    let (lo, hi) = admissible_p(alpha);
    if !(p > lo && p < hi) {
        return param(format!("p must lie in ({lo}, {hi}), got {p}"));
    }
    if (p - alpha).abs() >= P_GAP {
        return Ok(p);
    }
    let up = alpha + P_GAP;
    let down = alpha - P_GAP;
    let cand = if p >= alpha && up < hi { up } else { down };
    if cand > lo && cand < hi {
        Ok(cand)
    } else if up < hi {
        Ok(up)
    } else {
        param(format!("no admissible p near {p} for alpha = {alpha}"))
    }
}

impl TestFunctionSpec {
    /// Default `p`: midpoint of the admissible interval, nudged off `α`.
    pub fn new(alpha: f64, lambda: f64, r0: f64, delta: f64) -> Result<Self> {
        let (lo, hi) = admissible_p(alpha);
        Self::with_p(alpha, 0.5 * (lo + hi), lambda, r0, delta)
    }

    pub fn with_p(alpha: f64, p: f64, lambda: f64, r0: f64, delta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return param(format!("alpha must lie in (0, 2), got {alpha}"));
        }
        let p = nudge_p(alpha, p)?;
        let s = Self {
            p,
            lambda,
            r0,
            delta,
            psi: PsiBump::new(p, r0),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        self.delta = delta;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 1.0) || !self.lambda.is_finite() {
            return param(format!("lambda must be at least 1, got {}", self.lambda));
        }
        if !(self.r0 > 0.0) {
            return param("r0 must be positive");
        }
        if !(self.delta > 0.0 && self.delta < self.r0) {
            return param(format!("delta must lie in (0, r0 = {}), got {}", self.r0, self.delta));
        }
        if !(self.p > 1.0) {
            return param("p must exceed 1");
        }
        Ok(())
    }
}

/// `ψ` as a field on the world coordinates of a chart.
#[derive(Debug, Clone)]
pub struct PsiField {
    pub chart: BoundaryChart,
    pub bump: PsiBump,
}

impl ScalarField for PsiField {
    fn dim(&self) -> usize {
        self.chart.dim()
    }

    fn eval(&self, y: &[f64]) -> f64 {
        self.bump.value(&self.chart.to_chart(y))
    }

    fn laplacian(&self, y: &[f64]) -> Option<f64> {
        Some(self.bump.laplacian(&self.chart.to_chart(y)))
    }

    // second derivatives jump across the spheres |z| = inner, outer
    fn smooth_radius(&self, x: &[f64]) -> f64 {
        let r = norm(&self.chart.to_chart(x));
        (r - self.bump.inner).abs().min((r - self.bump.outer).abs())
    }

    fn kink_normal(&self, x: &[f64]) -> Option<Vec<f64>> {
        let z = self.chart.to_chart(x);
        let r = norm(&z);
        if r == 0.0 {
            return None;
        }
        let zn: Vec<f64> = z.iter().map(|v| v / r).collect();
        let o = self.chart.from_chart(&vec![0.0; z.len()]);
        Some(self.chart.from_chart(&zn).iter().zip(&o).map(|(a, b)| a - b).collect())
    }

    fn kink_level(&self, y: &[f64]) -> Option<f64> {
        let r = norm(&self.chart.to_chart(y));
        Some((r - self.bump.inner) * (r - self.bump.outer))
    }
}

/// `h_λ`, `h_{λ,p}` and `ψ` on `λD` at its canonical boundary point.
pub struct TestFunctions {
    pub spec: TestFunctionSpec,
    pub chart: BoundaryChart,
    pub h: HpField,
    pub hp: HpField,
    pub psi: PsiField,
    domain: DomainShape,
}

impl TestFunctions {
    pub fn new(spec: &TestFunctionSpec, domain: &DomainShape) -> Result<Self> {
        spec.validate()?;
        let scaled = domain.dilated(spec.lambda);
        let q = scaled.canonical_boundary_point();
        let cutoff = 4.0 * spec.r0;
        let h = HpField::new(&scaled, &q, 1.0)?.with_cutoff(cutoff)?;
        let hp = HpField::new(&scaled, &q, spec.p)?.with_cutoff(cutoff)?;
        let chart = h.chart().clone();
        Ok(Self {
            spec: *spec,
            psi: PsiField {
                chart: chart.clone(),
                bump: spec.psi,
            },
            chart,
            h,
            hp,
            domain: scaled,
        })
    }

    /// The world point above chart position `z̃` at height `ρ_λ = rho`.
    pub fn point(&self, zt: &[f64], rho: f64) -> Vec<f64> {
        self.chart.point_above(zt, rho)
    }

    /// Generator values at one point.
    pub fn evaluate(&self, zt: &[f64], rho: f64, params: &Params, pv: &PVQuadSpec) -> Result<GeneratorValues> {
        let x = self.point(zt, rho);
        let gh = generator_apply(&self.h, &x, params, pv)?;
        let ghp = generator_apply(&self.hp, &x, params, pv)?;
        let gpsi = generator_apply(&self.psi, &x, params, pv)?;
        Ok(GeneratorValues {
            tangential: zt.to_vec(),
            rho,
            delta_d: self.domain.dist_to_complement(&x),
            h: gh.value,
            hp: ghp.value,
            psi: gpsi.value,
            u1: gh.value + ghp.value,
            u2: gh.value + gpsi.value - ghp.value,
            slack: gh.achieved + ghp.achieved + gpsi.achieved,
        })
    }
}

/// Generator of each piece and of `u₁`, `u₂` at one chart point, with the
/// summed quadrature tolerance as `slack`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorValues {
    pub tangential: Vec<f64>,
    pub rho: f64,
    pub delta_d: f64,
    pub h: f64,
    pub hp: f64,
    pub psi: f64,
    pub u1: f64,
    pub u2: f64,
    pub slack: f64,
}

impl GeneratorValues {
    pub fn sub_ok(&self) -> bool {
        self.u1 >= -self.slack
    }

    pub fn super_ok(&self) -> bool {
        self.u2 <= -1.0 + self.slack
    }

    pub fn passes(&self) -> bool {
        self.sub_ok() && self.super_ok()
    }
}

/// A grid point in chart coordinates of `λD`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub tangential: Vec<f64>,
    pub rho: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestFunctionReport {
    pub spec: TestFunctionSpec,
    pub values: Vec<GeneratorValues>,
    /// Largest window height found with both inequalities holding on the
    /// center line.
    pub delta0: f64,
    pub verdicts: Vec<Verdict>,
}

impl TestFunctionReport {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }
}

fn params_at_scale(params: &Params, spec: &TestFunctionSpec, domain: &DomainShape) -> Result<Params> {
    params.validate()?;
    if params.d != domain.d {
        return param("params and domain disagree on the dimension");
    }
    Ok(params.with_lambda(Some(spec.lambda)))
}

/// Quadrature settings for the sign checks: the inequalities have O(1)
/// margins, so a looser tolerance than the oracle default is enough.
pub fn sign_check_pv() -> PVQuadSpec {
    PVQuadSpec {
        rel_tol: 1e-4,
        ..PVQuadSpec::default()
    }
}

/// Tangential offsets, as fractions of `r₀`, probed by [`empirical_delta0`]:
/// the center line, the quadratic part of `ψ`, its blend and beyond.
pub const DELTA0_OFFSETS: [f64; 4] = [0.0, 0.125, 0.375, 0.75];

/// Largest `δ ≤ spec.delta` with both inequalities holding at height `δ`
/// above each offset of [`DELTA0_OFFSETS`] (along the first tangential
/// axis). Per offset: scan down by factors of 4 to `floor`, then `iters`
/// bisection steps in `log ρ`; later offsets start from the running
/// minimum. Zero when some offset fails down to `floor`.
pub fn empirical_delta0(
    spec: &TestFunctionSpec,
    domain: &DomainShape,
    params: &Params,
    pv: &PVQuadSpec,
    floor: f64,
    iters: usize,
) -> Result<f64> {
    let fields = TestFunctions::new(spec, domain)?;
    let pl = params_at_scale(params, spec, domain)?;
    let offsets: &[f64] = if domain.d == 1 {
        &DELTA0_OFFSETS[..1]
    } else {
        &DELTA0_OFFSETS
    };
    let mut best = spec.delta;
    for &off in offsets {
        let mut zt = vec![0.0; domain.d - 1];
        if domain.d > 1 {
            zt[0] = off * spec.r0;
        }
        let ok = |rho: f64| -> Result<bool> { Ok(fields.evaluate(&zt, rho, &pl, pv)?.passes()) };
        let mut hi = best;
        if ok(hi)? {
            continue;
        }
        let mut lo = hi / 4.0;
        loop {
            if lo < floor {
                return Ok(0.0);
            }
            if ok(lo)? {
                break;
            }
            hi = lo;
            lo /= 4.0;
        }
        for _ in 0..iters {
            let mid = (lo * hi).sqrt();
            if ok(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        best = lo;
    }
    Ok(best)
}

/// Grid of `D(λ, δ, r₀)`: heights log-spaced on `[δ/20, δ]` above each
/// offset of [`DELTA0_OFFSETS`]. Much lower heights at offsets of order
/// `r₀` fall below the rounding of the chart coordinates.
pub fn default_test_grid(spec: &TestFunctionSpec, d: usize, points: usize) -> Vec<ChartPoint> {
    let rhos: Vec<f64> = log_grid(spec.delta / 20.0, spec.delta, points.max(2))
        .into_iter()
        .map(|r| r.min(spec.delta))
        .collect();
    let offsets: &[f64] = if d == 1 { &DELTA0_OFFSETS[..1] } else { &DELTA0_OFFSETS };
    let mut grid = Vec::new();
    for &off in offsets {
        let mut zt = vec![0.0; d - 1];
        if d > 1 {
            zt[0] = off * spec.r0;
        }
        for &rho in &rhos {
            grid.push(ChartPoint {
                tangential: zt.clone(),
                rho,
            });
        }
    }
    grid
}

/// Sign check of the generator on `u₁` (`≥ 0`) and `u₂` (`≤ -1`) at every
/// grid point. The reported `δ₀` is the top of the grid when every point
/// passes and zero otherwise.
pub fn verify_test_functions(
    spec: &TestFunctionSpec,
    domain: &DomainShape,
    params: &Params,
    grid: &[ChartPoint],
    pv: &PVQuadSpec,
) -> Result<TestFunctionReport> {
    let fields = TestFunctions::new(spec, domain)?;
    let pl = params_at_scale(params, spec, domain)?;
    if grid.is_empty() {
        return param("empty grid");
    }
    for g in grid {
        if g.tangential.len() + 1 != domain.d {
            return param("grid point has the wrong dimension");
        }
        if !(g.rho > 0.0 && g.rho <= spec.delta) || norm(&g.tangential) >= spec.r0 {
            return Err(Error::Geometry(format!(
                "grid point {:?} at height {:.3e} is outside D(λ, δ = {:.3e}, r₀ = {:.3e})",
                g.tangential, g.rho, spec.delta, spec.r0
            )));
        }
    }
    let values = grid
        .par_iter()
        .map(|g| fields.evaluate(&g.tangential, g.rho, &pl, pv))
        .collect::<Result<Vec<_>>>()?;
    let worst_u1 = values.iter().map(|v| v.u1).fold(f64::INFINITY, f64::min);
    let worst_u2 = values.iter().map(|v| v.u2).fold(f64::NEG_INFINITY, f64::max);
    let sub = values.iter().all(|v| v.sub_ok());
    let sup = values.iter().all(|v| v.super_ok());
    let top = grid.iter().map(|g| g.rho).fold(0.0, f64::max);
    let delta0 = if sub && sup { top } else { 0.0 };
    let verdicts = vec![
        Verdict::new("u1_generator_nonnegative", sub, format!("min u1 value {worst_u1:.4e}")),
        Verdict::new(
            "u2_generator_below_minus_one",
            sup,
            format!("max u2 value {worst_u2:.4e}"),
        ),
        Verdict::new(
            "delta0_positive",
            delta0 > 0.0,
            format!("empirical delta0 {delta0:.4e}"),
        ),
    ];
    Ok(TestFunctionReport {
        spec: *spec,
        values,
        delta0,
        verdicts,
    })
}

/// Calibrate `δ₀` with [`empirical_delta0`] from `spec.delta` down, then
/// verify both inequalities on [`default_test_grid`] below it.
pub fn calibrate_and_verify(
    spec: &TestFunctionSpec,
    domain: &DomainShape,
    params: &Params,
    pv: &PVQuadSpec,
) -> Result<TestFunctionReport> {
    let delta0 = empirical_delta0(spec, domain, params, pv, 1e-7 * spec.r0, 3)?;
    if delta0 == 0.0 {
        let values = vec![TestFunctions::new(spec, domain)?.evaluate(
            &vec![0.0; domain.d - 1],
            spec.delta,
            &params_at_scale(params, spec, domain)?,
            pv,
        )?];
        return Ok(TestFunctionReport {
            spec: *spec,
            values,
            delta0,
            verdicts: vec![Verdict::new("delta0_positive", false, "no passing window height found")],
        });
    }
    let spec = spec.with_delta(delta0)?;
    verify_test_functions(&spec, domain, params, &default_test_grid(&spec, domain.d, 4), pv)
}

/// Step-policy knobs relative to the region scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyTemplate {
    /// `dt_max / scale²`.
    pub dt_max: f64,
    pub boundary_factor: f64,
    /// `η / min(λ, scale)`.
    pub small_jump: f64,
    /// `ε_kill / scale`.
    pub kill: f64,
    pub max_steps: usize,
}

impl Default for PolicyTemplate {
    fn default() -> Self {
        Self {
            dt_max: 1e-2,
            boundary_factor: 0.1,
            small_jump: 1e-2,
            kill: 1e-4,
            max_steps: 2_000_000,
        }
    }
}

impl PolicyTemplate {
    pub fn policy(&self, params: &Params, scale: f64) -> StepPolicy {
        StepPolicy {
            dt_max: self.dt_max * scale * scale,
            boundary_factor: self.boundary_factor,
            small_jump_cutoff: self.small_jump * params.lambda_or_inf().min(scale),
            kill_distance: self.kill * scale,
            max_steps: self.max_steps,
            ..StepPolicy::default()
        }
    }
}

/// One Monte Carlo estimate in a report, one CSV row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateRow {
    pub label: String,
    pub x: Vec<f64>,
    /// `δ_D(x)`.
    pub delta: f64,
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
    pub censored_fraction: f64,
}

impl EstimateRow {
    fn new(label: impl Into<String>, x: &[f64], delta: f64, e: &Estimate) -> Self {
        Self {
            label: label.into(),
            x: x.to_vec(),
            delta,
            mean: e.mean,
            stderr: e.stderr,
            n: e.n,
            censored_fraction: e.censored_fraction,
        }
    }
}

/// The grid pair attaining an empirical constant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorstPair {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub value: f64,
}

/// Empirical constant of one experiment with everything needed to read it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstantReport {
    pub experiment: String,
    pub empirical_constant: f64,
    pub constants: BTreeMap<String, f64>,
    /// Constant at the base configuration over the constant at the
    /// comparison one (scale `r/2`, another `λ`, …).
    pub stability_ratio: Option<f64>,
    pub worst_pair: Option<WorstPair>,
    pub descriptors: BTreeMap<String, String>,
    pub rows: Vec<EstimateRow>,
    pub verdicts: Vec<Verdict>,
}

impl ConstantReport {
    fn new(experiment: &str) -> Self {
        Self {
            experiment: experiment.into(),
            empirical_constant: f64::NAN,
            constants: BTreeMap::new(),
            stability_ratio: None,
            worst_pair: None,
            descriptors: BTreeMap::new(),
            rows: Vec::new(),
            verdicts: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    fn describe(&mut self, key: &str, value: impl ToString) {
        self.descriptors.insert(key.into(), value.to_string());
    }
}

/// `max / min` of positive finite values, infinite otherwise.
fn spread(values: &[f64]) -> f64 {
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    if lo > 0.0 && hi.is_finite() {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// `{|y - c| ≥ r}` restricted to directions whose cosine with `axis`
/// exceeds `min_cos` (or, when `symmetric`, whose absolute cosine does).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExteriorSector {
    pub center: Vec<f64>,
    pub r: f64,
    pub axis: Vec<f64>,
    pub min_cos: f64,
    pub symmetric: bool,
}

impl ExteriorSector {
    /// The half of the exterior on the `axis` side.
    pub fn half(center: &[f64], r: f64, axis: &[f64]) -> Self {
        Self {
            center: center.to_vec(),
            r,
            axis: axis.to_vec(),
            min_cos: 0.0,
            symmetric: false,
        }
    }

    /// The whole exterior.
    pub fn all(center: &[f64], r: f64) -> Self {
        let mut axis = vec![0.0; center.len()];
        axis[0] = 1.0;
        Self {
            center: center.to_vec(),
            r,
            axis,
            min_cos: -2.0,
            symmetric: false,
        }
    }

    fn cosine(&self, y: &[f64]) -> f64 {
        let v: Vec<f64> = y.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        let n = norm(&v);
        if n == 0.0 {
            return 0.0;
        }
        v.iter().zip(&self.axis).map(|(a, b)| a * b).sum::<f64>() / (n * norm(&self.axis))
    }
}

impl Region for ExteriorSector {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn signed_distance(&self, y: &[f64]) -> f64 {
        let radial = dist(y, &self.center) - self.r;
        let c = self.cosine(y);
        let c = if self.symmetric { c.abs() } else { c };
        radial.min((c - self.min_cos) * dist(y, &self.center))
    }

    fn scale(&self) -> f64 {
        self.r
    }

    fn contains(&self, y: &[f64]) -> bool {
        if dist(y, &self.center) < self.r {
            return false;
        }
        let c = self.cosine(y);
        let c = if self.symmetric { c.abs() } else { c };
        c > self.min_cos
    }
}

/// Exit statistics of `D ∩ B(Q, r)` at several points, one seed stream per
/// point, censored paths scored where they stopped.
#[allow(clippy::too_many_arguments)]
fn local_statistics<G: Region + ?Sized>(
    region: &G,
    params: &Params,
    points: &[Vec<f64>],
    targets: &[&dyn Region],
    n: usize,
    policy: &StepPolicy,
    seed: u64,
) -> Result<Vec<ExitStatistics>> {
    points
        .iter()
        .enumerate()
        .map(|(i, x)| {
            exit_statistics(
                region,
                params,
                x,
                targets,
                n,
                policy,
                derive_seed(seed, i as u64),
                CensorRule::Snap,
            )
        })
        .collect()
}

/// Options of [`run_exit_estimate_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExitExperimentOptions {
    /// Box height `δ₀` before scaling by `1/λ`.
    pub delta0: f64,
    /// Start heights as fractions of the box height.
    pub depths: Vec<f64>,
    pub r2_min: f64,
    pub seed: u64,
    pub policy: PolicyTemplate,
}

impl Default for ExitExperimentOptions {
    fn default() -> Self {
        Self {
            delta0: 1e-2,
            depths: vec![0.02, 0.05, 0.1, 0.2, 0.3],
            r2_min: 0.9,
            seed: 0,
            policy: PolicyTemplate::default(),
        }
    }
}

/// Exit from `U = D_Q(δ₀/λ, r₀/λ)` started on the center line: (i) the
/// probability of landing in `D_Q(2δ₀/λ, r₀/λ)`, (ii) of landing in `D`,
/// (iii) `E τ_U`, each fitted against `δ_D(x)` through the origin.
///
/// Constants: `C8 = min P(i)/(λδ_D)`, `C9 = max P(ii)/(λδ_D)`,
/// `C9_time = max λ E[τ]/δ_D`. The truncation of `params` selects the
/// process (`Some(1)` for `X̂^a`, `None` for `X^a`).
pub fn run_exit_estimate_experiment(
    domain: &DomainShape,
    params: &Params,
    lambda_scale: f64,
    n: usize,
    opts: &ExitExperimentOptions,
) -> Result<ConstantReport> {
    params.validate()?;
    if !(lambda_scale >= 1.0) {
        return param("lambda must be at least 1");
    }
    let r0 = domain.r0();
    if !(opts.delta0 > 0.0 && opts.delta0 < r0) {
        return param(format!("delta0 must lie in (0, r0 = {r0:.4e})"));
    }
    if opts.depths.len() < 2 || opts.depths.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
        return param("need at least two start depths in (0, 1)");
    }
    let q = domain.canonical_boundary_point();
    let chart = domain.chart(&q)?;
    let h = opts.delta0 / lambda_scale;
    let w = r0 / lambda_scale;
    let boxed = box_region(domain, &chart, h, w)?;
    let top = box_region(domain, &chart, 2.0 * h, w)?;
    let policy = opts.policy.policy(params, h.min(w));
    let zt = vec![0.0; domain.d - 1];
    let starts: Vec<Vec<f64>> = opts.depths.iter().map(|f| chart.point_above(&zt, f * h)).collect();
    let deltas: Vec<f64> = starts.iter().map(|x| domain.dist_to_complement(x)).collect();
    let targets: [&dyn Region; 2] = [&top, domain];
    let stats = local_statistics(&boxed, params, &starts, &targets, n, &policy, opts.seed)?;

    let mut rep = ConstantReport::new("exit_estimates");
    rep.describe("lambda", lambda_scale);
    rep.describe("box_height", h);
    rep.describe("box_width", w);
    rep.describe("n", n);
    rep.describe("truncation", format!("{:?}", params.lambda));
    let series: [(&str, Vec<f64>); 3] = [
        ("land_in_double_box", stats.iter().map(|s| s.hits[0].mean).collect()),
        ("land_in_domain", stats.iter().map(|s| s.hits[1].mean).collect()),
        ("exit_time", stats.iter().map(|s| s.exit_time.mean).collect()),
    ];
    for (i, s) in stats.iter().enumerate() {
        rep.rows.push(EstimateRow::new(
            "land_in_double_box",
            &starts[i],
            deltas[i],
            &s.hits[0],
        ));
        rep.rows
            .push(EstimateRow::new("land_in_domain", &starts[i], deltas[i], &s.hits[1]));
        rep.rows
            .push(EstimateRow::new("exit_time", &starts[i], deltas[i], &s.exit_time));
    }
    for (name, ys) in &series {
        let fit = fit_through_origin(&deltas, ys);
        rep.constants.insert(format!("{name}_slope"), fit.slope);
        rep.constants.insert(format!("{name}_r2"), fit.r2);
        rep.verdicts.push(Verdict::new(
            format!("{name}_linear"),
            fit.r2 >= opts.r2_min,
            format!("R² {:.4} (need ≥ {})", fit.r2, opts.r2_min),
        ));
    }
    let ratio = |ys: &[f64], k: f64| -> Vec<f64> { ys.iter().zip(&deltas).map(|(y, d)| k * y / d).collect() };
    let c8 = ratio(&series[0].1, 1.0 / lambda_scale)
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let c9 = ratio(&series[1].1, 1.0 / lambda_scale).into_iter().fold(0.0, f64::max);
    let c9t = ratio(&series[2].1, lambda_scale).into_iter().fold(0.0, f64::max);
    rep.constants.insert("C8".into(), c8);
    rep.constants.insert("C9".into(), c9);
    rep.constants.insert("C9_time".into(), c9t);
    let censored = stats.iter().map(|s| s.exit_time.censored_fraction).fold(0.0, f64::max);
    rep.constants.insert("max_censored_fraction".into(), censored);
    rep.verdicts.push(Verdict::new(
        "constants_finite",
        c8 > 0.0 && c8.is_finite() && c9.is_finite() && c9t.is_finite(),
        format!("C8 {c8:.4e}, C9 {c9:.4e}, C9_time {c9t:.4e}"),
    ));
    rep.empirical_constant = c8;
    Ok(rep)
}

/// [`run_exit_estimate_experiment`] at several `λ`; passes when every run
/// is linear and `C8` varies by less than `factor` across `λ`.
pub fn run_exit_uniformity(
    domain: &DomainShape,
    params: &Params,
    lambdas: &[f64],
    n: usize,
    factor: f64,
    opts: &ExitExperimentOptions,
) -> Result<ConstantReport> {
    let mut rep = ConstantReport::new("exit_estimates_lambda_uniformity");
    let mut c8 = Vec::new();
    for (i, &l) in lambdas.iter().enumerate() {
        let o = ExitExperimentOptions {
            seed: derive_seed(opts.seed, 100 + i as u64),
            ..opts.clone()
        };
        let sub = run_exit_estimate_experiment(domain, params, l, n, &o)?;
        for v in &sub.verdicts {
            rep.verdicts
                .push(Verdict::new(format!("lambda={l}:{}", v.name), v.pass, v.detail.clone()));
        }
        for (k, v) in &sub.constants {
            rep.constants.insert(format!("lambda={l}:{k}"), *v);
        }
        for mut row in sub.rows {
            row.label = format!("lambda={l}:{}", row.label);
            rep.rows.push(row);
        }
        c8.push(sub.empirical_constant);
    }
    let s = spread(&c8);
    rep.stability_ratio = Some(s);
    rep.empirical_constant = c8.iter().copied().fold(f64::INFINITY, f64::min);
    rep.describe("lambdas", format!("{lambdas:?}"));
    rep.verdicts.push(Verdict::new(
        "C8_uniform_in_lambda",
        s < factor,
        format!("max/min of C8 {s:.3} (need < {factor})"),
    ));
    Ok(rep)
}

/// Landing probability (i) of [`run_exit_estimate_experiment`] for the
/// truncated process `X̂^a` against the full `X^a`: jumps of size ≥ 1
/// cannot land in the small double box, so the two must agree.
pub fn compare_truncation(
    domain: &DomainShape,
    params: &Params,
    lambda_scale: f64,
    n: usize,
    opts: &ExitExperimentOptions,
) -> Result<ConstantReport> {
    let trunc = run_exit_estimate_experiment(domain, &params.with_lambda(Some(1.0)), lambda_scale, n, opts)?;
    let o = ExitExperimentOptions {
        seed: derive_seed(opts.seed, 7),
        ..opts.clone()
    };
    let full = run_exit_estimate_experiment(domain, &params.with_lambda(None), lambda_scale, n, &o)?;
    let mut rep = ConstantReport::new("truncated_vs_full");
    let pick = |r: &ConstantReport| -> Vec<EstimateRow> {
        r.rows
            .iter()
            .filter(|x| x.label == "land_in_double_box")
            .cloned()
            .collect()
    };
    let (a, b) = (pick(&trunc), pick(&full));
    let mut worst: f64 = 0.0;
    for (x, y) in a.iter().zip(&b) {
        let se = (x.stderr.powi(2) + y.stderr.powi(2)).sqrt();
        let z = if se > 0.0 { (x.mean - y.mean) / se } else { 0.0 };
        worst = worst.max(z.abs());
        let mut rx = x.clone();
        rx.label = "truncated".into();
        let mut ry = y.clone();
        ry.label = "full".into();
        rep.rows.push(rx);
        rep.rows.push(ry);
    }
    rep.empirical_constant = worst;
    rep.constants.insert("max_abs_z".into(), worst);
    rep.verdicts.push(Verdict::new(
        "landing_probability_unchanged",
        worst < 3.0,
        format!("max |z| {worst:.3}"),
    ));
    Ok(rep)
}

/// Options shared by the harmonic-function experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarmonicOptions {
    /// Values of `a` for the uniformity verdict.
    pub a_grid: Vec<f64>,
    /// Allowed `max/min` of the constant across `a`.
    pub a_factor: f64,
    /// Allowed ratio between the constants at `r` and `r/2`.
    pub scale_factor: f64,
    pub seed: u64,
    pub policy: PolicyTemplate,
}

impl Default for HarmonicOptions {
    fn default() -> Self {
        Self {
            a_grid: vec![0.25, 1.0, 2.0],
            a_factor: 3.0,
            scale_factor: 3.0,
            seed: 0,
            policy: PolicyTemplate::default(),
        }
    }
}

fn seed_for(opts: &HarmonicOptions, a: f64, r: f64, salt: u64) -> u64 {
    derive_seed(derive_seed(opts.seed, a.to_bits()), r.to_bits() ^ salt)
}

/// Harnack in `B(0, r)`: `u_E(x) = P_x(X_τ ∈ E)` for the two exterior
/// halves along `e₁` and the symmetric sector `|cos| > 1/2`, on a grid of
/// `B(0, r/2)`. `C₀(a)` is the largest `u(x)/u(y)` over targets and grid
/// pairs; it must be finite for every `a` and vary by less than
/// `a_factor` across `a`. The whole exterior (`u ≡ 1`) is reported too.
pub fn run_harnack_experiment(params: &Params, r: f64, n: usize, opts: &HarmonicOptions) -> Result<ConstantReport> {
    params.validate()?;
    if !(r > 0.0 && r <= 1.0) {
        return param("r must lie in (0, 1]");
    }
    let d = params.d;
    let center = vec![0.0; d];
    let ball = BallRegion::new(center.clone(), r);
    let mut e1 = vec![0.0; d];
    e1[0] = 1.0;
    let minus: Vec<f64> = e1.iter().map(|v| -v).collect();
    let right = ExteriorSector::half(&center, r, &e1);
    let left = ExteriorSector::half(&center, r, &minus);
    let sym = ExteriorSector {
        min_cos: 0.5,
        symmetric: true,
        ..ExteriorSector::half(&center, r, &e1)
    };
    let all = ExteriorSector::all(&center, r);
    let targets: [&dyn Region; 4] = [&right, &left, &sym, &all];
    let names = ["right_half", "left_half", "symmetric", "whole_exterior"];
    let mut grid = vec![center.clone()];
    for i in 0..d.min(2) {
        for s in [1.0, -1.0] {
            let mut x = center.clone();
            x[i] = s * 0.4 * r;
            grid.push(x);
        }
    }
    let policy = opts.policy.policy(params, r);
    let mut rep = ConstantReport::new("harnack");
    rep.describe("r", r);
    rep.describe("n", n);
    rep.describe("grid_points", grid.len());
    rep.describe("a_grid", format!("{:?}", opts.a_grid));
    let mut c0s = Vec::new();
    for &a in &opts.a_grid {
        let pa = params.with_a(a);
        let stats = local_statistics(&ball, &pa, &grid, &targets, n, &policy, seed_for(opts, a, r, 0))?;
        let mut c0: f64 = 0.0;
        let mut worst = None;
        for (k, name) in names.iter().enumerate() {
            let us: Vec<f64> = stats.iter().map(|s| s.hits[k].mean).collect();
            for (i, s) in stats.iter().enumerate() {
                rep.rows.push(EstimateRow::new(
                    format!("a={a}:{name}"),
                    &grid[i],
                    ball.distance(&grid[i]),
                    &s.hits[k],
                ));
            }
            let (imax, imin) = argmax_argmin(&us);
            let ratio = if us[imin] > 0.0 {
                us[imax] / us[imin]
            } else {
                f64::INFINITY
            };
            rep.constants.insert(format!("a={a}:{name}:ratio"), ratio);
            if k < 3 && ratio > c0 {
                c0 = ratio;
                worst = Some(WorstPair {
                    x: grid[imax].clone(),
                    y: grid[imin].clone(),
                    value: ratio,
                });
            }
        }
        // u_sym(x) against u_sym(-x) on the first axis pair
        let z = stats[1].hits[2].zscore(&stats[2].hits[2]);
        rep.constants.insert(format!("a={a}:symmetric_pair_z"), z);
        rep.constants.insert(format!("a={a}:C0"), c0);
        rep.verdicts.push(Verdict::new(
            format!("a={a}:C0_finite"),
            c0.is_finite(),
            format!("C0 {c0:.4}"),
        ));
        if rep.worst_pair.as_ref().is_none_or(|w| c0 > w.value) {
            rep.worst_pair = worst;
        }
        c0s.push(c0);
    }
    let s = spread(&c0s);
    rep.stability_ratio = Some(s);
    rep.empirical_constant = c0s.iter().copied().fold(0.0, f64::max);
    rep.verdicts.push(Verdict::new(
        "C0_uniform_in_a",
        s < opts.a_factor.max(5.0),
        format!("max/min of C0 across a {s:.3}"),
    ));
    Ok(rep)
}

fn argmax_argmin(v: &[f64]) -> (usize, usize) {
    let mut imax = 0;
    let mut imin = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[imax] {
            imax = i;
        }
        if *x < v[imin] {
            imin = i;
        }
    }
    (imax, imin)
}

/// Values of the two exterior-half harmonic functions of `D ∩ B(Q, r)` on a
/// grid, for one `a`.
struct LocalRun {
    grid: Vec<Vec<f64>>,
    deltas: Vec<f64>,
    stats: Vec<ExitStatistics>,
}

impl LocalRun {
    fn u(&self, k: usize) -> Vec<f64> {
        self.stats.iter().map(|s| s.hits[k].mean).collect()
    }
}

#[allow(clippy::too_many_arguments)]
fn local_run(
    domain: &DomainShape,
    chart: &BoundaryChart,
    params: &Params,
    r: f64,
    grid: Vec<Vec<f64>>,
    n: usize,
    policy: &PolicyTemplate,
    seed: u64,
) -> Result<LocalRun> {
    if domain.d < 2 {
        return param("the local harmonic functions need d ≥ 2");
    }
    let q = &chart.q;
    let region = Intersection {
        a: domain,
        b: BallRegion::new(q.clone(), r),
    };
    let t1 = chart.frame[0].clone();
    let t2: Vec<f64> = t1.iter().map(|v| -v).collect();
    let e1 = ExteriorSector::half(q, r, &t1);
    let e2 = ExteriorSector::half(q, r, &t2);
    let targets: [&dyn Region; 2] = [&e1, &e2];
    for x in &grid {
        if !region.contains(x) {
            return Err(Error::Geometry(format!("grid point {x:?} outside D ∩ B(Q, r)")));
        }
    }
    let pol = policy.policy(params, r);
    let stats = local_statistics(&region, params, &grid, &targets, n, &pol, seed)?;
    let deltas = grid.iter().map(|x| domain.dist_to_complement(x)).collect();
    Ok(LocalRun { grid, deltas, stats })
}

fn push_rows(rep: &mut ConstantReport, tag: &str, run: &LocalRun) {
    for (i, s) in run.stats.iter().enumerate() {
        for (k, name) in ["u1", "u2"].iter().enumerate() {
            rep.rows.push(EstimateRow::new(
                format!("{tag}:{name}"),
                &run.grid[i],
                run.deltas[i],
                &s.hits[k],
            ));
        }
    }
}

/// Carleson grid of `D ∩ B(Q, r/2)` in chart units of `r`: center-line
/// heights and points close to the boundary on both sides.
fn carleson_grid(chart: &BoundaryChart, r: f64) -> Vec<Vec<f64>> {
    let d = chart.dim();
    let mut pts = Vec::new();
    let zero = vec![0.0; d - 1];
    for f in [0.003, 0.01, 0.04, 0.1, 0.2, 0.4] {
        pts.push(chart.point_above(&zero, f * r));
    }
    for s in [0.2, -0.2] {
        let mut zt = zero.clone();
        zt[0] = s * r;
        for f in [0.003, 0.01, 0.03] {
            pts.push(chart.point_above(&zt, f * r));
        }
    }
    pts
}

/// `A(r) = max u(x)/u(x₀)` over the Carleson grid and both functions, with
/// `ρ_Q(x₀) = r/2` on the center line.
fn carleson_constant(run: &LocalRun) -> (f64, usize) {
    // the reference point is stored last
    let last = run.grid.len() - 1;
    let mut best = (0.0, 0);
    for k in 0..2 {
        let u = run.u(k);
        for i in 0..last {
            let v = if u[last] > 0.0 { u[i] / u[last] } else { f64::INFINITY };
            if v > best.0 {
                best = (v, i);
            }
        }
    }
    best
}

/// Carleson estimate on a Lipschitz domain at its canonical boundary point:
/// `A = max u(x)/u(x₀)` for `x ∈ D ∩ B(Q, r/2)`. Verdicts: finite, ratio of
/// `A` at `r` and `r/2` within `scale_factor` both ways, and `max/min`
/// across `a_grid` below `a_factor`.
pub fn run_carleson_experiment(
    domain: &DomainShape,
    params: &Params,
    r: f64,
    n: usize,
    opts: &HarmonicOptions,
) -> Result<ConstantReport> {
    params.validate()?;
    let r1 = domain.r_loc * domain.dilation;
    if !(r > 0.0 && r < r1 / 2.0) {
        return param(format!("r must lie in (0, R₁/2 = {})", r1 / 2.0));
    }
    let q = domain.canonical_boundary_point();
    let chart = domain.chart(&q)?;
    let zero = vec![0.0; domain.d - 1];
    let mut rep = ConstantReport::new("carleson");
    rep.describe("r", r);
    rep.describe("n", n);
    rep.describe("a_grid", format!("{:?}", opts.a_grid));
    let run_at = |a: f64, rr: f64| -> Result<LocalRun> {
        let mut grid = carleson_grid(&chart, rr);
        grid.push(chart.point_above(&zero, rr / 2.0));
        local_run(
            domain,
            &chart,
            &params.with_a(a),
            rr,
            grid,
            n,
            &opts.policy,
            seed_for(opts, a, rr, 1),
        )
    };
    let base = run_at(params.a, r)?;
    let half = run_at(params.a, r / 2.0)?;
    let (a_r, i_r) = carleson_constant(&base);
    let (a_h, _) = carleson_constant(&half);
    push_rows(&mut rep, &format!("a={},r={r}", params.a), &base);
    push_rows(&mut rep, &format!("a={},r={}", params.a, r / 2.0), &half);
    rep.worst_pair = Some(WorstPair {
        x: base.grid[i_r].clone(),
        y: base.grid[base.grid.len() - 1].clone(),
        value: a_r,
    });
    rep.constants.insert("A_r".into(), a_r);
    rep.constants.insert("A_half_r".into(), a_h);
    let ratio = a_r / a_h;
    rep.stability_ratio = Some(ratio);
    let mut per_a = Vec::new();
    for &a in &opts.a_grid {
        let v = if a == params.a {
            a_r
        } else {
            let run = run_at(a, r)?;
            push_rows(&mut rep, &format!("a={a},r={r}"), &run);
            carleson_constant(&run).0
        };
        rep.constants.insert(format!("a={a}:A"), v);
        per_a.push(v);
    }
    let sa = spread(&per_a);
    rep.empirical_constant = a_r;
    rep.verdicts.push(Verdict::new(
        "A_finite",
        a_r.is_finite() && a_h.is_finite(),
        format!("A(r) {a_r:.4}, A(r/2) {a_h:.4}"),
    ));
    rep.verdicts.push(Verdict::new(
        "A_scale_stable",
        ratio < opts.scale_factor && 1.0 / ratio < opts.scale_factor,
        format!("A(r)/A(r/2) {ratio:.3}"),
    ));
    rep.verdicts.push(Verdict::new(
        "A_uniform_in_a",
        sa < opts.a_factor,
        format!("max/min across a {sa:.3}"),
    ));
    Ok(rep)
}

/// Options of [`run_bhp_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BhpOptions {
    pub harmonic: HarmonicOptions,
    /// `δ_D` range of the center-line ray for the decay-rate verdict.
    pub ray: (f64, f64),
    pub ray_points: usize,
    /// Bound on `max/min` of `u/δ_D` along the ray.
    pub ray_max_ratio: f64,
}

impl Default for BhpOptions {
    fn default() -> Self {
        Self {
            harmonic: HarmonicOptions {
                scale_factor: 2.0,
                ..HarmonicOptions::default()
            },
            ray: (1e-2, 1e-1),
            ray_points: 5,
            ray_max_ratio: 10.0,
        }
    }
}

/// BHP grid of `D ∩ B(Q, r/2)` in units of `r`.
fn bhp_grid(chart: &BoundaryChart, r: f64) -> Vec<Vec<f64>> {
    let d = chart.dim();
    let zero = vec![0.0; d - 1];
    let mut pts = Vec::new();
    for f in [0.02, 0.04, 0.08, 0.16, 0.32] {
        pts.push(chart.point_above(&zero, f * r));
    }
    for s in [0.25, -0.25] {
        let mut zt = zero.clone();
        zt[0] = s * r;
        for f in [0.02, 0.08, 0.32] {
            pts.push(chart.point_above(&zt, f * r));
        }
    }
    pts
}

/// `max_k max_{x,y} (u_k(x)/δ(x)) / (u_k(y)/δ(y))` over the first `m`
/// grid points, with the attaining pair.
fn decay_constant(run: &LocalRun, m: usize) -> (f64, WorstPair) {
    let mut best = (
        0.0,
        WorstPair {
            x: vec![],
            y: vec![],
            value: 0.0,
        },
    );
    for k in 0..2 {
        let u = run.u(k);
        let q: Vec<f64> = (0..m).map(|i| u[i] / run.deltas[i]).collect();
        let (imax, imin) = argmax_argmin(&q);
        let v = if q[imin] > 0.0 {
            q[imax] / q[imin]
        } else {
            f64::INFINITY
        };
        if v > best.0 {
            best = (
                v,
                WorstPair {
                    x: run.grid[imax].clone(),
                    y: run.grid[imin].clone(),
                    value: v,
                },
            );
        }
    }
    best
}

/// `max_{x,y} (u(x)/v(x)) / (u(y)/v(y))` over the first `m` grid points.
fn ratio_constant(u: &[f64], v: &[f64], m: usize) -> f64 {
    let q: Vec<f64> = (0..m).map(|i| u[i] / v[i]).collect();
    let (imax, imin) = argmax_argmin(&q);
    if q[imin] > 0.0 {
        q[imax] / q[imin]
    } else {
        f64::INFINITY
    }
}

/// Boundary Harnack on a C^{1,1} domain at `q`: with `u₁`, `u₂` the
/// exterior-half harmonic functions of `D ∩ B(Q, r)`, the empirical `C` is
/// `max (u(x)/δ_D(x)) / (u(y)/δ_D(y))` over the grid of `D ∩ B(Q, r/2)`.
///
/// Verdicts: (i) finite; (ii) `C(r)/C(r/2)` within `scale_factor` both ways;
/// (iii) `max/min` of `C` across `a_grid` below `a_factor`; (iv) `u/δ_D` on
/// the center-line ray varies by less than `ray_max_ratio`. The ratio form
/// `(u(x)/v(x))/(u(y)/v(y))` is reported as well; with `u = v` on shared
/// paths it is exactly 1.
pub fn run_bhp_experiment(
    domain: &DomainShape,
    params: &Params,
    q: &[f64],
    r: f64,
    n: usize,
    opts: &BhpOptions,
) -> Result<ConstantReport> {
    params.validate()?;
    if !domain.is_c11() {
        return Err(Error::Geometry(
            "the boundary Harnack experiment needs a C^{1,1} domain".into(),
        ));
    }
    let rloc = domain.r_loc * domain.dilation;
    if !(r > 0.0 && r <= rloc) {
        return param(format!("r must lie in (0, R = {rloc}]"));
    }
    let (lo, hi) = opts.ray;
    if !(lo > 0.0 && hi > lo && hi < r / 2.0) {
        return param("the ray must satisfy 0 < lo < hi < r/2");
    }
    let chart = domain.chart(q)?;
    let h = &opts.harmonic;
    let zero = vec![0.0; domain.d - 1];
    let mut rep = ConstantReport::new("boundary_harnack");
    rep.describe("r", r);
    rep.describe("n", n);
    rep.describe("a_grid", format!("{:?}", h.a_grid));
    rep.describe("ray", format!("{:?}", opts.ray));

    let m = bhp_grid(&chart, r).len();
    let mut base_grid = bhp_grid(&chart, r);
    for rho in log_grid(lo, hi, opts.ray_points.max(2)) {
        base_grid.push(chart.point_above(&zero, rho));
    }
    let base = local_run(
        domain,
        &chart,
        params,
        r,
        base_grid,
        n,
        &h.policy,
        seed_for(h, params.a, r, 2),
    )?;
    let half = local_run(
        domain,
        &chart,
        params,
        r / 2.0,
        bhp_grid(&chart, r / 2.0),
        n,
        &h.policy,
        seed_for(h, params.a, r / 2.0, 2),
    )?;
    push_rows(&mut rep, &format!("a={},r={r}", params.a), &base);
    push_rows(&mut rep, &format!("a={},r={}", params.a, r / 2.0), &half);

    let (c_r, pair) = decay_constant(&base, m);
    let (c_h, _) = decay_constant(&half, m);
    rep.worst_pair = Some(pair);
    rep.constants.insert("C_r".into(), c_r);
    rep.constants.insert("C_half_r".into(), c_h);
    let (u1, u2) = (base.u(0), base.u(1));
    rep.constants.insert("ratio_u1_u2".into(), ratio_constant(&u1, &u2, m));
    let same = ratio_constant(&u1, &u1, m);
    rep.constants.insert("ratio_u1_u1".into(), same);

    let ray_spread = (0..2)
        .map(|k| {
            let u = base.u(k);
            let q: Vec<f64> = (m..base.grid.len()).map(|i| u[i] / base.deltas[i]).collect();
            spread(&q)
        })
        .fold(0.0, f64::max);
    rep.constants.insert("ray_spread".into(), ray_spread);

    let mut per_a = Vec::new();
    for &a in &h.a_grid {
        let v = if a == params.a {
            c_r
        } else {
            let run = local_run(
                domain,
                &chart,
                &params.with_a(a),
                r,
                bhp_grid(&chart, r),
                n,
                &h.policy,
                seed_for(h, a, r, 2),
            )?;
            push_rows(&mut rep, &format!("a={a},r={r}"), &run);
            decay_constant(&run, m).0
        };
        rep.constants.insert(format!("a={a}:C"), v);
        per_a.push(v);
    }
    let sa = spread(&per_a);
    let ratio = c_r / c_h;
    rep.stability_ratio = Some(ratio);
    rep.empirical_constant = c_r;
    rep.verdicts.push(Verdict::new(
        "C_finite",
        c_r.is_finite() && c_h.is_finite(),
        format!("C(r) {c_r:.4}, C(r/2) {c_h:.4}"),
    ));
    rep.verdicts.push(Verdict::new(
        "C_scale_stable",
        ratio < h.scale_factor && 1.0 / ratio < h.scale_factor,
        format!("C(r)/C(r/2) {ratio:.3} (factor {})", h.scale_factor),
    ));
    rep.verdicts.push(Verdict::new(
        "C_uniform_in_a",
        sa < h.a_factor,
        format!("max/min across a {sa:.3} (factor {})", h.a_factor),
    ));
    rep.verdicts.push(Verdict::new(
        "decay_rate_bounded",
        ray_spread < opts.ray_max_ratio,
        format!(
            "max/min of u/δ_D on the ray {ray_spread:.3} (need < {})",
            opts.ray_max_ratio
        ),
    ));
    rep.verdicts.push(Verdict::new(
        "identical_functions_ratio_one",
        same == 1.0,
        format!("(u(x)/u(x))/(u(y)/u(y)) = {same}"),
    ));
    Ok(rep)
}

/// Options of [`run_lower_bound_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LowerBoundOptions {
    pub harmonic: HarmonicOptions,
    /// Heights `ρ_Q(x)` of the center-line ray.
    pub depths: Vec<f64>,
    /// Observed desk-scale floor.
    pub floor: f64,
}

impl Default for LowerBoundOptions {
    fn default() -> Self {
        Self {
            harmonic: HarmonicOptions::default(),
            depths: vec![0.02, 0.05, 0.1, 0.2],
            floor: 0.05,
        }
    }
}

/// `P_x(X_{τ(x)} ∈ D^c)` with `τ(x)` the exit time of `D ∩ B(x, 2ρ_Q(x))`,
/// along the center-line ray. Verdicts: the minimum over the ray is at
/// least `floor` for every `a`, and the estimates along the ray stay within
/// `scale_factor` of each other.
pub fn run_lower_bound_experiment(
    domain: &DomainShape,
    params: &Params,
    n: usize,
    opts: &LowerBoundOptions,
) -> Result<ConstantReport> {
    params.validate()?;
    let r1 = domain.r_loc * domain.dilation;
    if opts.depths.is_empty() || opts.depths.iter().any(|t| !(*t > 0.0 && *t < r1 / 2.0)) {
        return param(format!("depths must lie in (0, R₁/2 = {})", r1 / 2.0));
    }
    let q = domain.canonical_boundary_point();
    let chart = domain.chart(&q)?;
    let zero = vec![0.0; domain.d - 1];
    let h = &opts.harmonic;
    let outside = Complement(domain);
    let mut rep = ConstantReport::new("escape_lower_bound");
    rep.describe("depths", format!("{:?}", opts.depths));
    rep.describe("n", n);
    rep.describe("a_grid", format!("{:?}", h.a_grid));
    let mut minima = Vec::new();
    let mut worst_spread: f64 = 0.0;
    for &a in &h.a_grid {
        let pa = params.with_a(a);
        let mut vals = Vec::new();
        for (i, &t) in opts.depths.iter().enumerate() {
            let x = chart.point_above(&zero, t);
            let region = Intersection {
                a: domain,
                b: BallRegion::new(x.clone(), 2.0 * t),
            };
            let pol = h.policy.policy(&pa, t);
            let targets: [&dyn Region; 1] = [&outside];
            let s = exit_statistics(
                &region,
                &pa,
                &x,
                &targets,
                n,
                &pol,
                derive_seed(seed_for(h, a, t, 3), i as u64),
                CensorRule::Snap,
            )?;
            rep.rows.push(EstimateRow::new(
                format!("a={a}"),
                &x,
                domain.dist_to_complement(&x),
                &s.hits[0],
            ));
            vals.push(s.hits[0].mean);
        }
        let mn = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let sp = spread(&vals);
        worst_spread = worst_spread.max(sp);
        rep.constants.insert(format!("a={a}:min"), mn);
        rep.constants.insert(format!("a={a}:ray_spread"), sp);
        rep.verdicts.push(Verdict::new(
            format!("a={a}:above_floor"),
            mn >= opts.floor,
            format!("min over the ray {mn:.4} (floor {})", opts.floor),
        ));
        minima.push(mn);
    }
    rep.empirical_constant = minima.iter().copied().fold(f64::INFINITY, f64::min);
    rep.stability_ratio = Some(worst_spread);
    rep.verdicts.push(Verdict::new(
        "ray_stable",
        worst_spread < h.scale_factor,
        format!(
            "largest max/min along the ray {worst_spread:.3} (factor {})",
            h.scale_factor
        ),
    ));
    Ok(rep)
}

/// Options of [`run_scaling_check`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalingOptions {
    pub domain: Option<DomainShape>,
    pub x0: Option<Vec<f64>>,
    pub p_min: f64,
    pub seed: u64,
    pub policy: PolicyTemplate,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        Self {
            domain: None,
            x0: None,
            p_min: 0.01,
            seed: 0,
            policy: PolicyTemplate::default(),
        }
    }
}

fn ks_verdict(rep: &mut ConstantReport, name: &str, a: &[f64], b: &[f64], p_min: f64) {
    let ks = ks_two_sample(a, b);
    rep.constants.insert(format!("{name}_ks"), ks.statistic);
    rep.constants.insert(format!("{name}_p"), ks.p_value);
    rep.verdicts.push(Verdict::new(
        format!("{name}_same_law"),
        ks.p_value > p_min,
        format!("KS {:.4}, p {:.4}", ks.statistic, ks.p_value),
    ));
}

/// Scaling of `X^a`: `λ X^a_{λ^{-2}t}` has the law of `X^{a'}` with
/// `a' = a λ^{(α-2)/α}` (and truncation `λ` times larger). Compared with
/// independent samples of size `n`: exit times from `D` times `λ²` against
/// exit times from `λD`; first exit coordinates times `λ`; and, for the
/// killed processes observed at times `t/λ²` and `t`, the first coordinate
/// of the survivors times `λ` plus the survival probabilities.
///
/// Default `D` is the unit ball with `x₀ = 0.3 e₁`.
pub fn run_scaling_check(
    params: &Params,
    lambda: f64,
    t: f64,
    n: usize,
    opts: &ScalingOptions,
) -> Result<ConstantReport> {
    params.validate()?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return param("lambda must be positive");
    }
    if !(t > 0.0) {
        return param("observation time must be positive");
    }
    let d = params.d;
    let domain = match &opts.domain {
        Some(dm) => dm.clone(),
        None => DomainShape::new(d, crate::geometry::ShapeKind::Ball { radius: 1.0 })?,
    };
    let x0 = opts.x0.clone().unwrap_or_else(|| {
        let mut x = vec![0.0; d];
        x[0] = 0.3;
        x
    });
    let big = domain.dilated(lambda);
    let x1: Vec<f64> = x0.iter().map(|v| v * lambda).collect();
    let a2 = if params.a == 0.0 {
        0.0
    } else {
        params.a * lambda.powf((params.alpha - 2.0) / params.alpha)
    };
    let p2 = params.with_a(a2).with_lambda(params.lambda.map(|l| l * lambda));
    let pol = opts.policy.policy(params, Region::scale(&domain));
    let pol2 = pol.scaled(lambda);

    let exits = |dm: &DomainShape, pp: &Params, x: &[f64], po: &StepPolicy, seed: u64| {
        run_chunked(n, seed, |rng, count| {
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                let r = simulate_or_censor(dm, pp, x, po, rng)?;
                out.push((r.exit_time, r.exit_position[0]));
            }
            Ok(out)
        })
        .map(|v| v.into_iter().flatten().collect::<Vec<_>>())
    };
    let killed = |dm: &DomainShape, pp: &Params, x: &[f64], tt: f64, po: &StepPolicy, seed: u64| {
        run_chunked(n, seed, |rng, count| {
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                out.push(simulate_killed_at(dm, pp, x, tt, po, rng)?.map(|y| y[0]));
            }
            Ok(out)
        })
        .map(|v| v.into_iter().flatten().collect::<Vec<_>>())
    };

    let s = opts.seed;
    let e1 = exits(&domain, params, &x0, &pol, derive_seed(s, 1))?;
    let e2 = exits(&big, &p2, &x1, &pol2, derive_seed(s, 2))?;
    let k1 = killed(&domain, params, &x0, t / (lambda * lambda), &pol, derive_seed(s, 3))?;
    let k2 = killed(&big, &p2, &x1, t, &pol2, derive_seed(s, 4))?;

    let mut rep = ConstantReport::new("scaling");
    rep.describe("lambda", lambda);
    rep.describe("t", t);
    rep.describe("n", n);
    rep.describe("scaled_a", a2);
    let l2 = lambda * lambda;
    let t1: Vec<f64> = e1.iter().map(|p| l2 * p.0).collect();
    let t2: Vec<f64> = e2.iter().map(|p| p.0).collect();
    ks_verdict(&mut rep, "exit_time", &t1, &t2, opts.p_min);
    let y1: Vec<f64> = e1.iter().map(|p| lambda * p.1).collect();
    let y2: Vec<f64> = e2.iter().map(|p| p.1).collect();
    ks_verdict(&mut rep, "exit_location", &y1, &y2, opts.p_min);

    let alive1: Vec<f64> = k1.iter().flatten().map(|v| lambda * v).collect();
    let alive2: Vec<f64> = k2.iter().flatten().copied().collect();
    let surv =
        |k: &[Option<f64>]| Estimate::from_samples(&k.iter().map(|v| v.is_some() as u8 as f64).collect::<Vec<_>>());
    let (s1, s2) = (surv(&k1), surv(&k2));
    let z = s1.zscore(&s2);
    rep.rows
        .push(EstimateRow::new("survival_D", &x0, domain.dist_to_complement(&x0), &s1));
    rep.rows.push(EstimateRow::new(
        "survival_lambda_D",
        &x1,
        big.dist_to_complement(&x1),
        &s2,
    ));
    rep.constants.insert("survival_z".into(), z);
    if alive1.len() >= 20 && alive2.len() >= 20 {
        ks_verdict(&mut rep, "killed_position", &alive1, &alive2, opts.p_min);
    }
    rep.verdicts.push(Verdict::new(
        "survival_probability",
        z.abs() < 3.0,
        format!("P(alive) {:.4} vs {:.4}, z {z:.3}", s1.mean, s2.mean),
    ));
    rep.empirical_constant = ["exit_time_ks", "exit_location_ks", "killed_position_ks"]
        .iter()
        .filter_map(|k| rep.constants.get(*k).copied())
        .fold(0.0, f64::max);
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_1d() -> DomainShape {
        DomainShape::half_space(1)
    }

    #[test]
    fn default_p_is_admissible_and_off_alpha() {
        for alpha in [0.3, 0.8, 1.0, 1.25, 1.5, 1.9] {
            let s = TestFunctionSpec::new(alpha, 1.0, 0.2, 0.01).unwrap();
            let (lo, hi) = admissible_p(alpha);
            assert!(s.p > lo && s.p < hi, "α={alpha}: p={}", s.p);
            assert!((s.p - alpha).abs() >= P_GAP - 1e-15);
        }
        // midpoint of (1, 1.5) sits on α = 1.25
        let s = TestFunctionSpec::new(1.25, 1.0, 0.2, 0.01).unwrap();
        assert!((s.p - 1.25).abs() >= P_GAP - 1e-15);
        assert!(TestFunctionSpec::with_p(1.5, 1.6, 1.0, 0.2, 0.01).is_err());
        assert!(TestFunctionSpec::with_p(1.5, 1.2, 0.5, 0.2, 0.01).is_err());
    }

    #[test]
    fn psi_meets_both_regimes() {
        let p = 1.3;
        let r0 = 0.2;
        let b = PsiBump::new(p, r0);
        let lo = 2f64.powf(p + 1.0);
        let hi = 2f64.powf(p + 2.0);
        for i in 0..200 {
            let t = i as f64 / 200.0;
            let ang = 7.0 * t;
            for rad in [
                0.2 * r0 * t,
                0.24 * r0,
                0.3 * r0,
                0.45 * r0,
                0.5 * r0,
                r0 * (0.5 + 3.0 * t),
            ] {
                let z = [rad * ang.cos(), rad * ang.sin()];
                let v = b.value(&z);
                assert!(v >= 0.0);
                if rad < r0 / 4.0 {
                    assert!((v - lo * z[0] * z[0] / (r0 * r0)).abs() < 1e-12);
                }
                if rad >= r0 / 2.0 {
                    assert!(v >= lo && v <= hi);
                }
            }
        }
    }

    #[test]
    fn psi_laplacian_matches_finite_differences() {
        let b = PsiBump::new(1.4, 0.25);
        let hstep = 1e-5;
        for z in [[0.01, 0.02], [0.05, 0.04], [0.07, -0.06], [0.0, 0.1], [0.2, 0.01]] {
            let c = b.value(&z);
            let mut fd = 0.0;
            for i in 0..2 {
                let mut a = z;
                let mut m = z;
                a[i] += hstep;
                m[i] -= hstep;
                fd += (b.value(&a) + b.value(&m) - 2.0 * c) / (hstep * hstep);
            }
            let an = b.laplacian(&z);
            assert!((fd - an).abs() < 1e-3 * an.abs().max(1.0), "z={z:?}: {fd} vs {an}");
        }
    }

    #[test]
    fn without_jumps_the_generator_is_the_classical_laplacian() {
        // a = 0 leaves Δh_{λ,p} = p(p-1)(1+|∇φ|²)ρ^{p-2} - pρ^{p-1}Δφ > 0
        let dom = DomainShape::bump(2, 0.1);
        let spec = TestFunctionSpec::new(1.5, 2.0, dom.r0(), 0.01).unwrap();
        let f = TestFunctions::new(&spec, &dom).unwrap();
        let params = Params::new(2, 1.5, 0.0, 1.0, None).unwrap();
        for (zt, rho) in [(0.0, 1e-3), (0.02, 1e-4), (-0.03, 5e-3)] {
            let v = f
                .evaluate(&[zt], rho, &params.with_lambda(Some(2.0)), &PVQuadSpec::default())
                .unwrap();
            let p = spec.p;
            // scaled chart: φ_λ(z) = λ·c·(z/λ)² = 0.05 z²
            let g = 0.1 * zt;
            let want = p * (p - 1.0) * (1.0 + g * g) * rho.powf(p - 2.0) - p * rho.powf(p - 1.0) * 0.1;
            assert!((v.hp - want).abs() < 1e-9 * want.abs(), "{} vs {want}", v.hp);
            assert!(v.hp > 0.0);
            assert!((v.h + 0.1).abs() < 1e-9);
        }
    }

    #[test]
    fn flat_1d_test_functions_have_the_right_signs() {
        let alpha = 1.5;
        let dom = flat_1d();
        let r0 = dom.r0();
        let params = Params::new(1, alpha, 1.0, 1.0, None).unwrap();
        let pv = PVQuadSpec::default();
        let spec = TestFunctionSpec::new(alpha, 1.0, r0, 0.2 * r0).unwrap();
        let d0 = empirical_delta0(&spec, &dom, &params, &pv, 1e-8, 6).unwrap();
        // ψ ≡ 0 near Q but its jump part is of order 10², which only the
        // ρ^{p-2} blow-up of Δh_{λ,p} beats
        assert!(d0 > 1e-5 && d0 < 1e-2, "δ₀ = {d0}");
        let spec = spec.with_delta(d0).unwrap();
        let grid: Vec<ChartPoint> = log_grid(d0 / 100.0, d0, 5)
            .into_iter()
            .map(|rho| ChartPoint {
                tangential: vec![],
                rho,
            })
            .collect();
        let rep = verify_test_functions(&spec, &dom, &params, &grid, &pv).unwrap();
        assert!(rep.passed(), "{:?}", rep.verdicts);
        assert!(rep.values.iter().all(|v| v.u2 <= -1.0 + v.slack && v.u1 >= -v.slack));
    }

    #[test]
    fn grid_outside_the_window_is_rejected() {
        let dom = flat_1d();
        let spec = TestFunctionSpec::new(1.5, 1.0, dom.r0(), 0.01).unwrap();
        let params = Params::new(1, 1.5, 1.0, 1.0, None).unwrap();
        let grid = [ChartPoint {
            tangential: vec![],
            rho: 0.02,
        }];
        assert!(verify_test_functions(&spec, &dom, &params, &grid, &PVQuadSpec::default()).is_err());
    }

    #[test]
    fn exterior_sector_membership() {
        let s = ExteriorSector::half(&[0.0, 0.0], 1.0, &[1.0, 0.0]);
        assert!(s.contains(&[1.5, 0.1]));
        assert!(!s.contains(&[-1.5, 0.1]));
        assert!(!s.contains(&[0.5, 0.0]));
        let all = ExteriorSector::all(&[0.0, 0.0], 1.0);
        assert!(all.contains(&[-1.0, -0.3]) && all.contains(&[0.0, 1.0]));
        let sym = ExteriorSector {
            min_cos: 0.5,
            symmetric: true,
            ..s.clone()
        };
        assert!(sym.contains(&[-2.0, 0.1]) && sym.contains(&[2.0, 0.1]) && !sym.contains(&[0.1, 2.0]));
    }

    #[test]
    fn harnack_with_brownian_motion() {
        let params = Params::new(2, 1.0, 0.0, 2.0, None).unwrap();
        let opts = HarmonicOptions {
            a_grid: vec![0.0],
            seed: 3,
            ..HarmonicOptions::default()
        };
        let rep = run_harnack_experiment(&params, 1.0, 4000, &opts).unwrap();
        assert!(rep.passed(), "{:?}", rep.verdicts);
        // constant boundary data give u ≡ 1
        assert_eq!(rep.constants["a=0:whole_exterior:ratio"], 1.0);
        assert!(rep.constants["a=0:symmetric_pair_z"].abs() < 4.0);
        assert!(rep.empirical_constant.is_finite() && rep.empirical_constant > 1.0);
    }

    #[test]
    fn bhp_identical_functions_give_one() {
        let dom = DomainShape::half_space(2);
        let params = Params::new(2, 1.5, 1.0, 2.0, None).unwrap();
        let opts = BhpOptions {
            harmonic: HarmonicOptions {
                a_grid: vec![1.0],
                seed: 5,
                ..BhpOptions::default().harmonic
            },
            ..BhpOptions::default()
        };
        let rep = run_bhp_experiment(&dom, &params, &[0.0, 0.0], 0.5, 2000, &opts).unwrap();
        assert_eq!(rep.constants["ratio_u1_u1"], 1.0);
        assert!(rep.empirical_constant.is_finite());
    }

    #[test]
    fn scaling_at_lambda_one_is_an_identity() {
        let params = Params::new(2, 1.0, 1.0, 1.0, None).unwrap();
        let rep = run_scaling_check(&params, 1.0, 0.05, 3000, &ScalingOptions::default()).unwrap();
        assert!(rep.empirical_constant < 0.05, "{}", rep.empirical_constant);
        assert_eq!(rep.descriptors["scaled_a"], "1");
    }

    #[test]
    fn lower_bound_is_scale_free_for_brownian_motion_in_a_half_space() {
        let dom = DomainShape::half_space(2);
        let params = Params::new(2, 1.0, 0.0, 1.0, None).unwrap();
        let opts = LowerBoundOptions {
            harmonic: HarmonicOptions {
                a_grid: vec![0.0],
                seed: 9,
                ..HarmonicOptions::default()
            },
            depths: vec![0.02, 0.2],
            floor: 0.05,
        };
        let rep = run_lower_bound_experiment(&dom, &params, 5000, &opts).unwrap();
        let (a, b) = (&rep.rows[0], &rep.rows[1]);
        let z = (a.mean - b.mean) / (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        assert!(z.abs() < 3.0, "{} vs {}", a.mean, b.mean);
        assert!(rep.passed(), "{:?}", rep.verdicts);
    }
}
