//! Monte Carlo estimators on top of [`simulate_until_exit`]: exit times,
//! harmonic measure, harmonic-function values and both sides of the
//! Lévy-system identity.
//!
//! Work is split into fixed chunks of [`CHUNK`] paths. Chunk `c` always
//! draws from stream `c` of the seed, and chunk results are merged in
//! chunk order, so the worker count never changes an output.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::geometry::{AnnulusRegion, BallRegion, DomainShape, Intersection, Region};
use crate::kernels::{normalization_constant, unit_sphere_area, Params};
use crate::quad::{integrate_pieces, QuadOptions};
use crate::rng::{stream_rng, StreamRng};
use crate::samplers::{simulate_observed, simulate_until_exit, ExitMode, ExitRecord, StepPolicy};
use crate::stats::{Accumulator, Estimate};

/// Paths per chunk.
pub const CHUNK: usize = 512;

/// Run `n` paths in chunks; `f` gets the chunk's stream and its path count.
pub fn run_chunked<T, F>(n: usize, seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut StreamRng, usize) -> Result<T> + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = CHUNK.min(n - c * CHUNK);
            let mut rng = stream_rng(seed, c as u64);
            f(&mut rng, count)
        })
        .collect()
}

fn merge_all(parts: &[Accumulator]) -> Accumulator {
    parts.iter().fold(Accumulator::new(), |a, b| a.merge(b))
}

/// One path; an exhausted step budget becomes a censored record.
pub fn simulate_or_censor<G: Region + ?Sized, R: Rng + ?Sized>(
    region: &G,
    params: &Params,
    x0: &[f64],
    policy: &StepPolicy,
    rng: &mut R,
) -> Result<ExitRecord> {
    match simulate_until_exit(region, params, x0, policy, rng) {
        Err(Error::Budget { partial, .. }) => Ok(*partial),
        other => other,
    }
}

fn check_start<G: Region + ?Sized>(region: &G, params: &Params, x0: &[f64], n: usize) -> Result<()> {
    if n == 0 {
        return param("sample count must be positive");
    }
    if x0.len() != params.d || region.dim() != params.d {
        return param("start point, region and params disagree on the dimension");
    }
    if !region.contains(x0) {
        return param("start point lies outside the region");
    }
    Ok(())
}

/// Estimate of `E_{x0}[τ]`.
pub fn estimate_exit_time<G: Region + ?Sized>(
    region: &G,
    params: &Params,
    x0: &[f64],
    n: usize,
    policy: &StepPolicy,
    seed: u64,
) -> Result<Estimate> {
    check_start(region, params, x0, n)?;
    let parts = run_chunked(n, seed, |rng, count| {
        let mut acc = Accumulator::new();
        for _ in 0..count {
            let r = simulate_or_censor(region, params, x0, policy, rng)?;
            acc.push(r.exit_time, r.censored());
        }
        Ok(acc)
    })?;
    Ok(merge_all(&parts).estimate())
}

/// Estimate of `P_{x0}(X_τ ∈ target)`. Censored paths count as misses.
pub fn estimate_harmonic_measure<G: Region + ?Sized, T: Region + ?Sized>(
    region: &G,
    params: &Params,
    x0: &[f64],
    target: &T,
    n: usize,
    policy: &StepPolicy,
    seed: u64,
) -> Result<Estimate> {
    check_start(region, params, x0, n)?;
    if target.contains(x0) {
        return param("target must not meet the region");
    }
    let parts = run_chunked(n, seed, |rng, count| {
        let mut acc = Accumulator::new();
        for _ in 0..count {
            let r = simulate_or_censor(region, params, x0, policy, rng)?;
            let hit = !r.censored() && target.contains(&r.exit_position);
            acc.push(hit as u8 as f64, r.censored());
        }
        Ok(acc)
    })?;
    Ok(merge_all(&parts).estimate())
}

/// How the exit-location estimators score a censored path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensorRule {
    /// Count it as a miss. Exact for targets at positive distance from the
    /// region, biased low otherwise.
    #[default]
    Miss,
    /// Score it at the nearby outside point where it was stopped. Needed
    /// for targets touching the region, where continuous exits land.
    Snap,
}

/// Exit time and exit-location probabilities measured on the same paths.
#[derive(Debug, Clone, Serialize)]
pub struct ExitStatistics {
    pub exit_time: Estimate,
    pub hits: Vec<Estimate>,
}

/// `E_{x0}[τ]` and `P_{x0}(X_τ ∈ T_i)` for several targets on shared paths.
/// Only exit positions are tested, so a target may overlap the region.
#[allow(clippy::too_many_arguments)]
pub fn exit_statistics<G: Region + ?Sized>(
    region: &G,
    params: &Params,
    x0: &[f64],
    targets: &[&dyn Region],
    n: usize,
    policy: &StepPolicy,
    seed: u64,
    rule: CensorRule,
) -> Result<ExitStatistics> {
    check_start(region, params, x0, n)?;
    let k = targets.len();
    let parts = run_chunked(n, seed, |rng, count| {
        let mut tau = Accumulator::new();
        let mut hits = vec![Accumulator::new(); k];
        for _ in 0..count {
            let r = simulate_or_censor(region, params, x0, policy, rng)?;
            let c = r.censored();
            tau.push(r.exit_time, c);
            let scored = !c || rule == CensorRule::Snap;
            for (acc, t) in hits.iter_mut().zip(targets) {
                let hit = scored && t.contains(&r.exit_position);
                acc.push(hit as u8 as f64, c);
            }
        }
        Ok((tau, hits))
    })?;
    let exit_time = merge_all(&parts.iter().map(|p| p.0).collect::<Vec<_>>()).estimate();
    let hits = (0..k)
        .map(|i| merge_all(&parts.iter().map(|p| p.1[i]).collect::<Vec<_>>()).estimate())
        .collect();
    Ok(ExitStatistics { exit_time, hits })
}

/// `M(ρ) = ∫_{r_in<|y|<r_out, |x-y|<λ} |x-y|^{-d-α} dy` at `|x| = ρ`,
/// tabulated on `[0, ρ_max]` and read back by 4-point interpolation.
#[derive(Debug, Clone)]
pub struct KernelMassTable {
    rho_max: f64,
    step: f64,
    values: Vec<f64>,
}

const TABLE_POINTS: usize = 257;

impl KernelMassTable {
    pub fn new(params: &Params, r_in: f64, r_out: f64, rho_max: f64) -> Result<Self> {
        if !(r_in > 0.0 && r_out >= r_in) {
            return param("target shell needs 0 < r_in ≤ r_out");
        }
        if !(rho_max >= 0.0 && rho_max < r_in) {
            return param("evaluation radii must stay inside the target's inner sphere");
        }
        let step = rho_max / (TABLE_POINTS - 1) as f64;
        let values = (0..TABLE_POINTS)
            .map(|i| shell_mass(params, r_in, r_out, i as f64 * step))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rho_max, step, values })
    }

    pub fn eval(&self, rho: f64) -> f64 {
        if self.step == 0.0 {
            return self.values[0];
        }
        let rho = rho.clamp(0.0, self.rho_max);
        let u = rho / self.step;
        let last = self.values.len() - 1;
        let i = (u.floor() as usize).clamp(1, last - 2);
        let t = u - i as f64;
        let (p0, p1, p2, p3) = (
            self.values[i - 1],
            self.values[i],
            self.values[i + 1],
            self.values[i + 2],
        );
        // cubic Lagrange through nodes -1, 0, 1, 2
        -p0 * t * (t - 1.0) * (t - 2.0) / 6.0 + p1 * (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0
            - p2 * (t + 1.0) * t * (t - 2.0) / 2.0
            + p3 * (t + 1.0) * t * (t - 1.0) / 6.0
    }
}

/// Direct evaluation of the shell mass at `|x| = ρ`.
pub fn shell_mass(params: &Params, r_in: f64, r_out: f64, rho: f64) -> Result<f64> {
    let (d, alpha) = (params.d, params.alpha);
    let lambda = params.lambda_or_inf();
    let e = -(d as f64 + alpha) / 2.0;
    let g = |q: f64| if q < lambda * lambda { q.powf(e) } else { 0.0 };
    let opts = QuadOptions::new(1e-300, 1e-11);
    // angular integral over the sphere of radius s
    let ang = |s: f64| -> f64 {
        if rho == 0.0 {
            return unit_sphere_area(d) * g(s * s);
        }
        match d {
            1 => g((s - rho) * (s - rho)) + g((s + rho) * (s + rho)),
            _ => {
                let sd = unit_sphere_area(d - 1);
                let f = |th: f64| th.sin().powi(d as i32 - 2) * g(rho * rho + s * s - 2.0 * rho * s * th.cos());
                let mut pts = vec![0.0, PI];
                let c = (rho * rho + s * s - lambda * lambda) / (2.0 * rho * s);
                if c > -1.0 && c < 1.0 {
                    pts.insert(1, c.acos());
                }
                sd * integrate_pieces(f, &pts, &opts).value
            }
        }
    };
    let radial = |s: f64| s.powi(d as i32 - 1) * ang(s);
    let s_hi = r_out.min(rho + lambda);
    if s_hi <= r_in {
        return Ok(0.0);
    }
    // finite part on geometric pieces, analytic far tail when unbounded
    let far = 1e4 * r_in;
    let mut pts = vec![r_in];
    while *pts.last().unwrap() < s_hi.min(far) {
        let next = (2.0 * pts.last().unwrap()).min(s_hi.min(far));
        pts.push(next);
    }
    let mut total = integrate_pieces(radial, &pts, &opts).value;
    if s_hi > far {
        // |x - y| ≈ |y| out there
        let top = if s_hi.is_finite() { s_hi.powf(-alpha) } else { 0.0 };
        total += unit_sphere_area(d) * (far.powf(-alpha) - top) / alpha;
    }
    Ok(total)
}

/// `a^α A(d,α) M(|x|)`, the rate at which jumps from `x` land in the shell.
pub fn jump_rate_into(params: &Params, table: &KernelMassTable, x: &[f64]) -> Result<f64> {
    let rho = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(params.jump_weight() * normalization_constant(params.d, params.alpha)? * table.eval(rho))
}

/// Both sides of the Lévy-system identity with `f = 1_{target}`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LevySystemResult {
    /// Fraction of paths whose exit jump lands in the target.
    pub lhs: Estimate,
    /// Mean of `∫_0^τ ∫_target J^a(X_s, y) dy ds`.
    pub rhs: Estimate,
    pub zscore: f64,
}

/// Lévy-system check for a shell target `{r_in < |y| < r_out}` centred at
/// the origin, with a bounded region inside the inner sphere.
pub fn levy_system_check<G: Region + ?Sized>(
    region: &G,
    params: &Params,
    x0: &[f64],
    target: &AnnulusRegion,
    n: usize,
    policy: &StepPolicy,
    seed: u64,
) -> Result<LevySystemResult> {
    check_start(region, params, x0, n)?;
    if target.center.iter().any(|c| *c != 0.0) {
        return param("the target shell must be centred at the origin");
    }
    let reach = region
        .bounding_radius()
        .ok_or_else(|| Error::Parameter("region must be bounded".into()))?;
    if reach >= target.r_in {
        return param("target must lie at positive distance from the region");
    }
    let table = KernelMassTable::new(params, target.r_in, target.r_out, reach)?;
    let coef = params.jump_weight() * normalization_constant(params.d, params.alpha)?;
    let parts = run_chunked(n, seed, |rng, count| {
        let mut lhs = Accumulator::new();
        let mut rhs = Accumulator::new();
        for _ in 0..count {
            let mut occupation = 0.0;
            let mut observe = |x: &[f64], h: f64| {
                let rho = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                occupation += h * table.eval(rho);
            };
            let rec = match simulate_observed(region, params, x0, policy, rng, &mut observe) {
                Err(Error::Budget { partial, .. }) => *partial,
                other => other?,
            };
            let hit = rec.exit_mode == ExitMode::JumpOut && target.contains(&rec.exit_position);
            lhs.push(hit as u8 as f64, rec.censored());
            rhs.push(coef * occupation, rec.censored());
        }
        Ok((lhs, rhs))
    })?;
    let lhs = merge_all(&parts.iter().map(|p| p.0).collect::<Vec<_>>()).estimate();
    let rhs = merge_all(&parts.iter().map(|p| p.1).collect::<Vec<_>>()).estimate();
    Ok(LevySystemResult {
        lhs,
        rhs,
        zscore: lhs.zscore(&rhs),
    })
}

/// `u(x) = P_x(X_{τ_{D∩B(Q,r)}} ∈ E)`: harmonic in `D ∩ B(Q,r)` and zero on
/// `D^c ∩ B(Q,r)`.
pub struct HarmonicFnSpec<T> {
    pub domain: DomainShape,
    pub q: Vec<f64>,
    pub r: f64,
    pub target: T,
    pub params: Params,
}

impl<T: Region> HarmonicFnSpec<T> {
    pub fn region(&self) -> Intersection<&DomainShape, BallRegion> {
        Intersection {
            a: &self.domain,
            b: BallRegion::new(self.q.clone(), self.r),
        }
    }

    /// Rejects targets that meet the closed ball `B(Q, r)`. Checked along
    /// rays from `Q`, which is exact for the convex targets used here.
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.q.len() != self.params.d || self.domain.d != self.params.d {
            return param("harmonic function spec disagrees on the dimension");
        }
        if !(self.r > 0.0) {
            return param("r must be positive");
        }
        let probe = self.r * 1.000_001;
        let hits = sphere_probe(self.params.d, 64).into_iter().any(|u| {
            let y: Vec<f64> = self.q.iter().zip(&u).map(|(c, v)| c + probe * v).collect();
            self.target.signed_distance(&y) > -1e-9 * self.r
        });
        if hits {
            return param("target must lie at positive distance from B(Q, r)");
        }
        Ok(())
    }
}

fn sphere_probe(d: usize, n: usize) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..n)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / n as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        _ => {
            // Fibonacci points on S², padded with zeros above
            (0..n * 4)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / (n * 4) as f64;
                    let rr = (1.0 - z * z).sqrt();
                    let t = PI * (3.0 - 5f64.sqrt()) * i as f64;
                    let mut v = vec![rr * t.cos(), rr * t.sin(), z];
                    v.resize(d, 0.0);
                    v
                })
                .collect()
        }
    }
}

/// Estimate of `u(x)` for a [`HarmonicFnSpec`].
pub fn estimate_harmonic_fn<T: Region>(
    spec: &HarmonicFnSpec<T>,
    x: &[f64],
    n: usize,
    policy: &StepPolicy,
    seed: u64,
) -> Result<Estimate> {
    spec.validate()?;
    let region = spec.region();
    estimate_harmonic_measure(&region, &spec.params, x, &spec.target, n, policy, seed)
}

/// `E_{x0}[τ]` for many start points, one seed stream family each.
pub fn exit_time_profile<G: Region + ?Sized>(
    region: &G,
    params: &Params,
    starts: &[Vec<f64>],
    n: usize,
    policy: &StepPolicy,
    seed: u64,
) -> Result<Vec<Estimate>> {
    starts
        .iter()
        .enumerate()
        .map(|(i, x)| estimate_exit_time(region, params, x, n, policy, crate::rng::derive_seed(seed, i as u64)))
        .collect()
}
