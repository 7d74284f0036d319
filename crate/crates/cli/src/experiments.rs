//! One runner per subcommand. Each returns an [`Outcome`]: a JSON report,
//! a CSV table and the verdicts that decide the exit status.

use mixjump_core::exit_mc::{exit_statistics, levy_system_check, CensorRule};
use mixjump_core::fraclap::{
    log_grid, power_1d, power_dd, regime_verdicts, verify_hp_bounds_with, verify_lemma21, BoundReport, PVQuadSpec,
    Verdict,
};
use mixjump_core::geometry::{AnnulusRegion, BallRegion, DomainShape};
use mixjump_core::harness::{
    calibrate_and_verify, run_bhp_experiment, run_carleson_experiment, run_exit_uniformity, run_harnack_experiment,
    run_lower_bound_experiment, run_scaling_check, sign_check_pv, ConstantReport, ExteriorSector, HarmonicOptions,
    PolicyTemplate, ScalingOptions, TestFunctionSpec,
};
use mixjump_core::rng::derive_seed;
use mixjump_core::stats::Estimate;
use mixjump_core::Params;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, FraclapMode};
use crate::error::CliError;

pub struct Outcome {
    pub kind: &'static str,
    pub verdicts: Vec<Verdict>,
    pub report: Value,
    pub table: Table,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }
}

pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

const MC_HEADER: [&str; 7] = ["label", "x", "delta", "mean", "stderr", "n", "censored_fraction"];

fn fmt_point(x: &[f64]) -> String {
    x.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

fn mc_row(label: &str, x: &[f64], delta: f64, e: &Estimate) -> Vec<String> {
    row(label, x, delta, e.mean, e.stderr, e.n, e.censored_fraction)
}

fn row(label: &str, x: &[f64], delta: f64, mean: f64, stderr: f64, n: u64, censored: f64) -> Vec<String> {
    vec![
        label.to_string(),
        fmt_point(x),
        delta.to_string(),
        mean.to_string(),
        stderr.to_string(),
        n.to_string(),
        censored.to_string(),
    ]
}

fn to_value<T: Serialize>(v: &T) -> Result<Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError::Output(e.to_string()))
}

fn constant_outcome(kind: &'static str, rep: ConstantReport) -> Result<Outcome, CliError> {
    let rows = rep
        .rows
        .iter()
        .map(|r| row(&r.label, &r.x, r.delta, r.mean, r.stderr, r.n, r.censored_fraction))
        .collect();
    Ok(Outcome {
        kind,
        verdicts: rep.verdicts.clone(),
        report: to_value(&rep)?,
        table: Table {
            header: MC_HEADER.to_vec(),
            rows,
        },
    })
}

/// Top-level `seed`/`policy` override the per-experiment ones.
fn harmonic_opts(cfg: &ExperimentConfig, mut o: HarmonicOptions) -> HarmonicOptions {
    if let Some(s) = cfg.seed {
        o.seed = s;
    }
    if let Some(p) = cfg.policy {
        o.policy = p;
    }
    o
}

fn domain_2d(cfg: &ExperimentConfig, default: DomainShape) -> Result<(DomainShape, Params), CliError> {
    let domain = cfg.domain_or(default)?;
    let params = cfg.params_or(domain.d)?;
    if params.d != domain.d {
        return Err(CliError::Config(format!(
            "params.d = {} but domain.d = {}",
            params.d, domain.d
        )));
    }
    Ok((domain, params))
}

pub fn fraclap(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let f = &cfg.fraclap;
    match f.mode {
        FraclapMode::Power => fraclap_power(cfg),
        FraclapMode::Hp => fraclap_hp(cfg),
        FraclapMode::TestFunctions => {
            let domain = cfg.domain_or(DomainShape::half_space(f.d.max(2)))?;
            let params = Params::new(domain.d, f.alpha, f.a, f.a.max(1.0), None)?;
            let r0 = domain.r0();
            let spec = match f.p {
                Some(p) => TestFunctionSpec::with_p(f.alpha, p, f.lambda, r0, 0.2 * r0)?,
                None => TestFunctionSpec::new(f.alpha, f.lambda, r0, 0.2 * r0)?,
            };
            let mut pv = sign_check_pv();
            if let Some(t) = f.rel_tol {
                pv.rel_tol = t;
            }
            let rep = calibrate_and_verify(&spec, &domain, &params, &pv)?;
            let rows = rep
                .values
                .iter()
                .map(|v| {
                    vec![
                        fmt_point(&v.tangential),
                        v.rho.to_string(),
                        v.u1.to_string(),
                        v.u2.to_string(),
                        v.slack.to_string(),
                        if v.passes() { "pass" } else { "fail" }.to_string(),
                    ]
                })
                .collect();
            Ok(Outcome {
                kind: "fraclap",
                verdicts: rep.verdicts.clone(),
                report: to_value(&rep)?,
                table: Table {
                    header: vec!["tangential", "rho", "u1", "u2", "slack", "verdict"],
                    rows,
                },
            })
        }
    }
}

fn pv_spec(rel_tol: Option<f64>) -> PVQuadSpec {
    let mut s = PVQuadSpec::default();
    if let Some(t) = rel_tol {
        s.rel_tol = t;
    }
    s
}

fn bound_outcome(rep: BoundReport, p: f64, alpha: f64) -> Result<Outcome, CliError> {
    let verdict = if rep.passed() { "pass" } else { "fail" };
    let rows = rep
        .grid
        .iter()
        .zip(&rep.values)
        .map(|(x, v)| {
            vec![
                x.to_string(),
                v.to_string(),
                (v / x.powf(p - alpha)).to_string(),
                verdict.to_string(),
            ]
        })
        .collect();
    Ok(Outcome {
        kind: "fraclap",
        verdicts: rep.verdicts.clone(),
        report: to_value(&rep)?,
        table: Table {
            header: vec!["x", "value", "ratio_to_power", "verdict"],
            rows,
        },
    })
}

fn fraclap_power(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let f = &cfg.fraclap;
    let p = f.p.unwrap_or(1.0);
    let grid = log_grid(f.lo, f.hi, f.points);
    if f.d == 1 {
        return bound_outcome(verify_lemma21(f.alpha, p, &grid, f.lambda)?, p, f.alpha);
    }
    let params = Params::new(f.d, f.alpha, 1.0, 1.0, Some(f.lambda))?;
    let values = grid
        .iter()
        .map(|&x| power_dd(&params, p, x))
        .collect::<Result<Vec<_>, _>>()?;
    let (verdicts, empirical_constants) = regime_verdicts(f.alpha, p, &grid, &values);
    let rep = BoundReport {
        achieved: vec![0.0; grid.len()],
        grid,
        values,
        verdicts,
        empirical_constants,
    };
    bound_outcome(rep, p, f.alpha)
}

fn fraclap_hp(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let f = &cfg.fraclap;
    let p = f.p.unwrap_or(1.0);
    let domain = cfg.domain_or(DomainShape::half_space(f.d.max(2)))?;
    let params = Params::new(domain.d, f.alpha, 1.0, 1.0, Some(f.lambda))?;
    let q = domain.canonical_boundary_point();
    let chart = domain.chart(&q)?;
    let hi = f.hi.min(0.9 * domain.r0());
    let zt = vec![0.0; domain.d - 1];
    let grid: Vec<Vec<f64>> = log_grid(f.lo.min(hi / 2.0), hi, f.points)
        .into_iter()
        .map(|t| chart.point_above(&zt, t))
        .collect();
    let rep = verify_hp_bounds_with(&domain, &q, p, &params, &grid, &pv_spec(f.rel_tol))?;
    bound_outcome(rep, p, f.alpha)
}

pub fn exit(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let (domain, params) = domain_2d(cfg, DomainShape::half_space(2))?;
    let mut o = cfg.exit.options.clone();
    if let Some(s) = cfg.seed {
        o.seed = s;
    }
    if let Some(p) = cfg.policy {
        o.policy = p;
    }
    let rep = run_exit_uniformity(
        &domain,
        &params,
        &cfg.exit.lambdas,
        cfg.n_or(10_000),
        cfg.exit.factor,
        &o,
    )?;
    constant_outcome("exit", rep)
}

pub fn levysystem(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let params = cfg.params_or(2)?;
    let l = &cfg.levysystem;
    let d = params.d;
    let region = BallRegion::new(vec![0.0; d], l.radius);
    let target = AnnulusRegion {
        center: vec![0.0; d],
        r_in: l.r_in,
        r_out: l.r_out,
    };
    let policy = cfg.policy().policy(&params, l.radius);
    let x0 = vec![0.0; d];
    let n = cfg.n_or(100_000);
    let mut rows = Vec::new();
    let mut results = Vec::new();
    let mut verdicts = Vec::new();
    for i in 0..l.repeats.max(1) {
        let seed = derive_seed(cfg.seed(), i as u64);
        let r = levy_system_check(&region, &params, &x0, &target, n, &policy, seed)?;
        rows.push(mc_row(&format!("lhs:{i}"), &x0, l.radius, &r.lhs));
        rows.push(mc_row(&format!("rhs:{i}"), &x0, l.radius, &r.rhs));
        verdicts.push(Verdict::new(
            format!("repeat{i}_agrees"),
            r.zscore.abs() < 4.0,
            format!("lhs {:.5} rhs {:.5} z {:.3}", r.lhs.mean, r.rhs.mean, r.zscore),
        ));
        results.push(r);
    }
    let z: Vec<f64> = results.iter().map(|r| r.zscore).collect();
    if z.len() >= 10 {
        // Under the identity the z-scores are roughly standard normal.
        let outside = z.iter().filter(|v| v.abs() > 2.0).count() as f64 / z.len() as f64;
        verdicts.push(Verdict::new(
            "zscores_standard",
            outside <= 0.2,
            format!("fraction with |z| > 2: {outside:.3}"),
        ));
    }
    Ok(Outcome {
        kind: "levysystem",
        report: json!({ "results": to_value(&results)?, "zscores": z, "verdicts": to_value(&verdicts)? }),
        verdicts,
        table: Table {
            header: MC_HEADER.to_vec(),
            rows,
        },
    })
}

pub fn scaling(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let params = cfg.params_or(2)?;
    let s = &cfg.scaling;
    let opts = ScalingOptions {
        domain: cfg.domain.clone(),
        x0: None,
        p_min: s.p_min,
        seed: cfg.seed(),
        policy: cfg.policy(),
    };
    let rep = run_scaling_check(&params, s.lambda, s.t, cfg.n_or(10_000), &opts)?;
    constant_outcome("scaling", rep)
}

pub fn harnack(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let params = cfg.params_or(2)?;
    let opts = harmonic_opts(cfg, cfg.harnack.options.clone());
    let rep = run_harnack_experiment(&params, cfg.harnack.r, cfg.n_or(10_000), &opts)?;
    constant_outcome("harnack", rep)
}

pub fn carleson(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let (domain, params) = domain_2d(cfg, DomainShape::cone(2, 1.0))?;
    let opts = harmonic_opts(cfg, cfg.carleson.options.clone());
    let rep = run_carleson_experiment(&domain, &params, cfg.carleson.r, cfg.n_or(10_000), &opts)?;
    constant_outcome("carleson", rep)
}

pub fn bhp(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let (domain, params) = domain_2d(cfg, DomainShape::half_space(2))?;
    let mut opts = cfg.bhp.options.clone();
    opts.harmonic = harmonic_opts(cfg, opts.harmonic);
    let q = cfg.bhp.q.clone().unwrap_or_else(|| domain.canonical_boundary_point());
    let rep = run_bhp_experiment(&domain, &params, &q, cfg.bhp.r, cfg.n_or(10_000), &opts)?;
    constant_outcome("bhp", rep)
}

pub fn lowerbound(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let (domain, params) = domain_2d(cfg, DomainShape::cone(2, 1.0))?;
    let mut opts = cfg.lowerbound.options.clone();
    opts.harmonic = harmonic_opts(cfg, opts.harmonic);
    let rep = run_lower_bound_experiment(&domain, &params, cfg.n_or(10_000), &opts)?;
    constant_outcome("lowerbound", rep)
}

/// Fast closed-form checks of the installation: harmonic powers of the
/// half-line, Brownian exit time and exit distribution of the unit disc.
/// Truncation far enough out to act as none at `x = 1/2`.
const BIG: f64 = 1e30;

pub fn selftest(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let mut verdicts = Vec::new();
    let mut rows = Vec::new();
    for alpha in [0.8, 1.5] {
        // (x₊)^{α/2} is annihilated by the untruncated operator.
        let scale = power_1d(alpha, alpha / 2.0 + 0.3, 0.5, BIG)?.abs();
        let v = power_1d(alpha, alpha / 2.0, 0.5, BIG)?;
        verdicts.push(Verdict::new(
            format!("harmonic_power_alpha{alpha}"),
            v.abs() < 1e-6 * scale,
            format!("value {v:.3e} against scale {scale:.3e}"),
        ));
    }

    let n = cfg.n_or(20_000);
    let bm = Params::new(2, 1.5, 0.0, 1.0, None)?;
    let disc = BallRegion::new(vec![0.0, 0.0], 1.0);
    let policy = PolicyTemplate::default().policy(&bm, 1.0);
    let x0 = [0.0, 0.0];
    // Continuous exits land on the circle itself, so the target starts just
    // inside; paths stopped next to the circle are snapped onto it.
    let half = ExteriorSector::half(&[0.0, 0.0], 1.0 - 1e-9, &[1.0, 0.0]);
    let stats = exit_statistics(
        &disc,
        &bm,
        &x0,
        &[&half],
        n,
        &policy,
        derive_seed(cfg.seed(), 1),
        CensorRule::Snap,
    )?;
    let t = stats.exit_time;
    // Generator Δ: E τ = (1 - |x|²) / (2d).
    let z = (t.mean - 0.25) / t.stderr;
    verdicts.push(Verdict::new(
        "brownian_exit_time",
        z.abs() < 4.0,
        format!("mean {:.4} ± {:.4}, exact 0.25", t.mean, t.stderr),
    ));
    rows.push(mc_row("exit_time", &x0, 1.0, &t));

    let h = stats.hits[0];
    let z = (h.mean - 0.5) / h.stderr;
    verdicts.push(Verdict::new(
        "brownian_half_circle",
        z.abs() < 4.0,
        format!("mean {:.4} ± {:.4}, exact 0.5", h.mean, h.stderr),
    ));
    rows.push(mc_row("half_circle", &x0, 1.0, &h));

    Ok(Outcome {
        kind: "selftest",
        report: json!({ "verdicts": to_value(&verdicts)? }),
        verdicts,
        table: Table {
            header: MC_HEADER.to_vec(),
            rows,
        },
    })
}
