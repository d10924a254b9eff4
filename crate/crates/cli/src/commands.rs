use crate::{Cli, Command, Format};
use anyhow::{anyhow, bail, Context, Result};
use nalgebra::DVector;
use pontryagin::horizon::{
    assemble_constraints, check_closedness_surjectivity, compute_multipliers_with, lemma42_bound, truncate, MultiplierSet, SolveMode,
    DEFAULT_VI_TOL,
};
use pontryagin::hypotheses::check_hypotheses;
use pontryagin::instances::{resolve, InstanceBundle};
use pontryagin::limits::{check_prop45_6, normalize, sample_z_pairs, sweep, SweepOptions};
use pontryagin::model::{compare_processes, simulate, Differentiation, Process};
use pontryagin::report::{csv_rows, write_csv, CsvRow, Envelope, MultiplierRecord, Verdict};
use pontryagin::verify::{verify, Tolerances};
use pontryagin::Error;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::io::Write;

/// Problems with the invocation itself; reported with exit code 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.into()))
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Usage>().is_some() {
        return 2;
    }
    match e.downcast_ref::<Error>() {
        Some(
            Error::Schema { .. }
            | Error::UnknownInstance(_)
            | Error::InvalidArgument(_)
            | Error::Dimension(_)
            | Error::ProcessTooShort { .. }
            | Error::InfeasibleReference { .. }
            | Error::InfeasibleControl { .. }
            | Error::DomainViolation { .. }
            | Error::InitialStateMismatch
            | Error::Json(_)
            | Error::Io(_),
        ) => 2,
        _ => 1,
    }
}

struct Outcome {
    verdict: Verdict,
    body: Value,
    rows: Option<Vec<CsvRow>>,
}

pub fn run(cli: &Cli) -> Result<bool> {
    let bundle = resolve(&cli.instance)?;
    let tol = Tolerances { adjoint: cli.tol_adjoint, vi: cli.tol_vi };
    if !(cli.tol_adjoint > 0.0 && cli.tol_vi > 0.0 && cli.rank_tol > 0.0) {
        return Err(usage("tolerances must be positive"));
    }
    let name = command_name(&cli.command);
    if cli.format == Format::Csv && !matches!(cli.command, Command::Multipliers | Command::Sweep | Command::Verify { .. }) {
        return Err(usage(format!("--format csv is available for multipliers, sweep and verify, not {name}")));
    }
    let available = bundle.reference.len();
    let outcome = match &cli.command {
        Command::Check => run_check(cli, &bundle, available)?,
        Command::Multipliers => run_multipliers(cli, &bundle, tol, available)?,
        Command::Sweep => run_sweep(cli, &bundle, tol, available)?,
        Command::Verify { multipliers } => run_verify(cli, &bundle, tol, multipliers.as_deref(), available)?,
        Command::BoundCert => run_bound(cli, &bundle, available)?,
        Command::Compare { challenger, perturb } => run_compare(cli, &bundle, challenger.as_deref(), *perturb, available)?,
    };
    let bytes = match cli.format {
        Format::Json => Envelope::new(name, &bundle.name, outcome.verdict, cli.seed, outcome.body).to_json()?.into_bytes(),
        Format::Csv => {
            let mut buf = Vec::new();
            write_csv(outcome.rows.unwrap_or_default(), &mut buf)?;
            buf
        }
    };
    match &cli.out {
        Some(path) => std::fs::write(path, &bytes).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(&bytes)?,
    }
    Ok(outcome.verdict == Verdict::Pass)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Check => "check",
        Command::Multipliers => "multipliers",
        Command::Sweep => "sweep",
        Command::Verify { .. } => "verify",
        Command::BoundCert => "bound-cert",
        Command::Compare { .. } => "compare",
    }
}

fn horizon(cli: &Cli, available: usize) -> Result<usize> {
    let h = cli.h as usize;
    if h + 1 > available {
        return Err(usage(format!("--h {h} needs {} reference stages, the instance provides {available}", h + 1)));
    }
    Ok(h)
}

fn run_check(cli: &Cli, b: &InstanceBundle, available: usize) -> Result<Outcome> {
    let cap = cli.horizon_cap as usize;
    if cap + 1 > available {
        return Err(usage(format!("--horizon-cap {cap} exceeds the {available} reference stages")));
    }
    let report = check_hypotheses(&b.system, &b.reference, cap, cli.rank_tol)?;
    let failures = report.failures();
    Ok(Outcome {
        verdict: Verdict::from_pass(failures.is_empty()),
        body: json!({
            "failures": failures,
            "profile_mismatches": b.profile.mismatches(&report),
            "hypotheses": report,
        }),
        rows: None,
    })
}

struct Computed {
    ms: MultiplierSet,
    normalized: Option<MultiplierSet>,
    adjoint: Vec<f64>,
    vi: Vec<f64>,
    surjectivity: pontryagin::horizon::SurjectivityReport,
}

fn compute_at(cli: &Cli, b: &InstanceBundle, h: usize) -> Result<Computed> {
    let problem = truncate(&b.system, &b.reference, h)?;
    let lin = assemble_constraints(&problem, Differentiation::Preferred)?;
    let cones = problem.cones()?;
    let ms = compute_multipliers_with(&lin, &cones, SolveMode::NormalFirst, DEFAULT_VI_TOL)?;
    let normalized = normalize(&ms, &cones[0], &cones[1]).ok();
    let shown = normalized.as_ref().unwrap_or(&ms);
    Ok(Computed {
        adjoint: shown.adjoint_residuals(&lin.stages),
        vi: shown.vi_violations(&lin.stages, &cones),
        surjectivity: check_closedness_surjectivity(&lin, cli.rank_tol)?,
        normalized,
        ms,
    })
}

fn run_multipliers(cli: &Cli, b: &InstanceBundle, tol: Tolerances, available: usize) -> Result<Outcome> {
    let h = horizon(cli, available)?;
    let c = compute_at(cli, b, h)?;
    let report = verify(&b.system, &b.reference, c.ms.lambda0, &c.ms.p, h, tol)?;
    let shown = c.normalized.as_ref().unwrap_or(&c.ms);
    Ok(Outcome {
        verdict: Verdict::from_pass(report.pass),
        rows: Some(csv_rows(shown, &c.adjoint, &c.vi, None)),
        body: json!({
            "h": h,
            "raw": MultiplierRecord::from(&c.ms),
            "normalized": c.normalized.as_ref().map(MultiplierRecord::from),
            "adjoint_residuals": c.adjoint,
            "vi_violations": c.vi,
            "surjectivity": c.surjectivity,
            "verification": report,
        }),
    })
}

#[derive(Serialize)]
struct SweepLine {
    h: usize,
    lambda0: f64,
    restricted_norm: f64,
    identity_error: f64,
    max_adjoint_residual: f64,
    max_vi_violation: f64,
    branch: pontryagin::horizon::Branch,
}

fn run_sweep(cli: &Cli, b: &InstanceBundle, tol: Tolerances, available: usize) -> Result<Outcome> {
    let h_max = cli.h_max as usize;
    if h_max + 1 > available {
        return Err(usage(format!("--h-max {h_max} needs {} reference stages, the instance provides {available}", h_max + 1)));
    }
    let t_max = cli.t_max as usize;
    if t_max > h_max - 1 {
        return Err(usage(format!("--t-max must lie in 1..={}", h_max - 1)));
    }
    let opts = SweepOptions { rank_tol: cli.rank_tol, ..SweepOptions::default() };
    let rec = sweep(&b.system, &b.reference, h_max, t_max, opts)?;
    let mut lines = Vec::new();
    let mut rows = Vec::new();
    let mut ok = rec.gaps.is_empty();
    let mut prev: Option<&MultiplierSet> = None;
    for e in &rec.entries {
        let m = &e.multipliers;
        let max_adj = e.adjoint_residuals.iter().cloned().fold(0.0, f64::max);
        let max_vi = e.vi_violations.iter().cloned().fold(0.0, f64::max);
        let identity_error = (m.lambda0 + e.restricted_norm - 1.0).abs();
        ok &= max_adj <= tol.adjoint && max_vi <= tol.vi && identity_error <= 1e-10;
        lines.push(SweepLine {
            h: e.h,
            lambda0: m.lambda0,
            restricted_norm: e.restricted_norm,
            identity_error,
            max_adjoint_residual: max_adj,
            max_vi_violation: max_vi,
            branch: m.branch,
        });
        rows.extend(csv_rows(m, &e.adjoint_residuals, &e.vi_violations, prev));
        prev = Some(m);
    }
    let pairs = sample_z_pairs(&rec, cli.samples as usize, cli.seed);
    let constants = check_prop45_6(&rec, &pairs);
    let gaps: Vec<Value> = rec.gaps.iter().map(|(h, why)| json!({"h": h, "reason": why})).collect();
    let limit: Vec<Vec<f64>> = rec.limit_costates.iter().map(|p| p.iter().cloned().collect()).collect();
    Ok(Outcome {
        verdict: Verdict::from_pass(ok),
        rows: Some(rows),
        body: json!({
            "h_max": h_max,
            "t_max": t_max,
            "horizons": lines,
            "gaps": gaps,
            "costate_series": rec.per_t,
            "limit_lambda0": rec.limit_lambda0,
            "limit_costates": limit,
            "limit_margin": rec.limit_margin,
            "nontriviality_margin": rec.nontriviality_margin,
            "bound_constants": constants,
        }),
    })
}

fn run_verify(cli: &Cli, b: &InstanceBundle, tol: Tolerances, file: Option<&std::path::Path>, available: usize) -> Result<Outcome> {
    let (source, lambda0, p, default_depth) = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let rec = MultiplierRecord::from_json(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let p = rec.costates();
            let depth = p.len().saturating_sub(1).max(1);
            (path.display().to_string(), rec.lambda0, p, depth)
        }
        None => {
            let h = horizon(cli, available)?;
            let c = compute_at(cli, b, h)?;
            (format!("computed at h = {h}"), c.ms.lambda0, c.ms.p, h)
        }
    };
    let t_check = cli.t_check.map(|t| t as usize).unwrap_or(default_depth);
    if p.len() < t_check + 1 {
        return Err(usage(format!("--t-check {t_check} needs {} costates, {} supplied", t_check + 1, p.len())));
    }
    if t_check + 1 > available {
        return Err(usage(format!("--t-check {t_check} exceeds the {available} reference stages")));
    }
    let report = verify(&b.system, &b.reference, lambda0, &p, t_check, tol)?;
    let rows = verification_rows(&report, lambda0, &p);
    Ok(Outcome {
        verdict: Verdict::from_pass(report.pass),
        rows: Some(rows),
        body: json!({ "source": source, "verification": report }),
    })
}

fn verification_rows(report: &pontryagin::verify::VerificationReport, lambda0: f64, p: &[DVector<f64>]) -> Vec<CsvRow> {
    let scale = report.scale;
    (0..=report.t_check)
        .map(|t| CsvRow {
            h: report.t_check,
            t,
            lambda0: lambda0 / scale,
            p_norm: (t >= 1).then(|| p[t - 1].norm() / scale),
            adjoint_residual: if t >= 1 { report.cond3_adjoint.residuals.get(t - 1).copied() } else { None },
            vi_violation: report.cond4_variational.violations.get(t).copied(),
            p_diff: None,
        })
        .collect()
}

fn run_bound(cli: &Cli, b: &InstanceBundle, available: usize) -> Result<Outcome> {
    let h = horizon(cli, available)?;
    let problem = truncate(&b.system, &b.reference, h)?;
    let lin = assemble_constraints(&problem, Differentiation::Preferred)?;
    Ok(match lemma42_bound(&lin, cli.rank_tol, cli.samples as usize, cli.seed) {
        Ok(cert) => Outcome {
            verdict: Verdict::from_pass(cert.passed),
            body: json!({
                "h": h,
                "max_ratio": cert.max_ratio(),
                "max_residual": cert.max_residual(),
                "certificate": cert,
            }),
            rows: None,
        },
        Err(Error::Hypothesis(why)) => Outcome {
            verdict: Verdict::Fail,
            body: json!({ "h": h, "not_applicable": why }),
            rows: None,
        },
        Err(e) => return Err(e.into()),
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChallengerFile {
    controls: Vec<Vec<f64>>,
}

fn run_compare(cli: &Cli, b: &InstanceBundle, file: Option<&std::path::Path>, perturb: Option<f64>, available: usize) -> Result<Outcome> {
    let cap = (cli.horizon_cap as usize).min(available - 1);
    let m = b.system.control_dim();
    let (description, controls): (String, Vec<DVector<f64>>) = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let parsed: ChallengerFile = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let controls = parsed
                .controls
                .iter()
                .enumerate()
                .map(|(t, u)| {
                    if u.len() == m {
                        Ok(DVector::from_column_slice(u))
                    } else {
                        Err(usage(format!("{}: controls[{t}] has {} entries, expected {m}", path.display(), u.len())))
                    }
                })
                .collect::<Result<_>>()?;
            (path.display().to_string(), controls)
        }
        None => {
            // an explicit shift is used as given; the default tries both signs
            let shifts = match perturb {
                Some(eps) if eps.is_finite() => vec![eps],
                Some(_) => bail!(usage("--perturb must be finite")),
                None => vec![DEFAULT_PERTURBATION, -DEFAULT_PERTURBATION],
            };
            let mut last = None;
            for eps in shifts {
                let mut controls = b.reference.controls.clone();
                controls[0][0] += eps;
                match challenger_process(b, &controls, cap) {
                    Ok(p) => {
                        let report = compare_processes(&b.system, &b.reference, &p, cap, 1e-9)?;
                        return Ok(compare_outcome(format!("reference with u_0[0] shifted by {eps}"), cap, report));
                    }
                    Err(e) => last = Some(e),
                }
            }
            return Err(last.expect("at least one shift"));
        }
    };
    let challenger = challenger_process(b, &controls, cap)?;
    let report = compare_processes(&b.system, &b.reference, &challenger, cap, 1e-9)?;
    Ok(compare_outcome(description, cap, report))
}

const DEFAULT_PERTURBATION: f64 = 1e-2;

fn challenger_process(b: &InstanceBundle, controls: &[DVector<f64>], cap: usize) -> Result<Process> {
    if controls.len() < cap + 1 {
        return Err(usage(format!("challenger needs at least {} controls, has {}", cap + 1, controls.len())));
    }
    let p = simulate(&b.system, &b.reference.initial_state, controls, cap)?;
    admissible(b, &p, cap)?;
    Ok(p)
}

fn compare_outcome(description: String, cap: usize, report: pontryagin::model::ComparisonReport) -> Outcome {
    Outcome {
        verdict: Verdict::from_pass(report.dominates_limsup),
        body: json!({ "challenger": description, "horizon_cap": cap, "comparison": report }),
        rows: None,
    }
}

fn admissible(b: &InstanceBundle, p: &Process, cap: usize) -> Result<()> {
    for t in 0..=cap {
        let set = b.system.control_set(t);
        if !set.contains(&p.controls[t]) {
            return Err(anyhow!(Error::InfeasibleControl {
                t,
                control: p.controls[t].iter().cloned().collect(),
                violation: set.violation(&p.controls[t]),
            }));
        }
        if !b.system.state_domain(t + 1).contains(&p.states[t + 1]) {
            return Err(anyhow!(Error::DomainViolation { t: t + 1, state: p.states[t + 1].iter().cloned().collect() }));
        }
    }
    Ok(())
}
