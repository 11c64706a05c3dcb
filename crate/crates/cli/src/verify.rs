//! The `verify` subcommand: a pass/fail table computed from the reports
//! written by `cone` and `flow`.

use std::path::Path;

use hymwall::flow::{bound_verify, observable_distance, FlowError, Outcome, PathKind, TrajRow};
use hymwall::Rat;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::cone::{run_cone, ConeReport};
use crate::flow::FlowRecord;
use crate::scenario::Scenario;
use crate::{write_json, CliError};

/// Row status values.
pub const PASS: &str = "pass";
pub const FAIL: &str = "fail";
pub const INSUFFICIENT: &str = "insufficient_data";
pub const NOT_APPLICABLE: &str = "not_applicable";

/// One row of `verdicts.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictRow {
    pub criterion: u8,
    pub check: String,
    pub status: String,
    pub measured: Option<f64>,
    pub threshold: String,
    pub detail: String,
}

impl VerdictRow {
    fn new(criterion: u8, check: &str, status: &str, measured: Option<f64>, threshold: String, detail: String) -> Self {
        Self { criterion, check: check.into(), status: status.into(), measured, threshold, detail }
    }

    fn judged(criterion: u8, check: &str, pass: bool, measured: f64, threshold: String, detail: String) -> Self {
        let m = measured.is_finite().then_some(measured);
        Self::new(criterion, check, if pass { PASS } else { FAIL }, m, threshold, detail)
    }

    fn skipped(criterion: u8, check: &str, status: &str, detail: String) -> Self {
        Self::new(criterion, check, status, None, String::new(), detail)
    }
}

/// The verdict table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutcome {
    pub rows: Vec<VerdictRow>,
}

impl VerifyOutcome {
    pub fn failed(&self) -> Vec<&VerdictRow> {
        self.rows.iter().filter(|r| r.status == FAIL).collect()
    }

    pub fn row(&self, check: &str) -> Option<&VerdictRow> {
        self.rows.iter().find(|r| r.check == check)
    }
}

fn read_report<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("missing report {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("unreadable report {}: {e}", path.display())))
}

fn read_trajectory(path: &Path) -> Result<Vec<TrajRow>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Config(format!("missing report {}: {e}", path.display())))?;
    r.deserialize().collect::<Result<Vec<TrajRow>, _>>().map_err(|e| CliError::Config(format!("unreadable trajectory {}: {e}", path.display())))
}

/// Builds the verdict table from the reports in `dir` and writes
/// `verdicts.csv` and `verdicts.json` there.
///
/// Missing or unreadable reports are configuration errors. The table is
/// always written once the reports are read; a failed row then turns the
/// result into [`CliError::Verification`].
pub fn verify(scenario: &Scenario, dir: &Path) -> Result<VerifyOutcome, CliError> {
    let cone: ConeReport = read_report(&dir.join("cone.json"))?;
    let count = scenario.epsilon_path.as_ref().map_or(0, |p| p.count);
    let mut runs = Vec::with_capacity(count);
    for k in 0..count {
        let record: FlowRecord = read_report(&dir.join(format!("flow_{k}.json")))?;
        let traj = read_trajectory(&dir.join(format!("traj_{k}.csv")))?;
        runs.push((record, traj));
    }
    let mut rows = Vec::new();
    rows.push(cone_row(scenario, &cone)?);
    if scenario.epsilon_path.is_none() {
        rows.push(VerdictRow::skipped(8, "flow_runs", NOT_APPLICABLE, "the scenario has no perturbation path".into()));
    } else {
        flow_rows(scenario, &runs, &mut rows);
        bound_rows(scenario, &cone, &runs, &mut rows);
    }
    let outcome = VerifyOutcome { rows };
    let mut w = csv::Writer::from_path(dir.join("verdicts.csv")).map_err(|e| CliError::Io(e.into()))?;
    for r in &outcome.rows {
        w.serialize(r).map_err(|e| CliError::Io(e.into()))?;
    }
    w.flush()?;
    write_json(&dir.join("verdicts.json"), &outcome)?;
    let failed = outcome.failed();
    if failed.is_empty() {
        Ok(outcome)
    } else {
        Err(CliError::Verification(failed.iter().map(|r| r.check.as_str()).collect::<Vec<_>>().join(", ")))
    }
}

fn cone_row(scenario: &Scenario, written: &ConeReport) -> Result<VerdictRow, CliError> {
    let fresh = run_cone(scenario, None)?;
    let same = fresh == *written;
    Ok(VerdictRow::judged(
        1,
        "cone_reproducible",
        same,
        if same { 0.0 } else { 1.0 },
        "identical".into(),
        format!("{} walls, {} classifications recomputed exactly", fresh.walls.len(), fresh.classifications.len()),
    ))
}

fn flow_rows(scenario: &Scenario, runs: &[(FlowRecord, Vec<TrajRow>)], rows: &mut Vec<VerdictRow>) {
    let tol = &scenario.verify;
    let definite = runs.iter().filter(|(r, _)| r.status == "converged" || r.status == "destabilized").count();
    if runs.is_empty() {
        rows.push(VerdictRow::skipped(8, "definite_outcomes", PASS, "empty perturbation path".into()));
    } else {
        rows.push(VerdictRow::judged(
            8,
            "definite_outcomes",
            definite == runs.len(),
            definite as f64,
            format!("= {}", runs.len()),
            format!("{definite} of {} runs converged or destabilized", runs.len()),
        ));
    }

    // Monotonicity of ‖ν‖ along the written trajectories.
    let pairs: Vec<(usize, f64)> = runs
        .iter()
        .flat_map(|(r, t)| t.windows(2).map(move |w| (r.index, w[1].nu_norm - w[0].nu_norm)))
        .collect();
    match pairs.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1)) {
        Some((k, inc)) => rows.push(VerdictRow::judged(
            8,
            "nu_monotone",
            inc <= tol.monotone_slack,
            inc,
            format!("<= {:e}", tol.monotone_slack),
            format!("largest increase of ‖ν‖ between trajectory rows (run {k}) over {} row pairs", pairs.len()),
        )),
        None => rows.push(VerdictRow::skipped(8, "nu_monotone", INSUFFICIENT, "no trajectory has two rows".into())),
    }

    let reports: Vec<&hymwall::flow::FlowReport> = runs.iter().filter_map(|(r, _)| r.report.as_ref()).collect();
    if reports.is_empty() {
        rows.push(VerdictRow::skipped(8, "orbit_identity", INSUFFICIENT, "no completed run".into()));
    } else {
        let orbit = reports.iter().map(|r| r.max_orbit_error).fold(0.0, f64::max);
        rows.push(VerdictRow::judged(
            8,
            "orbit_identity",
            orbit <= tol.orbit_tol,
            orbit,
            format!("<= {:e}", tol.orbit_tol),
            format!("largest orbit-identity error over {} runs", reports.len()),
        ));
    }

    // Donaldson decrease law on small stable-side runs.
    let eligible: Vec<(usize, f64)> = runs
        .iter()
        .filter(|(r, _)| r.predicted == "stable" && r.status == "converged" && r.eps_c0 <= tol.ratio_eps_max)
        .filter_map(|(r, _)| {
            let steps = &r.report.as_ref()?.steps;
            if steps.is_empty() {
                return None;
            }
            let within = steps.iter().filter(|s| s.ratio >= tol.ratio_band[0] && s.ratio <= tol.ratio_band[1]).count();
            Some((r.index, within as f64 / steps.len() as f64))
        })
        .collect();
    if !scenario.flow.donaldson {
        rows.push(VerdictRow::skipped(8, "donaldson_decrease", NOT_APPLICABLE, "the Donaldson functional is disabled".into()));
    } else if let Some(&(k, worst)) = eligible.iter().min_by(|a, b| a.1.total_cmp(&b.1)) {
        rows.push(VerdictRow::judged(
            8,
            "donaldson_decrease",
            worst >= tol.ratio_fraction,
            worst,
            format!(">= {}", tol.ratio_fraction),
            format!(
                "smallest fraction of steps with ratio in [{}, {}] (run {k}) over {} stable-side runs",
                tol.ratio_band[0],
                tol.ratio_band[1],
                eligible.len()
            ),
        ));
    } else {
        rows.push(VerdictRow::skipped(8, "donaldson_decrease", NOT_APPLICABLE, "no converged stable-side run with small ‖ε‖".into()));
    }

    // Outcomes on both sides of the wall.
    let stable: Vec<&FlowRecord> = runs.iter().map(|(r, _)| r).filter(|r| r.predicted == "stable").collect();
    if stable.is_empty() {
        rows.push(VerdictRow::skipped(9, "stable_side_converges", NOT_APPLICABLE, "no run on the stable side".into()));
    } else {
        let mut worst = 0.0f64;
        let mut ok = true;
        for r in &stable {
            match r.report.as_ref().map(|rep| &rep.outcome) {
                Some(Outcome::Converged { hym_residual, cond_g, .. }) => {
                    worst = worst.max(*hym_residual);
                    ok &= *hym_residual <= tol.hym_tol && cond_g.is_finite();
                }
                _ => {
                    worst = f64::INFINITY;
                    ok = false;
                }
            }
        }
        rows.push(VerdictRow::judged(
            9,
            "stable_side_converges",
            ok,
            worst,
            format!("<= {:e}", tol.hym_tol),
            format!("largest hym_residual over {} stable-side runs", stable.len()),
        ));
    }
    let unstable: Vec<&FlowRecord> = runs.iter().map(|(r, _)| r).filter(|r| r.predicted == "unstable").collect();
    if unstable.is_empty() {
        rows.push(VerdictRow::skipped(9, "unstable_side_destabilizes", NOT_APPLICABLE, "no run on the unstable side".into()));
    } else {
        let matched = unstable.iter().filter(|r| r.status == "destabilized" && r.filtration_match == Some(true)).count();
        rows.push(VerdictRow::judged(
            9,
            "unstable_side_destabilizes",
            matched == unstable.len(),
            matched as f64,
            format!("= {}", unstable.len()),
            "destabilized runs whose filtration matches the violated wall".into(),
        ));
    }
    let checks: Vec<f64> = runs
        .iter()
        .flat_map(|(r, _)| r.pairing.iter())
        .filter_map(|p| p.check.as_ref())
        .map(|c| c.error / c.lhs.abs().max(c.rhs.abs()).max(1e-12))
        .collect();
    if checks.is_empty() {
        rows.push(VerdictRow::skipped(9, "pairing_identity", NOT_APPLICABLE, "no tagged candidate was evaluated".into()));
    } else {
        let worst = checks.iter().copied().fold(0.0, f64::max);
        rows.push(VerdictRow::judged(
            9,
            "pairing_identity",
            worst <= tol.pairing_rel,
            worst,
            format!("<= {:e}", tol.pairing_rel),
            format!("largest relative error over {} evaluations", checks.len()),
        ));
    }
}

fn bound_rows(scenario: &Scenario, cone: &ConeReport, runs: &[(FlowRecord, Vec<TrajRow>)], rows: &mut Vec<VerdictRow>) {
    let kind = scenario.epsilon_path.as_ref().map_or(PathKind::Moduli, |p| p.kind);
    let points: Vec<_> = runs.iter().filter_map(|(r, _)| r.sweep_point.clone()).collect();
    match bound_verify(kind, &points) {
        Ok(fit) => {
            rows.push(VerdictRow::judged(
                10,
                "b_bound",
                fit.b_bound_c.is_finite() && fit.b_bound_spread <= 10.0,
                fit.b_bound_spread,
                "<= 10".into(),
                format!("spread of the ‖b‖² constants, C = {:.4e}", fit.b_bound_c),
            ));
            match kind {
                PathKind::Exact => rows.push(VerdictRow::judged(
                    10,
                    "scaling",
                    fit.linear_c.is_finite() && fit.linear_spread <= 2.0,
                    fit.linear_spread,
                    "<= 2".into(),
                    format!("spread of ‖∂̄_ε − ∂̄₀‖/‖ε‖, C = {:.4e}, log-log slope {:.3}", fit.linear_c, fit.slope),
                )),
                PathKind::Moduli => rows.push(VerdictRow::judged(
                    10,
                    "scaling",
                    fit.slope <= 0.65,
                    fit.slope,
                    "<= 0.65".into(),
                    "log-log slope of ‖∂̄_ε − ∂̄₀‖ against ‖[ε]‖".into(),
                )),
                PathKind::Mixed => rows.push(VerdictRow::skipped(10, "scaling", NOT_APPLICABLE, "mixed paths have no slope criterion".into())),
            }
        }
        Err(e @ FlowError::InsufficientData { .. }) => {
            rows.push(VerdictRow::skipped(10, "b_bound", INSUFFICIENT, e.to_string()));
            rows.push(VerdictRow::skipped(10, "scaling", INSUFFICIENT, e.to_string()));
        }
        Err(e) => rows.push(VerdictRow::skipped(10, "b_bound", FAIL, e.to_string())),
    }

    // Lipschitz continuity of the observables along the path.
    let obs: Vec<(f64, &hymwall::flow::Observables)> =
        runs.iter().filter_map(|(r, _)| Some((r.eps_c0, r.observables.as_ref()?))).collect();
    if obs.len() < 4 {
        let msg = format!("{} converged runs, at least 4 required", obs.len());
        rows.push(VerdictRow::skipped(10, "observables_lipschitz", INSUFFICIENT, msg.clone()));
        rows.push(VerdictRow::skipped(10, "wall_approach", INSUFFICIENT, msg));
        return;
    }
    let quotients: Vec<f64> =
        obs.windows(2).map(|w| observable_distance(w[0].1, w[1].1) / (w[0].0 - w[1].0).abs()).collect();
    let max = quotients.iter().copied().fold(0.0, f64::max);
    let min = quotients.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = if min > 0.0 { max / min } else { f64::INFINITY };
    rows.push(VerdictRow::judged(
        10,
        "observables_lipschitz",
        max.is_finite() && spread <= scenario.verify.lipschitz_spread,
        spread,
        format!("<= {}", scenario.verify.lipschitz_spread),
        format!("spread of the quotients {quotients:.4?}"),
    ));

    // Off-diagonal blocks shrink when the path approaches a wall.
    let on_wall = scenario.geometry.as_ref().is_some_and(|g| {
        let t = [g.t1, g.t2].map(|x| Rat::from_float(x).expect("finite moduli"));
        cone.walls.iter().any(|w| !w.zero && (&w.coeffs[0].0 * &t[0] + &w.coeffs[1].0 * &t[1]).is_zero())
    });
    if kind != PathKind::Moduli || !on_wall {
        rows.push(VerdictRow::skipped(10, "wall_approach", NOT_APPLICABLE, "the path does not approach a wall".into()));
        return;
    }
    let r = scenario.bundle.as_ref().map_or(1, |b| b.rank());
    let off: Vec<f64> = obs
        .iter()
        .map(|(_, o)| (0..r * r).filter(|&ij| ij / r != ij % r).map(|ij| o.block_norms[ij]).sum())
        .collect();
    let decreasing = off.windows(2).all(|w| w[1] < w[0]);
    rows.push(VerdictRow::judged(
        10,
        "wall_approach",
        decreasing,
        *off.last().expect("at least four points"),
        "strictly decreasing".into(),
        format!("off-diagonal block norms {off:.4?}"),
    ));
}
