//! The `flow` subcommand: one moment-map flow per perturbation on the
//! scenario path, with the per-run analysis needed by `verify`.

use std::path::Path;
use std::sync::Arc;

use hymwall::cone::{build_cones, classify, StabilityCone, ThetaClass, Verdict};
use hymwall::flow::{
    destabilizer_extract, filtration_matches, gamma_observables, integrate, pairing_check, Destabilizer, FlowError, FlowReport,
    FlowResult, Observables, Outcome, PairingCheck, SweepPoint, TrajRow,
};
use hymwall::lattice::{DolbeaultOp, LatticeContext, MetricPerturbation, TorusGrid};
use hymwall::slice::{SliceContext, SliceError};
use hymwall::Rat;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scenario::Scenario;
use crate::{write_json, CliError};

/// The pairing identity for one tagged candidate at one slice point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairingRecord {
    pub candidate: usize,
    pub components: Vec<usize>,
    /// `"start"` (the starting point `b₀`) or `"end"` (the final point).
    pub at: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check: Option<PairingCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Contents of `flow_<k>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub index: usize,
    pub eps: MetricPerturbation,
    pub eps_c0: f64,
    pub eps_class: f64,
    /// Perturbed class `(t₁ + δt₁, t₂ + δt₂)`.
    pub theta: [f64; 2],
    /// Cone verdict at the perturbed class, or `outside_region`.
    pub predicted: String,
    pub predicted_walls: Vec<usize>,
    /// Outcome kind, or `error` when the run failed.
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<FlowReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_point: Option<SweepPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observables: Option<Observables>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub destabilizer: Option<Destabilizer>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub destabilizer_error: Option<String>,
    /// Whether the first block of the destabilizer matches the violated
    /// wall's candidate (rank, Chern vector and, when tagged, components).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filtration_match: Option<bool>,
    pub pairing: Vec<PairingRecord>,
    /// File name of the binary snapshot of the limiting `(0,1)`-form.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<String>,
}

/// All runs of a `flow` invocation.
#[derive(Clone, Debug, Default)]
pub struct FlowSummary {
    pub records: Vec<FlowRecord>,
}

struct RunOutput {
    record: FlowRecord,
    trajectory: Vec<TrajRow>,
    snapshot: Option<Vec<u8>>,
    failure: Option<CliError>,
}

fn slice_error(e: SliceError) -> CliError {
    match e {
        SliceError::NotGradedHym(_) | SliceError::Lattice(_) | SliceError::Dimension { .. } => CliError::Config(format!("slice: {e}")),
        other => CliError::Solver(format!("slice: {other}")),
    }
}

fn unpack(v: &[[f64; 2]]) -> Vec<C64> {
    v.iter().map(|p| C64::new(p[0], p[1])).collect()
}

fn exact(x: f64) -> Rat {
    Rat::from_float(x).expect("finite moduli")
}

fn predict(cone: &StabilityCone<Rat>, theta: [f64; 2], eps: &MetricPerturbation) -> (String, Vec<usize>) {
    let class = ThetaClass::new(vec![exact(theta[0]) + exact(eps.moduli[0]), exact(theta[1]) + exact(eps.moduli[1])]);
    match classify(&class, cone) {
        Ok(Verdict::Stable) => ("stable".into(), Vec::new()),
        Ok(Verdict::Semistable { active }) => ("semistable".into(), active),
        Ok(Verdict::Unstable { violated }) => ("unstable".into(), violated),
        Err(_) => ("outside_region".into(), Vec::new()),
    }
}

/// Runs the flow of every point on the path. With `out`, writes
/// `flow_<k>.json`, `traj_<k>.csv` and, for converged runs,
/// `op_inf_<k>.bin`.
///
/// All runs are attempted. The error of the lowest-index failed run is
/// returned afterwards; solver failures take precedence over exhausted
/// budgets.
pub fn run_flow(scenario: &Scenario, out: Option<&Path>) -> Result<FlowSummary, CliError> {
    let input = scenario.flow_input()?;
    let cone_input = scenario.cone_input()?;
    let cone = build_cones(&cone_input.total, &cone_input.candidates, &cone_input.region).map_err(|e| CliError::Config(e.to_string()))?;
    let path = input.path;
    if path.count == 0 {
        return Ok(FlowSummary::default());
    }
    let g = input.geometry;
    let grid = TorusGrid::new(g.n, g.t1, g.t2).map_err(|e| CliError::Config(format!("geometry: {e}")))?;
    let ctx = LatticeContext::new(grid, input.bundle.clone());
    let slice = SliceContext::new(DolbeaultOp::base(ctx), scenario.slice_config()).map_err(slice_error)?;
    let [i, j] = scenario.start.entry;
    let mut b0 = vec![C64::new(0.0, 0.0); slice.dim()];
    if scenario.start.amplitude != 0.0 {
        let Some(&idx) = slice.basis().entry_indices(i, j).first() else {
            return Err(CliError::Config(format!("start.entry ({i}, {j}) carries no harmonic direction")));
        };
        b0[idx] = C64::new(scenario.start.amplitude, 0.0);
    }
    let theta = [g.t1, g.t2];
    let outputs: Vec<RunOutput> =
        (0..path.count).into_par_iter().map(|k| run_one(scenario, &slice, &cone, theta, k, &path.point(k), &b0)).collect();

    let mut failure: Option<CliError> = None;
    let mut budget: Option<CliError> = None;
    let mut records = Vec::with_capacity(outputs.len());
    for o in outputs {
        if let Some(dir) = out {
            let k = o.record.index;
            write_json(&dir.join(format!("flow_{k}.json")), &o.record)?;
            write_trajectory(&dir.join(format!("traj_{k}.csv")), &o.trajectory)?;
            if let (Some(bytes), Some(name)) = (&o.snapshot, &o.record.snapshot) {
                std::fs::write(dir.join(name), bytes)?;
            }
        }
        match o.failure {
            Some(e @ CliError::Budget(_)) => {
                budget.get_or_insert(e);
            }
            Some(e) => {
                failure.get_or_insert(e);
            }
            None => {}
        }
        records.push(o.record);
    }
    match failure.or(budget) {
        Some(e) => Err(e),
        None => Ok(FlowSummary { records }),
    }
}

fn write_trajectory(path: &Path, rows: &[TrajRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(e.into()))?;
    if rows.is_empty() {
        w.write_record(["t", "nu_norm", "phi", "b_norm", "step", "hym_residual"]).map_err(|e| CliError::Io(e.into()))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

fn run_one(
    scenario: &Scenario,
    slice: &Arc<SliceContext>,
    cone: &StabilityCone<Rat>,
    theta: [f64; 2],
    k: usize,
    eps: &MetricPerturbation,
    b0: &[C64],
) -> RunOutput {
    let (predicted, predicted_walls) = predict(cone, theta, eps);
    let mut record = FlowRecord {
        index: k,
        eps: eps.clone(),
        eps_c0: eps.c0_norm(&slice.lattice().grid),
        eps_class: eps.class_norm(),
        theta: [theta[0] + eps.moduli[0], theta[1] + eps.moduli[1]],
        predicted,
        predicted_walls,
        status: "error".into(),
        error: None,
        report: None,
        sweep_point: None,
        observables: None,
        destabilizer: None,
        destabilizer_error: None,
        filtration_match: None,
        pairing: Vec::new(),
        snapshot: None,
    };
    let result = match integrate(slice, eps, b0, &scenario.flow) {
        Ok(r) => r,
        Err(e) => {
            record.error = Some(e.to_string());
            let (trajectory, failure) = match e {
                FlowError::BallExit { ref trajectory, .. } => (trajectory.clone(), CliError::Solver(format!("run {k}: {e}"))),
                FlowError::Config(_) => (Vec::new(), CliError::Config(format!("run {k}: {e}"))),
                FlowError::Slice(ref s) => (Vec::new(), match slice_error(s.clone()) {
                    CliError::Config(m) => CliError::Config(format!("run {k}: {m}")),
                    _ => CliError::Solver(format!("run {k}: {e}")),
                }),
                _ => (Vec::new(), CliError::Solver(format!("run {k}: {e}"))),
            };
            return RunOutput { record, trajectory, snapshot: None, failure: Some(failure) };
        }
    };
    record.status = result.report.outcome.kind().to_string();
    let failure = match &result.report.outcome {
        Outcome::BudgetExceeded { reason, .. } => Some(CliError::Budget(format!("run {k}: {reason}"))),
        _ => None,
    };
    analyse(scenario, slice, cone, eps, &result, &mut record);
    let snapshot = result.op_inf.as_ref().map(|op| {
        record.snapshot = Some(format!("op_inf_{k}.bin"));
        op.gamma().to_snapshot_bytes()
    });
    let trajectory = result.report.trajectory.clone();
    record.report = Some(result.report);
    RunOutput { record, trajectory, snapshot, failure }
}

fn analyse(
    scenario: &Scenario,
    slice: &SliceContext,
    cone: &StabilityCone<Rat>,
    eps: &MetricPerturbation,
    result: &FlowResult,
    record: &mut FlowRecord,
) {
    if let Some(op) = &result.op_inf {
        record.sweep_point = SweepPoint::from_result(slice, result);
        record.observables = Some(gamma_observables(op, &result.state.point.metric));
    }
    if matches!(result.report.outcome, Outcome::Destabilized { .. }) {
        match destabilizer_extract(slice, result, scenario.analysis.destabilizer_window) {
            Ok(d) => {
                if let Some(&w) = record.predicted_walls.first().filter(|_| record.predicted == "unstable") {
                    let source = cone.walls[w].source_index;
                    let datum = &cone.walls[w].source;
                    let tag_ok = match (&scenario.candidates[source].components, d.subobject()) {
                        (Some(tag), Some(first)) => {
                            let mut a = tag.clone();
                            a.sort_unstable();
                            a == first.components
                        }
                        _ => true,
                    };
                    record.filtration_match = Some(filtration_matches(&d, datum) && tag_ok);
                }
                record.destabilizer = Some(d);
            }
            Err(e) => record.destabilizer_error = Some(e.to_string()),
        }
    }
    let points = [("start", unpack(&result.report.b0)), ("end", result.state.b.clone())];
    let mut seen: Vec<Vec<usize>> = Vec::new();
    for (ci, c) in scenario.candidates.iter().enumerate() {
        let Some(tag) = &c.components else { continue };
        let mut tag = tag.clone();
        tag.sort_unstable();
        if seen.contains(&tag) {
            continue;
        }
        seen.push(tag.clone());
        for (at, b) in &points {
            let (check, error) = match pairing_check(slice, eps, b, &tag) {
                Ok(p) => (Some(p), None),
                Err(e) => (None, Some(e.to_string())),
            };
            record.pairing.push(PairingRecord { candidate: ci, components: tag.clone(), at: (*at).into(), check, error });
        }
    }
}
