//! End-to-end runs of the `hymwall` binary on small T4-X scenarios.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hymwall::lattice::{Bidegree, LatticeField, Valued};
use serde_json::{json, Value};
use tempfile::TempDir;

fn shipped(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name);
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// The shipped T4-X scenario on a 5-site lattice with `count` path points.
fn small(name: &str, count: usize) -> Value {
    let mut s = shipped(name);
    s["geometry"]["n"] = json!(5);
    s["epsilon_path"]["count"] = json!(count);
    s
}

fn write_scenario(dir: &Path, file: &str, s: &Value) -> PathBuf {
    let p = dir.join(file);
    fs::write(&p, serde_json::to_string_pretty(s).unwrap()).unwrap();
    p
}

fn hymwall(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hymwall")).args(args).output().unwrap()
}

fn run(cmd: &str, scenario: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    hymwall(&args)
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn row<'a>(verdicts: &'a Value, check: &str) -> &'a Value {
    verdicts["rows"].as_array().unwrap().iter().find(|r| r["check"] == check).unwrap_or_else(|| panic!("no row {check}"))
}

fn rational(v: &Value) -> (i64, i64) {
    let s = v.as_str().unwrap();
    match s.split_once('/') {
        Some((p, q)) => (p.parse().unwrap(), q.parse().unwrap()),
        None => (s.parse().unwrap(), 1),
    }
}

#[test]
fn cone_on_t4x_has_one_wall_and_the_stable_half_plane() {
    let tmp = TempDir::new().unwrap();
    let scenario = write_scenario(tmp.path(), "s.json", &shipped("t4x.json"));
    let o = run("cone", &scenario, tmp.path(), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cone = read_json(&tmp.path().join("cone.json"));
    let walls = cone["walls"].as_array().unwrap();
    assert_eq!(walls.len(), 1);
    assert_eq!(walls[0]["primitive"], json!(["1", "-1"]));
    assert_eq!(walls[0]["components"], json!([0]));
    assert_eq!(cone["stable_region"], json!(["t1 - t2 > 0"]));
    assert_eq!(cone["empty_stable"], json!(false));
    let cls = cone["classifications"].as_array().unwrap();
    assert_eq!(cls.len(), 23);
    assert_eq!(cls[0]["verdict"], "stable");
    assert_eq!(cls[1]["verdict"], "semistable");
    assert_eq!(cls[1]["active_walls"], json!([0]));
    assert_eq!(cls[2]["verdict"], "unstable");
    // Every class, including the random ones, follows the sign of t1 − t2.
    for c in cls {
        let (a, b) = (rational(&c["theta"][0]), rational(&c["theta"][1]));
        let diff = a.0 * b.1 - b.0 * a.1;
        let expected = match diff.signum() {
            1 => "stable",
            0 => "semistable",
            _ => "unstable",
        };
        assert_eq!(c["verdict"], expected, "{c}");
    }
    let faces = cone["faces"].as_array().unwrap();
    assert!(faces.iter().any(|f| f["active"] == json!([]) && f["dim"] == 2));
    assert!(faces.iter().any(|f| f["active"] == json!([0]) && f["dim"] == 1));
    assert!(!cone["refinement"].as_array().unwrap().is_empty());
}

#[test]
fn cone_errors_and_degenerate_candidates() {
    let tmp = TempDir::new().unwrap();
    let mut s = shipped("t4x.json");
    s["candidates"] = json!([]);
    let o = run("cone", &write_scenario(tmp.path(), "empty.json", &s), tmp.path(), &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("empty"), "{}", stderr(&o));

    let mut s = shipped("t4x.json");
    s["candidates"][0]["rank"] = json!("one");
    let o = run("cone", &write_scenario(tmp.path(), "schema.json", &s), tmp.path(), &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("candidates[0].rank"), "{}", stderr(&o));

    let o = run("cone", &tmp.path().join("absent.json"), tmp.path(), &[]);
    assert_eq!(code(&o), 1);

    let mut s = shipped("t4x.json");
    s["candidates"].as_array_mut().unwrap().push(json!({"c1": [0, 0], "rank": 1}));
    let out = tmp.path().join("degenerate");
    let o = run("cone", &write_scenario(tmp.path(), "degenerate.json", &s), &out, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cone = read_json(&out.join("cone.json"));
    assert_eq!(cone["empty_stable"], json!(true));
    assert!(cone["walls"].as_array().unwrap().iter().any(|w| w["zero"] == json!(true)));
    assert_eq!(cone["stable_region"], json!([]));
    assert!(cone["classifications"].as_array().unwrap().iter().all(|c| c["verdict"] != "stable"));

    let o = run("cone", &write_scenario(tmp.path(), "ok.json", &shipped("t4x.json")), tmp.path(), &["--threads", "0"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn zero_length_path_gives_an_empty_report_set() {
    let tmp = TempDir::new().unwrap();
    let scenario = write_scenario(tmp.path(), "s.json", &small("t4x.json", 0));
    let o = run("all", &scenario, tmp.path(), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let names: Vec<String> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert!(!names.iter().any(|n| n.starts_with("flow_") || n.starts_with("traj_")), "{names:?}");
    assert!(names.contains(&"verdicts.csv".to_string()));
}

#[test]
fn flow_reports_are_byte_identical_across_runs_and_thread_counts() {
    let tmp = TempDir::new().unwrap();
    let scenario = write_scenario(tmp.path(), "s.json", &small("t4x.json", 2));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let oa = run("flow", &scenario, &a, &["--seed", "11", "--threads", "1"]);
    let ob = run("flow", &scenario, &b, &["--seed", "11", "--threads", "2"]);
    assert_eq!(code(&oa), 0, "{}", stderr(&oa));
    assert_eq!(code(&ob), 0, "{}", stderr(&ob));
    for name in ["flow_0.json", "flow_1.json", "traj_0.csv", "traj_1.csv", "op_inf_0.bin", "op_inf_1.bin"] {
        let (x, y) = (fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
        assert!(!x.is_empty() && x == y, "{name} differs");
    }
    let header = fs::read_to_string(a.join("traj_0.csv")).unwrap();
    assert!(header.starts_with("t,nu_norm,phi,b_norm,step,hym_residual\n"));
    let snap = LatticeField::read_snapshot(fs::File::open(a.join("op_inf_0.bin")).unwrap()).unwrap();
    assert_eq!((snap.n(), snap.rank(), snap.bidegree(), snap.valued()), (5, 2, Bidegree::ZERO_ONE, Valued::End));
    let record = read_json(&a.join("flow_0.json"));
    assert_eq!(record["predicted"], "stable");
    assert_eq!(record["status"], "converged");
    assert_eq!(record["snapshot"], "op_inf_0.bin");
}

#[test]
fn verify_reports_tampering_short_sweeps_and_missing_reports() {
    let tmp = TempDir::new().unwrap();
    let mut s = small("t4x.json", 4);
    s["flow"]["donaldson"] = json!(false);
    let scenario = write_scenario(tmp.path(), "s.json", &s);
    let out = tmp.path().join("out");
    let o = run("all", &scenario, &out, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let verdicts = read_json(&out.join("verdicts.json"));
    for check in ["nu_monotone", "orbit_identity", "stable_side_converges", "pairing_identity", "b_bound", "scaling", "wall_approach"] {
        assert_eq!(row(&verdicts, check)["status"], "pass", "{check}");
    }
    assert_eq!(row(&verdicts, "donaldson_decrease")["status"], "not_applicable");
    let csv = fs::read_to_string(out.join("verdicts.csv")).unwrap();
    assert!(csv.starts_with("criterion,check,status,measured,threshold,detail\n"));

    // Three points: the sweep rows report insufficient data.
    let mut three = s.clone();
    three["epsilon_path"]["count"] = json!(3);
    let o = run("verify", &write_scenario(tmp.path(), "three.json", &three), &out, &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let verdicts = read_json(&out.join("verdicts.json"));
    assert_eq!(row(&verdicts, "b_bound")["status"], "insufficient_data");
    assert_eq!(row(&verdicts, "scaling")["status"], "insufficient_data");

    // Raise ‖ν‖ in the middle of one trajectory.
    let path = out.join("traj_1.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    assert!(lines.len() > 4);
    let mut cells: Vec<String> = lines[3].split(',').map(String::from).collect();
    cells[1] = format!("{}", cells[1].parse::<f64>().unwrap() + 1.0);
    lines[3] = cells.join(",");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let o = run("verify", &scenario, &out, &[]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    let verdicts = read_json(&out.join("verdicts.json"));
    assert_eq!(row(&verdicts, "nu_monotone")["status"], "fail");
    assert_eq!(row(&verdicts, "orbit_identity")["status"], "pass");

    fs::remove_file(out.join("flow_2.json")).unwrap();
    let o = run("verify", &scenario, &out, &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("flow_2.json"), "{}", stderr(&o));
    let o = run("verify", &scenario, &tmp.path().join("nothing"), &[]);
    assert_eq!(code(&o), 1);
}

#[test]
fn unstable_side_runs_destabilize_along_the_wall_candidate() {
    let tmp = TempDir::new().unwrap();
    let mut s = small("t4x_unstable.json", 2);
    s["flow"]["donaldson"] = json!(false);
    let o = run("all", &write_scenario(tmp.path(), "s.json", &s), tmp.path(), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for k in 0..2 {
        let r = read_json(&tmp.path().join(format!("flow_{k}.json")));
        assert_eq!(r["predicted"], "unstable");
        assert_eq!(r["status"], "destabilized");
        assert_eq!(r["filtration_match"], json!(true));
        assert_eq!(r["destabilizer"]["blocks"][0]["components"], json!([0]));
        assert!(r.get("snapshot").is_none());
    }
    let verdicts = read_json(&tmp.path().join("verdicts.json"));
    assert_eq!(row(&verdicts, "unstable_side_destabilizes")["status"], "pass");
    assert_eq!(row(&verdicts, "stable_side_converges")["status"], "not_applicable");
}

#[test]
fn budget_and_solver_failures_have_their_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let mut s = small("t4x.json", 1);
    s["flow"]["max_steps"] = json!(2);
    let out = tmp.path().join("budget");
    let o = run("flow", &write_scenario(tmp.path(), "budget.json", &s), &out, &[]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert_eq!(read_json(&out.join("flow_0.json"))["status"], "budget_exceeded");

    let mut s = small("t4x.json", 1);
    s["start"]["amplitude"] = json!(0.6);
    s["flow"]["start_rule"] = json!(false);
    let out = tmp.path().join("solver");
    let o = run("all", &write_scenario(tmp.path(), "solver.json", &s), &out, &[]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let r = read_json(&out.join("flow_0.json"));
    assert_eq!(r["status"], "error");
    assert!(r["error"].as_str().unwrap().contains("ball"), "{r}");

    let mut s = small("t4x.json", 1);
    s["geometry"]["n"] = json!(4);
    let o = run("flow", &write_scenario(tmp.path(), "even.json", &s), &tmp.path().join("even"), &[]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}
