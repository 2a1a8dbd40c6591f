use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use semqp::commands::{simulate_with, SimOptions};
use semqp::modelfile::ModelFile;
use semqp::report::{InputEcho, ModelEcho};
use semqp::ExitKind;
use semqp_core::montecarlo::SimConfig;
use semqp_core::{build_variance_qp, moments};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn semqp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semqp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn num(v: &Value) -> f64 {
    v.as_f64().unwrap_or_else(|| panic!("not a number: {v}"))
}

fn write(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(value).unwrap()).unwrap();
    p
}

fn journal_without_bounds() -> Value {
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(fixture("journal.json")).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("bounds");
    v
}

#[test]
fn analyze_journal() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("a.json");
    let out = semqp(&["analyze", fixture("journal.json").to_str().unwrap(), "--out", out_path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = json(&out_path);
    let avoid = &r["effects"]["yz_avoid"]["values"][0];
    assert!((num(&avoid[0]) - 0.1).abs() < 1e-15);
    assert!((num(&avoid[1]) - 1.0).abs() < 1e-15);
    assert!((num(&r["moments"]["var_y"]["values"][0][0]) - 0.301).abs() < 1e-15);
    let ln = f64::ln;
    let mean_y = ln(10.0) + ln(100.0) + 0.1 * ln(10.0) + ln(0.3);
    let got = num(&r["moments"]["mean_y"][0]["value"]);
    assert!((got - mean_y).abs() < 1e-12, "{got} vs {mean_y}");
    assert!((got.exp() - 377.6776).abs() < 1e-3);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("0.301"));
}

#[test]
fn parse_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = journal_without_bounds();
    v["colour"] = Value::from("blue");
    let p = write(dir.path(), "unknown.json", &v);
    let out = semqp(&["analyze", p.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("colour"), "{}", stderr(&out));

    let p = dir.path().join("broken.json");
    std::fs::write(&p, "{\"variables\": [").unwrap();
    assert_eq!(code(&semqp(&["analyze", p.to_str().unwrap()])), 2);
    assert_eq!(code(&semqp(&["analyze", "/no/such/file.json"])), 2);
    assert_eq!(code(&semqp(&["analyze"])), 2);
    assert_eq!(code(&semqp(&["frobnicate"])), 2);
    let out = semqp(&[
        "optimize-variance",
        fixture("journal.json").to_str().unwrap(),
        "--weights",
        "y:1",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn validation_errors_exit_3() {
    let out = semqp(&["analyze", fixture("cycle.json").to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    let msg = stderr(&out);
    for name in ["a", "b", "c"] {
        assert!(msg.contains(&format!("{name} ->")), "{msg}");
    }

    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "empty.json", &serde_json::json!({"variables": []}));
    let out = semqp(&["analyze", p.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("variables"));

    let mut v = journal_without_bounds();
    v["edges"][0]["to"] = Value::from("nowhere");
    let p = write(dir.path(), "dangling.json", &v);
    let out = semqp(&["analyze", p.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("edges[0].to"), "{}", stderr(&out));

    let mut v = journal_without_bounds();
    v["bounds"] = serde_json::json!({"coef": [{"from": "x", "to": "y", "lower": 0}]});
    let p = write(dir.path(), "badbound.json", &v);
    let out = semqp(&["optimize-variance", p.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("bounds.coef[0]"), "{}", stderr(&out));

    let out = semqp(&[
        "optimize-variance",
        fixture("journal.json").to_str().unwrap(),
        "--weights",
        "y=-1",
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn variance_with_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("v.json");
    let out = semqp(&[
        "optimize-variance",
        fixture("journal.json").to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = json(&out_path);
    let alpha = r["solution"]["alpha"].as_array().unwrap();
    assert!((num(&alpha[0]["value"]) + 0.08).abs() < 1e-9);
    assert!((num(&alpha[1]["value"]) + 0.20).abs() < 1e-12);
    assert_eq!(alpha[1]["state"], "lower");
    assert_eq!(alpha[0]["upper"], Value::Null);
    assert!((num(&r["variance"][0]["before"]) - 0.301).abs() < 1e-12);
    assert!((num(&r["variance"][0]["after"]) - 0.264).abs() < 1e-12);
    assert_eq!(r["solution"]["kkt"]["satisfied"], true);

    // the JSON carries exactly the library's numbers
    let problem = ModelFile::load(&fixture("journal.json")).unwrap().problem(false).unwrap();
    let qp = build_variance_qp(&problem.model, &["y"], None, &problem.coef_bounds).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            assert_eq!(num(&r["qp"]["hessian"][i][j]), qp.hessian[(i, j)]);
        }
        assert_eq!(num(&r["qp"]["linear"][i]), qp.linear[i]);
    }
}

#[test]
fn variance_fixed_by_default() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "fixed.json", &journal_without_bounds());
    let out_path = dir.path().join("v.json");
    let out = semqp(&["optimize-variance", p.to_str().unwrap(), "--out", out_path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = json(&out_path);
    for a in r["solution"]["alpha"].as_array().unwrap() {
        assert_eq!(num(&a["value"]), 0.0);
        assert_eq!(a["state"], "fixed");
    }
    assert!((num(&r["variance"][0]["after"]) - 0.301).abs() < 1e-12);

    let out = semqp(&[
        "optimize-variance",
        p.to_str().unwrap(),
        "--allow-unbounded",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = json(&out_path);
    let alpha = r["solution"]["alpha"].as_array().unwrap();
    assert!(num(&alpha[0]["value"]).abs() < 1e-12);
    assert!((num(&alpha[1]["value"]) + 1.0).abs() < 1e-12);
    assert!((num(&r["variance"][0]["after"]) - 0.2).abs() < 1e-12);
    // the through-treatment effect cancels the avoiding one
    let yz = &r["effects_after"]["yz"]["values"][0];
    assert!(num(&yz[0]).abs() < 1e-12 && num(&yz[1]).abs() < 1e-12);
}

#[test]
fn two_step_flow() {
    let dir = tempfile::tempdir().unwrap();
    let v_path = dir.path().join("v.json");
    let m_path = dir.path().join("m.json");
    let journal = fixture("journal.json");
    let out = semqp(&["optimize-variance", journal.to_str().unwrap(), "--out", v_path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let out = semqp(&[
        "optimize-mean",
        journal.to_str().unwrap(),
        "--apply-coefficients",
        v_path.to_str().unwrap(),
        "--out",
        m_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = json(&m_path);
    let mu = num(&r["solution"]["alpha"][0]["value"]);
    assert!((mu - (-0.6931472)).abs() < 1e-6);
    assert!((mu - 0.5f64.ln()).abs() < 1e-15);
    let t = &r["targets"][0];
    assert_eq!(t["scale"], "linear");
    assert!((num(&t["linear_before"]) - 119.4322).abs() < 1e-3);
    assert!((num(&t["linear_after"]) - 199.0536).abs() < 1e-3);
    assert!((num(&t["model_value"]) - 200f64.ln()).abs() < 1e-15);
    // variance is untouched by the intercept
    assert!((num(&r["moments_after"]["var_y"]["values"][0][0]) - 0.264).abs() < 1e-12);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("199.054"), "{text}");
}

/// Minimises a unimodal function on `[lo, hi]` by a grid scan followed by
/// golden-section refinement.
fn grid_golden(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let n = 2000;
    let step = (hi - lo) / n as f64;
    let best = (0..=n).min_by(|&a, &b| f(lo + a as f64 * step).total_cmp(&f(lo + b as f64 * step))).unwrap();
    let (mut a, mut b) = ((lo + (best as f64 - 1.0) * step).max(lo), (lo + (best as f64 + 1.0) * step).min(hi));
    let r = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    (a + b) / 2.0
}

#[test]
fn mean_without_coefficients_matches_1d_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let m_path = dir.path().join("m.json");
    let out = semqp(&["optimize-mean", fixture("journal.json").to_str().unwrap(), "--out", m_path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = json(&m_path);
    let mu = num(&r["solution"]["alpha"][0]["value"]);
    // E[Y] = mu_y + mu_x + mu_z2 + 0.1 mu_z1 with the coefficients at zero
    let ln = f64::ln;
    let mean = |m: f64| ln(10.0) + m + ln(100.0) + 0.1 * ln(10.0);
    let oracle = grid_golden(|m| (mean(m) - ln(200.0)).powi(2), -10.0, ln(0.5));
    assert!((mu - oracle).abs() < 1e-6, "{mu} vs {oracle}");
    assert!(mu < ln(0.5));
    assert!((num(&r["targets"][0]["linear_after"]) - 200.0).abs() < 1e-9);
}

#[test]
fn mean_target_already_met() {
    let dir = tempfile::tempdir().unwrap();
    let m_path = dir.path().join("m.json");
    let current = moments(&ModelFile::load(&fixture("journal.json")).unwrap().model().unwrap())
        .unwrap()
        .mean_y[0];
    let p = write(dir.path(), "open.json", &journal_without_bounds());
    let out = semqp(&[
        "optimize-mean",
        p.to_str().unwrap(),
        "--allow-unbounded",
        "--targets",
        &format!("y={current}"),
        "--out",
        m_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = json(&m_path);
    assert!(num(&r["solution"]["objective"]).abs() < 1e-12);
    assert!((num(&r["solution"]["alpha"][0]["value"]) - 0.3f64.ln()).abs() < 1e-12);
}

#[test]
fn mean_preconditions() {
    let journal = fixture("journal.json");
    let out = semqp(&["optimize-mean", journal.to_str().unwrap(), "--targets", "y=0:linear"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("positive"));
    let out = semqp(&["optimize-mean", journal.to_str().unwrap(), "--targets", "q=1"]);
    assert_eq!(code(&out), 3);
    let dir = tempfile::tempdir().unwrap();
    let mut v = journal_without_bounds();
    v.as_object_mut().unwrap().remove("targets");
    let p = write(dir.path(), "notargets.json", &v);
    assert_eq!(code(&semqp(&["optimize-mean", p.to_str().unwrap()])), 3);
    let bad = write(dir.path(), "coef.json", &serde_json::json!({"coefficients": [{"from": "x", "to": "y", "coef": 1}]}));
    let out = semqp(&["optimize-mean", journal.to_str().unwrap(), "--apply-coefficients", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    let out = semqp(&["optimize-mean", journal.to_str().unwrap(), "--apply-coefficients", "/no/such.json"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn paths_example3() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("p.json");
    let ex = fixture("example3.json");
    let out = semqp(&["paths", ex.to_str().unwrap(), "--from", "z1", "--to", "y2", "--out", out_path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = json(&out_path);
    let p = &r["paths"];
    assert_eq!(p["rows"].as_array().unwrap().len(), 8);
    // through: z1->z2->x2->y2, z1->x1->x2->y2, z1->x1->y1->y2, z1->x1->y2, z1->x2->y2
    let through = 0.2 * 0.5 * 0.35 + 0.3 * 0.6 * 0.35 + 0.3 * 0.8 * -0.45 + 0.3 * 1.2 + -0.4 * 0.35;
    // avoid: z1->y2, z1->z2->y2, z1->y1->y2
    let avoid = 0.9 + 0.2 * -1.1 + -0.7 * -0.45;
    assert!((num(&p["through"]) - through).abs() < 1e-12);
    assert!((num(&p["avoid"]) - avoid).abs() < 1e-12);
    assert!((num(&p["total"]) - through - avoid).abs() < 1e-12);

    let out = semqp(&["paths", ex.to_str().unwrap(), "--from", "z1", "--to", "z1"]);
    assert_eq!(code(&out), 3);
    let out = semqp(&["paths", ex.to_str().unwrap(), "--from", "z1", "--to", "nope"]);
    assert_eq!(code(&out), 3);
    let out = semqp(&["paths", ex.to_str().unwrap(), "--from", "y2", "--to", "z1", "--out", out_path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let r = json(&out_path);
    assert_eq!(r["paths"]["rows"].as_array().unwrap().len(), 0);
    assert_eq!(num(&r["paths"]["total"]), 0.0);
}

#[test]
fn path_explosion_exits_4() {
    // complete DAG on 23 variables: 2^21 paths from first to last
    let n = 23;
    let variables: Vec<Value> = (0..n)
        .map(|i| serde_json::json!({"name": format!("v{i:02}"), "error_variance": 1}))
        .collect();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            edges.push(serde_json::json!({"from": format!("v{a:02}"), "to": format!("v{b:02}"), "coef": 0.5}));
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "dense.json",
        &serde_json::json!({"variables": variables, "edges": edges, "treatments": ["v01"]}),
    );
    let out = semqp(&["paths", p.to_str().unwrap(), "--from", "v00", "--to", "v22"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn simulate_journal() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let j = fixture("journal.json");
    let args = |p: &Path| {
        vec![
            "simulate".to_string(),
            j.to_str().unwrap().to_string(),
            "--n".into(),
            "1000000".into(),
            "--seed".into(),
            "17".into(),
            "--out".into(),
            p.to_str().unwrap().to_string(),
        ]
    };
    let run = |p: &Path| {
        let v = args(p);
        semqp(&v.iter().map(|s| s.as_str()).collect::<Vec<_>>())
    };
    let out = run(&a);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(code(&run(&b)), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let r = json(&a);
    assert_eq!(r["simulation"]["passed"], true);
    assert_eq!(r["simulation"]["n_samples"], 1_000_000);
}

#[test]
fn simulate_preconditions_and_mismatch() {
    let j = fixture("journal.json");
    assert_eq!(code(&semqp(&["simulate", j.to_str().unwrap(), "--n", "1"])), 3);
    assert_eq!(code(&semqp(&["simulate", j.to_str().unwrap(), "--n", "100", "--z", "0"])), 3);
    // an absurdly strict threshold fails, and the report is still written
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("s.json");
    let out = semqp(&[
        "simulate",
        j.to_str().unwrap(),
        "--n",
        "1000",
        "--z",
        "1e-9",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 5);
    assert_eq!(json(&out_path)["simulation"]["passed"], false);
}

#[test]
fn corrupted_analytic_moments_are_caught() {
    let model = ModelFile::load(&fixture("journal.json")).unwrap().model().unwrap();
    let mut analytic = moments(&model).unwrap();
    analytic.var_y[(0, 0)] *= 1.02;
    let opts = SimOptions {
        config: SimConfig::new(1_000_000, 3),
        z: 4.0,
    };
    let input = InputEcho {
        model_path: "journal.json".into(),
        flags: Default::default(),
        model: ModelEcho::of(&model),
    };
    let outcome = simulate_with(&model, &opts, &analytic, input.clone()).unwrap();
    assert_eq!(outcome.status, ExitKind::Mismatch);
    let sim = outcome.report.simulation.unwrap();
    let failed: Vec<_> = sim.entries.iter().filter(|e| !e.passed).collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].block, "var_y");

    let clean = simulate_with(&model, &opts, &moments(&model).unwrap(), input).unwrap();
    assert_eq!(clean.status, ExitKind::Ok);
}

#[test]
fn reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let j = fixture("journal.json");
    let mut bytes = Vec::new();
    for k in 0..2 {
        let p = dir.path().join(format!("v{k}.json"));
        let out = semqp(&["optimize-variance", j.to_str().unwrap(), "--out", p.to_str().unwrap()]);
        assert_eq!(code(&out), 0);
        bytes.push((std::fs::read(&p).unwrap(), out.stdout));
    }
    assert_eq!(bytes[0], bytes[1]);
}
