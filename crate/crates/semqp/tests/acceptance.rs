//! Acceptance criteria, one line each, with tolerances and time limits.
//! Run with `cargo test -p semqp --test acceptance`.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use semqp::modelfile::ModelFile;
use semqp::simulate_parallel;
use semqp_core::effects::{apply_intervention, path_totals, Intervention};
use semqp_core::linalg::{self, assemble_block_lower, block_lower_inverse, inverse, kron, Matrix};
use semqp_core::montecarlo::{compare, SimConfig};
use semqp_core::testkit::{brute_force_box_qp, ModelGen};
use semqp_core::{
    build_mean_qp, build_variance_qp, enumerate_path_effects, moments, offset_certificate, solve_box_qp,
    total_effects, Bounds,
};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg)
    }
}

fn journal() -> semqp::modelfile::Problem {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/journal.json");
    ModelFile::load(&path).expect("fixture loads").problem(false).expect("fixture validates")
}

fn variance_optimum() -> Check {
    let p = journal();
    let qp = build_variance_qp(&p.model, &["y"], None, &p.coef_bounds).map_err(|e| e.to_string())?;
    let sol = solve_box_qp(&qp).map_err(|e| e.to_string())?;
    let a = &sol.alpha;
    ensure(
        (a[0] + 0.08).abs() <= 1e-6 && (a[1] + 0.20).abs() <= 1e-6,
        format!("alpha = {a:?}"),
    )?;
    let before = moments(&p.model).map_err(|e| e.to_string())?.var_y[(0, 0)];
    let after_model = apply_intervention(&p.model, &Intervention::coefficients(linalg::unvec(a, 1, 2)))
        .map_err(|e| e.to_string())?;
    let after = moments(&after_model).map_err(|e| e.to_string())?.var_y[(0, 0)];
    ensure((before - 0.301).abs() <= 1e-9, format!("pre var {before}"))?;
    ensure((after - 0.264).abs() <= 1e-9, format!("post var {after}"))?;
    Ok(format!("alpha = ({:.9}, {:.9}), var {before:.12} -> {after:.12}", a[0], a[1]))
}

fn variance_qp_matrices() -> Check {
    let p = journal();
    let qp = build_variance_qp(&p.model, &["y"], None, &p.coef_bounds).map_err(|e| e.to_string())?;
    let h = Matrix::from_rows(&[[1.0, 0.1], [0.1, 1.01]]).scale(0.1);
    let g = [0.2 * 0.1, 0.2 * 1.01];
    let dh = qp.hessian.max_abs_diff(&h);
    let dg = (qp.linear[0] - g[0]).abs().max((qp.linear[1] - g[1]).abs());
    ensure(dh <= 1e-12 && dg <= 1e-12, format!("|dH| = {dh:e}, |dg| = {dg:e}"))?;
    Ok(format!("|dH| = {dh:.1e}, |dg| = {dg:.1e}"))
}

fn mean_adjustment() -> Check {
    let p = journal();
    let after_var = apply_intervention(
        &p.model,
        &Intervention::coefficients(Matrix::from_rows(&[[-0.08, -0.20]])),
    )
    .map_err(|e| e.to_string())?;
    let target = p.targets[0].to_mean_target();
    ensure(
        (target.value - 200f64.ln()).abs() < 1e-15,
        format!("target {} is not ln 200", target.value),
    )?;
    let qp = build_mean_qp(&after_var, &[target], &p.intercept_bounds).map_err(|e| e.to_string())?;
    let sol = solve_box_qp(&qp).map_err(|e| e.to_string())?;
    let mu = sol.alpha[0];
    let before = moments(&after_var).map_err(|e| e.to_string())?.mean_y[0].exp();
    let adjusted = apply_intervention(&after_var, &Intervention::intercepts(sol.alpha.clone())).map_err(|e| e.to_string())?;
    let after = moments(&adjusted).map_err(|e| e.to_string())?.mean_y[0].exp();
    ensure((mu + 0.6931472).abs() <= 1e-6, format!("mu = {mu}"))?;
    ensure((before - 119.4322).abs() <= 1e-3, format!("exp E[Y] before = {before}"))?;
    ensure((after - 199.0536).abs() <= 1e-3, format!("exp E[Y] after = {after}"))?;
    Ok(format!("mu = {mu:.7}, exp E[Y] {before:.4} -> {after:.4}"))
}

fn decomposition() -> Check {
    let mut gen = ModelGen::new(0xACCE_0004);
    let (mut worst_split, mut worst_path) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let n = gen.int(2, 8);
        let g = gen.graph(n, 0.5);
        let m = gen.partition(&g);
        let te = total_effects(&m).map_err(|e| e.to_string())?;
        worst_split = worst_split.max(te.yz.max_abs_diff(&(&te.yz_through + &te.yz_avoid)));
        for (j, z) in m.covariates.iter().enumerate() {
            for (i, y) in m.outputs.iter().enumerate() {
                let paths = enumerate_path_effects(&m, z, y).map_err(|e| e.to_string())?;
                let (through, avoid, total) = path_totals(&paths);
                worst_path = worst_path
                    .max((total - te.yz[(i, j)]).abs())
                    .max((through - te.yz_through[(i, j)]).abs())
                    .max((avoid - te.yz_avoid[(i, j)]).abs());
            }
        }
        for (j, x) in m.treatments.iter().enumerate() {
            for (i, y) in m.outputs.iter().enumerate() {
                let (_, _, total) = path_totals(&enumerate_path_effects(&m, x, y).map_err(|e| e.to_string())?);
                worst_path = worst_path.max((total - te.yx[(i, j)]).abs());
            }
        }
    }
    ensure(worst_split <= 1e-12, format!("split error {worst_split:e}"))?;
    ensure(worst_path <= 1e-10, format!("path error {worst_path:e}"))?;
    Ok(format!("200 models, split error {worst_split:.1e}, path error {worst_path:.1e}"))
}

fn monte_carlo() -> Check {
    let mut models = vec![journal().model];
    let mut gen = ModelGen::new(0xACCE_0005);
    models.extend((0..10).map(|_| gen.model(6)));
    let mut worst = 0.0f64;
    for (k, m) in models.iter().enumerate() {
        let analytic = moments(m).map_err(|e| e.to_string())?;
        let sampled = simulate_parallel(m, &SimConfig::new(1_000_000, 1000 + k as u64)).map_err(|e| e.to_string())?;
        let r = compare(&analytic, &sampled, 4.0);
        worst = worst.max(r.max_z);
        if !r.passed {
            let bad: Vec<String> = r
                .failures()
                .map(|e| format!("{}[{},{}] z={:.2}", e.block, e.row, e.col, e.z))
                .collect();
            return Err(format!("model {k}: {}", bad.join(", ")));
        }
    }
    Ok(format!("11 models at N = 1e6, max z {worst:.2}"))
}

fn solver_vs_brute_force() -> Check {
    let mut gen = ModelGen::new(0xACCE_0006);
    let mut worst = 0.0f64;
    for k in 0..100 {
        let d = gen.int(1, 4);
        let qp = gen.box_qp(d);
        let sol = solve_box_qp(&qp).map_err(|e| format!("qp {k}: {e}"))?;
        let (_, best) = brute_force_box_qp(&qp);
        worst = worst.max((sol.objective - best).abs());
        ensure(sol.kkt.satisfied, format!("qp {k}: KKT {:?}", sol.kkt))?;
    }
    ensure(worst <= 1e-8, format!("objective gap {worst:e}"))?;
    Ok(format!("100 problems, objective gap {worst:.1e}, KKT satisfied"))
}

fn offset_certificates() -> Check {
    let mut gen = ModelGen::new(0xACCE_0007);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < 50 {
        let (nz, nx) = (gen.int(1, 4), gen.int(1, 3));
        let m = gen.block_model(nz, nx, 1);
        let te = total_effects(&m).map_err(|e| e.to_string())?;
        if te.yx.row(0).iter().all(|v| v.abs() < 1e-3) {
            continue;
        }
        let qp = build_variance_qp(&m, &["y1"], None, &Bounds::unbounded(nx, nz)).map_err(|e| e.to_string())?;
        let sol = solve_box_qp(&qp).map_err(|e| e.to_string())?;
        let cert = offset_certificate(&m, &qp, &sol, "y1").map_err(|e| e.to_string())?;
        worst = worst.max(linalg::max_abs(&cert));
        done += 1;
    }
    ensure(worst <= 1e-8, format!("max |T_yz| after {worst:e}"))?;
    Ok(format!("50 models, max |T_yz| after {worst:.1e}"))
}

fn vec_kron() -> Check {
    let mut gen = ModelGen::new(0xACCE_0008);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (p, q, r, s) = (gen.int(1, 6), gen.int(1, 6), gen.int(1, 6), gen.int(1, 6));
        let b = gen.matrix(p, q, -1.0, 1.0);
        let d = gen.matrix(q, r, -1.0, 1.0);
        let c = gen.matrix(r, s, -1.0, 1.0);
        let lhs = linalg::vec(&(&(&b * &d) * &c));
        let rhs = kron(&c.transpose(), &b).mul_vec(&linalg::vec(&d));
        for (x, y) in lhs.iter().zip(&rhs) {
            worst = worst.max((x - y).abs());
        }
    }
    ensure(worst <= 1e-10, format!("max error {worst:e}"))?;
    Ok(format!("100 triples, max error {worst:.1e}"))
}

fn block_inverse() -> Check {
    let mut gen = ModelGen::new(0xACCE_0009);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = [gen.int(1, 4), gen.int(1, 4), gen.int(1, 4)];
        let mut diag = |k: usize| &gen.matrix(n[k], n[k], -0.5, 0.5) + &Matrix::identity(n[k]).scale(2.5);
        let (b11, b22, b33) = (diag(0), diag(1), diag(2));
        let b21 = gen.matrix(n[1], n[0], -1.0, 1.0);
        let b31 = gen.matrix(n[2], n[0], -1.0, 1.0);
        let b32 = gen.matrix(n[2], n[1], -1.0, 1.0);
        let dense = inverse(&assemble_block_lower(&b11, &b21, &b22, &b31, &b32, &b33)).map_err(|e| e.to_string())?;
        let blocks = block_lower_inverse(&b11, &b21, &b22, &b31, &b32, &b33).map_err(|e| e.to_string())?;
        worst = worst.max(blocks.assemble().max_abs_diff(&dense));
    }
    ensure(worst <= 1e-9, format!("max error {worst:e}"))?;
    Ok(format!("100 matrices, max error {worst:.1e}"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check, u64); 9] = [
        ("variance optimum on the journal model", variance_optimum, 1),
        ("variance QP matrices", variance_qp_matrices, 1),
        ("mean adjustment to 200", mean_adjustment, 1),
        ("total-effect decomposition and paths", decomposition, 30),
        ("moments vs Monte Carlo", monte_carlo, 120),
        ("box QP solver vs brute force", solver_vs_brute_force, 30),
        ("offset certificate", offset_certificates, 10),
        ("vec/kron identity", vec_kron, 5),
        ("block lower-triangular inverse", block_inverse, 5),
    ];
    let mut failed = 0;
    for (k, (name, check, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(*limit);
        let (status, detail) = match (&result, in_time) {
            (Ok(d), true) => ("PASS", d.clone()),
            (Ok(d), false) => ("FAIL", format!("{d}; too slow")),
            (Err(e), _) => ("FAIL", e.clone()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!(
            "criterion {} {status}: {name}: {detail} [{:.3} s, limit {limit} s]",
            k + 1,
            elapsed.as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
