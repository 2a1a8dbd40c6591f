//! Run reports: a JSON document with full precision and an aligned
//! plain-text summary at 6 significant digits.
//!
//! JSON numbers are written in shortest round-trip form, so parsing a report
//! gives back the exact `f64` values. Infinite bounds are written as `null`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use semqp_core::effects::{Moments, PathEffect, TotalEffects};
use semqp_core::montecarlo::{CompareReport, SampleMoments};
use semqp_core::qp::BoundState;
use semqp_core::{BoxQp, KktReport, Matrix, QpSolution, SemModel};

use crate::modelfile::{EdgeSpec, Scale};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl LabeledMatrix {
    pub fn new(rows: &[String], cols: &[String], m: &Matrix) -> Self {
        LabeledMatrix {
            rows: rows.to_vec(),
            cols: cols.to_vec(),
            values: m.to_rows(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Named {
    pub name: String,
    pub value: f64,
}

fn named(names: &[String], values: &[f64]) -> Vec<Named> {
    names
        .iter()
        .zip(values)
        .map(|(n, v)| Named {
            name: n.clone(),
            value: *v,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelEcho {
    pub covariates: Vec<String>,
    pub treatments: Vec<String>,
    pub outputs: Vec<String>,
    pub edges: Vec<EdgeSpec>,
    pub intercepts: Vec<Named>,
    pub error_cov: LabeledMatrix,
}

impl ModelEcho {
    pub fn of(model: &SemModel) -> Self {
        let names: Vec<String> = model.names().iter().map(|s| s.to_string()).collect();
        let a = model.full_coefficients();
        let mut edges = Vec::new();
        for j in 0..a.cols() {
            for i in 0..a.rows() {
                if a[(i, j)] != 0.0 {
                    edges.push(EdgeSpec {
                        from: names[j].clone(),
                        to: names[i].clone(),
                        coef: a[(i, j)],
                    });
                }
            }
        }
        ModelEcho {
            covariates: model.covariates.clone(),
            treatments: model.treatments.clone(),
            outputs: model.outputs.clone(),
            edges,
            intercepts: named(&names, &model.full_intercepts()),
            error_cov: LabeledMatrix::new(&names, &names, &model.full_error_cov()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputEcho {
    pub model_path: String,
    pub flags: BTreeMap<String, String>,
    pub model: ModelEcho,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectsReport {
    pub zz: LabeledMatrix,
    pub xz: LabeledMatrix,
    pub xx: LabeledMatrix,
    pub yz: LabeledMatrix,
    pub yz_through: LabeledMatrix,
    pub yz_avoid: LabeledMatrix,
    pub yx: LabeledMatrix,
    pub yy: LabeledMatrix,
}

impl EffectsReport {
    pub fn of(model: &SemModel, te: &TotalEffects) -> Self {
        let (z, x, y) = (&model.covariates, &model.treatments, &model.outputs);
        EffectsReport {
            zz: LabeledMatrix::new(z, z, &te.zz),
            xz: LabeledMatrix::new(x, z, &te.xz),
            xx: LabeledMatrix::new(x, x, &te.xx),
            yz: LabeledMatrix::new(y, z, &te.yz),
            yz_through: LabeledMatrix::new(y, z, &te.yz_through),
            yz_avoid: LabeledMatrix::new(y, z, &te.yz_avoid),
            yx: LabeledMatrix::new(y, x, &te.yx),
            yy: LabeledMatrix::new(y, y, &te.yy),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentsReport {
    pub mean_z: Vec<Named>,
    pub mean_x: Vec<Named>,
    pub mean_y: Vec<Named>,
    pub var_z: LabeledMatrix,
    pub var_x: LabeledMatrix,
    pub var_y: LabeledMatrix,
    pub cov_xz: LabeledMatrix,
}

impl MomentsReport {
    pub fn of(model: &SemModel, m: &Moments) -> Self {
        let (z, x, y) = (&model.covariates, &model.treatments, &model.outputs);
        MomentsReport {
            mean_z: named(z, &m.mean_z),
            mean_x: named(x, &m.mean_x),
            mean_y: named(y, &m.mean_y),
            var_z: LabeledMatrix::new(z, z, &m.var_z),
            var_x: LabeledMatrix::new(x, x, &m.var_x),
            var_y: LabeledMatrix::new(y, y, &m.var_y),
            cov_xz: LabeledMatrix::new(x, z, &m.cov_xz),
        }
    }

    pub fn of_sample(model: &SemModel, s: &SampleMoments) -> Self {
        let m = Moments {
            mean_z: s.mean_z.clone(),
            mean_x: s.mean_x.clone(),
            mean_y: s.mean_y.clone(),
            var_z: s.var_z.clone(),
            var_x: s.var_x.clone(),
            var_y: s.var_y.clone(),
            cov_xz: s.cov_xz.clone(),
        };
        Self::of(model, &m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QpReport {
    pub labels: Vec<String>,
    pub hessian: Vec<Vec<f64>>,
    pub linear: Vec<f64>,
    pub constant: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl QpReport {
    pub fn of(qp: &BoxQp) -> Self {
        QpReport {
            labels: qp.labels.clone(),
            hessian: qp.hessian.to_rows(),
            linear: qp.linear.clone(),
            constant: qp.constant,
            lower: qp.lower.clone(),
            upper: qp.upper.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktSection {
    pub stationarity_residual: f64,
    pub primal_violation: f64,
    pub dual_violation: f64,
    pub complementarity: f64,
    pub satisfied: bool,
}

impl KktSection {
    pub fn of(k: &KktReport) -> Self {
        KktSection {
            stationarity_residual: k.stationarity_residual,
            primal_violation: k.primal_violation,
            dual_violation: k.dual_violation,
            complementarity: k.complementarity,
            satisfied: k.satisfied,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolutionEntry {
    pub label: String,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub state: &'static str,
    pub lambda_lower: f64,
    pub lambda_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolutionReport {
    pub alpha: Vec<SolutionEntry>,
    pub objective: f64,
    pub iterations: usize,
    pub kkt: KktSection,
}

fn state_name(s: BoundState) -> &'static str {
    match s {
        BoundState::Free => "free",
        BoundState::Lower => "lower",
        BoundState::Upper => "upper",
        BoundState::Fixed => "fixed",
    }
}

impl SolutionReport {
    pub fn of(qp: &BoxQp, sol: &QpSolution) -> Self {
        let alpha = (0..qp.dim())
            .map(|i| SolutionEntry {
                label: qp.labels[i].clone(),
                value: sol.alpha[i],
                lower: qp.lower[i],
                upper: qp.upper[i],
                state: state_name(sol.active[i]),
                lambda_lower: sol.lambda_lower[i],
                lambda_upper: sol.lambda_upper[i],
            })
            .collect();
        SolutionReport {
            alpha,
            objective: sol.objective,
            iterations: sol.iterations,
            kkt: KktSection::of(&sol.kkt),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceRow {
    pub output: String,
    pub weight: f64,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterceptRow {
    pub treatment: String,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TargetRow {
    pub output: String,
    pub scale: Scale,
    /// As declared.
    pub value: f64,
    /// On the model's scale.
    pub model_value: f64,
    pub weight: f64,
    pub mean_before: f64,
    pub mean_after: f64,
    /// `exp` of the means, for linear-scale targets.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linear_before: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linear_after: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathRow {
    pub path: Vec<String>,
    pub effect: f64,
    pub through_treatment: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathsReport {
    pub from: String,
    pub to: String,
    pub rows: Vec<PathRow>,
    pub through: f64,
    pub avoid: f64,
    pub total: f64,
}

impl PathsReport {
    pub fn of(from: &str, to: &str, paths: &[PathEffect]) -> Self {
        let (through, avoid, total) = semqp_core::effects::path_totals(paths);
        PathsReport {
            from: from.to_string(),
            to: to.to_string(),
            rows: paths
                .iter()
                .map(|p| PathRow {
                    path: p.path.clone(),
                    effect: p.effect,
                    through_treatment: p.through_treatment,
                })
                .collect(),
            through,
            avoid,
            total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub block: &'static str,
    pub row: String,
    pub col: Option<String>,
    pub analytic: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub n_samples: usize,
    pub seed: u64,
    pub antithetic: bool,
    pub threshold: f64,
    pub passed: bool,
    pub max_z: f64,
    pub sampled: MomentsReport,
    pub entries: Vec<CompareRow>,
}

impl SimulationReport {
    pub fn of(model: &SemModel, s: &SampleMoments, cmp: &CompareReport, seed: u64, antithetic: bool) -> Self {
        let block_names = |block: &str| -> (&[String], &[String]) {
            match block {
                "mean_z" | "var_z" => (&model.covariates, &model.covariates),
                "mean_x" | "var_x" => (&model.treatments, &model.treatments),
                "cov_xz" => (&model.treatments, &model.covariates),
                _ => (&model.outputs, &model.outputs),
            }
        };
        let entries = cmp
            .entries
            .iter()
            .map(|e| {
                let (rows, cols) = block_names(e.block);
                CompareRow {
                    block: e.block,
                    row: rows[e.row].clone(),
                    col: (!e.block.starts_with("mean")).then(|| cols[e.col].clone()),
                    analytic: e.analytic,
                    estimate: e.estimate,
                    std_error: e.std_error,
                    z: e.z,
                    passed: e.passed,
                }
            })
            .collect();
        SimulationReport {
            n_samples: s.n_samples,
            seed,
            antithetic,
            threshold: cmp.threshold,
            passed: cmp.passed,
            max_z: cmp.max_z,
            sampled: MomentsReport::of_sample(model, s),
            entries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub command: &'static str,
    pub input: InputEcho,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effects: Option<EffectsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effects_after: Option<EffectsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moments: Option<MomentsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moments_after: Option<MomentsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qp: Option<QpReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solution: Option<SolutionReport>,
    /// Covariate-to-treatment coefficients after the intervention.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<EdgeSpec>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance: Option<Vec<VarianceRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intercepts: Option<Vec<InterceptRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<TargetRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<PathsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationReport>,
}

impl Report {
    pub fn new(command: &'static str, input: InputEcho) -> Self {
        Report {
            command,
            input,
            effects: None,
            effects_after: None,
            moments: None,
            moments_after: None,
            qp: None,
            solution: None,
            coefficients: None,
            variance: None,
            intercepts: None,
            targets: None,
            paths: None,
            simulation: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut t = Text::default();
        t.line(&format!("semqp {}  ({})", self.command, self.input.model_path));
        for (title, e) in [("total effects", &self.effects), ("total effects after", &self.effects_after)] {
            let Some(e) = e else { continue };
            t.section(title);
            for (name, m) in [
                ("T_xz", &e.xz),
                ("T_yx", &e.yx),
                ("T_yz", &e.yz),
                ("T_yz through treatments", &e.yz_through),
                ("T_yz avoiding treatments", &e.yz_avoid),
            ] {
                t.matrix(name, m);
            }
        }
        if let Some(m) = &self.moments {
            t.moments(if self.moments_after.is_some() { "moments before" } else { "moments" }, m);
        }
        if let Some(m) = &self.moments_after {
            t.moments("moments after", m);
        }
        if let Some(q) = &self.qp {
            t.section("quadratic program");
            t.matrix(
                "H",
                &LabeledMatrix {
                    rows: q.labels.clone(),
                    cols: q.labels.clone(),
                    values: q.hessian.clone(),
                },
            );
            t.vector("g", &q.labels, &q.linear);
            t.line(&format!("c  {}", g6(q.constant)));
        }
        if let Some(s) = &self.solution {
            t.section("solution");
            let rows: Vec<Vec<String>> = s
                .alpha
                .iter()
                .map(|a| {
                    vec![
                        a.label.clone(),
                        g6(a.value),
                        g6(a.lower),
                        g6(a.upper),
                        a.state.to_string(),
                        g6(a.lambda_lower),
                        g6(a.lambda_upper),
                    ]
                })
                .collect();
            t.table(&["", "value", "lower", "upper", "state", "lambda_lo", "lambda_up"], &rows);
            t.line(&format!("objective  {}", g6(s.objective)));
            t.line(&format!("iterations {}", s.iterations));
            t.line(&format!(
                "KKT {}  stationarity {}  primal {}  dual {}  complementarity {}",
                if s.kkt.satisfied { "satisfied" } else { "NOT satisfied" },
                g6(s.kkt.stationarity_residual),
                g6(s.kkt.primal_violation),
                g6(s.kkt.dual_violation),
                g6(s.kkt.complementarity)
            ));
        }
        if let Some(v) = &self.variance {
            t.section("output variance");
            let rows: Vec<Vec<String>> = v
                .iter()
                .map(|r| vec![r.output.clone(), g6(r.weight), g6(r.before), g6(r.after)])
                .collect();
            t.table(&["", "weight", "before", "after"], &rows);
        }
        if let Some(v) = &self.intercepts {
            t.section("treatment intercepts");
            let rows: Vec<Vec<String>> = v
                .iter()
                .map(|r| vec![r.treatment.clone(), g6(r.before), g6(r.after)])
                .collect();
            t.table(&["", "before", "after"], &rows);
        }
        if let Some(v) = &self.targets {
            t.section("targets");
            let opt = |x: Option<f64>| x.map(g6).unwrap_or_else(|| "-".to_string());
            let rows: Vec<Vec<String>> = v
                .iter()
                .map(|r| {
                    vec![
                        r.output.clone(),
                        format!("{} ({})", g6(r.value), if r.scale == Scale::Linear { "linear" } else { "log" }),
                        g6(r.mean_before),
                        g6(r.mean_after),
                        opt(r.linear_before),
                        opt(r.linear_after),
                    ]
                })
                .collect();
            t.table(&["", "target", "mean before", "mean after", "exp before", "exp after"], &rows);
        }
        if let Some(p) = &self.paths {
            t.section(&format!("paths {} -> {}", p.from, p.to));
            let rows: Vec<Vec<String>> = p
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.path.join(" -> "),
                        g6(r.effect),
                        if r.through_treatment { "yes" } else { "no" }.to_string(),
                    ]
                })
                .collect();
            t.table(&["path", "effect", "through"], &rows);
            t.line(&format!("{} paths", p.rows.len()));
            t.line(&format!("through treatments  {}", g6(p.through)));
            t.line(&format!("avoiding treatments {}", g6(p.avoid)));
            t.line(&format!("total               {}", g6(p.total)));
        }
        if let Some(s) = &self.simulation {
            t.section("simulation");
            t.line(&format!(
                "n {}  seed {}  antithetic {}  threshold {}",
                s.n_samples,
                s.seed,
                s.antithetic,
                g6(s.threshold)
            ));
            let rows: Vec<Vec<String>> = s
                .entries
                .iter()
                .filter(|e| !e.passed)
                .map(|e| {
                    let at = match &e.col {
                        Some(c) => format!("{}[{}, {}]", e.block, e.row, c),
                        None => format!("{}[{}]", e.block, e.row),
                    };
                    vec![at, g6(e.analytic), g6(e.estimate), g6(e.std_error), g6(e.z)]
                })
                .collect();
            if !rows.is_empty() {
                t.table(&["entry", "analytic", "sampled", "se", "z"], &rows);
            }
            t.line(&format!(
                "{} entries, max z {}: {}",
                s.entries.len(),
                g6(s.max_z),
                if s.passed { "PASS" } else { "FAIL" }
            ));
        }
        t.out
    }
}

/// `%g`-style formatting with 6 significant digits.
pub fn g6(x: f64) -> String {
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    let trim = |s: String| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if !(-4..6).contains(&exp) {
        let s = format!("{:.5e}", x);
        let (mantissa, e) = s.split_once('e').expect("exponent form");
        return format!("{}e{}", trim(mantissa.to_string()), e);
    }
    let decimals = (5 - exp).max(0) as usize;
    let s = trim(format!("{:.*}", decimals, x));
    if s == "-0" {
        "0".to_string()
    } else {
        s
    }
}

#[derive(Default)]
struct Text {
    out: String,
}

impl Text {
    fn line(&mut self, s: &str) {
        self.out.push_str(s);
        self.out.push('\n');
    }

    fn section(&mut self, title: &str) {
        self.out.push('\n');
        self.line(&format!("== {title}"));
    }

    fn table(&mut self, headers: &[&str], rows: &[Vec<String>]) {
        let cols = headers.len();
        let mut width: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
        for r in rows {
            for (k, cell) in r.iter().enumerate() {
                width[k] = width[k].max(cell.chars().count());
            }
        }
        let render = |cells: Vec<&str>| -> String {
            let mut s = String::new();
            for (k, c) in cells.iter().enumerate() {
                if k == 0 {
                    let _ = write!(s, "{:<w$}", c, w = width[0]);
                } else {
                    let _ = write!(s, "  {:>w$}", c, w = width[k]);
                }
            }
            s.trim_end().to_string()
        };
        if headers.iter().any(|h| !h.is_empty()) {
            self.line(&render(headers.to_vec()));
        }
        for r in rows {
            self.line(&render(r.iter().map(|s| s.as_str()).take(cols).collect()));
        }
    }

    fn matrix(&mut self, name: &str, m: &LabeledMatrix) {
        self.line(&format!("{name}:"));
        if m.rows.is_empty() || m.cols.is_empty() {
            self.line("  (empty)");
            return;
        }
        let mut headers = vec![""];
        headers.extend(m.cols.iter().map(|s| s.as_str()));
        let rows: Vec<Vec<String>> = m
            .rows
            .iter()
            .zip(&m.values)
            .map(|(r, vals)| {
                let mut row = vec![format!("  {r}")];
                row.extend(vals.iter().map(|v| g6(*v)));
                row
            })
            .collect();
        self.table(&headers, &rows);
    }

    fn vector(&mut self, name: &str, labels: &[String], values: &[f64]) {
        self.line(&format!("{name}:"));
        let rows: Vec<Vec<String>> = labels
            .iter()
            .zip(values)
            .map(|(l, v)| vec![format!("  {l}"), g6(*v)])
            .collect();
        self.table(&["", ""], &rows);
    }

    fn moments(&mut self, title: &str, m: &MomentsReport) {
        self.section(title);
        let means: Vec<Vec<String>> = m
            .mean_z
            .iter()
            .chain(&m.mean_x)
            .chain(&m.mean_y)
            .map(|n| vec![format!("  {}", n.name), g6(n.value)])
            .collect();
        self.line("mean:");
        self.table(&["", ""], &means);
        self.matrix("Var[Z]", &m.var_z);
        self.matrix("Var[X]", &m.var_x);
        self.matrix("Var[Y]", &m.var_y);
        self.matrix("Cov[X, Z]", &m.cov_xz);
    }
}
