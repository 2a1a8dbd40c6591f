//! The partitioned linear SEM and its construction from a weighted DAG.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::linalg::{self, Matrix};

/// Symmetry tolerance for error covariance blocks.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Smallest eigenvalue accepted for an error covariance block.
pub const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VariableRole {
    Covariate,
    Treatment,
    Output,
}

impl VariableRole {
    pub fn as_str(self) -> &'static str {
        match self {
            VariableRole::Covariate => "covariate",
            VariableRole::Treatment => "treatment",
            VariableRole::Output => "output",
        }
    }
}

impl fmt::Display for VariableRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("directed cycle: {}", .cycle.join(" -> "))]
    CycleDetected { cycle: Vec<String> },
    #[error("edge {from} -> {to} points into the covariate block")]
    EdgeIntoCovariates { from: String, to: String },
    #[error("edge {from} -> {to} points from the output block into the treatment block")]
    EdgeIntoTreatments { from: String, to: String },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("duplicate edge {from} -> {to}")]
    DuplicateEdge { from: String, to: String },
    #[error("treatment set is empty")]
    EmptyTreatmentSet,
    #[error("nonzero error covariance between `{a}` and `{b}` crosses blocks")]
    CrossBlockCovariance { a: String, b: String },
    #[error("{what}: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        what: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid bounds at {index:?}: lower {lower} > upper {upper}")]
    InvalidBounds {
        index: (usize, usize),
        lower: f64,
        upper: f64,
    },
    #[error("invalid model: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// One failed invariant, with a path to the offending entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// A linear SEM partitioned into covariates `Z`, treatments `X` and outputs `Y`.
///
/// Coefficient blocks follow the row-is-child convention: `coef_xz[(i, j)]`
/// is the path coefficient from covariate `j` into treatment `i`. The
/// within-block matrices `coef_zz`, `coef_xx` and `coef_yy` are strictly
/// lower triangular. Error terms of different blocks are uncorrelated.
#[derive(Debug, Clone, PartialEq)]
pub struct SemModel {
    pub covariates: Vec<String>,
    pub treatments: Vec<String>,
    pub outputs: Vec<String>,
    pub coef_zz: Matrix,
    pub coef_xz: Matrix,
    pub coef_xx: Matrix,
    pub coef_yz: Matrix,
    pub coef_yx: Matrix,
    pub coef_yy: Matrix,
    pub intercept_z: Vec<f64>,
    pub intercept_x: Vec<f64>,
    pub intercept_y: Vec<f64>,
    pub error_cov_z: Matrix,
    pub error_cov_x: Matrix,
    pub error_cov_y: Matrix,
}

impl SemModel {
    /// A model with the given names, all coefficients, intercepts and error
    /// covariances zero.
    pub fn zeroed(covariates: Vec<String>, treatments: Vec<String>, outputs: Vec<String>) -> Self {
        let (nz, nx, ny) = (covariates.len(), treatments.len(), outputs.len());
        SemModel {
            covariates,
            treatments,
            outputs,
            coef_zz: Matrix::zeros(nz, nz),
            coef_xz: Matrix::zeros(nx, nz),
            coef_xx: Matrix::zeros(nx, nx),
            coef_yz: Matrix::zeros(ny, nz),
            coef_yx: Matrix::zeros(ny, nx),
            coef_yy: Matrix::zeros(ny, ny),
            intercept_z: vec![0.0; nz],
            intercept_x: vec![0.0; nx],
            intercept_y: vec![0.0; ny],
            error_cov_z: Matrix::zeros(nz, nz),
            error_cov_x: Matrix::zeros(nx, nx),
            error_cov_y: Matrix::zeros(ny, ny),
        }
    }

    pub fn n_z(&self) -> usize {
        self.covariates.len()
    }

    pub fn n_x(&self) -> usize {
        self.treatments.len()
    }

    pub fn n_y(&self) -> usize {
        self.outputs.len()
    }

    pub fn n_total(&self) -> usize {
        self.n_z() + self.n_x() + self.n_y()
    }

    /// All variable names in block order `Z, X, Y`.
    pub fn names(&self) -> Vec<&str> {
        self.covariates
            .iter()
            .chain(&self.treatments)
            .chain(&self.outputs)
            .map(String::as_str)
            .collect()
    }

    /// Role and within-block index of a variable.
    pub fn locate(&self, name: &str) -> Option<(VariableRole, usize)> {
        let find = |v: &[String]| v.iter().position(|n| n == name);
        find(&self.covariates)
            .map(|i| (VariableRole::Covariate, i))
            .or_else(|| find(&self.treatments).map(|i| (VariableRole::Treatment, i)))
            .or_else(|| find(&self.outputs).map(|i| (VariableRole::Output, i)))
    }

    /// Index of a variable in the stacked `Z, X, Y` ordering.
    pub fn global_index(&self, name: &str) -> Option<usize> {
        self.locate(name).map(|(role, i)| match role {
            VariableRole::Covariate => i,
            VariableRole::Treatment => self.n_z() + i,
            VariableRole::Output => self.n_z() + self.n_x() + i,
        })
    }

    pub fn output_index(&self, name: &str) -> Option<usize> {
        self.outputs.iter().position(|n| n == name)
    }

    /// The stacked `n x n` coefficient matrix over `Z, X, Y`.
    pub fn full_coefficients(&self) -> Matrix {
        linalg::assemble_block_lower(
            &self.coef_zz,
            &self.coef_xz,
            &self.coef_xx,
            &self.coef_yz,
            &self.coef_yx,
            &self.coef_yy,
        )
    }

    pub fn full_intercepts(&self) -> Vec<f64> {
        let mut v = self.intercept_z.clone();
        v.extend_from_slice(&self.intercept_x);
        v.extend_from_slice(&self.intercept_y);
        v
    }

    /// Block-diagonal error covariance over `Z, X, Y`.
    pub fn full_error_cov(&self) -> Matrix {
        let (nz, nx, ny) = (self.n_z(), self.n_x(), self.n_y());
        linalg::assemble_block_lower(
            &self.error_cov_z,
            &Matrix::zeros(nx, nz),
            &self.error_cov_x,
            &Matrix::zeros(ny, nz),
            &Matrix::zeros(ny, nx),
            &self.error_cov_y,
        )
    }

    /// Every invariant violation; empty iff the model is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let (nz, nx, ny) = (self.n_z(), self.n_x(), self.n_y());
        if nx == 0 {
            out.push(violation("treatments", "at least one treatment variable is required"));
        }

        let mut seen = BTreeSet::new();
        for (block, names) in [
            ("covariates", &self.covariates),
            ("treatments", &self.treatments),
            ("outputs", &self.outputs),
        ] {
            for (i, name) in names.iter().enumerate() {
                if name.is_empty() {
                    out.push(violation(&format!("{block}[{i}]"), "empty variable name"));
                } else if !seen.insert(name.as_str()) {
                    out.push(violation(
                        &format!("{block}[{i}]"),
                        &format!("duplicate variable name `{name}`"),
                    ));
                }
            }
        }

        let shape_ok = [
            ("coef_zz", &self.coef_zz, (nz, nz)),
            ("coef_xz", &self.coef_xz, (nx, nz)),
            ("coef_xx", &self.coef_xx, (nx, nx)),
            ("coef_yz", &self.coef_yz, (ny, nz)),
            ("coef_yx", &self.coef_yx, (ny, nx)),
            ("coef_yy", &self.coef_yy, (ny, ny)),
            ("error_cov_z", &self.error_cov_z, (nz, nz)),
            ("error_cov_x", &self.error_cov_x, (nx, nx)),
            ("error_cov_y", &self.error_cov_y, (ny, ny)),
        ]
        .into_iter()
        .fold(true, |ok, (name, m, want)| {
            if m.shape() != want {
                out.push(violation(
                    name,
                    &format!("shape {:?}, expected {:?}", m.shape(), want),
                ));
                false
            } else {
                ok
            }
        });
        for (name, v, want) in [
            ("intercept_z", &self.intercept_z, nz),
            ("intercept_x", &self.intercept_x, nx),
            ("intercept_y", &self.intercept_y, ny),
        ] {
            if v.len() != want {
                out.push(violation(
                    name,
                    &format!("length {}, expected {want}", v.len()),
                ));
            } else if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                out.push(violation(&format!("{name}[{i}]"), "not finite"));
            }
        }
        if !shape_ok {
            return out;
        }

        let coef_blocks = [
            ("coef_zz", &self.coef_zz, &self.covariates, &self.covariates),
            ("coef_xz", &self.coef_xz, &self.treatments, &self.covariates),
            ("coef_xx", &self.coef_xx, &self.treatments, &self.treatments),
            ("coef_yz", &self.coef_yz, &self.outputs, &self.covariates),
            ("coef_yx", &self.coef_yx, &self.outputs, &self.treatments),
            ("coef_yy", &self.coef_yy, &self.outputs, &self.outputs),
        ];
        for (name, m, rows, cols) in coef_blocks {
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    if !m[(i, j)].is_finite() {
                        out.push(violation(
                            &format!("{name}[{i}][{j}] ({} <- {})", rows[i], cols[j]),
                            "not finite",
                        ));
                    }
                }
            }
        }
        for (name, m, names) in [
            ("coef_zz", &self.coef_zz, &self.covariates),
            ("coef_xx", &self.coef_xx, &self.treatments),
            ("coef_yy", &self.coef_yy, &self.outputs),
        ] {
            for i in 0..m.rows() {
                for j in i..m.cols() {
                    if m[(i, j)] != 0.0 {
                        out.push(violation(
                            &format!("{name}[{i}][{j}] ({} <- {})", names[i], names[j]),
                            &format!(
                                "must be zero (within-block matrices are strictly lower triangular), found {}",
                                m[(i, j)]
                            ),
                        ));
                    }
                }
            }
        }
        for (name, s) in [
            ("error_cov_z", &self.error_cov_z),
            ("error_cov_x", &self.error_cov_x),
            ("error_cov_y", &self.error_cov_y),
        ] {
            if !s.is_finite() {
                out.push(violation(name, "not finite"));
                continue;
            }
            for i in 0..s.rows() {
                for j in 0..i {
                    if (s[(i, j)] - s[(j, i)]).abs() > SYMMETRY_TOL {
                        out.push(violation(
                            &format!("{name}[{i}][{j}]"),
                            &format!("not symmetric ({} vs {})", s[(i, j)], s[(j, i)]),
                        ));
                    }
                }
            }
            let lo = linalg::min_eigenvalue(s);
            if lo < -PSD_TOL {
                out.push(violation(
                    name,
                    &format!("not positive semidefinite (smallest eigenvalue {lo})"),
                ));
            }
        }
        out
    }

    /// `Ok(())` or every violation wrapped in [`ModelError::Invalid`].
    pub fn ensure_valid(&self) -> Result<(), ModelError> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Invalid(v))
        }
    }
}

fn violation(path: &str, message: &str) -> Violation {
    Violation {
        path: path.to_string(),
        message: message.to_string(),
    }
}

/// Elementwise bounds `lower <= value <= upper` on a matrix or (as `n x 1`)
/// a vector. Entries may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Matrix,
    pub upper: Matrix,
}

impl Bounds {
    pub fn new(lower: Matrix, upper: Matrix) -> Result<Self, ModelError> {
        let b = Bounds { lower, upper };
        b.check()?;
        Ok(b)
    }

    pub fn unbounded(rows: usize, cols: usize) -> Self {
        Bounds {
            lower: Matrix::filled(rows, cols, f64::NEG_INFINITY),
            upper: Matrix::filled(rows, cols, f64::INFINITY),
        }
    }

    /// Both bounds equal to `value`.
    pub fn fixed(value: &Matrix) -> Self {
        Bounds {
            lower: value.clone(),
            upper: value.clone(),
        }
    }

    pub fn from_vectors(lower: &[f64], upper: &[f64]) -> Result<Self, ModelError> {
        Bounds::new(Matrix::column(lower), Matrix::column(upper))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.lower.shape()
    }

    pub fn check(&self) -> Result<(), ModelError> {
        if self.lower.shape() != self.upper.shape() {
            return Err(ModelError::DimensionMismatch {
                what: "bounds".to_string(),
                expected: self.lower.shape(),
                found: self.upper.shape(),
            });
        }
        for i in 0..self.lower.rows() {
            for j in 0..self.lower.cols() {
                let (lo, hi) = (self.lower[(i, j)], self.upper[(i, j)]);
                if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                    return Err(ModelError::InvalidBounds {
                        index: (i, j),
                        lower: lo,
                        upper: hi,
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub coef: f64,
}

impl Edge {
    pub fn new(from: &str, to: &str, coef: f64) -> Self {
        Edge {
            from: from.to_string(),
            to: to.to_string(),
            coef,
        }
    }
}

/// An unpartitioned SEM: named variables, weighted directed edges, intercepts
/// and a full error covariance over all variables (in `variables` order).
#[derive(Debug, Clone, PartialEq)]
pub struct SemGraph {
    pub variables: Vec<String>,
    pub intercepts: Vec<f64>,
    pub error_cov: Matrix,
    pub edges: Vec<Edge>,
}

struct Indexed {
    parents: Vec<Vec<(usize, f64)>>,
    children: Vec<Vec<usize>>,
}

impl SemGraph {
    /// Flattens a model back to a graph. Only nonzero coefficients become edges.
    pub fn from_model(model: &SemModel) -> SemGraph {
        let variables: Vec<String> = model.names().into_iter().map(String::from).collect();
        let full = model.full_coefficients();
        let mut edges = Vec::new();
        for i in 0..full.rows() {
            for j in 0..full.cols() {
                if full[(i, j)] != 0.0 {
                    edges.push(Edge::new(&variables[j], &variables[i], full[(i, j)]));
                }
            }
        }
        SemGraph {
            intercepts: model.full_intercepts(),
            error_cov: model.full_error_cov(),
            variables,
            edges,
        }
    }

    fn index(&self) -> Result<(BTreeMap<&str, usize>, Indexed), ModelError> {
        let n = self.variables.len();
        if self.intercepts.len() != n {
            return Err(ModelError::DimensionMismatch {
                what: "intercepts".to_string(),
                expected: (n, 1),
                found: (self.intercepts.len(), 1),
            });
        }
        if self.error_cov.shape() != (n, n) {
            return Err(ModelError::DimensionMismatch {
                what: "error covariance".to_string(),
                expected: (n, n),
                found: self.error_cov.shape(),
            });
        }
        let mut ids = BTreeMap::new();
        for (i, name) in self.variables.iter().enumerate() {
            if ids.insert(name.as_str(), i).is_some() {
                return Err(ModelError::DuplicateVariable(name.clone()));
            }
        }
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        let mut seen = BTreeSet::new();
        for e in &self.edges {
            let from = *ids
                .get(e.from.as_str())
                .ok_or_else(|| ModelError::UnknownVariable(e.from.clone()))?;
            let to = *ids
                .get(e.to.as_str())
                .ok_or_else(|| ModelError::UnknownVariable(e.to.clone()))?;
            if !seen.insert((from, to)) {
                return Err(ModelError::DuplicateEdge {
                    from: e.from.clone(),
                    to: e.to.clone(),
                });
            }
            parents[to].push((from, e.coef));
            children[from].push(to);
        }
        Ok((ids, Indexed { parents, children }))
    }

    /// Longest-path depth of every variable (roots are level 0).
    pub fn topological_levels(&self) -> Result<Vec<usize>, ModelError> {
        let (_, idx) = self.index()?;
        self.levels(&idx)
    }

    fn levels(&self, idx: &Indexed) -> Result<Vec<usize>, ModelError> {
        let n = self.variables.len();
        let mut indegree: Vec<usize> = idx.parents.iter().map(Vec::len).collect();
        let mut level = vec![0usize; n];
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut done = 0;
        while let Some(u) = queue.pop_front() {
            done += 1;
            for &v in &idx.children[u] {
                level[v] = level[v].max(level[u] + 1);
                indegree[v] -= 1;
                if indegree[v] == 0 {
                    queue.push_back(v);
                }
            }
        }
        if done == n {
            return Ok(level);
        }
        // Every unprocessed node has an unprocessed parent; walking parents
        // must revisit a node.
        let start = (0..n).find(|&i| indegree[i] > 0).unwrap_or(0);
        let mut walk = vec![start];
        let mut pos = BTreeMap::new();
        pos.insert(start, 0usize);
        let mut cur = start;
        loop {
            let next = idx.parents[cur]
                .iter()
                .map(|&(p, _)| p)
                .find(|&p| indegree[p] > 0)
                .unwrap_or(cur);
            if let Some(&k) = pos.get(&next) {
                let mut cycle: Vec<String> = walk[k..]
                    .iter()
                    .rev()
                    .map(|&i| self.variables[i].clone())
                    .collect();
                cycle.push(cycle[0].clone());
                return Err(ModelError::CycleDetected { cycle });
            }
            pos.insert(next, walk.len());
            walk.push(next);
            cur = next;
        }
    }

    /// Builds a model from explicit per-variable roles, keeping the declared
    /// order of variables inside each block.
    pub fn into_model_with_roles(&self, roles: &[VariableRole]) -> Result<SemModel, ModelError> {
        let (_, idx) = self.index()?;
        self.levels(&idx)?;
        if roles.len() != self.variables.len() {
            return Err(ModelError::DimensionMismatch {
                what: "roles".to_string(),
                expected: (self.variables.len(), 1),
                found: (roles.len(), 1),
            });
        }
        let pick = |r: VariableRole| -> Vec<usize> {
            (0..roles.len()).filter(|&i| roles[i] == r).collect()
        };
        self.assemble(
            &idx,
            pick(VariableRole::Covariate),
            pick(VariableRole::Treatment),
            pick(VariableRole::Output),
        )
    }

    fn assemble(
        &self,
        idx: &Indexed,
        z: Vec<usize>,
        x: Vec<usize>,
        y: Vec<usize>,
    ) -> Result<SemModel, ModelError> {
        let n = self.variables.len();
        let mut slot = vec![(VariableRole::Covariate, 0usize); n];
        for (role, block) in [
            (VariableRole::Covariate, &z),
            (VariableRole::Treatment, &x),
            (VariableRole::Output, &y),
        ] {
            for (k, &i) in block.iter().enumerate() {
                slot[i] = (role, k);
            }
        }
        let names = |b: &[usize]| b.iter().map(|&i| self.variables[i].clone()).collect();
        let mut m = SemModel::zeroed(names(&z), names(&x), names(&y));
        for (child, parents) in idx.parents.iter().enumerate() {
            for &(parent, coef) in parents {
                let (rc, ic) = slot[child];
                let (rp, ip) = slot[parent];
                use VariableRole::*;
                let target = match (rc, rp) {
                    (Covariate, Covariate) => &mut m.coef_zz,
                    (Treatment, Covariate) => &mut m.coef_xz,
                    (Treatment, Treatment) => &mut m.coef_xx,
                    (Output, Covariate) => &mut m.coef_yz,
                    (Output, Treatment) => &mut m.coef_yx,
                    (Output, Output) => &mut m.coef_yy,
                    (Covariate, _) => {
                        return Err(ModelError::EdgeIntoCovariates {
                            from: self.variables[parent].clone(),
                            to: self.variables[child].clone(),
                        })
                    }
                    (Treatment, Output) => {
                        return Err(ModelError::EdgeIntoTreatments {
                            from: self.variables[parent].clone(),
                            to: self.variables[child].clone(),
                        })
                    }
                };
                target[(ic, ip)] = coef;
            }
        }
        for i in 0..n {
            let (ri, ki) = slot[i];
            match ri {
                VariableRole::Covariate => m.intercept_z[ki] = self.intercepts[i],
                VariableRole::Treatment => m.intercept_x[ki] = self.intercepts[i],
                VariableRole::Output => m.intercept_y[ki] = self.intercepts[i],
            }
            for j in 0..n {
                let v = self.error_cov[(i, j)];
                let (rj, kj) = slot[j];
                if ri != rj {
                    if v != 0.0 {
                        return Err(ModelError::CrossBlockCovariance {
                            a: self.variables[i].clone(),
                            b: self.variables[j].clone(),
                        });
                    }
                    continue;
                }
                let target = match ri {
                    VariableRole::Covariate => &mut m.error_cov_z,
                    VariableRole::Treatment => &mut m.error_cov_x,
                    VariableRole::Output => &mut m.error_cov_y,
                };
                target[(ki, kj)] = v;
            }
        }
        m.ensure_valid()?;
        Ok(m)
    }
}

/// Partitions a weighted DAG by a treatment set.
///
/// `Z` is every strict ancestor of a treatment, `X` the treatment set and
/// `Y` everything else. Each block is ordered by topological level, ties
/// broken by name, so within-block matrices come out strictly lower
/// triangular. The result does not depend on edge order.
pub fn partition_by_treatment<S: AsRef<str>>(
    graph: &SemGraph,
    treatments: &[S],
) -> Result<SemModel, ModelError> {
    if treatments.is_empty() {
        return Err(ModelError::EmptyTreatmentSet);
    }
    let (ids, idx) = graph.index()?;
    let levels = graph.levels(&idx)?;
    let n = graph.variables.len();

    let mut is_treatment = vec![false; n];
    for t in treatments {
        let t = t.as_ref();
        let i = *ids
            .get(t)
            .ok_or_else(|| ModelError::UnknownVariable(t.to_string()))?;
        is_treatment[i] = true;
    }

    let mut is_ancestor = vec![false; n];
    let mut stack: Vec<usize> = (0..n).filter(|&i| is_treatment[i]).collect();
    while let Some(u) = stack.pop() {
        for &(p, _) in &idx.parents[u] {
            if !is_ancestor[p] {
                is_ancestor[p] = true;
                stack.push(p);
            }
        }
    }

    let mut z = Vec::new();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        if is_treatment[i] {
            // a treatment upstream of another treatment stays in X
            x.push(i);
        } else if is_ancestor[i] {
            z.push(i);
        } else {
            y.push(i);
        }
    }
    let by_level = |a: &usize, b: &usize| {
        levels[*a]
            .cmp(&levels[*b])
            .then_with(|| graph.variables[*a].cmp(&graph.variables[*b]))
    };
    z.sort_by(by_level);
    x.sort_by(by_level);
    y.sort_by(by_level);
    graph.assemble(&idx, z, x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn journal_model_is_valid() {
        assert_eq!(testkit::journal_model().validate(), vec![]);
    }

    #[test]
    fn nonzero_diagonal_is_one_violation() {
        let mut m = testkit::journal_model();
        m.treatments = names(&["x"]);
        m.coef_xx[(0, 0)] = 0.5;
        let v = m.validate();
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].path.starts_with("coef_xx[0][0]"));
        assert!(v[0].path.contains("x <- x"));
    }

    #[test]
    fn indefinite_covariance_is_reported() {
        let mut m = testkit::journal_model();
        m.error_cov_z = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]);
        let v = m.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].path, "error_cov_z");
        assert!(v[0].message.contains("positive semidefinite"));
    }

    #[test]
    fn other_violations() {
        let mut m = testkit::journal_model();
        m.error_cov_y = Matrix::from_rows(&[[0.1, 0.0]]);
        assert!(m.validate().iter().any(|v| v.path == "error_cov_y"));

        let mut m = testkit::journal_model();
        m.outputs = names(&["z1"]);
        assert!(m.validate().iter().any(|v| v.message.contains("duplicate")));

        let m = SemModel::zeroed(vec![], vec![], names(&["y"]));
        assert!(m.validate().iter().any(|v| v.path == "treatments"));

        let mut m = testkit::journal_model();
        m.error_cov_z[(0, 1)] = 0.01;
        assert!(m.validate().iter().any(|v| v.message.contains("symmetric")));
    }

    fn example1_graph() -> SemGraph {
        let vars = names(&["z", "x1", "x2", "y1", "y2"]);
        let edges = vec![
            Edge::new("z", "x1", 0.3),
            Edge::new("z", "x2", 0.4),
            Edge::new("x1", "x2", 0.5),
            Edge::new("x1", "y1", 0.6),
            Edge::new("z", "y2", 0.7),
            Edge::new("x2", "y2", 0.8),
            Edge::new("y1", "y2", 0.9),
        ];
        SemGraph {
            intercepts: vec![0.0; vars.len()],
            error_cov: Matrix::identity(vars.len()),
            variables: vars,
            edges,
        }
    }

    #[test]
    fn partition_example1() {
        let m = partition_by_treatment(&example1_graph(), &["x1", "x2"]).unwrap();
        assert_eq!(m.covariates, names(&["z"]));
        assert_eq!(m.treatments, names(&["x1", "x2"]));
        assert_eq!(m.outputs, names(&["y1", "y2"]));
        assert_eq!(m.coef_zz, Matrix::zeros(1, 1));
        assert_eq!(m.coef_xz, Matrix::from_rows(&[[0.3], [0.4]]));
        assert_eq!(m.coef_xx, Matrix::from_rows(&[[0.0, 0.0], [0.5, 0.0]]));
        assert_eq!(m.coef_yz, Matrix::from_rows(&[[0.0], [0.7]]));
        assert_eq!(m.coef_yx, Matrix::from_rows(&[[0.6, 0.0], [0.0, 0.8]]));
        assert_eq!(m.coef_yy, Matrix::from_rows(&[[0.0, 0.0], [0.9, 0.0]]));
    }

    #[test]
    fn partition_example3() {
        let (graph, c) = testkit::example3_graph();
        let m = partition_by_treatment(&graph, &["x1", "x2"]).unwrap();
        assert_eq!(m.covariates, names(&["z1", "z2"]));
        assert_eq!(m.outputs, names(&["y1", "y2"]));
        assert_eq!(m.coef_zz, Matrix::from_rows(&[[0.0, 0.0], [c.z2z1, 0.0]]));
        assert_eq!(m.coef_xz, Matrix::from_rows(&[[c.x1z1, 0.0], [c.x2z1, c.x2z2]]));
        assert_eq!(m.coef_xx, Matrix::from_rows(&[[0.0, 0.0], [c.x2x1, 0.0]]));
        assert_eq!(m.coef_yz, Matrix::from_rows(&[[c.y1z1, 0.0], [c.y2z1, c.y2z2]]));
        assert_eq!(m.coef_yx, Matrix::from_rows(&[[c.y1x1, 0.0], [c.y2x1, c.y2x2]]));
        assert_eq!(m.coef_yy, Matrix::from_rows(&[[0.0, 0.0], [c.y2y1, 0.0]]));
    }

    #[test]
    fn single_node_partition() {
        let g = SemGraph {
            variables: names(&["x"]),
            intercepts: vec![1.0],
            error_cov: Matrix::identity(1),
            edges: vec![],
        };
        let m = partition_by_treatment(&g, &["x"]).unwrap();
        assert_eq!((m.n_z(), m.n_x(), m.n_y()), (0, 1, 0));
        assert_eq!(m.intercept_x, vec![1.0]);
    }

    #[test]
    fn isolated_variable_lands_in_outputs() {
        let mut g = example1_graph();
        g.variables.push("w".into());
        g.intercepts.push(0.0);
        g.error_cov = Matrix::identity(6);
        let m = partition_by_treatment(&g, &["x1"]).unwrap();
        assert!(m.outputs.contains(&"w".to_string()));
        // x2 is a descendant of x1 only, so it is an output here
        assert!(m.outputs.contains(&"x2".to_string()));
    }

    #[test]
    fn partition_errors() {
        let mut g = example1_graph();
        g.edges.push(Edge::new("y2", "z", 1.0));
        match partition_by_treatment(&g, &["x1"]) {
            Err(ModelError::CycleDetected { cycle }) => {
                assert_eq!(cycle.first(), cycle.last());
                assert!(cycle.contains(&"y2".to_string()));
                assert!(cycle.contains(&"z".to_string()));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            partition_by_treatment(&example1_graph(), &["nope"]),
            Err(ModelError::UnknownVariable(_))
        ));
        let mut g = example1_graph();
        g.edges.push(Edge::new("q", "z", 1.0));
        assert!(matches!(
            partition_by_treatment(&g, &["x1"]),
            Err(ModelError::UnknownVariable(v)) if v == "q"
        ));
        let empty: [&str; 0] = [];
        assert!(matches!(
            partition_by_treatment(&example1_graph(), &empty),
            Err(ModelError::EmptyTreatmentSet)
        ));
        let mut g = example1_graph();
        g.edges.push(Edge::new("z", "x1", 1.0));
        assert!(matches!(
            partition_by_treatment(&g, &["x1"]),
            Err(ModelError::DuplicateEdge { .. })
        ));
        let mut g = example1_graph();
        g.error_cov[(0, 4)] = 0.1;
        g.error_cov[(4, 0)] = 0.1;
        assert!(matches!(
            partition_by_treatment(&g, &["x1", "x2"]),
            Err(ModelError::CrossBlockCovariance { .. })
        ));
        let mut g = example1_graph();
        g.edges.push(Edge::new("x1", "x1", 1.0));
        assert!(matches!(
            partition_by_treatment(&g, &["x1"]),
            Err(ModelError::CycleDetected { .. })
        ));
    }

    #[test]
    fn explicit_roles() {
        let g = SemGraph::from_model(&testkit::journal_model());
        let roles = [
            VariableRole::Covariate,
            VariableRole::Covariate,
            VariableRole::Treatment,
            VariableRole::Output,
        ];
        let m = g.into_model_with_roles(&roles).unwrap();
        // zero-coefficient z -> x edges are dropped by flattening; blocks agree anyway
        assert_eq!(m, testkit::journal_model());

        let bad = [
            VariableRole::Output,
            VariableRole::Covariate,
            VariableRole::Treatment,
            VariableRole::Output,
        ];
        assert!(matches!(
            g.into_model_with_roles(&bad),
            Err(ModelError::EdgeIntoCovariates { .. })
        ));
    }

    #[test]
    fn bounds_checks() {
        assert!(Bounds::from_vectors(&[0.0], &[1.0]).is_ok());
        assert!(matches!(
            Bounds::from_vectors(&[2.0], &[1.0]),
            Err(ModelError::InvalidBounds { .. })
        ));
        assert!(Bounds::from_vectors(&[f64::INFINITY], &[f64::INFINITY]).is_err());
        assert!(Bounds::unbounded(2, 3).check().is_ok());
        let f = Bounds::fixed(&Matrix::identity(2));
        assert_eq!(f.lower, f.upper);
    }
}
