//! Box-constrained convex QPs: building the variance-minimising and
//! mean-targeting problems from a model, solving them with a primal
//! active-set method, and certifying the result through the KKT conditions.
//!
//! Every problem here has the form
//!
//! ```text
//!     minimize    a^T H a + g^T a + c
//!     subject to  lower <= a <= upper
//! ```
//!
//! Note the objective has no factor 1/2, so the gradient is `2 H a + g`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::effects::{self, EffectsError, Intervention};
use crate::linalg::{self, Matrix};
use crate::model::{Bounds, ModelError, SemModel};

/// Absolute tolerance on every KKT residual.
pub const KKT_TOL: f64 = 1e-8;
/// Allowed bound violation of a returned solution.
pub const FEASIBILITY_TOL: f64 = 1e-9;
/// Largest `|h_ij - h_ji|` accepted in a Hessian.
pub const HESSIAN_SYMMETRY_TOL: f64 = 1e-10;
/// Smallest Hessian eigenvalue accepted as positive semidefinite.
pub const HESSIAN_PSD_TOL: f64 = 1e-8;
/// Eigenvalues below this fraction of the largest are treated as zero when
/// the free block of the Hessian is singular.
pub const PINV_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("unknown output `{0}`")]
    UnknownOutput(String),
    #[error("weight {weight} for `{output}` is not positive")]
    NonPositiveWeight { output: String, weight: f64 },
    #[error("no outputs selected")]
    EmptySelection,
    #[error("{0} weights given for {1} outputs")]
    WeightCount(usize, usize),
    #[error("objective is unbounded below along a feasible ray")]
    Unbounded { ray: Vec<f64> },
    #[error("no convergence after {limit} active-set changes")]
    MaxIterations { limit: usize },
    #[error("certificate not applicable: {0}")]
    PreconditionUnmet(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Effects(#[from] EffectsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxQp {
    pub hessian: Matrix,
    pub linear: Vec<f64>,
    /// Added to the reported objective; does not affect the minimiser.
    pub constant: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// One name per decision variable.
    pub labels: Vec<String>,
}

impl BoxQp {
    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.hessian.quad_form(x) + linalg::dot(&self.linear, x) + self.constant
    }

    /// `2 H x + g`
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.hessian.mul_vec(x);
        for (gi, li) in g.iter_mut().zip(&self.linear) {
            *gi = 2.0 * *gi + li;
        }
        g
    }

    pub fn check(&self) -> Result<(), QpError> {
        let d = self.dim();
        let bad = |m: String| Err(QpError::InvalidProblem(m));
        if self.hessian.shape() != (d, d) {
            return bad(format!("hessian is {:?}, expected {d}x{d}", self.hessian.shape()));
        }
        if self.lower.len() != d || self.upper.len() != d || self.labels.len() != d {
            return bad("bounds or labels have the wrong length".to_string());
        }
        if !self.hessian.is_finite() || self.linear.iter().any(|v| !v.is_finite()) {
            return bad("non-finite hessian or linear term".to_string());
        }
        let asym = self.hessian.asymmetry();
        if asym > HESSIAN_SYMMETRY_TOL {
            return bad(format!("hessian asymmetry {asym}"));
        }
        let lo = linalg::min_eigenvalue(&self.hessian);
        if lo < -HESSIAN_PSD_TOL {
            return bad(format!("hessian not positive semidefinite (eigenvalue {lo})"));
        }
        for i in 0..d {
            let (l, u) = (self.lower[i], self.upper[i]);
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return bad(format!("bounds for `{}`: [{l}, {u}]", self.labels[i]));
            }
        }
        Ok(())
    }
}

/// Where a coordinate of the solution sits relative to its bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundState {
    Free,
    Lower,
    Upper,
    /// `lower == upper`; never enters the working set.
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    /// `max |2 H a + g - lambda_lower + lambda_upper|`
    pub stationarity_residual: f64,
    pub primal_violation: f64,
    /// Largest negative multiplier, as a positive number.
    pub dual_violation: f64,
    pub complementarity: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub alpha: Vec<f64>,
    /// Includes the constant term.
    pub objective: f64,
    pub lambda_lower: Vec<f64>,
    pub lambda_upper: Vec<f64>,
    pub kkt: KktReport,
    /// Passes through the active-set loop.
    pub iterations: usize,
    pub active: Vec<BoundState>,
}

/// Evaluates the KKT residuals of a candidate point and multipliers.
pub fn check_kkt(qp: &BoxQp, point: &[f64], lambda_lower: &[f64], lambda_upper: &[f64]) -> KktReport {
    let d = qp.dim();
    assert!(
        point.len() == d && lambda_lower.len() == d && lambda_upper.len() == d,
        "check_kkt: dimension mismatch"
    );
    let grad = qp.gradient(point);
    let mut stationarity = 0.0f64;
    let mut primal = 0.0f64;
    let mut dual = 0.0f64;
    let mut comp = 0.0f64;
    // lambda * slack, with 0 * inf taken as 0
    let product = |lam: f64, slack: f64| {
        if lam == 0.0 {
            0.0
        } else {
            (lam * slack).abs()
        }
    };
    for i in 0..d {
        let (ll, lu) = (lambda_lower[i], lambda_upper[i]);
        stationarity = stationarity.max((grad[i] - ll + lu).abs());
        primal = primal
            .max(qp.lower[i] - point[i])
            .max(point[i] - qp.upper[i]);
        dual = dual.max(-ll).max(-lu);
        comp = comp
            .max(product(ll, qp.lower[i] - point[i]))
            .max(product(lu, point[i] - qp.upper[i]));
    }
    let satisfied = stationarity <= KKT_TOL && primal <= KKT_TOL && dual <= KKT_TOL && comp <= KKT_TOL;
    KktReport {
        stationarity_residual: stationarity,
        primal_violation: primal,
        dual_violation: dual,
        complementarity: comp,
        satisfied,
    }
}

enum Step {
    /// Move to the minimiser of the free subproblem.
    Newton(Vec<f64>),
    /// The free block is singular and the gradient has a component in its
    /// null space: the objective decreases linearly along this direction.
    Descent(Vec<f64>),
}

fn free_step(h: &Matrix, grad: &[f64], free: &[usize]) -> Step {
    let hff = h.select(free, free);
    let neg_gf: Vec<f64> = free.iter().map(|&i| -grad[i]).collect();
    if let Ok(l) = linalg::cholesky(&hff.scale(2.0), PINV_CUTOFF) {
        return Step::Newton(linalg::cholesky_solve(&l, &neg_gf));
    }
    // minimum-norm step through the pseudo-inverse
    let (values, vectors) = linalg::symmetric_eigen(&hff);
    let lmax = values.last().copied().unwrap_or(0.0).max(0.0);
    let cut = PINV_CUTOFF * lmax;
    let k = free.len();
    let mut step = vec![0.0; k];
    let mut null = vec![0.0; k];
    for (j, &lambda) in values.iter().enumerate() {
        let v = vectors.col(j);
        let coef = linalg::dot(&v, &neg_gf);
        if lambda > cut && lambda > 0.0 {
            linalg::axpy(coef / (2.0 * lambda), &v, &mut step);
        } else {
            linalg::axpy(coef, &v, &mut null);
        }
    }
    if linalg::max_abs(&null) > 1e-9 * linalg::max_abs(&neg_gf).max(1.0) {
        Step::Descent(null)
    } else {
        Step::Newton(step)
    }
}

/// Longest step `t <= t_max` along `dir` (over `free`) that stays feasible,
/// and the first coordinate to hit a bound. Ties go to the lowest index.
fn ratio_test(
    qp: &BoxQp,
    x: &[f64],
    free: &[usize],
    dir: &[f64],
    t_max: f64,
) -> (f64, Option<(usize, BoundState)>) {
    let mut best = t_max;
    let mut hit = None;
    for (k, &i) in free.iter().enumerate() {
        let p = dir[k];
        let (t, side) = if p < 0.0 && qp.lower[i].is_finite() {
            ((qp.lower[i] - x[i]) / p, BoundState::Lower)
        } else if p > 0.0 && qp.upper[i].is_finite() {
            ((qp.upper[i] - x[i]) / p, BoundState::Upper)
        } else {
            continue;
        };
        let t = t.max(0.0);
        if t < best {
            best = t;
            hit = Some((i, side));
        }
    }
    (best, hit)
}

/// Solves a box-constrained convex QP by a primal active-set method.
///
/// Fixed coordinates (`lower == upper`) are eliminated. When the free block
/// of the Hessian is singular the minimum-norm step is taken, so among
/// several minimisers the result is deterministic.
pub fn solve_box_qp(qp: &BoxQp) -> Result<QpSolution, QpError> {
    qp.check()?;
    let d = qp.dim();
    let limit = 10 * d * d;
    let mut x = vec![0.0; d];
    let mut state = vec![BoundState::Free; d];
    for i in 0..d {
        let (lo, hi) = (qp.lower[i], qp.upper[i]);
        if lo == hi {
            x[i] = lo;
            state[i] = BoundState::Fixed;
        } else {
            x[i] = 0.0f64.clamp(lo, hi);
            if x[i] == lo {
                state[i] = BoundState::Lower;
            } else if x[i] == hi {
                state[i] = BoundState::Upper;
            }
        }
    }
    let scale = 1.0 + linalg::max_abs(&qp.linear) + qp.hessian.max_abs();
    let release_tol = 1e-12 * scale;

    let mut changes = 0usize;
    let mut iterations = 0usize;
    let bump = |changes: &mut usize| -> Result<(), QpError> {
        *changes += 1;
        if *changes > limit {
            Err(QpError::MaxIterations { limit })
        } else {
            Ok(())
        }
    };
    let bind = |x: &mut [f64], state: &mut [BoundState], i: usize, side: BoundState| {
        x[i] = if side == BoundState::Lower { qp.lower[i] } else { qp.upper[i] };
        state[i] = side;
    };

    loop {
        iterations += 1;
        let grad = qp.gradient(&x);
        let free: Vec<usize> = (0..d).filter(|&i| state[i] == BoundState::Free).collect();
        let step = if free.is_empty() {
            Step::Newton(Vec::new())
        } else {
            free_step(&qp.hessian, &grad, &free)
        };
        match step {
            Step::Descent(dir) => {
                let (t, hit) = ratio_test(qp, &x, &free, &dir, f64::INFINITY);
                let Some((i, side)) = hit else {
                    let mut ray = vec![0.0; d];
                    for (k, &j) in free.iter().enumerate() {
                        ray[j] = dir[k];
                    }
                    return Err(QpError::Unbounded { ray });
                };
                for (k, &j) in free.iter().enumerate() {
                    x[j] += t * dir[k];
                }
                bind(&mut x, &mut state, i, side);
                bump(&mut changes)?;
            }
            Step::Newton(p) => {
                let (t, hit) = ratio_test(qp, &x, &free, &p, 1.0);
                if let Some((i, side)) = hit {
                    for (k, &j) in free.iter().enumerate() {
                        x[j] += t * p[k];
                    }
                    bind(&mut x, &mut state, i, side);
                    bump(&mut changes)?;
                    continue;
                }
                for (k, &j) in free.iter().enumerate() {
                    x[j] = (x[j] + p[k]).clamp(qp.lower[j], qp.upper[j]);
                }
                let grad = qp.gradient(&x);
                let mut worst: Option<(usize, f64)> = None;
                for i in 0..d {
                    let m = match state[i] {
                        BoundState::Lower => grad[i],
                        BoundState::Upper => -grad[i],
                        _ => continue,
                    };
                    if m < -release_tol && worst.map_or(true, |(_, w)| m < w) {
                        worst = Some((i, m));
                    }
                }
                match worst {
                    Some((i, _)) => {
                        state[i] = BoundState::Free;
                        bump(&mut changes)?;
                    }
                    None => break,
                }
            }
        }
    }

    let grad = qp.gradient(&x);
    let mut lambda_lower = vec![0.0; d];
    let mut lambda_upper = vec![0.0; d];
    for i in 0..d {
        match state[i] {
            BoundState::Lower => lambda_lower[i] = grad[i],
            BoundState::Upper => lambda_upper[i] = -grad[i],
            BoundState::Fixed => {
                lambda_lower[i] = grad[i].max(0.0);
                lambda_upper[i] = (-grad[i]).max(0.0);
            }
            BoundState::Free => {}
        }
    }
    let kkt = check_kkt(qp, &x, &lambda_lower, &lambda_upper);
    Ok(QpSolution {
        objective: qp.objective(&x),
        alpha: x,
        lambda_lower,
        lambda_upper,
        kkt,
        iterations,
        active: state,
    })
}

/// Per-output pieces of the variance objective: `Q_i` maps `vec(A_xz)` to
/// the post-intervention covariate-to-output effects of output `i`, and
/// `r_i` is the part of that effect that avoids every treatment.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceQpInputs {
    /// Indices into `model.outputs`.
    pub outputs: Vec<usize>,
    pub weights: Vec<f64>,
    /// `(I - A_zz)^{-T} kron T_{y_i x}`, each `n_z x (n_x n_z)`.
    pub q: Vec<Matrix>,
    /// Avoid-treatment effect row of output `i`, length `n_z`.
    pub r: Vec<Vec<f64>>,
}

fn resolve_outputs<S: AsRef<str>>(
    model: &SemModel,
    outputs: &[S],
    weights: Option<&[f64]>,
) -> Result<(Vec<usize>, Vec<f64>), QpError> {
    if outputs.is_empty() {
        return Err(QpError::EmptySelection);
    }
    let weights = match weights {
        Some(w) if w.len() != outputs.len() => {
            return Err(QpError::WeightCount(w.len(), outputs.len()))
        }
        Some(w) => w.to_vec(),
        None => vec![1.0; outputs.len()],
    };
    let mut idx = Vec::with_capacity(outputs.len());
    for (name, &w) in outputs.iter().zip(&weights) {
        let name = name.as_ref();
        let i = model
            .output_index(name)
            .ok_or_else(|| QpError::UnknownOutput(name.to_string()))?;
        if !(w > 0.0) || !w.is_finite() {
            return Err(QpError::NonPositiveWeight {
                output: name.to_string(),
                weight: w,
            });
        }
        idx.push(i);
    }
    Ok((idx, weights))
}

pub fn variance_qp_inputs<S: AsRef<str>>(
    model: &SemModel,
    outputs: &[S],
    weights: Option<&[f64]>,
) -> Result<VarianceQpInputs, QpError> {
    model.ensure_valid()?;
    let (idx, weights) = resolve_outputs(model, outputs, weights)?;
    let te = effects::total_effects(model)?;
    let inv_zz_t = linalg::unit_lower_inverse(&model.coef_zz).transpose();
    let q = idx
        .iter()
        .map(|&i| linalg::kron(&inv_zz_t, &te.yx.row_matrix(i)))
        .collect();
    let r = idx.iter().map(|&i| te.yz_avoid.row(i).to_vec()).collect();
    Ok(VarianceQpInputs {
        outputs: idx,
        weights,
        q,
        r,
    })
}

/// Labels `from->to` for `vec(A_xz)` in column-major order.
pub fn coefficient_labels(model: &SemModel) -> Vec<String> {
    let mut labels = Vec::with_capacity(model.n_x() * model.n_z());
    for z in &model.covariates {
        for x in &model.treatments {
            labels.push(format!("{z}->{x}"));
        }
    }
    labels
}

/// The QP over `vec(A_xz)` whose objective equals `sum_i w_i Var[Y_i]`
/// after replacing `A_xz`. `weights` default to 1.
pub fn build_variance_qp<S: AsRef<str>>(
    model: &SemModel,
    outputs: &[S],
    weights: Option<&[f64]>,
    bounds: &Bounds,
) -> Result<BoxQp, QpError> {
    let inputs = variance_qp_inputs(model, outputs, weights)?;
    let (nx, nz) = (model.n_x(), model.n_z());
    if bounds.shape() != (nx, nz) {
        return Err(ModelError::DimensionMismatch {
            what: "coefficient bounds".to_string(),
            expected: (nx, nz),
            found: bounds.shape(),
        }
        .into());
    }
    bounds.check()?;
    let d = nx * nz;
    let sigma = &model.error_cov_z;
    let te = effects::total_effects(model)?;
    let inv_yy = linalg::unit_lower_inverse(&model.coef_yy);
    let fixed_x = &(&te.yx * &model.error_cov_x) * &te.yx.transpose();
    let fixed_y = &(&inv_yy * &model.error_cov_y) * &inv_yy.transpose();

    let mut hessian = Matrix::zeros(d, d);
    let mut linear = vec![0.0; d];
    let mut constant = 0.0;
    for k in 0..inputs.outputs.len() {
        let (q, r, w, i) = (&inputs.q[k], &inputs.r[k], inputs.weights[k], inputs.outputs[k]);
        let sq = sigma * q;
        hessian = &hessian + &(&q.transpose() * &sq).scale(w);
        let sr = sigma.mul_vec(r);
        linalg::axpy(2.0 * w, &q.tr_mul_vec(&sr), &mut linear);
        constant += w * (linalg::dot(r, &sr) + fixed_x[(i, i)] + fixed_y[(i, i)]);
    }
    Ok(BoxQp {
        hessian: hessian.symmetrized(),
        linear,
        constant,
        lower: linalg::vec(&bounds.lower),
        upper: linalg::vec(&bounds.upper),
        labels: coefficient_labels(model),
    })
}

/// A desired mean for one output, on the model's own scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanTarget {
    pub output: String,
    pub value: f64,
    pub weight: f64,
}

impl MeanTarget {
    pub fn new(output: &str, value: f64) -> Self {
        MeanTarget {
            output: output.to_string(),
            value,
            weight: 1.0,
        }
    }
}

/// The QP over the treatment intercepts whose objective equals
/// `sum_i m_i (E[Y_i] - t_i)^2`. Total effects are taken from `model` as
/// given, so a model that already carries a new `A_xz` is handled.
pub fn build_mean_qp(model: &SemModel, targets: &[MeanTarget], bounds: &Bounds) -> Result<BoxQp, QpError> {
    model.ensure_valid()?;
    let names: Vec<&str> = targets.iter().map(|t| t.output.as_str()).collect();
    let weights: Vec<f64> = targets.iter().map(|t| t.weight).collect();
    let (idx, weights) = resolve_outputs(model, &names, Some(&weights))?;
    if let Some(t) = targets.iter().find(|t| !t.value.is_finite()) {
        return Err(QpError::InvalidProblem(format!("target for `{}` is not finite", t.output)));
    }
    let nx = model.n_x();
    if bounds.shape() != (nx, 1) {
        return Err(ModelError::DimensionMismatch {
            what: "intercept bounds".to_string(),
            expected: (nx, 1),
            found: bounds.shape(),
        }
        .into());
    }
    bounds.check()?;
    let te = effects::total_effects(model)?;
    let inv_yy = linalg::unit_lower_inverse(&model.coef_yy);
    let from_z = te.yz.mul_vec(&model.intercept_z);
    let from_y = inv_yy.mul_vec(&model.intercept_y);

    let mut hessian = Matrix::zeros(nx, nx);
    let mut linear = vec![0.0; nx];
    let mut constant = 0.0;
    for ((&i, &m), target) in idx.iter().zip(&weights).zip(targets) {
        let t_row = te.yx.row_matrix(i);
        let offset = from_z[i] + from_y[i] - target.value;
        hessian = &hessian + &(&t_row.transpose() * &t_row).scale(m);
        linalg::axpy(2.0 * m * offset, t_row.as_slice(), &mut linear);
        constant += m * offset * offset;
    }
    Ok(BoxQp {
        hessian: hessian.symmetrized(),
        linear,
        constant,
        lower: bounds.lower.as_slice().to_vec(),
        upper: bounds.upper.as_slice().to_vec(),
        labels: model.treatments.clone(),
    })
}

/// Post-intervention covariate-to-output effect row of `output` at an
/// unconstrained variance optimum. With a nonsingular covariate error
/// covariance and a nonzero treatment-to-output effect row this vector is
/// zero: the through-treatment effect cancels the avoiding one.
pub fn offset_certificate(
    model: &SemModel,
    qp: &BoxQp,
    solution: &QpSolution,
    output: &str,
) -> Result<Vec<f64>, QpError> {
    let i = model
        .output_index(output)
        .ok_or_else(|| QpError::UnknownOutput(output.to_string()))?;
    let (nx, nz) = (model.n_x(), model.n_z());
    if solution.alpha.len() != nx * nz || qp.dim() != nx * nz {
        return Err(QpError::InvalidProblem(
            "solution is not over the covariate-to-treatment coefficients".to_string(),
        ));
    }
    if qp.lower.iter().any(|v| v.is_finite()) || qp.upper.iter().any(|v| v.is_finite()) {
        return Err(QpError::PreconditionUnmet("bounds are finite".to_string()));
    }
    if linalg::cholesky(&model.error_cov_z, 1e-12).is_err() {
        return Err(QpError::PreconditionUnmet(
            "covariate error covariance is singular".to_string(),
        ));
    }
    let te = effects::total_effects(model)?;
    if te.yx.row(i).iter().all(|v| *v == 0.0) {
        return Err(QpError::PreconditionUnmet(format!(
            "treatments have no total effect on `{output}`"
        )));
    }
    let after = effects::apply_intervention(
        model,
        &Intervention::coefficients(linalg::unvec(&solution.alpha, nx, nz)),
    )?;
    Ok(effects::total_effects(&after)?.yz.row(i).to_vec())
}
