//! Total effects, their through-treatment / avoid-treatment split, analytic
//! means and covariances, path enumeration, and interventions on the
//! covariate-to-treatment block.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix};
use crate::model::{SemModel, VariableRole};

/// Path enumeration refuses graphs with more paths than this.
pub const MAX_PATHS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EffectsError {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("source and target are both `{0}`")]
    SameVariable(String),
    #[error("more than {limit} directed paths")]
    PathExplosion { limit: usize },
    #[error("{what}: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        what: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("intervention changes nothing (no coefficients and no intercepts given)")]
    EmptyIntervention,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Total-effect matrices. `a.b` is the effect of block `b` on block `a`
/// (rows are the affected variables).
#[derive(Debug, Clone, PartialEq)]
pub struct TotalEffects {
    pub zz: Matrix,
    pub xz: Matrix,
    pub xx: Matrix,
    pub yz: Matrix,
    pub yx: Matrix,
    pub yy: Matrix,
    /// Covariate-to-output effect carried by paths through a treatment.
    pub yz_through: Matrix,
    /// Covariate-to-output effect carried by paths avoiding every treatment.
    pub yz_avoid: Matrix,
}

fn check_shapes(model: &SemModel) -> Result<(), EffectsError> {
    let (nz, nx, ny) = (model.n_z(), model.n_x(), model.n_y());
    let blocks = [
        ("coef_zz", &model.coef_zz, (nz, nz)),
        ("coef_xz", &model.coef_xz, (nx, nz)),
        ("coef_xx", &model.coef_xx, (nx, nx)),
        ("coef_yz", &model.coef_yz, (ny, nz)),
        ("coef_yx", &model.coef_yx, (ny, nx)),
        ("coef_yy", &model.coef_yy, (ny, ny)),
        ("error_cov_z", &model.error_cov_z, (nz, nz)),
        ("error_cov_x", &model.error_cov_x, (nx, nx)),
        ("error_cov_y", &model.error_cov_y, (ny, ny)),
    ];
    for (what, m, want) in blocks {
        if m.shape() != want {
            return Err(EffectsError::DimensionMismatch {
                what: what.to_string(),
                expected: want,
                found: m.shape(),
            });
        }
    }
    for (what, v, want) in [
        ("intercept_z", &model.intercept_z, nz),
        ("intercept_x", &model.intercept_x, nx),
        ("intercept_y", &model.intercept_y, ny),
    ] {
        if v.len() != want {
            return Err(EffectsError::DimensionMismatch {
                what: what.to_string(),
                expected: (want, 1),
                found: (v.len(), 1),
            });
        }
    }
    Ok(())
}

/// `(I - A)^{-1}` for each within-block matrix.
struct BlockInverses {
    zz: Matrix,
    xx: Matrix,
    yy: Matrix,
}

impl BlockInverses {
    fn of(model: &SemModel) -> Self {
        BlockInverses {
            zz: linalg::unit_lower_inverse(&model.coef_zz),
            xx: linalg::unit_lower_inverse(&model.coef_xx),
            yy: linalg::unit_lower_inverse(&model.coef_yy),
        }
    }
}

pub fn total_effects(model: &SemModel) -> Result<TotalEffects, EffectsError> {
    check_shapes(model)?;
    let inv = BlockInverses::of(model);
    let xz = &(&inv.xx * &model.coef_xz) * &inv.zz;
    let yx = &(&inv.yy * &model.coef_yx) * &inv.xx;
    let yz_through = &yx * &(&model.coef_xz * &inv.zz);
    let yz_avoid = &(&inv.yy * &model.coef_yz) * &inv.zz;
    Ok(TotalEffects {
        zz: &inv.zz * &model.coef_zz,
        xx: &inv.xx * &model.coef_xx,
        yy: &inv.yy * &model.coef_yy,
        yz: &yz_through + &yz_avoid,
        xz,
        yx,
        yz_through,
        yz_avoid,
    })
}

/// `(I - A)^{-1} A` for the stacked coefficient matrix, via a general inverse.
pub fn full_total_effects(model: &SemModel) -> Result<Matrix, EffectsError> {
    check_shapes(model)?;
    let a = model.full_coefficients();
    let n = a.rows();
    let inv = linalg::inverse(&(&Matrix::identity(n) - &a))?;
    Ok(&inv * &a)
}

/// Means and covariances implied by the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean_z: Vec<f64>,
    pub mean_x: Vec<f64>,
    pub mean_y: Vec<f64>,
    pub var_z: Matrix,
    pub var_x: Matrix,
    pub var_y: Matrix,
    /// `Cov[X, Z]`, `n_x x n_z`.
    pub cov_xz: Matrix,
}

fn sandwich(t: &Matrix, s: &Matrix) -> Matrix {
    &(t * s) * &t.transpose()
}

pub fn moments(model: &SemModel) -> Result<Moments, EffectsError> {
    let te = total_effects(model)?;
    let inv = BlockInverses::of(model);
    let add = |a: Vec<f64>, b: Vec<f64>| -> Vec<f64> { a.iter().zip(&b).map(|(x, y)| x + y).collect() };

    let mean_z = inv.zz.mul_vec(&model.intercept_z);
    let mean_x = add(
        te.xz.mul_vec(&model.intercept_z),
        inv.xx.mul_vec(&model.intercept_x),
    );
    let mean_y = add(
        add(
            te.yz.mul_vec(&model.intercept_z),
            te.yx.mul_vec(&model.intercept_x),
        ),
        inv.yy.mul_vec(&model.intercept_y),
    );

    let var_z = sandwich(&inv.zz, &model.error_cov_z).symmetrized();
    let var_x = (&sandwich(&te.xz, &model.error_cov_z) + &sandwich(&inv.xx, &model.error_cov_x))
        .symmetrized();
    let var_y = (&(&sandwich(&te.yz, &model.error_cov_z) + &sandwich(&te.yx, &model.error_cov_x))
        + &sandwich(&inv.yy, &model.error_cov_y))
        .symmetrized();
    let cov_xz = &(&inv.xx * &model.coef_xz) * &var_z;
    Ok(Moments {
        mean_z,
        mean_x,
        mean_y,
        var_z,
        var_x,
        var_y,
        cov_xz,
    })
}

/// Replacement covariate-to-treatment coefficients and/or treatment
/// intercepts. Treatment error covariances are never changed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Intervention {
    pub coef_xz: Option<Matrix>,
    pub intercept_x: Option<Vec<f64>>,
}

impl Intervention {
    pub fn coefficients(coef_xz: Matrix) -> Self {
        Intervention {
            coef_xz: Some(coef_xz),
            intercept_x: None,
        }
    }

    pub fn intercepts(intercept_x: Vec<f64>) -> Self {
        Intervention {
            coef_xz: None,
            intercept_x: Some(intercept_x),
        }
    }
}

pub fn apply_intervention(model: &SemModel, iv: &Intervention) -> Result<SemModel, EffectsError> {
    if iv.coef_xz.is_none() && iv.intercept_x.is_none() {
        return Err(EffectsError::EmptyIntervention);
    }
    let mut out = model.clone();
    if let Some(c) = &iv.coef_xz {
        let want = (model.n_x(), model.n_z());
        if c.shape() != want {
            return Err(EffectsError::DimensionMismatch {
                what: "intervention coef_xz".to_string(),
                expected: want,
                found: c.shape(),
            });
        }
        out.coef_xz = c.clone();
    }
    if let Some(mu) = &iv.intercept_x {
        if mu.len() != model.n_x() {
            return Err(EffectsError::DimensionMismatch {
                what: "intervention intercept_x".to_string(),
                expected: (model.n_x(), 1),
                found: (mu.len(), 1),
            });
        }
        out.intercept_x = mu.clone();
    }
    Ok(out)
}

/// One directed path and the product of its coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEffect {
    pub path: Vec<String>,
    pub effect: f64,
    /// At least one variable on the path is a treatment.
    pub through_treatment: bool,
}

/// Through-treatment, avoiding and total sums over a path list.
pub fn path_totals(paths: &[PathEffect]) -> (f64, f64, f64) {
    let through: f64 = paths.iter().filter(|p| p.through_treatment).map(|p| p.effect).sum();
    let avoid: f64 = paths.iter().filter(|p| !p.through_treatment).map(|p| p.effect).sum();
    (through, avoid, through + avoid)
}

/// Every directed path from `source` to `target` over nonzero coefficients,
/// in depth-first order (children visited in `Z, X, Y` block order).
pub fn enumerate_path_effects(
    model: &SemModel,
    source: &str,
    target: &str,
) -> Result<Vec<PathEffect>, EffectsError> {
    check_shapes(model)?;
    let s = model
        .global_index(source)
        .ok_or_else(|| EffectsError::UnknownVariable(source.to_string()))?;
    let t = model
        .global_index(target)
        .ok_or_else(|| EffectsError::UnknownVariable(target.to_string()))?;
    if s == t {
        return Err(EffectsError::SameVariable(source.to_string()));
    }
    let names = model.names();
    let is_treatment: Vec<bool> = names
        .iter()
        .map(|n| matches!(model.locate(n), Some((VariableRole::Treatment, _))))
        .collect();
    let a = model.full_coefficients();
    let n = a.rows();
    let children: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|j| {
            (0..n)
                .filter(|&i| a[(i, j)] != 0.0)
                .map(|i| (i, a[(i, j)]))
                .collect()
        })
        .collect();

    // only descend into variables that can still reach the target
    let mut reaches = vec![false; n];
    reaches[t] = true;
    let mut stack = vec![t];
    while let Some(u) = stack.pop() {
        for p in 0..n {
            if a[(u, p)] != 0.0 && !reaches[p] {
                reaches[p] = true;
                stack.push(p);
            }
        }
    }

    let mut out = Vec::new();
    if !reaches[s] {
        return Ok(out);
    }
    let mut path = vec![s];
    // (node, next child slot, running product)
    let mut frames: Vec<(usize, usize, f64)> = vec![(s, 0, 1.0)];
    while let Some(frame) = frames.last_mut() {
        let (node, slot, product) = *frame;
        if slot >= children[node].len() {
            frames.pop();
            path.pop();
            continue;
        }
        frame.1 += 1;
        let (child, coef) = children[node][slot];
        if !reaches[child] {
            continue;
        }
        let effect = product * coef;
        if child == t {
            if out.len() == MAX_PATHS {
                return Err(EffectsError::PathExplosion { limit: MAX_PATHS });
            }
            let mut nodes = path.clone();
            nodes.push(child);
            out.push(PathEffect {
                through_treatment: nodes.iter().any(|&i| is_treatment[i]),
                path: nodes.iter().map(|&i| names[i].to_string()).collect(),
                effect,
            });
        } else {
            path.push(child);
            frames.push((child, 0, effect));
        }
    }
    Ok(out)
}
