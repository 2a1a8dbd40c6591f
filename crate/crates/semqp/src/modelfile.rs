//! The JSON model file and its translation into a model, bounds and targets.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use semqp_core::model::{Edge, VariableRole};
use semqp_core::{partition_by_treatment, Bounds, Matrix, MeanTarget, SemGraph, SemModel};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub variables: Vec<VariableSpec>,
    #[serde(default)]
    pub edges: Vec<EdgeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treatments: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub targets: Vec<TargetSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub weights: Vec<WeightSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RoleSpec {
    Covariate,
    Treatment,
    Output,
    #[default]
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableSpec {
    pub name: String,
    #[serde(default)]
    pub role: RoleSpec,
    #[serde(default)]
    pub intercept: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_variance: Option<f64>,
    /// Error covariances with other variables, keyed by name. An entry for
    /// the variable itself is its error variance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_cov_row: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub from: String,
    pub to: String,
    pub coef: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    #[serde(default)]
    pub coef: Vec<CoefBound>,
    #[serde(default)]
    pub intercept: Vec<InterceptBound>,
}

/// `null` or a missing side means no bound on that side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefBound {
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub lower: Option<f64>,
    #[serde(default)]
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterceptBound {
    pub treatment: String,
    #[serde(default)]
    pub lower: Option<f64>,
    #[serde(default)]
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// The model's own scale.
    #[default]
    Log,
    /// Converted by the natural log before optimisation.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub output: String,
    pub value: f64,
    #[serde(default)]
    pub scale: Scale,
    #[serde(default = "one")]
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    pub output: String,
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

/// A resolved mean target: the declared value and its model-scale form.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub spec: TargetSpec,
    pub model_value: f64,
}

impl Target {
    pub fn to_mean_target(&self) -> MeanTarget {
        MeanTarget {
            output: self.spec.output.clone(),
            value: self.model_value,
            weight: self.spec.weight,
        }
    }
}

/// Everything the commands need from a model file.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub model: SemModel,
    /// `n_x x n_z`, over `coef_xz`.
    pub coef_bounds: Bounds,
    /// `n_x x 1`, over `intercept_x`.
    pub intercept_bounds: Bounds,
    pub targets: Vec<Target>,
    pub weights: Vec<WeightSpec>,
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        read_json(path)
    }

    /// Builds the graph over all variables in file order.
    pub fn graph(&self) -> Result<SemGraph, CliError> {
        if self.variables.is_empty() {
            return Err(CliError::validation("variables: must not be empty"));
        }
        let mut index = HashMap::new();
        for (i, v) in self.variables.iter().enumerate() {
            if v.name.is_empty() {
                return Err(CliError::validation(format!("variables[{i}].name: must not be empty")));
            }
            if index.insert(v.name.as_str(), i).is_some() {
                return Err(CliError::validation(format!(
                    "variables[{i}].name: duplicate variable `{}`",
                    v.name
                )));
            }
        }
        let n = self.variables.len();
        let mut cov = Matrix::zeros(n, n);
        let mut set = vec![vec![false; n]; n];
        for (i, v) in self.variables.iter().enumerate() {
            if !v.intercept.is_finite() {
                return Err(CliError::validation(format!("variables[{i}].intercept: not finite")));
            }
            let mut put = |j: usize, value: f64, field: String| -> Result<(), CliError> {
                if !value.is_finite() {
                    return Err(CliError::validation(format!("{field}: not finite")));
                }
                if set[i][j] && cov[(i, j)] != value {
                    return Err(CliError::validation(format!(
                        "{field}: conflicts with an earlier value {}",
                        cov[(i, j)]
                    )));
                }
                cov[(i, j)] = value;
                cov[(j, i)] = value;
                set[i][j] = true;
                set[j][i] = true;
                Ok(())
            };
            if let Some(var) = v.error_variance {
                put(i, var, format!("variables[{i}].error_variance"))?;
            }
            for (other, &value) in v.error_cov_row.iter().flatten() {
                let field = format!("variables[{i}].error_cov_row.{other}");
                let j = *index
                    .get(other.as_str())
                    .ok_or_else(|| CliError::validation(format!("{field}: unknown variable")))?;
                put(j, value, field)?;
            }
            if !set[i][i] {
                return Err(CliError::validation(format!(
                    "variables[{i}]: error variance of `{}` missing",
                    v.name
                )));
            }
        }
        let mut edges = Vec::with_capacity(self.edges.len());
        for (k, e) in self.edges.iter().enumerate() {
            for (side, name) in [("from", &e.from), ("to", &e.to)] {
                if !index.contains_key(name.as_str()) {
                    return Err(CliError::validation(format!(
                        "edges[{k}].{side}: unknown variable `{name}`"
                    )));
                }
            }
            if e.from == e.to {
                return Err(CliError::validation(format!(
                    "edges[{k}]: self-loop on `{}`",
                    e.from
                )));
            }
            if !e.coef.is_finite() {
                return Err(CliError::validation(format!("edges[{k}].coef: not finite")));
            }
            edges.push(Edge::new(&e.from, &e.to, e.coef));
        }
        Ok(SemGraph {
            variables: self.variables.iter().map(|v| v.name.clone()).collect(),
            intercepts: self.variables.iter().map(|v| v.intercept).collect(),
            error_cov: cov,
            edges,
        })
    }

    pub fn model(&self) -> Result<SemModel, CliError> {
        let graph = self.graph()?;
        let auto = self.variables.iter().filter(|v| v.role == RoleSpec::Auto).count();
        let model = if auto == self.variables.len() {
            let treatments = self.treatments.as_deref().unwrap_or_default();
            if treatments.is_empty() {
                return Err(CliError::validation(
                    "treatments: required and nonempty when every role is `auto`",
                ));
            }
            partition_by_treatment(&graph, treatments)?
        } else if auto == 0 {
            if self.treatments.is_some() {
                return Err(CliError::validation(
                    "treatments: only allowed when every role is `auto`",
                ));
            }
            let roles: Vec<VariableRole> = self
                .variables
                .iter()
                .map(|v| match v.role {
                    RoleSpec::Covariate => VariableRole::Covariate,
                    RoleSpec::Treatment => VariableRole::Treatment,
                    _ => VariableRole::Output,
                })
                .collect();
            graph.into_model_with_roles(&roles)?
        } else {
            return Err(CliError::validation(
                "variables: roles must be either all `auto` or all explicit",
            ));
        };
        model.ensure_valid()?;
        Ok(model)
    }

    /// Resolves the model, bounds and targets. Coefficients and intercepts
    /// without a bounds entry are fixed at their current value, or left free
    /// when `allow_unbounded` is set.
    pub fn problem(&self, allow_unbounded: bool) -> Result<Problem, CliError> {
        let model = self.model()?;
        let (nx, nz) = (model.n_x(), model.n_z());
        let spec = self.bounds.clone().unwrap_or_default();

        let side = |v: Option<f64>, inf: f64| v.unwrap_or(inf);
        let mut coef_bounds = if allow_unbounded {
            Bounds::unbounded(nx, nz)
        } else {
            Bounds::fixed(&model.coef_xz)
        };
        let mut seen = HashSet::new();
        for (k, b) in spec.coef.iter().enumerate() {
            let field = format!("bounds.coef[{k}]");
            let i = model.treatments.iter().position(|t| *t == b.to);
            let j = model.covariates.iter().position(|z| *z == b.from);
            let (Some(i), Some(j)) = (i, j) else {
                return Err(CliError::validation(format!(
                    "{field}: {} -> {} is not a covariate-to-treatment coefficient",
                    b.from, b.to
                )));
            };
            if !seen.insert((i, j)) {
                return Err(CliError::validation(format!(
                    "{field}: duplicate bound for {} -> {}",
                    b.from, b.to
                )));
            }
            coef_bounds.lower[(i, j)] = side(b.lower, f64::NEG_INFINITY);
            coef_bounds.upper[(i, j)] = side(b.upper, f64::INFINITY);
        }
        coef_bounds
            .check()
            .map_err(|e| CliError::validation(format!("bounds.coef: {e}")))?;

        let current = Matrix::column(&model.intercept_x);
        let mut intercept_bounds = if allow_unbounded {
            Bounds::unbounded(nx, 1)
        } else {
            Bounds::fixed(&current)
        };
        let mut seen = HashSet::new();
        for (k, b) in spec.intercept.iter().enumerate() {
            let field = format!("bounds.intercept[{k}]");
            let Some(i) = model.treatments.iter().position(|t| *t == b.treatment) else {
                return Err(CliError::validation(format!(
                    "{field}.treatment: `{}` is not a treatment",
                    b.treatment
                )));
            };
            if !seen.insert(i) {
                return Err(CliError::validation(format!(
                    "{field}: duplicate bound for `{}`",
                    b.treatment
                )));
            }
            intercept_bounds.lower[(i, 0)] = side(b.lower, f64::NEG_INFINITY);
            intercept_bounds.upper[(i, 0)] = side(b.upper, f64::INFINITY);
        }
        intercept_bounds
            .check()
            .map_err(|e| CliError::validation(format!("bounds.intercept: {e}")))?;

        let targets = self
            .targets
            .iter()
            .enumerate()
            .map(|(k, t)| resolve_target(&model, t, &format!("targets[{k}]")))
            .collect::<Result<_, _>>()?;
        for (k, w) in self.weights.iter().enumerate() {
            check_weight(&model, w, &format!("weights[{k}]"))?;
        }
        Ok(Problem {
            model,
            coef_bounds,
            intercept_bounds,
            targets,
            weights: self.weights.clone(),
        })
    }
}

pub fn resolve_target(model: &SemModel, t: &TargetSpec, field: &str) -> Result<Target, CliError> {
    if model.output_index(&t.output).is_none() {
        return Err(CliError::validation(format!(
            "{field}.output: `{}` is not an output",
            t.output
        )));
    }
    if !t.value.is_finite() {
        return Err(CliError::validation(format!("{field}.value: not finite")));
    }
    if !(t.weight > 0.0) || !t.weight.is_finite() {
        return Err(CliError::validation(format!("{field}.weight: must be positive")));
    }
    let model_value = match t.scale {
        Scale::Log => t.value,
        Scale::Linear if t.value > 0.0 => t.value.ln(),
        Scale::Linear => {
            return Err(CliError::validation(format!(
                "{field}.value: linear-scale target must be positive, got {}",
                t.value
            )))
        }
    };
    Ok(Target {
        spec: t.clone(),
        model_value,
    })
}

pub fn check_weight(model: &SemModel, w: &WeightSpec, field: &str) -> Result<(), CliError> {
    if model.output_index(&w.output).is_none() {
        return Err(CliError::validation(format!(
            "{field}.output: `{}` is not an output",
            w.output
        )));
    }
    if !(w.weight > 0.0) || !w.weight.is_finite() {
        return Err(CliError::validation(format!("{field}.weight: must be positive")));
    }
    Ok(())
}

/// Any JSON document with a `coefficients` array; other keys are ignored so a
/// variance report can be passed as is.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct CoefficientFile {
    pub coefficients: Vec<EdgeSpec>,
}

impl CoefficientFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        read_json(path)
    }

    /// `coef_xz` of `model` with the listed entries replaced.
    pub fn apply_to(&self, model: &SemModel) -> Result<Matrix, CliError> {
        let mut coef = model.coef_xz.clone();
        for (k, e) in self.coefficients.iter().enumerate() {
            let i = model.treatments.iter().position(|t| *t == e.to);
            let j = model.covariates.iter().position(|z| *z == e.from);
            let (Some(i), Some(j)) = (i, j) else {
                return Err(CliError::validation(format!(
                    "coefficients[{k}]: {} -> {} is not a covariate-to-treatment coefficient",
                    e.from, e.to
                )));
            };
            if !e.coef.is_finite() {
                return Err(CliError::validation(format!("coefficients[{k}].coef: not finite")));
            }
            coef[(i, j)] = e.coef;
        }
        Ok(coef)
    }
}
