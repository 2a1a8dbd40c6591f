//! Reference models and random model generators for test suites.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::linalg::Matrix;
use crate::model::{partition_by_treatment, Edge, SemGraph, SemModel};
use crate::qp::BoxQp;

/// The journal-pages model: covariates `z1` (advertising) and `z2`
/// (submissions), treatment `x` (acceptance rate), output `y` (pages), all on
/// the log scale, every error variance 0.1.
pub fn journal_model() -> SemModel {
    let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let mut m = SemModel::zeroed(names(&["z1", "z2"]), names(&["x"]), names(&["y"]));
    m.coef_zz[(1, 0)] = 0.1;
    m.coef_yz[(0, 1)] = 1.0;
    m.coef_yx[(0, 0)] = 1.0;
    m.intercept_z = [libm::log(10.0), libm::log(100.0)].to_vec();
    m.intercept_x = [libm::log(0.3)].to_vec();
    m.intercept_y = [libm::log(10.0)].to_vec();
    m.error_cov_z = Matrix::diagonal(&[0.1, 0.1]);
    m.error_cov_x = Matrix::diagonal(&[0.1]);
    m.error_cov_y = Matrix::diagonal(&[0.1]);
    m
}

/// Path coefficients of the six-variable example graph.
#[derive(Debug, Clone, Copy)]
pub struct Example3Coefs {
    pub z2z1: f64,
    pub x1z1: f64,
    pub x2z1: f64,
    pub x2z2: f64,
    pub x2x1: f64,
    pub y1z1: f64,
    pub y1x1: f64,
    pub y2z1: f64,
    pub y2z2: f64,
    pub y2x1: f64,
    pub y2x2: f64,
    pub y2y1: f64,
}

pub const EXAMPLE3: Example3Coefs = Example3Coefs {
    z2z1: 0.2,
    x1z1: 0.3,
    x2z1: -0.4,
    x2z2: 0.5,
    x2x1: 0.6,
    y1z1: -0.7,
    y1x1: 0.8,
    y2z1: 0.9,
    y2z2: -1.1,
    y2x1: 1.2,
    y2x2: 0.35,
    y2y1: -0.45,
};

/// Six-variable graph over `z1, z2, x1, x2, y1, y2` with unit error
/// variances, listed in a deliberately non-topological order.
pub fn example3_graph() -> (SemGraph, Example3Coefs) {
    let c = EXAMPLE3;
    let variables: Vec<String> = ["y2", "x1", "z2", "y1", "z1", "x2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let edges = [
        ("z1", "z2", c.z2z1),
        ("z1", "x1", c.x1z1),
        ("z1", "x2", c.x2z1),
        ("z2", "x2", c.x2z2),
        ("x1", "x2", c.x2x1),
        ("z1", "y1", c.y1z1),
        ("x1", "y1", c.y1x1),
        ("z1", "y2", c.y2z1),
        ("z2", "y2", c.y2z2),
        ("x1", "y2", c.y2x1),
        ("x2", "y2", c.y2x2),
        ("y1", "y2", c.y2y1),
    ]
    .iter()
    .map(|(f, t, v)| Edge::new(f, t, *v))
    .collect();
    let n = variables.len();
    (
        SemGraph {
            variables,
            intercepts: [1.0, 2.0, 3.0, 4.0, 5.0, 6.0].to_vec(),
            error_cov: Matrix::identity(n),
            edges,
        },
        c,
    )
}

/// Seeded generator for random models.
pub struct ModelGen {
    rng: ChaCha8Rng,
}

impl ModelGen {
    pub fn new(seed: u64) -> Self {
        ModelGen {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform on `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn int(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.rng.next_u64() % (hi - lo + 1) as u64) as usize
    }

    pub fn matrix(&mut self, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| self.uniform(lo, hi))
    }

    /// Random symmetric positive definite matrix `A A^T / n + eps I`.
    pub fn spd(&mut self, n: usize, eps: f64) -> Matrix {
        let a = self.matrix(n, n, -1.0, 1.0);
        let aat = &a * &a.transpose();
        let scale = if n == 0 { 1.0 } else { 1.0 / n as f64 };
        &aat.scale(scale) + &Matrix::identity(n).scale(eps)
    }

    /// Random DAG over `n` variables named `v0..`, edges present with
    /// probability `density`, coefficients uniform in `[-1, 1]`.
    pub fn graph(&mut self, n: usize, density: f64) -> SemGraph {
        // random topological order, names listed in shuffled order
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.int(0, i);
            order.swap(i, j);
        }
        let variables: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if self.unit() < density {
                    let coef = self.uniform(-1.0, 1.0);
                    edges.push(Edge::new(&variables[order[a]], &variables[order[b]], coef));
                }
            }
        }
        let variances: Vec<f64> = (0..n).map(|_| self.uniform(0.05, 1.0)).collect();
        SemGraph {
            intercepts: (0..n).map(|_| self.uniform(-2.0, 2.0)).collect(),
            error_cov: Matrix::diagonal(&variances),
            variables,
            edges,
        }
    }

    /// Random valid model with between 2 and `max_vars` variables, a random
    /// nonempty treatment set and dense within-block error covariances.
    pub fn model(&mut self, max_vars: usize) -> SemModel {
        let n = self.int(2, max_vars.max(2));
        let g = self.graph(n, 0.5);
        let mut m = self.partition(&g);
        m.error_cov_z = self.spd(m.n_z(), 0.05);
        m.error_cov_x = self.spd(m.n_x(), 0.05);
        m.error_cov_y = self.spd(m.n_y(), 0.05);
        m
    }

    /// Partitions `g` by a random treatment set of up to half the variables.
    /// Sets where one treatment reaches another through a non-treatment are
    /// redrawn; a single treatment always partitions.
    pub fn partition(&mut self, g: &SemGraph) -> SemModel {
        let n = g.variables.len();
        for _ in 0..20 {
            let k = self.int(1, (n / 2).max(1));
            let mut pool = g.variables.clone();
            let mut treatments = Vec::new();
            for _ in 0..k {
                let i = self.int(0, pool.len() - 1);
                treatments.push(pool.swap_remove(i));
            }
            if let Ok(m) = partition_by_treatment(g, &treatments) {
                return m;
            }
        }
        let t = self.int(0, n - 1);
        partition_by_treatment(g, &g.variables[t..=t]).expect("generated graph is a DAG")
    }

    /// Random model with exactly `nz` covariates, `nx` treatments and `ny`
    /// outputs, dense blocks.
    pub fn block_model(&mut self, nz: usize, nx: usize, ny: usize) -> SemModel {
        let name = |p: &str, k: usize| (0..k).map(|i| format!("{p}{}", i + 1)).collect();
        let mut m = SemModel::zeroed(name("z", nz), name("x", nx), name("y", ny));
        let strict = |g: &mut Self, n: usize| {
            Matrix::from_fn(n, n, |i, j| if j < i { g.uniform(-1.0, 1.0) } else { 0.0 })
        };
        m.coef_zz = strict(self, nz);
        m.coef_xx = strict(self, nx);
        m.coef_yy = strict(self, ny);
        m.coef_xz = self.matrix(nx, nz, -1.0, 1.0);
        m.coef_yz = self.matrix(ny, nz, -1.0, 1.0);
        m.coef_yx = self.matrix(ny, nx, -1.0, 1.0);
        m.intercept_z = (0..nz).map(|_| self.uniform(-2.0, 2.0)).collect();
        m.intercept_x = (0..nx).map(|_| self.uniform(-2.0, 2.0)).collect();
        m.intercept_y = (0..ny).map(|_| self.uniform(-2.0, 2.0)).collect();
        m.error_cov_z = self.spd(nz, 0.05);
        m.error_cov_x = self.spd(nx, 0.05);
        m.error_cov_y = self.spd(ny, 0.05);
        m
    }

    /// Strictly convex box QP of dimension `d` with finite bounds.
    pub fn box_qp(&mut self, d: usize) -> BoxQp {
        let hessian = self.spd(d, 0.05);
        let linear = (0..d).map(|_| self.uniform(-3.0, 3.0)).collect();
        let mut lower = Vec::with_capacity(d);
        let mut upper = Vec::with_capacity(d);
        for _ in 0..d {
            let a = self.uniform(-2.0, 2.0);
            let w = self.uniform(0.0, 2.0);
            lower.push(a);
            upper.push(a + w);
        }
        BoxQp {
            hessian,
            linear,
            constant: self.uniform(-1.0, 1.0),
            lower,
            upper,
            labels: (0..d).map(|i| format!("a{i}")).collect(),
        }
    }
}

/// Gaussian elimination with partial pivoting; `None` if singular.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-14 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = alloc::vec![0.0; n];
    for c in (0..n).rev() {
        let s: f64 = (c + 1..n).map(|k| a[c][k] * x[k]).sum();
        x[c] = (b[c] - s) / a[c][c];
    }
    Some(x)
}

/// Minimum of a strictly convex box QP by trying every assignment of each
/// coordinate to free, lower or upper (`3^d` candidates). Returns the point
/// and its objective.
pub fn brute_force_box_qp(qp: &BoxQp) -> (Vec<f64>, f64) {
    let d = qp.linear.len();
    let h = |i: usize, j: usize| qp.hessian[(i, j)];
    let eval = |x: &[f64]| {
        let mut v = qp.constant;
        for i in 0..d {
            v += qp.linear[i] * x[i];
            for j in 0..d {
                v += x[i] * h(i, j) * x[j];
            }
        }
        v
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    for code in 0..3usize.pow(d as u32) {
        let mut x = alloc::vec![0.0; d];
        let mut free = Vec::new();
        let mut c = code;
        for i in 0..d {
            match c % 3 {
                0 => free.push(i),
                1 => x[i] = qp.lower[i],
                _ => x[i] = qp.upper[i],
            }
            c /= 3;
        }
        // 2 H_FF x_F = -(g_F + 2 H_FB x_B)
        let a: Vec<Vec<f64>> = free.iter().map(|&i| free.iter().map(|&j| 2.0 * h(i, j)).collect()).collect();
        let b: Vec<f64> = free
            .iter()
            .map(|&i| -(qp.linear[i] + (0..d).filter(|j| !free.contains(j)).map(|j| 2.0 * h(i, j) * x[j]).sum::<f64>()))
            .collect();
        let Some(xf) = gauss_solve(a, b) else { continue };
        for (k, &i) in free.iter().enumerate() {
            x[i] = xf[k];
        }
        if (0..d).any(|i| x[i] < qp.lower[i] - 1e-12 || x[i] > qp.upper[i] + 1e-12) {
            continue;
        }
        let v = eval(&x);
        if best.as_ref().map_or(true, |(_, b)| v < *b) {
            best = Some((x, v));
        }
    }
    best.expect("the all-bound assignment is always feasible")
}
