//! Monte Carlo simulation of a model with Gaussian errors, used as an
//! independent check on the analytic moments.
//!
//! Samples are generated in fixed-size chunks. Chunk `k` draws from
//! ChaCha8 seeded with `seed_from_u64(seed)` on stream `k`, so a chunk's
//! samples depend only on the seed and its index. Chunks are merged in
//! index order, which makes the result bitwise identical however the chunks
//! are scheduled.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

use crate::effects::Moments;
use crate::linalg::{self, Matrix};
use crate::model::{ModelError, SemModel};

/// Samples per chunk.
pub const CHUNK_SIZE: usize = 1 << 16;
/// Most negative error-covariance eigenvalue tolerated.
pub const NEG_EIGEN_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("error covariance has eigenvalue {0}")]
    CholeskyFailure(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    pub n_samples: usize,
    pub seed: u64,
    /// Pair every error draw with its negation.
    pub antithetic: bool,
}

impl SimConfig {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        SimConfig {
            n_samples,
            seed,
            antithetic: false,
        }
    }

    pub fn chunks(&self) -> usize {
        self.n_samples.div_ceil(CHUNK_SIZE)
    }
}

/// Running mean and centred cross-product sums (Welford, merged with Chan's
/// update).
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    count: u64,
    mean: Vec<f64>,
    /// Upper triangle of the centred sum of outer products, row-major.
    m2: Vec<f64>,
    dim: usize,
}

impl MomentAccumulator {
    pub fn new(dim: usize) -> Self {
        MomentAccumulator {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim * dim],
            dim,
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn push(&mut self, x: &[f64], delta: &mut [f64]) {
        let n = self.dim;
        self.count += 1;
        let inv = 1.0 / self.count as f64;
        for i in 0..n {
            delta[i] = x[i] - self.mean[i];
            self.mean[i] += delta[i] * inv;
        }
        for i in 0..n {
            let row = &mut self.m2[i * n..(i + 1) * n];
            let di = delta[i];
            for j in i..n {
                row[j] += di * (x[j] - self.mean[j]);
            }
        }
    }

    pub fn merge(&mut self, other: &MomentAccumulator) {
        assert_eq!(self.dim, other.dim, "accumulator dimension mismatch");
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let n = self.dim;
        let (na, nb) = (self.count as f64, other.count as f64);
        let total = na + nb;
        let delta: Vec<f64> = (0..n).map(|i| other.mean[i] - self.mean[i]).collect();
        for i in 0..n {
            for j in i..n {
                self.m2[i * n + j] += other.m2[i * n + j] + delta[i] * delta[j] * na * nb / total;
            }
        }
        for i in 0..n {
            self.mean[i] += delta[i] * nb / total;
        }
        self.count += other.count;
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Unbiased sample covariance.
    pub fn covariance(&self) -> Matrix {
        let n = self.dim;
        let denom = (self.count as f64 - 1.0).max(1.0);
        Matrix::from_fn(n, n, |i, j| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            self.m2[a * n + b] / denom
        })
    }
}

/// Sample means and covariances per block, with standard errors.
///
/// Standard errors are normal-theory: `sqrt(s_ii / n)` for a mean and
/// `sqrt((s_ij^2 + s_ii s_jj) / (n - 1))` for a covariance, which is
/// `sqrt(2 / (n - 1)) s_ii` on the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMoments {
    pub n_samples: usize,
    pub mean_z: Vec<f64>,
    pub mean_x: Vec<f64>,
    pub mean_y: Vec<f64>,
    pub var_z: Matrix,
    pub var_x: Matrix,
    pub var_y: Matrix,
    pub cov_xz: Matrix,
    pub se_mean_z: Vec<f64>,
    pub se_mean_x: Vec<f64>,
    pub se_mean_y: Vec<f64>,
    pub se_var_z: Matrix,
    pub se_var_x: Matrix,
    pub se_var_y: Matrix,
    pub se_cov_xz: Matrix,
}

impl SampleMoments {
    pub fn from_accumulator(nz: usize, nx: usize, ny: usize, acc: &MomentAccumulator) -> Self {
        assert_eq!(acc.dim, nz + nx + ny, "accumulator dimension mismatch");
        let n = acc.count as f64;
        let cov = acc.covariance();
        let mean = acc.mean();
        let se_mean: Vec<f64> = (0..acc.dim).map(|i| libm::sqrt(cov[(i, i)] / n)).collect();
        let se_cov = Matrix::from_fn(acc.dim, acc.dim, |i, j| {
            libm::sqrt((cov[(i, j)] * cov[(i, j)] + cov[(i, i)] * cov[(j, j)]) / (n - 1.0))
        });
        let (z, x, y): (Vec<usize>, Vec<usize>, Vec<usize>) = (
            (0..nz).collect(),
            (nz..nz + nx).collect(),
            (nz + nx..acc.dim).collect(),
        );
        let pick = |v: &[f64], idx: &[usize]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        SampleMoments {
            n_samples: acc.count as usize,
            mean_z: pick(mean, &z),
            mean_x: pick(mean, &x),
            mean_y: pick(mean, &y),
            var_z: cov.select(&z, &z),
            var_x: cov.select(&x, &x),
            var_y: cov.select(&y, &y),
            cov_xz: cov.select(&x, &z),
            se_mean_z: pick(&se_mean, &z),
            se_mean_x: pick(&se_mean, &x),
            se_mean_y: pick(&se_mean, &y),
            se_var_z: se_cov.select(&z, &z),
            se_var_x: se_cov.select(&x, &x),
            se_var_y: se_cov.select(&y, &y),
            se_cov_xz: se_cov.select(&x, &z),
        }
    }
}

/// Standard normals by Box-Muller, both outputs used.
struct Normals {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Normals {
    fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Normals { rng, spare: None }
    }

    fn next(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        // u1 in (0, 1], u2 in [0, 1)
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * SCALE;
        let u2 = (self.rng.next_u64() >> 11) as f64 * SCALE;
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let (s, c) = libm::sincos(2.0 * PI * u2);
        self.spare = Some(r * s);
        r * c
    }
}

/// Everything needed to draw samples from one model.
#[derive(Debug, Clone)]
pub struct Sampler {
    nz: usize,
    nx: usize,
    ny: usize,
    coef: Matrix,
    intercept: Vec<f64>,
    factor: Matrix,
}

impl Sampler {
    pub fn new(model: &SemModel) -> Result<Self, SimError> {
        let (nz, nx, ny) = (model.n_z(), model.n_x(), model.n_y());
        let mut factor = Matrix::zeros(nz + nx + ny, nz + nx + ny);
        let mut offset = 0;
        // the PSD check is done here, with this module's tolerance
        let mut shape_only = model.clone();
        shape_only.error_cov_z = Matrix::identity(nz);
        shape_only.error_cov_x = Matrix::identity(nx);
        shape_only.error_cov_y = Matrix::identity(ny);
        shape_only.ensure_valid()?;
        for sigma in [&model.error_cov_z, &model.error_cov_x, &model.error_cov_y] {
            let f = linalg::psd_factor(&sigma.symmetrized(), NEG_EIGEN_TOL).map_err(SimError::CholeskyFailure)?;
            for i in 0..f.rows() {
                for j in 0..f.cols() {
                    factor[(offset + i, offset + j)] = f[(i, j)];
                }
            }
            offset += f.rows();
        }
        Ok(Sampler {
            nz,
            nx,
            ny,
            coef: model.full_coefficients(),
            intercept: model.full_intercepts(),
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.nz + self.nx + self.ny
    }

    /// Solves `v = mu + A v + F u` by forward substitution.
    fn evaluate(&self, u: &[f64], sign: f64, v: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let f = self.factor.row(i);
            let a = self.coef.row(i);
            let mut s = 0.0;
            for k in 0..n {
                s += f[k] * u[k];
            }
            let mut acc = self.intercept[i] + sign * s;
            for j in 0..i {
                acc += a[j] * v[j];
            }
            v[i] = acc;
        }
    }

    /// Samples of chunk `index` accumulated.
    pub fn run_chunk(&self, config: &SimConfig, index: usize) -> MomentAccumulator {
        let n = self.dim();
        let start = index * CHUNK_SIZE;
        let end = (start + CHUNK_SIZE).min(config.n_samples);
        let mut acc = MomentAccumulator::new(n);
        let mut normals = Normals::new(config.seed, index as u64);
        let mut u = vec![0.0; n];
        let mut v = vec![0.0; n];
        let mut delta = vec![0.0; n];
        let mut k = start;
        while k < end {
            for ui in u.iter_mut() {
                *ui = normals.next();
            }
            self.evaluate(&u, 1.0, &mut v);
            acc.push(&v, &mut delta);
            k += 1;
            if config.antithetic && k < end {
                self.evaluate(&u, -1.0, &mut v);
                acc.push(&v, &mut delta);
                k += 1;
            }
        }
        acc
    }

    pub fn finish(&self, acc: &MomentAccumulator) -> SampleMoments {
        SampleMoments::from_accumulator(self.nz, self.nx, self.ny, acc)
    }
}

/// Sequential simulation. Chunk results are merged in index order, so any
/// parallel driver that does the same gets identical output.
pub fn simulate(model: &SemModel, config: &SimConfig) -> Result<SampleMoments, SimError> {
    if config.n_samples < 2 {
        return Err(SimError::TooFewSamples(config.n_samples));
    }
    let sampler = Sampler::new(model)?;
    let mut acc = MomentAccumulator::new(sampler.dim());
    for k in 0..config.chunks() {
        acc.merge(&sampler.run_chunk(config, k));
    }
    Ok(sampler.finish(&acc))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareEntry {
    /// `mean_z`, `var_y`, `cov_xz`, ...
    pub block: &'static str,
    pub row: usize,
    pub col: usize,
    pub analytic: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub threshold: f64,
    pub entries: Vec<CompareEntry>,
    pub max_z: f64,
    pub passed: bool,
}

impl CompareReport {
    pub fn failures(&self) -> impl Iterator<Item = &CompareEntry> {
        self.entries.iter().filter(|e| !e.passed)
    }
}

fn z_score(analytic: f64, estimate: f64, se: f64) -> f64 {
    let diff = libm::fabs(analytic - estimate);
    if se > 0.0 {
        diff / se
    } else if diff <= 1e-9 * libm::fabs(analytic).max(1.0) {
        0.0
    } else {
        f64::INFINITY
    }
}

/// z-scores of every analytic mean, variance and covariance entry. A zero
/// standard error (degenerate variable) passes only on agreement to 1e-9
/// relative.
///
/// Panics if the shapes differ.
pub fn compare(analytic: &Moments, sampled: &SampleMoments, z_threshold: f64) -> CompareReport {
    assert!(z_threshold > 0.0, "z threshold must be positive");
    let mut entries = Vec::new();
    let mut vectors = |block, a: &[f64], e: &[f64], se: &[f64]| {
        assert!(a.len() == e.len() && e.len() == se.len(), "{block}: shape mismatch");
        for i in 0..a.len() {
            let z = z_score(a[i], e[i], se[i]);
            entries.push(CompareEntry {
                block,
                row: i,
                col: 0,
                analytic: a[i],
                estimate: e[i],
                std_error: se[i],
                z,
                passed: z <= z_threshold,
            });
        }
    };
    vectors("mean_z", &analytic.mean_z, &sampled.mean_z, &sampled.se_mean_z);
    vectors("mean_x", &analytic.mean_x, &sampled.mean_x, &sampled.se_mean_x);
    vectors("mean_y", &analytic.mean_y, &sampled.mean_y, &sampled.se_mean_y);
    let mut matrices = |block, a: &Matrix, e: &Matrix, se: &Matrix, symmetric: bool| {
        assert!(a.shape() == e.shape() && e.shape() == se.shape(), "{block}: shape mismatch");
        for i in 0..a.rows() {
            let start = if symmetric { i } else { 0 };
            for j in start..a.cols() {
                let z = z_score(a[(i, j)], e[(i, j)], se[(i, j)]);
                entries.push(CompareEntry {
                    block,
                    row: i,
                    col: j,
                    analytic: a[(i, j)],
                    estimate: e[(i, j)],
                    std_error: se[(i, j)],
                    z,
                    passed: z <= z_threshold,
                });
            }
        }
    };
    matrices("var_z", &analytic.var_z, &sampled.var_z, &sampled.se_var_z, true);
    matrices("var_x", &analytic.var_x, &sampled.var_x, &sampled.se_var_x, true);
    matrices("var_y", &analytic.var_y, &sampled.var_y, &sampled.se_var_y, true);
    matrices("cov_xz", &analytic.cov_xz, &sampled.cov_xz, &sampled.se_cov_xz, false);
    let max_z = entries.iter().map(|e| e.z).fold(0.0, f64::max);
    let passed = entries.iter().all(|e| e.passed);
    CompareReport {
        threshold: z_threshold,
        entries,
        max_z,
        passed,
    }
}
