//! File formats, reports and the command-line front end for `semqp-core`.
//!
//! The `semqp` binary reads a JSON model file (see `docs/model-file.md`)
//! and runs one of `analyze`, `optimize-variance`, `optimize-mean`, `paths`
//! or `simulate`. Exit status: 0 ok, 2 parse error, 3 validation error,
//! 4 solver failure, 5 simulation mismatch.

pub mod commands;
pub mod error;
pub mod modelfile;
pub mod report;

use rayon::prelude::*;

use semqp_core::montecarlo::{MomentAccumulator, SampleMoments, Sampler, SimConfig, SimError};
use semqp_core::SemModel;

pub use commands::{Cli, Command, Outcome};
pub use error::{CliError, ExitKind};

/// [`semqp_core::montecarlo::simulate`] with chunks run on the rayon pool.
/// Chunks are merged in index order, so the result is bitwise identical to
/// the sequential version for any thread count.
pub fn simulate_parallel(model: &SemModel, config: &SimConfig) -> Result<SampleMoments, SimError> {
    if config.n_samples < 2 {
        return Err(SimError::TooFewSamples(config.n_samples));
    }
    let sampler = Sampler::new(model)?;
    let chunks: Vec<MomentAccumulator> = (0..config.chunks())
        .into_par_iter()
        .map(|k| sampler.run_chunk(config, k))
        .collect();
    let mut acc = MomentAccumulator::new(sampler.dim());
    for c in &chunks {
        acc.merge(c);
    }
    Ok(sampler.finish(&acc))
}
