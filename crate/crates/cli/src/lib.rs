//! Pipeline orchestration, configuration and the survey HTTP service behind
//! the `storymoral` binary.

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod server;

pub use config::RunConfig;
pub use manifest::RunManifest;
pub use pipeline::{run_pipeline, Pipeline, Stage};

use std::path::Path;

use storymoral_core::corpus::synthetic::{fixture_corpus, FixtureSpec};

/// Writes a seeded reference-shaped input corpus (original passages and
/// human morals only) to `dir`.
pub fn write_demo_corpus(dir: &Path, stories: usize, languages: usize, seed: u64) -> anyhow::Result<()> {
    let mut spec = FixtureSpec::grid(stories, languages);
    spec.full_grid = false;
    spec.seed = seed;
    storymoral_core::save_corpus(&fixture_corpus(&spec), dir)?;
    Ok(())
}
