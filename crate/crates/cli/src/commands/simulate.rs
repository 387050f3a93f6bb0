use crate::config::RunConfig;
use aedd_core::simulate::{sample_mixture, write_dataset, LabeledMixture};
use anyhow::{Context, Result};
use std::path::Path;

pub fn run(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.echo(out, "simulate")?;
    let specs: Vec<_> = (0..cfg.num_mixtures as u64)
        .map(|i| cfg.mixture_spec(cfg.seed.wrapping_add(i)))
        .collect();
    let mixtures: Result<Vec<LabeledMixture>> = if cfg.workers > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build()?;
        pool.install(|| {
            specs
                .par_iter()
                .map(|s| sample_mixture(s).map_err(anyhow::Error::from))
                .collect()
        })
    } else {
        specs.iter().map(|s| sample_mixture(s).map_err(anyhow::Error::from)).collect()
    };
    let mixtures = mixtures.context("generating mixtures")?;
    let manifest = write_dataset(out, &mixtures).context("writing dataset")?;
    println!(
        "wrote {} mixtures ({} speakers, {} frames each) to {}",
        mixtures.len(),
        cfg.speakers,
        cfg.frames,
        manifest.display()
    );
    Ok(())
}
