use anyhow::{anyhow, Result};
use biplink::gibbs::{Chain, ChainConfig, ChainOutput, Checkpoint, CheckpointPolicy, FitProblem};
use rayon::prelude::*;
use std::path::{Path, PathBuf};

/// Where chain checkpoints live and whether to pick them up.
#[derive(Clone, Debug)]
pub struct Checkpointing {
    pub dir: PathBuf,
    pub every: usize,
    pub resume: bool,
    /// Halt after this many sweeps, writing a checkpoint there.
    pub stop_after: Option<usize>,
}

impl Checkpointing {
    fn path(&self, chain_id: usize) -> PathBuf {
        self.dir.join(format!("chain_{chain_id}.ckpt"))
    }
}

fn run_one(problem: &FitProblem, config: &ChainConfig, chain_id: usize, ckpt: Option<&Checkpointing>) -> biplink::Result<Option<ChainOutput>> {
    let policy = ckpt.filter(|c| c.every > 0).map(|c| CheckpointPolicy {
        path: c.path(chain_id),
        every: c.every,
    });
    let mut chain = match ckpt.filter(|c| c.resume).map(|c| c.path(chain_id)) {
        Some(path) if path.exists() => {
            let cp = Checkpoint::read(&path)?;
            if cp.config != *config {
                return Err(biplink::Error::Config(format!(
                    "{} was written with a different configuration; remove it or rerun without --resume",
                    path.display()
                )));
            }
            log::info!("chain {chain_id}: resuming at sweep {}", cp.iteration);
            Chain::resume(problem, cp)?
        }
        _ => Chain::new(problem, config, chain_id)?,
    };
    if let Some(stop) = ckpt.and_then(|c| c.stop_after).filter(|&s| s < config.n_iter) {
        chain.run_until(stop, policy.as_ref())?;
        let path = ckpt.expect("stop_after implies checkpointing").path(chain_id);
        chain.checkpoint().write(&path)?;
        log::info!("chain {chain_id}: stopped at sweep {}", chain.iteration());
        return Ok(None);
    }
    let out = chain.run(policy.as_ref())?;
    log::info!("chain {chain_id}: done, {} samples retained", out.n_samples());
    Ok(Some(out))
}

/// Runs every chain on a pool of `jobs` threads. Each chain owns its random
/// stream, so results do not depend on the pool size. Returns None when the
/// run was told to stop early.
pub fn run_chains(problem: &FitProblem, config: &ChainConfig, jobs: usize, ckpt: Option<&Checkpointing>) -> Result<Option<Vec<ChainOutput>>> {
    if let Some(c) = ckpt.filter(|c| c.every > 0 || c.stop_after.is_some()) {
        crate::output::create_dir(&c.dir)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| anyhow!("cannot start worker pool: {e}"))?;
    let outputs = pool.install(|| {
        (0..config.n_chains)
            .into_par_iter()
            .map(|k| run_one(problem, config, k, ckpt))
            .collect::<biplink::Result<Vec<_>>>()
    })?;
    Ok(outputs.into_iter().collect())
}

pub fn checkpoint_dir(out: &Path) -> PathBuf {
    out.join("checkpoints")
}
