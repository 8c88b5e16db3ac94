//! Pooled posterior summaries and convergence diagnostics.

use nalgebra::DMatrix;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{ChainOutput, SamplerVariant};
use crate::netdata::{ObservedTensor, Side, Tier};

pub const DEFAULT_THRESHOLDS: [f64; 2] = [0.5, 0.75];

const SAMPLES_MAGIC: &[u8; 8] = b"BIPLNKSM";

/// Writes retained chain outputs so summaries can be recomputed later.
pub fn save_outputs(path: &Path, outputs: &[ChainOutput]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = BufWriter::new(File::create(&tmp).map_err(|e| Error::io(&tmp, e))?);
    f.write_all(SAMPLES_MAGIC).map_err(|e| Error::io(&tmp, e))?;
    bincode::serialize_into(&mut f, outputs)?;
    f.flush().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_outputs(path: &Path) -> Result<Vec<ChainOutput>> {
    let mut f = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != SAMPLES_MAGIC {
        return Err(Error::Config(format!("{} is not a posterior sample file", path.display())));
    }
    Ok(bincode::deserialize_from(f)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    /// Posterior mean link probability, animals × plants.
    pub mean_prob: DMatrix<f64>,
    pub thresholds: Vec<f64>,
    /// Pairs above each threshold with no recorded interaction.
    pub new_link_counts: Vec<usize>,
    /// Fraction of all pairs above each threshold.
    pub prevalence: Vec<f64>,
    /// Fraction of pairs with at least one recorded interaction.
    pub observed_prevalence: f64,
    pub n_samples: usize,
}

fn check_same_dims(outputs: &[ChainOutput]) -> Result<(usize, usize)> {
    let first = outputs
        .iter()
        .flat_map(|o| o.prob_samples.first())
        .next()
        .ok_or_else(|| Error::EmptyInput("no retained samples in any chain".into()))?;
    let shape = first.shape();
    for o in outputs {
        if o.prob_samples.iter().any(|s| s.shape() != shape) {
            return Err(Error::Dimension(format!(
                "chain {} has samples whose shape differs from {shape:?}",
                o.chain_id
            )));
        }
    }
    Ok(shape)
}

/// Pools retained link probabilities across chains.
pub fn summarize(outputs: &[ChainOutput], observed: &ObservedTensor, thresholds: &[f64]) -> Result<PosteriorSummary> {
    if outputs.is_empty() {
        return Err(Error::EmptyInput("no chains to summarize".into()));
    }
    let n = outputs[0].n_samples();
    if outputs.iter().any(|o| o.n_samples() != n) {
        return Err(Error::Dimension("chains retained different numbers of samples".into()));
    }
    let (nf, np) = check_same_dims(outputs)?;
    let (onf, onp, _) = observed.dims();
    if (onf, onp) != (nf, np) {
        return Err(Error::Dimension(format!(
            "samples are {nf}×{np} but the data has {onf}×{onp} pairs"
        )));
    }
    let mut mean = DMatrix::zeros(nf, np);
    let mut count = 0usize;
    for o in outputs {
        for s in &o.prob_samples {
            mean += s;
            count += 1;
        }
    }
    mean /= count as f64;
    let seen = observed.pair_observed();
    for (m, &s) in mean.iter_mut().zip(seen.iter()) {
        if s {
            *m = 1.0;
        } else {
            *m = m.clamp(0.0, 1.0);
        }
    }
    let total = (nf * np) as f64;
    let mut new_link_counts = Vec::with_capacity(thresholds.len());
    let mut prevalence = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let above = mean.iter().filter(|&&m| m > t).count();
        let new = mean.iter().zip(seen.iter()).filter(|(&m, &s)| m > t && !s).count();
        new_link_counts.push(new);
        prevalence.push(above as f64 / total);
    }
    Ok(PosteriorSummary {
        mean_prob: mean,
        thresholds: thresholds.to_vec(),
        new_link_counts,
        prevalence,
        observed_prevalence: seen.iter().filter(|&&s| s).count() as f64 / total,
        n_samples: count,
    })
}

/// Pooled posterior mean of the recorded occurrence quantity per cell:
/// π under COIL+, the indicator frequency under COIL.
pub fn mean_occurrence(outputs: &[ChainOutput]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let first = outputs
        .iter()
        .flat_map(|o| o.occ_prob_samples.first())
        .next()
        .ok_or_else(|| Error::EmptyInput("no retained occurrence samples".into()))?;
    let mut a = DMatrix::zeros(first.0.nrows(), first.0.ncols());
    let mut p = DMatrix::zeros(first.1.nrows(), first.1.ncols());
    let mut n = 0usize;
    for o in outputs {
        for (sa, sp) in &o.occ_prob_samples {
            if sa.shape() != a.shape() || sp.shape() != p.shape() {
                return Err(Error::Dimension("occurrence samples differ in shape across chains".into()));
            }
            a += sa;
            p += sp;
            n += 1;
        }
    }
    Ok((a / n as f64, p / n as f64))
}

/// Mean posterior occurrence by closest-observation tier, per side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierSummary {
    pub variant: SamplerVariant,
    /// Indexed like `Tier::ALL`; None when no cell falls in the tier.
    pub animal: [Option<f64>; 5],
    pub plant: [Option<f64>; 5],
    pub animal_cells: [usize; 5],
    pub plant_cells: [usize; 5],
}

impl TierSummary {
    pub fn side(&self, side: Side) -> &[Option<f64>; 5] {
        match side {
            Side::Animal => &self.animal,
            Side::Plant => &self.plant,
        }
    }

    pub fn get(&self, side: Side, tier: Tier) -> Option<f64> {
        let k = Tier::ALL.iter().position(|&t| t == tier).expect("tier listed in ALL");
        self.side(side)[k]
    }
}

pub fn occurrence_tier_summary(
    outputs: &[ChainOutput],
    animal_tiers: &DMatrix<Tier>,
    plant_tiers: &DMatrix<Tier>,
) -> Result<TierSummary> {
    let variant = outputs
        .first()
        .ok_or_else(|| Error::EmptyInput("no chains to summarize".into()))?
        .variant;
    let (a, p) = mean_occurrence(outputs)?;
    if a.shape() != animal_tiers.shape() || p.shape() != plant_tiers.shape() {
        return Err(Error::Dimension("tier tables do not match occurrence samples".into()));
    }
    let group = |m: &DMatrix<f64>, tiers: &DMatrix<Tier>| {
        let mut sum = [0.0; 5];
        let mut cnt = [0usize; 5];
        for (&v, &t) in m.iter().zip(tiers.iter()) {
            let k = Tier::ALL.iter().position(|&x| x == t).expect("tier listed in ALL");
            sum[k] += v;
            cnt[k] += 1;
        }
        let means = std::array::from_fn(|k| (cnt[k] > 0).then(|| sum[k] / cnt[k] as f64));
        (means, cnt)
    };
    let (animal, animal_cells) = group(&a, animal_tiers);
    let (plant, plant_cells) = group(&p, plant_tiers);
    Ok(TierSummary {
        variant,
        animal,
        plant,
        animal_cells,
        plant_cells,
    })
}

fn check_traces(traces: &[&[f64]]) -> Result<usize> {
    if traces.len() < 2 {
        return Err(Error::Argument(format!("need at least 2 chains, got {}", traces.len())));
    }
    let len = traces[0].len();
    if traces.iter().any(|t| t.len() != len) {
        return Err(Error::Argument("chains must have equal length".into()));
    }
    if len < 10 {
        return Err(Error::Argument(format!("chains must have at least 10 draws, got {len}")));
    }
    Ok(len)
}

// sqrt((W + B/n) / W) over equal-length sequences.
fn psrf(seqs: &[&[f64]]) -> f64 {
    let m = seqs.len() as f64;
    let n = seqs[0].len() as f64;
    let means: Vec<f64> = seqs.iter().map(|h| h.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = seqs
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    ((w + b / n) / w).sqrt()
}

/// Potential scale reduction factor across whole chains.
///
/// Uses the pooled variance W + B/n, so R̂ ≥ 1 and exact copies give 1.
pub fn gelman_rubin(traces: &[&[f64]]) -> Result<f64> {
    check_traces(traces)?;
    Ok(psrf(traces))
}

/// Split variant: every chain is halved first, which also flags chains
/// that drift within themselves.
pub fn split_gelman_rubin(traces: &[&[f64]]) -> Result<f64> {
    let len = check_traces(traces)?;
    let n = len / 2;
    let halves: Vec<&[f64]> = traces
        .iter()
        .flat_map(|t| [&t[len - 2 * n..len - n], &t[len - n..]])
        .collect();
    Ok(psrf(&halves))
}

/// (R̂, split R̂) of the post-burn-in log-likelihood traces.
pub fn loglik_rhat(outputs: &[ChainOutput], n_burn: usize) -> Result<(f64, f64)> {
    let traces: Vec<&[f64]> = outputs.iter().map(|o| o.post_burn_loglik(n_burn)).collect();
    Ok((gelman_rubin(&traces)?, split_gelman_rubin(&traces)?))
}
