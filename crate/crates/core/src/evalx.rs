//! Cross-validation by held-out known interactions, and trait-matching
//! analyses on posterior link probabilities.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::gibbs::ChainOutput;
use crate::netdata::{Dataset, ObservedTensor, Side};
use crate::pgrand::{logit, RngStream};

pub const DEFAULT_HOLDOUT_PAIRS: usize = 100;
pub const DEFAULT_REPLICATES: usize = 10;
pub const DEFAULT_PERMUTATIONS: usize = 100;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldoutSpec {
    pub heldout_pairs: Vec<(usize, usize)>,
    pub replicate_id: usize,
    pub seed: u64,
    /// The recorded triples removed with the pairs, kept so the holdout can
    /// be undone exactly.
    pub removed_entries: Vec<(usize, usize, usize)>,
}

/// Removes `n_pairs` distinct recorded pairs from every study: their records
/// are deleted and the pairs are masked out of every study's focus.
pub fn make_holdout(data: &Dataset, n_pairs: usize, replicate_id: usize, seed: u64) -> Result<(Dataset, HoldoutSpec)> {
    let seen = data.observed.pair_observed();
    let mut candidates: Vec<(usize, usize)> = (0..seen.nrows())
        .flat_map(|i| (0..seen.ncols()).map(move |j| (i, j)))
        .filter(|&(i, j)| seen[(i, j)] && !data.focus.excluded_pairs.contains(&(i, j)))
        .collect();
    if n_pairs == 0 || n_pairs > candidates.len() {
        return Err(Error::Argument(format!(
            "cannot hold out {n_pairs} pairs: {} recorded pairs available",
            candidates.len()
        )));
    }
    let mut rng = RngStream::new(seed, replicate_id as u64).derive(0x686f_6c64);
    candidates.shuffle(&mut rng);
    let mut heldout: Vec<(usize, usize)> = candidates[..n_pairs].to_vec();
    heldout.sort_unstable();
    let removed: Vec<_> = data
        .observed
        .entries()
        .iter()
        .copied()
        .filter(|&(i, j, _)| heldout.binary_search(&(i, j)).is_ok())
        .collect();
    let mut out = data.clone();
    out.observed = data.observed.without_pairs(&heldout);
    out.focus.excluded_pairs.extend(heldout.iter().copied());
    Ok((
        out,
        HoldoutSpec {
            heldout_pairs: heldout,
            replicate_id,
            seed,
            removed_entries: removed,
        },
    ))
}

/// Restores the records and focus removed by [`make_holdout`].
pub fn undo_holdout(data: &Dataset, spec: &HoldoutSpec) -> Result<Dataset> {
    let mut out = data.clone();
    let mut entries = data.observed.entries().to_vec();
    entries.extend(spec.removed_entries.iter().copied());
    out.observed = ObservedTensor::new(data.observed.dims(), entries)?;
    for p in &spec.heldout_pairs {
        out.focus.excluded_pairs.remove(p);
    }
    Ok(out)
}

fn heldout_values(mean_prob: &DMatrix<f64>, holdout: &HoldoutSpec) -> Result<Vec<f64>> {
    if holdout.heldout_pairs.is_empty() {
        return Err(Error::Argument("holdout has no pairs".into()));
    }
    holdout
        .heldout_pairs
        .iter()
        .map(|&(i, j)| {
            if i < mean_prob.nrows() && j < mean_prob.ncols() {
                Ok(mean_prob[(i, j)])
            } else {
                Err(Error::Dimension(format!("held-out pair ({i},{j}) outside the probability matrix")))
            }
        })
        .collect()
}

/// Mean probability on held-out pairs over the mean probability on all pairs.
pub fn pseudo_precision(mean_prob: &DMatrix<f64>, holdout: &HoldoutSpec) -> Result<f64> {
    let held = heldout_values(mean_prob, holdout)?;
    let num = held.iter().sum::<f64>() / held.len() as f64;
    let den = mean_prob.mean();
    if !(den > 0.0) {
        return Err(Error::Argument("mean link probability is zero".into()));
    }
    Ok(num / den)
}

/// The range a useful predictor's pseudo-precision should fall in: above 1
/// (better than constant) and below 1/prevalence (perfect ranking).
pub fn pseudo_precision_bounds(prevalence: f64) -> (f64, f64) {
    (1.0, 1.0 / prevalence)
}

/// Fraction of held-out pairs whose probability exceeds `threshold`.
pub fn recall_at(mean_prob: &DMatrix<f64>, holdout: &HoldoutSpec, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Argument(format!("threshold {threshold} must lie in (0,1)")));
    }
    let held = heldout_values(mean_prob, holdout)?;
    Ok(held.iter().filter(|&&p| p > threshold).count() as f64 / held.len() as f64)
}

/// Per-sample logit link probabilities oriented species × partner for the
/// given side (animals × plants, or plants × animals).
pub fn logit_samples(outputs: &[ChainOutput], side: Side) -> Vec<DMatrix<f64>> {
    outputs
        .iter()
        .flat_map(|o| o.prob_samples.iter())
        .map(|s| {
            let l = s.map(logit);
            match side {
                Side::Animal => l,
                Side::Plant => l.transpose(),
            }
        })
        .collect()
}

fn standardized(x: &[f64]) -> Option<Vec<f64>> {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let ss = x.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    // Relative tolerance: a column is constant if its spread is at rounding level.
    let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    if ss.sqrt() <= 1e-12 * scale * n.sqrt() {
        return None;
    }
    let sd = ss.sqrt();
    Some(x.iter().map(|v| (v - m) / sd).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarImp {
    /// |T̂ − mean(T⁰)| / sd(T⁰).
    pub score: f64,
    /// Mean squared correlation between trait and partner logit columns.
    pub statistic: f64,
    pub null_mean: f64,
    pub null_sd: f64,
    /// Partner columns skipped because their logits were constant.
    pub skipped: usize,
}

// Unit-norm centred logit columns, one per (sample, partner).
fn logit_columns(samples: &[DMatrix<f64>], n: usize) -> Result<(DMatrix<f64>, usize)> {
    let mut cols = Vec::new();
    let mut skipped = 0;
    for s in samples {
        if s.nrows() != n {
            return Err(Error::Dimension(format!(
                "logit sample has {} species, trait has {n}",
                s.nrows()
            )));
        }
        for j in 0..s.ncols() {
            let col: Vec<f64> = s.column(j).iter().copied().collect();
            match standardized(&col) {
                Some(z) => cols.extend(z),
                None => skipped += 1,
            }
        }
    }
    let k = cols.len() / n.max(1);
    Ok((DMatrix::from_vec(n, k, cols), skipped))
}

fn mean_sq_corr(cols: &DMatrix<f64>, x: &[f64]) -> f64 {
    let xv = nalgebra::DVector::from_column_slice(x);
    let c = cols.tr_mul(&xv);
    c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64
}

/// Permutation importance of one trait column for the link logits.
pub fn variable_importance(trait_col: &[f64], samples: &[DMatrix<f64>], n_perm: usize, rng: &mut RngStream) -> Result<VarImp> {
    if n_perm < 2 {
        return Err(Error::Argument("at least two permutations are needed".into()));
    }
    let x = standardized(trait_col).ok_or_else(|| Error::Argument("trait column is constant; correlation undefined".into()))?;
    let (cols, skipped) = logit_columns(samples, x.len())?;
    if cols.ncols() == 0 {
        return Err(Error::Argument("every partner logit column is constant".into()));
    }
    let statistic = mean_sq_corr(&cols, &x);
    let mut perm = x.clone();
    let null: Vec<f64> = (0..n_perm)
        .map(|_| {
            perm.shuffle(rng);
            mean_sq_corr(&cols, &perm)
        })
        .collect();
    let null_mean = null.iter().sum::<f64>() / n_perm as f64;
    let null_sd = (null.iter().map(|v| (v - null_mean).powi(2)).sum::<f64>() / (n_perm as f64 - 1.0)).sqrt();
    let score = if null_sd > 0.0 {
        (statistic - null_mean).abs() / null_sd
    } else if statistic == null_mean {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(VarImp {
        score,
        statistic,
        null_mean,
        null_sd,
        skipped,
    })
}

/// Posterior mean correlation between the trait and each partner's logit
/// column; NaN for a partner whose logits were constant in every sample.
pub fn signed_trait_correlations(trait_col: &[f64], samples: &[DMatrix<f64>]) -> Result<Vec<f64>> {
    let x = standardized(trait_col).ok_or_else(|| Error::Argument("trait column is constant; correlation undefined".into()))?;
    let n = x.len();
    let partners = samples.first().map_or(0, |s| s.ncols());
    let mut sum = vec![0.0; partners];
    let mut cnt = vec![0usize; partners];
    for s in samples {
        if s.shape() != (n, partners) {
            return Err(Error::Dimension("logit samples differ in shape".into()));
        }
        for j in 0..partners {
            let col: Vec<f64> = s.column(j).iter().copied().collect();
            if let Some(z) = standardized(&col) {
                sum[j] += z.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
                cnt[j] += 1;
            }
        }
    }
    Ok(sum
        .iter()
        .zip(&cnt)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
        .collect())
}

/// Area under the ROC curve of `scores` against binary `labels` (ties count
/// one half). `None` when either class is empty.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut rank_sum, mut n_pos) = (0.0, 0usize);
    let mut k = 0;
    while k < idx.len() {
        let mut end = k;
        while end + 1 < idx.len() && scores[idx[end + 1]] == scores[idx[k]] {
            end += 1;
        }
        let mid_rank = (k + end) as f64 / 2.0 + 1.0;
        for &t in &idx[k..=end] {
            if labels[t] {
                rank_sum += mid_rank;
                n_pos += 1;
            }
        }
        k = end + 1;
    }
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    Some((rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64)
}

/// Distinct pairs helper used by reports.
pub fn pair_set(pairs: &[(usize, usize)]) -> BTreeSet<(usize, usize)> {
    pairs.iter().copied().collect()
}
