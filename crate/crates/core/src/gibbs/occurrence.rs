//! Occurrence indicators (and, for COIL+, their probabilities), one
//! (species, study) cell at a time with detection integrated out.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{FitProblem, SamplerVariant};
use crate::model::{Hyperparams, LatentState};
use crate::netdata::Side;
use crate::pgrand::{clamp_prob, truncnorm_log_kernel, RngStream};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceCounter {
    pub attempts: u64,
    pub accepts: u64,
    /// Proposals that would change the indicator, and how many were accepted.
    #[serde(default)]
    pub switch_attempts: u64,
    #[serde(default)]
    pub switch_accepts: u64,
}

impl AcceptanceCounter {
    pub fn rate(&self) -> f64 {
        if self.attempts == 0 {
            f64::NAN
        } else {
            self.accepts as f64 / self.attempts as f64
        }
    }

    /// Acceptance among proposals that change the indicator.
    pub fn switch_rate(&self) -> f64 {
        if self.switch_attempts == 0 {
            f64::NAN
        } else {
            self.switch_accepts as f64 / self.switch_attempts as f64
        }
    }

    pub fn merge(&mut self, other: &AcceptanceCounter) {
        self.attempts += other.attempts;
        self.accepts += other.accepts;
        self.switch_attempts += other.switch_attempts;
        self.switch_accepts += other.switch_accepts;
    }
}

/// Per-side tallies of the occurrence step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccurrenceStats {
    pub animal: AcceptanceCounter,
    pub plant: AcceptanceCounter,
    /// Number of indicator changes.
    pub flips: u64,
}

impl OccurrenceStats {
    pub fn total(&self) -> AcceptanceCounter {
        let mut t = self.animal;
        t.merge(&self.plant);
        t
    }

    pub fn merge(&mut self, other: &OccurrenceStats) {
        self.animal.merge(&other.animal);
        self.plant.merge(&other.plant);
        self.flips += other.flips;
    }
}

/// Log-likelihood gain of switching each cell of `side` from absent to
/// present: Σ over exposed partners of L·log(1 − pq), other side held fixed.
pub(crate) fn presence_loglik(problem: &FitProblem, state: &LatentState, side: Side) -> DMatrix<f64> {
    let (nf, np) = state.links.shape();
    let g = DMatrix::from_fn(nf, np, |i, j| {
        if state.links[(i, j)] && !problem.excluded[(i, j)] {
            (1.0 - clamp_prob(state.p[i] * state.q[j])).ln()
        } else {
            0.0
        }
    });
    let (mask_own, mask_other, occ_other) = match side {
        Side::Animal => (&problem.animal_mask, &problem.plant_mask, &state.occ_plant),
        Side::Plant => (&problem.plant_mask, &problem.animal_mask, &state.occ_animal),
    };
    let exposed_other = mask_other.zip_map(occ_other, |m, o| if o { m } else { 0.0 });
    let mut ll = match side {
        Side::Animal => &g * exposed_other,
        Side::Plant => g.transpose() * exposed_other,
    };
    ll.component_mul_assign(mask_own);
    for (s, pairs) in &problem.pair_studies {
        for &(i, j) in pairs {
            match side {
                Side::Animal => {
                    if state.occ_plant[(j, *s)] {
                        ll[(i, *s)] += g[(i, j)];
                    }
                }
                Side::Plant => {
                    if state.occ_animal[(i, *s)] {
                        ll[(j, *s)] += g[(i, j)];
                    }
                }
            }
        }
    }
    ll
}

/// Animal cells first, then plant cells (which see the new animal states).
pub(crate) fn update_occurrence(
    problem: &FitProblem,
    hyper: &Hyperparams,
    variant: SamplerVariant,
    update_prob: bool,
    state: &mut LatentState,
    rng: &mut RngStream,
) -> OccurrenceStats {
    let mut stats = OccurrenceStats::default();
    for side in Side::BOTH {
        let ll = presence_loglik(problem, state, side);
        let seen = problem.seen(side);
        let centers = problem.prior.side(side);
        let (occ, pi) = match side {
            Side::Animal => (&mut state.occ_animal, &mut state.pi_animal),
            Side::Plant => (&mut state.occ_plant, &mut state.pi_plant),
        };
        let counter = match side {
            Side::Animal => &mut stats.animal,
            Side::Plant => &mut stats.plant,
        };
        for s in 0..occ.ncols() {
            for x in 0..occ.nrows() {
                if seen[(x, s)] {
                    continue;
                }
                let before = occ[(x, s)];
                match variant {
                    SamplerVariant::Coil => {
                        let c = centers[(x, s)];
                        if c == 0.0 {
                            continue;
                        }
                        occ[(x, s)] = gibbs_presence(c, ll[(x, s)], rng);
                    }
                    SamplerVariant::CoilPlus => {
                        let cell = CellTarget {
                            center: centers[(x, s)],
                            presence_loglik: ll[(x, s)],
                        };
                        let step = if update_prob {
                            blocked_mh_step(&cell, hyper, before, pi[(x, s)], rng)
                        } else {
                            indicator_mh_step(cell.presence_loglik, hyper, before, pi[(x, s)], rng)
                        };
                        counter.attempts += 1;
                        counter.accepts += step.accepted as u64;
                        counter.switch_attempts += step.switch_proposed as u64;
                        counter.switch_accepts += (step.switch_proposed && step.accepted) as u64;
                        occ[(x, s)] = step.occ;
                        pi[(x, s)] = step.pi;
                    }
                }
                stats.flips += (occ[(x, s)] != before) as u64;
            }
        }
    }
    stats
}

/// Exact draw of O given prior probability `pi`.
pub fn gibbs_presence<R: Rng + ?Sized>(pi: f64, presence_loglik: f64, rng: &mut R) -> bool {
    let w1 = pi * presence_loglik.exp();
    let p1 = w1 / (w1 + 1.0 - pi);
    rng.random::<f64>() < p1
}

/// One cell's target in (π, O): π^O (1−π)^(1−O) · exp(O·ℓ) · TN(π; center, sd) on (0,1).
pub struct CellTarget {
    pub center: f64,
    pub presence_loglik: f64,
}

impl CellTarget {
    pub fn log_density(&self, occ: bool, pi: f64, sd: f64) -> f64 {
        let prior = truncnorm_log_kernel(pi, self.center, sd, 0.0, 1.0);
        if !prior.is_finite() {
            return f64::NEG_INFINITY;
        }
        if occ {
            prior + pi.ln() + self.presence_loglik
        } else {
            prior + (1.0 - pi).ln()
        }
    }
}

// Probability of proposing O = 1 from the current indicator.
fn propose_one_prob(current: bool, hyper: &Hyperparams) -> f64 {
    if current {
        1.0 - hyper.p10
    } else {
        hyper.p01
    }
}

fn proposal_log_prob(from: bool, to: bool, hyper: &Hyperparams) -> f64 {
    let p1 = propose_one_prob(from, hyper);
    if to {
        p1.ln()
    } else {
        (1.0 - p1).ln()
    }
}

/// Result of one Metropolis-Hastings update of a cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MhStep {
    pub occ: bool,
    pub pi: f64,
    pub accepted: bool,
    /// Whether the proposed indicator differed from the current one.
    pub switch_proposed: bool,
}

/// Joint random-walk proposal for π and switching proposal for O, accepted
/// together; a proposal outside (0,1) is rejected.
pub fn blocked_mh_step<R: Rng + ?Sized>(
    cell: &CellTarget,
    hyper: &Hyperparams,
    occ: bool,
    pi: f64,
    rng: &mut R,
) -> MhStep {
    let z: f64 = rng.sample(StandardNormal);
    let pi_new = pi + hyper.mh_step * z;
    let occ_new = rng.random::<f64>() < propose_one_prob(occ, hyper);
    let u: f64 = rng.random();
    let mut step = MhStep {
        occ,
        pi,
        accepted: false,
        switch_proposed: occ_new != occ,
    };
    if !(pi_new > 0.0 && pi_new < 1.0) {
        return step;
    }
    let sd = hyper.occ_prior_sd;
    let log_alpha = cell.log_density(occ_new, pi_new, sd) - cell.log_density(occ, pi, sd)
        + proposal_log_prob(occ_new, occ, hyper)
        - proposal_log_prob(occ, occ_new, hyper);
    if u.ln() < log_alpha {
        step.occ = occ_new;
        step.pi = pi_new;
        step.accepted = true;
    }
    step
}

/// The O half of the blocked step with π held fixed.
pub fn indicator_mh_step<R: Rng + ?Sized>(
    presence_loglik: f64,
    hyper: &Hyperparams,
    occ: bool,
    pi: f64,
    rng: &mut R,
) -> MhStep {
    let occ_new = rng.random::<f64>() < propose_one_prob(occ, hyper);
    let u: f64 = rng.random();
    let log_target = |o: bool| if o { pi.ln() + presence_loglik } else { (1.0 - pi).ln() };
    let log_alpha = log_target(occ_new) - log_target(occ) + proposal_log_prob(occ_new, occ, hyper)
        - proposal_log_prob(occ, occ_new, hyper);
    let accepted = u.ln() < log_alpha;
    MhStep {
        occ: if accepted { occ_new } else { occ },
        pi,
        accepted,
        switch_proposed: occ_new != occ,
    }
}
