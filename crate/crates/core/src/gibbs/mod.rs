//! MCMC over the full model: one sweep updates, in order, the interaction
//! Polya-Gamma auxiliaries, true links, latent factors, shrinkage weights,
//! phylogenetic weights, trait coefficients, detection and occurrence.
//!
//! Detection indicators are redrawn immediately before every block that
//! conditions on them; all other blocks work with detection integrated out.

mod blocks;
mod occurrence;

pub use blocks::{draw_undetected, sample_canonical, sample_log_weights};
pub use occurrence::{
    blocked_mh_step, gibbs_presence, indicator_mh_step, AcceptanceCounter, CellTarget, MhStep, OccurrenceStats,
};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{lambda_from_deltas, log_likelihood_with_exposure, GpPrior, Hyperparams, LatentState, TraitCoefficients};
use crate::netdata::{Dataset, FocalSet, OccurrencePriorTable, Side};
use crate::pgrand::{logit, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SamplerVariant {
    /// Occurrence probabilities fixed at the prior centers; Gibbs on O.
    #[serde(rename = "coil")]
    Coil,
    /// Occurrence probabilities sampled jointly with O by blocked MH.
    #[serde(rename = "coilplus")]
    CoilPlus,
}

impl FromStr for SamplerVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('+', "plus").replace(['_', '-'], "").as_str() {
            "coil" => Ok(SamplerVariant::Coil),
            "coilplus" => Ok(SamplerVariant::CoilPlus),
            _ => Err(Error::Config(format!("unknown sampler variant `{s}` (expected coil or coilplus)"))),
        }
    }
}

impl fmt::Display for SamplerVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplerVariant::Coil => "coil",
            SamplerVariant::CoilPlus => "coilplus",
        })
    }
}

/// Which blocks of the sweep run; frozen blocks keep their current values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockSwitches {
    pub links: bool,
    pub factors: bool,
    pub shrinkage: bool,
    pub rho: bool,
    pub traits: bool,
    pub detection: bool,
    pub occurrence: bool,
    /// COIL+ only: when off, π stays fixed and only O is proposed.
    pub occurrence_prob: bool,
}

impl Default for BlockSwitches {
    fn default() -> Self {
        Self {
            links: true,
            factors: true,
            shrinkage: true,
            rho: true,
            traits: true,
            detection: true,
            occurrence: true,
            occurrence_prob: true,
        }
    }
}

impl BlockSwitches {
    /// Only the discrete blocks (links, occurrence indicators).
    pub fn discrete_only() -> Self {
        Self {
            links: true,
            factors: false,
            shrinkage: false,
            rho: false,
            traits: false,
            detection: false,
            occurrence: true,
            occurrence_prob: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub n_burn: usize,
    pub thin_keep_fraction: f64,
    pub n_chains: usize,
    pub seed: u64,
    pub variant: SamplerVariant,
    pub hyper: Hyperparams,
    pub blocks: BlockSwitches,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_iter: 20_000,
            n_burn: 10_000,
            thin_keep_fraction: 0.05,
            n_chains: 4,
            seed: 1,
            variant: SamplerVariant::CoilPlus,
            hyper: Hyperparams::default(),
            blocks: BlockSwitches::default(),
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_burn >= self.n_iter {
            return Err(Error::Config(format!(
                "burn-in ({}) must be smaller than the iteration count ({})",
                self.n_burn, self.n_iter
            )));
        }
        if !(self.thin_keep_fraction > 0.0 && self.thin_keep_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "thin fraction {} must lie in (0, 1]",
                self.thin_keep_fraction
            )));
        }
        if self.n_chains < 1 {
            return Err(Error::Config("at least one chain is required".into()));
        }
        self.hyper.validate()
    }

    /// floor(thin × (n_iter − n_burn)).
    pub fn n_retained(&self) -> usize {
        let post = (self.n_iter - self.n_burn) as f64;
        // Guard against 0.05 × 10000 landing a hair under 500.
        (self.thin_keep_fraction * post + 1e-9).floor() as usize
    }

    /// Whether the (0-based) iteration is kept; retained iterations are
    /// spread evenly over the post-burn-in window.
    pub fn is_retained(&self, iteration: usize) -> bool {
        if iteration < self.n_burn || iteration >= self.n_iter {
            return false;
        }
        let t = (iteration - self.n_burn) as u128;
        let post = (self.n_iter - self.n_burn) as u128;
        let k = self.n_retained() as u128;
        (t + 1) * k / post > t * k / post
    }
}

/// Inputs of a fit plus everything precomputed from them once.
#[derive(Clone, Debug)]
pub struct FitProblem {
    pub data: Dataset,
    pub prior: OccurrencePriorTable,
    gp_animal: GpPrior,
    gp_plant: GpPrior,
    pub(crate) pair_observed: DMatrix<bool>,
    seen_animal: DMatrix<bool>,
    seen_plant: DMatrix<bool>,
    /// 1 where the animal is focal in a product-form study.
    pub(crate) animal_mask: DMatrix<f64>,
    pub(crate) plant_mask: DMatrix<f64>,
    /// Pair-form studies with their (non-excluded) focal pairs.
    pub(crate) pair_studies: Vec<(usize, Vec<(usize, usize)>)>,
    pub(crate) excluded: DMatrix<bool>,
}

impl FitProblem {
    pub fn new(data: Dataset, prior: OccurrencePriorTable) -> Result<Self> {
        let (nf, np, ns) = data.dims();
        if prior.animal.shape() != (nf, ns) || prior.plant.shape() != (np, ns) {
            return Err(Error::Dimension(format!(
                "occurrence prior shapes {:?}/{:?} do not match {nf} animals, {np} plants, {ns} studies",
                prior.animal.shape(),
                prior.plant.shape()
            )));
        }
        if data.phylo.animal.shape() != (nf, nf) || data.phylo.plant.shape() != (np, np) {
            return Err(Error::Dimension("phylogenetic correlation shapes do not match species counts".into()));
        }
        if data.traits.animal.n_species() != nf || data.traits.plant.n_species() != np {
            return Err(Error::Dimension("trait tables do not cover the species index".into()));
        }
        let mut animal_mask = DMatrix::zeros(nf, ns);
        let mut plant_mask = DMatrix::zeros(np, ns);
        let mut pair_studies = Vec::new();
        let mut excluded = DMatrix::from_element(nf, np, false);
        for &(i, j) in &data.focus.excluded_pairs {
            excluded[(i, j)] = true;
        }
        for (s, st) in data.focus.studies.iter().enumerate() {
            match &st.focal {
                FocalSet::Product { animals, plants } => {
                    for i in 0..nf {
                        animal_mask[(i, s)] = animals[i] as u8 as f64;
                    }
                    for j in 0..np {
                        plant_mask[(j, s)] = plants[j] as u8 as f64;
                    }
                }
                FocalSet::Pairs(pairs) => {
                    let kept: Vec<_> = pairs.iter().copied().filter(|&(i, j)| !excluded[(i, j)]).collect();
                    pair_studies.push((s, kept));
                }
            }
        }
        Ok(Self {
            gp_animal: GpPrior::new(&data.phylo.animal),
            gp_plant: GpPrior::new(&data.phylo.plant),
            pair_observed: data.observed.pair_observed(),
            seen_animal: data.observed.species_in_study(Side::Animal),
            seen_plant: data.observed.species_in_study(Side::Plant),
            animal_mask,
            plant_mask,
            pair_studies,
            excluded,
            data,
            prior,
        })
    }

    pub fn gp(&self, side: Side) -> &GpPrior {
        match side {
            Side::Animal => &self.gp_animal,
            Side::Plant => &self.gp_plant,
        }
    }

    /// Cells where the species was recorded in the study.
    pub fn seen(&self, side: Side) -> &DMatrix<bool> {
        match side {
            Side::Animal => &self.seen_animal,
            Side::Plant => &self.seen_plant,
        }
    }

    /// Starting state: λ₀ at the logit of the observed pair density, small
    /// factor noise, ρ = 0.5, p = q = 0.5, π at the prior centers, O drawn
    /// from the prior and L = observed pairs plus 5% random links.
    pub fn initial_state(&self, hyper: &Hyperparams, rng: &mut RngStream) -> LatentState {
        let (nf, np, ns) = self.data.dims();
        let h = hyper.latent_dim;
        let mut noise = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal));
        let u = noise(nf, h);
        let v = noise(np, h);
        let deltas = nalgebra::DVector::from_fn(h, |k, _| hyper.shrinkage_shape(k));
        let density = self.data.observed.n_observed_pairs() as f64 / (nf * np).max(1) as f64;
        let mut links = self.pair_observed.clone();
        for l in links.iter_mut() {
            if !*l {
                *l = rng.random::<f64>() < 0.05;
            }
        }
        let mut occ = |side: Side| {
            let c = self.prior.side(side);
            let seen = self.seen(side);
            let o = DMatrix::from_fn(c.nrows(), ns, |x, s| seen[(x, s)] || rng.random::<f64>() < c[(x, s)]);
            let pi = DMatrix::from_fn(c.nrows(), ns, |x, s| {
                if seen[(x, s)] {
                    1.0
                } else {
                    c[(x, s)].clamp(1e-3, 1.0 - 1e-3)
                }
            });
            (o, pi)
        };
        let (occ_animal, pi_animal) = occ(Side::Animal);
        let (occ_plant, pi_plant) = occ(Side::Plant);
        LatentState {
            u,
            v,
            lambda0: logit(density),
            lambda: lambda_from_deltas(&deltas),
            mgp_deltas: deltas,
            rho_u: 0.5,
            rho_v: 0.5,
            animal_traits: TraitCoefficients::zeros(self.data.traits.animal.n_traits(), h),
            plant_traits: TraitCoefficients::zeros(self.data.traits.plant.n_traits(), h),
            delta0: 0.0,
            delta: nalgebra::DVector::zeros(h),
            zeta0: 0.0,
            zeta: nalgebra::DVector::zeros(h),
            p: nalgebra::DVector::from_element(nf, 0.5),
            q: nalgebra::DVector::from_element(np, 0.5),
            links,
            occ_animal,
            occ_plant,
            pi_animal,
            pi_plant,
            detections: Vec::new(),
        }
    }
}

/// Scratch quantities rebuilt from the state every sweep.
pub(crate) struct Workspace {
    pub psi: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub link_prob: DMatrix<f64>,
    pub exposure: DMatrix<f64>,
}

impl Workspace {
    fn new(state: &LatentState) -> Self {
        let (nf, np) = state.links.shape();
        Self {
            psi: state.interaction_logits(),
            omega: DMatrix::zeros(nf, np),
            link_prob: DMatrix::zeros(nf, np),
            exposure: DMatrix::zeros(nf, np),
        }
    }
}

/// Everything one chain records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub chain_id: usize,
    pub seed: u64,
    pub variant: SamplerVariant,
    pub retained_iterations: Vec<usize>,
    /// Rao-Blackwellized link probabilities at retained iterations.
    pub prob_samples: Vec<DMatrix<f64>>,
    /// Occurrence probabilities at retained iterations: π under COIL+, the
    /// indicator O under COIL (where π is not sampled).
    pub occ_prob_samples: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    pub loglik_trace: Vec<f64>,
    pub rho_u_trace: Vec<f64>,
    pub rho_v_trace: Vec<f64>,
    pub lambda0_trace: Vec<f64>,
    pub occurrence: OccurrenceStats,
}

impl ChainOutput {
    fn new(chain_id: usize, config: &ChainConfig) -> Self {
        Self {
            chain_id,
            seed: config.seed,
            variant: config.variant,
            retained_iterations: Vec::new(),
            prob_samples: Vec::new(),
            occ_prob_samples: Vec::new(),
            loglik_trace: Vec::new(),
            rho_u_trace: Vec::new(),
            rho_v_trace: Vec::new(),
            lambda0_trace: Vec::new(),
            occurrence: OccurrenceStats::default(),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.prob_samples.len()
    }

    /// Post-burn-in portion of the log-likelihood trace.
    pub fn post_burn_loglik(&self, n_burn: usize) -> &[f64] {
        &self.loglik_trace[n_burn.min(self.loglik_trace.len())..]
    }
}

/// Serialized chain position: state, generator and everything recorded so far.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub iteration: usize,
    pub config: ChainConfig,
    pub state: LatentState,
    pub rng: RngStream,
    pub output: ChainOutput,
}

const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 8] = b"BIPLNKCP";

impl Checkpoint {
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?);
        f.write_all(CHECKPOINT_MAGIC).map_err(|e| Error::io(&tmp, e))?;
        bincode::serialize_into(&mut f, self)?;
        f.flush().map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path).map_err(|e| Error::io(path, e))?);
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Config(format!("{} is not a checkpoint file", path.display())));
        }
        let cp: Checkpoint = bincode::deserialize_from(f)?;
        if cp.format_version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint format {} is not supported (expected {CHECKPOINT_VERSION})",
                cp.format_version
            )));
        }
        Ok(cp)
    }
}

/// Where and how often a chain writes checkpoints.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointPolicy {
    pub path: PathBuf,
    pub every: usize,
}

/// A chain in progress.
pub struct Chain<'a> {
    problem: &'a FitProblem,
    config: ChainConfig,
    state: LatentState,
    rng: RngStream,
    iteration: usize,
    output: ChainOutput,
}

impl<'a> Chain<'a> {
    pub fn new(problem: &'a FitProblem, config: &ChainConfig, chain_id: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = RngStream::new(config.seed, chain_id as u64);
        let state = problem.initial_state(&config.hyper, &mut rng);
        Ok(Self::with_state(problem, config, chain_id, state, rng))
    }

    /// A chain starting from a caller-supplied state (e.g. with frozen
    /// continuous parameters set to known values).
    pub fn with_state(
        problem: &'a FitProblem,
        config: &ChainConfig,
        chain_id: usize,
        state: LatentState,
        rng: RngStream,
    ) -> Self {
        Self {
            problem,
            config: config.clone(),
            state,
            rng,
            iteration: 0,
            output: ChainOutput::new(chain_id, config),
        }
    }

    pub fn resume(problem: &'a FitProblem, checkpoint: Checkpoint) -> Result<Self> {
        checkpoint.config.validate()?;
        let (nf, np, _) = problem.data.dims();
        if checkpoint.state.links.shape() != (nf, np) {
            return Err(Error::Dimension("checkpoint does not match the data dimensions".into()));
        }
        Ok(Self {
            problem,
            config: checkpoint.config,
            state: checkpoint.state,
            rng: checkpoint.rng,
            iteration: checkpoint.iteration,
            output: checkpoint.output,
        })
    }

    pub fn state(&self) -> &LatentState {
        &self.state
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn output(&self) -> &ChainOutput {
        &self.output
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            iteration: self.iteration,
            config: self.config.clone(),
            state: self.state.clone(),
            rng: self.rng.clone(),
            output: self.output.clone(),
        }
    }

    /// One full sweep. Returns the per-sweep occurrence tallies.
    pub fn step(&mut self) -> Result<OccurrenceStats> {
        let it = self.iteration;
        let numeric = |block: &'static str| {
            move |e: Error| Error::Numeric {
                iteration: it,
                block,
                message: e.to_string(),
            }
        };
        let problem = self.problem;
        let cfg = &self.config;
        let sw = cfg.blocks;
        let state = &mut self.state;
        let rng = &mut self.rng;
        let mut ws = Workspace::new(state);

        if sw.factors || sw.shrinkage {
            blocks::draw_interaction_pg(&mut ws, rng).map_err(numeric("interaction auxiliaries"))?;
        }
        if sw.links {
            blocks::update_links(problem, state, &mut ws, rng);
        } else {
            ws.exposure = crate::model::exposure_counts(&problem.data.focus, &state.occ_animal, &state.occ_plant);
        }
        if sw.factors {
            let counts = blocks::refresh_detections(problem, state, rng);
            blocks::update_factors(problem, Side::Animal, state, &mut ws, &counts, rng)
                .map_err(numeric("animal factors"))?;
            blocks::update_factors(problem, Side::Plant, state, &mut ws, &counts, rng)
                .map_err(numeric("plant factors"))?;
        }
        if sw.shrinkage {
            blocks::update_shrinkage(&cfg.hyper, state, &mut ws, rng).map_err(numeric("shrinkage"))?;
        }
        if sw.rho {
            blocks::update_rho(problem, &cfg.hyper, state, rng).map_err(numeric("phylogenetic weight"))?;
        }
        if sw.traits {
            blocks::update_trait_coeffs(problem, &cfg.hyper, state, rng).map_err(numeric("trait coefficients"))?;
        }
        if sw.detection {
            blocks::update_detection(problem, &cfg.hyper, state, rng).map_err(numeric("detection"))?;
        }
        let mut stats = OccurrenceStats::default();
        if sw.occurrence {
            stats = occurrence::update_occurrence(problem, &cfg.hyper, cfg.variant, sw.occurrence_prob, state, rng);
        }

        let exposure = crate::model::exposure_counts(&problem.data.focus, &state.occ_animal, &state.occ_plant);
        let ll = log_likelihood_with_exposure(state, &problem.data.observed, &exposure);
        if !ll.is_finite() {
            return Err(Error::Numeric {
                iteration: it,
                block: "log-likelihood",
                message: format!("non-finite log-likelihood {ll}"),
            });
        }
        #[cfg(debug_assertions)]
        if let Err(msg) = state.check_invariants(&problem.data.observed, &problem.data.focus) {
            return Err(Error::Numeric {
                iteration: it,
                block: "state invariants",
                message: msg,
            });
        }

        let out = &mut self.output;
        out.loglik_trace.push(ll);
        out.rho_u_trace.push(state.rho_u);
        out.rho_v_trace.push(state.rho_v);
        out.lambda0_trace.push(state.lambda0);
        out.occurrence.merge(&stats);
        if cfg.is_retained(it) {
            out.retained_iterations.push(it);
            out.prob_samples.push(if sw.links {
                ws.link_prob
            } else {
                state.links.map(|l| l as u8 as f64)
            });
            out.occ_prob_samples.push(match cfg.variant {
                SamplerVariant::CoilPlus => (state.pi_animal.clone(), state.pi_plant.clone()),
                SamplerVariant::Coil => (
                    state.occ_animal.map(|o| o as u8 as f64),
                    state.occ_plant.map(|o| o as u8 as f64),
                ),
            });
        }
        self.iteration += 1;
        Ok(stats)
    }

    /// Runs to the configured iteration count, checkpointing as requested.
    pub fn run(mut self, policy: Option<&CheckpointPolicy>) -> Result<ChainOutput> {
        self.run_until(self.config.n_iter, policy)?;
        Ok(self.output)
    }

    /// Runs until `iteration` sweeps are complete (or the configured total).
    pub fn run_until(&mut self, iteration: usize, policy: Option<&CheckpointPolicy>) -> Result<()> {
        let end = iteration.min(self.config.n_iter);
        while self.iteration < end {
            self.step()?;
            if let Some(p) = policy {
                if p.every > 0 && (self.iteration % p.every == 0 || self.iteration == self.config.n_iter) {
                    self.checkpoint().write(&p.path)?;
                }
            }
        }
        Ok(())
    }

    pub fn into_output(self) -> ChainOutput {
        self.output
    }
}

/// Runs one complete chain; `chain_id` selects its random stream.
pub fn run_chain(problem: &FitProblem, config: &ChainConfig, chain_id: usize) -> Result<ChainOutput> {
    Chain::new(problem, config, chain_id)?.run(None)
}
