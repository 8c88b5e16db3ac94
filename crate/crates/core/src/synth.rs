//! Ground-truth simulator for meta-networks, and an exact enumeration of the
//! discrete posterior for tiny instances.

use nalgebra::{DMatrix, DVector};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{build_sigma, LatentState};
use crate::netdata::{
    ingest_records_from_readers, write_labelled_matrix, Dataset, PhyloCorrelation, Side, StudyKind, StudyMeta,
    TraitKind, TraitMatrix, TraitTable,
};
use crate::pgrand::{logistic, RngStream};

/// One simulated trait column: `intercept + factors · effect + noise` for
/// continuous traits, a logistic draw on the same predictor for binary ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraitSpec {
    pub label: String,
    pub kind: TraitKind,
    #[serde(default)]
    pub intercept: f64,
    /// Loadings on the leading latent factors; missing entries are zero.
    #[serde(default)]
    pub effect: Vec<f64>,
    #[serde(default = "one")]
    pub noise_sd: f64,
}

fn one() -> f64 {
    1.0
}

impl TraitSpec {
    pub fn continuous(label: &str, effect: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            kind: TraitKind::Continuous,
            intercept: 0.0,
            effect,
            noise_sd: 1.0,
        }
    }

    pub fn binary(label: &str, effect: Vec<f64>) -> Self {
        Self {
            kind: TraitKind::Binary,
            ..Self::continuous(label, effect)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_animals: usize,
    pub n_plants: usize,
    pub n_studies: usize,
    pub latent_dim: usize,
    pub rho_animal: f64,
    pub rho_plant: f64,
    /// Species per clade in the block-diagonal phylogenetic correlation.
    pub clade_size: usize,
    pub clade_corr: f64,
    pub lambda0: f64,
    /// Per-dimension interaction weights; length must equal `latent_dim`.
    pub lambda: Vec<f64>,
    /// Range of the detection intercepts, drawn uniformly per side.
    pub animal_detect_logit: (f64, f64),
    pub plant_detect_logit: (f64, f64),
    /// Standard deviation of detection loadings on the latent factors.
    pub detect_loading_sd: f64,
    pub animal_traits: Vec<TraitSpec>,
    pub plant_traits: Vec<TraitSpec>,
    /// Fractions of zoocentric, phytocentric, network and pair studies.
    pub kind_mix: [f64; 4],
    /// Probability that a zoo- or phytocentric study has a single focal species.
    pub single_focal_prob: f64,
    pub max_focal: usize,
    pub max_pairs_per_study: usize,
    pub n_zones: usize,
    pub countries_per_zone: usize,
    pub sites_per_country: usize,
    /// Occurrence probability of a species in a study at its home site, in
    /// its home country, in its home zone, and elsewhere.
    pub occurrence_rates: [f64; 4],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_animals: 60,
            n_plants: 90,
            n_studies: 50,
            latent_dim: 3,
            rho_animal: 0.9,
            rho_plant: 0.9,
            clade_size: 5,
            clade_corr: 0.8,
            lambda0: -6.0,
            lambda: vec![3.0, 2.25, 1.5],
            animal_detect_logit: (2.0, 3.0),
            plant_detect_logit: (2.0, 3.0),
            detect_loading_sd: 0.3,
            animal_traits: vec![
                TraitSpec::continuous("body_mass", vec![1.5]),
                TraitSpec::continuous("noise_a", vec![]),
            ],
            plant_traits: vec![
                TraitSpec::continuous("fruit_size", vec![1.5]),
                TraitSpec::binary("woody", vec![0.0, 1.5]),
            ],
            kind_mix: [0.82, 0.06, 0.02, 0.10],
            single_focal_prob: 0.66,
            max_focal: 3,
            max_pairs_per_study: 3,
            n_zones: 2,
            countries_per_zone: 2,
            sites_per_country: 3,
            occurrence_rates: [0.95, 0.8, 0.5, 0.15],
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_animals == 0 || self.n_plants == 0 || self.n_studies == 0 || self.latent_dim == 0 {
            return bad("dimensions must be at least 1".into());
        }
        if self.lambda.len() != self.latent_dim {
            return bad(format!("{} lambda weights for latent_dim {}", self.lambda.len(), self.latent_dim));
        }
        for (name, r) in [("rho_animal", self.rho_animal), ("rho_plant", self.rho_plant)] {
            if !(r > 0.0 && r < 1.0) {
                return bad(format!("{name} = {r} must lie in (0,1)"));
            }
        }
        if !(0.0..1.0).contains(&self.clade_corr) || self.clade_size == 0 {
            return bad("clade_corr must lie in [0,1) and clade_size be at least 1".into());
        }
        if self.kind_mix.iter().any(|f| !(0.0..=1.0).contains(f)) || (self.kind_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("kind_mix {:?} must be fractions summing to 1", self.kind_mix));
        }
        let rates_ok = self.occurrence_rates.iter().all(|r| (0.0..=1.0).contains(r));
        if !rates_ok || !(0.0..=1.0).contains(&self.single_focal_prob) {
            return bad("rates must lie in [0,1]".into());
        }
        if self.max_focal == 0 || self.max_pairs_per_study == 0 {
            return bad("max_focal and max_pairs_per_study must be at least 1".into());
        }
        if self.n_zones == 0 || self.countries_per_zone == 0 || self.sites_per_country == 0 {
            return bad("geography sizes must be at least 1".into());
        }
        for (lo, hi) in [self.animal_detect_logit, self.plant_detect_logit] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() || self.detect_loading_sd < 0.0 {
                return bad("detection ranges must be finite with lo <= hi".into());
            }
        }
        for t in self.animal_traits.iter().chain(&self.plant_traits) {
            if t.effect.len() > self.latent_dim || !(t.noise_sd >= 0.0) {
                return bad(format!("trait `{}`: at most latent_dim effects and non-negative noise", t.label));
            }
        }
        Ok(())
    }
}

/// The simulated truth, rows in the species order of its owner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub links: DMatrix<bool>,
    pub occ_animal: DMatrix<bool>,
    pub occ_plant: DMatrix<bool>,
    pub p: DVector<f64>,
    pub q: DVector<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub lambda0: f64,
    pub lambda: DVector<f64>,
    pub rho_animal: f64,
    pub rho_plant: f64,
}

impl SynthTruth {
    fn select(&self, animals: &[usize], plants: &[usize], studies: &[usize]) -> Self {
        let pick_rows = |m: &DMatrix<f64>, rows: &[usize]| DMatrix::from_fn(rows.len(), m.ncols(), |r, c| m[(rows[r], c)]);
        Self {
            links: DMatrix::from_fn(animals.len(), plants.len(), |r, c| self.links[(animals[r], plants[c])]),
            occ_animal: DMatrix::from_fn(animals.len(), studies.len(), |r, c| self.occ_animal[(animals[r], studies[c])]),
            occ_plant: DMatrix::from_fn(plants.len(), studies.len(), |r, c| self.occ_plant[(plants[r], studies[c])]),
            p: DVector::from_iterator(animals.len(), animals.iter().map(|&i| self.p[i])),
            q: DVector::from_iterator(plants.len(), plants.iter().map(|&j| self.q[j])),
            u: pick_rows(&self.u, animals),
            v: pick_rows(&self.v, plants),
            lambda0: self.lambda0,
            lambda: self.lambda.clone(),
            rho_animal: self.rho_animal,
            rho_plant: self.rho_plant,
        }
    }
}

/// A simulated meta-network in generation order, before any species that
/// were never recorded are dropped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthData {
    pub animal_ids: Vec<String>,
    pub plant_ids: Vec<String>,
    pub studies: Vec<StudyMeta>,
    /// Recorded `(animal, plant, study)` triples, sorted.
    pub records: Vec<(usize, usize, usize)>,
    /// Raw (unstandardized) trait values.
    pub animal_traits: TraitMatrix,
    pub plant_traits: TraitMatrix,
    pub phylo: PhyloCorrelation,
    pub truth: SynthTruth,
}

fn block_correlation(n: usize, clade: usize, corr: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |a, b| {
        if a == b {
            1.0
        } else if a / clade == b / clade {
            corr
        } else {
            0.0
        }
    })
}

fn gp_draw(c: &DMatrix<f64>, rho: f64, h: usize, rng: &mut RngStream) -> Result<DMatrix<f64>> {
    let chol = build_sigma(rho, c)?
        .cholesky()
        .ok_or_else(|| Error::Config("phylogenetic covariance is not positive definite".into()))?;
    let z = DMatrix::from_fn(c.nrows(), h, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(chol.l() * z)
}

fn bern(p: f64, rng: &mut RngStream) -> bool {
    rng.random::<f64>() < p
}

// Largest-remainder allocation of study kinds; every kind with a positive
// fraction gets at least one study when there are enough studies.
fn kind_counts(mix: &[f64; 4], n: usize) -> [usize; 4] {
    let raw: Vec<f64> = mix.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 4];
    for k in 0..4 {
        counts[k] = raw[k].floor() as usize;
    }
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())));
    let mut left = n - counts.iter().sum::<usize>();
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    let wanted = mix.iter().filter(|&&f| f > 0.0).count();
    if n >= wanted {
        for k in 0..4 {
            if mix[k] > 0.0 && counts[k] == 0 {
                let donor = (0..4).max_by_key(|&d| counts[d]).unwrap();
                counts[donor] -= 1;
                counts[k] += 1;
            }
        }
    }
    counts
}

fn simulate_traits(specs: &[TraitSpec], f: &DMatrix<f64>, rng: &mut RngStream) -> Result<TraitMatrix> {
    let n = f.nrows();
    let mut values = DMatrix::zeros(n, specs.len());
    for (c, spec) in specs.iter().enumerate() {
        for r in 0..n {
            let eta = spec.intercept + spec.effect.iter().enumerate().map(|(h, b)| b * f[(r, h)]).sum::<f64>();
            values[(r, c)] = match spec.kind {
                TraitKind::Continuous => eta + spec.noise_sd * rng.sample::<f64, _>(StandardNormal),
                TraitKind::Binary => f64::from(u8::from(bern(logistic(eta), rng))),
            };
        }
    }
    Ok(TraitMatrix {
        labels: specs.iter().map(|s| s.label.clone()).collect(),
        kinds: specs.iter().map(|s| s.kind).collect(),
        values,
    })
}

fn choose_focal(present: &[usize], cfg: &SynthConfig, rng: &mut RngStream) -> Vec<usize> {
    if present.is_empty() {
        return Vec::new();
    }
    let k = if cfg.max_focal == 1 || bern(cfg.single_focal_prob, rng) {
        1
    } else {
        rng.random_range(2..=cfg.max_focal)
    };
    present.choose_multiple(rng, k.min(present.len())).copied().collect()
}

/// Simulates a meta-network from the generative model.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let (nf, np, ns, h) = (cfg.n_animals, cfg.n_plants, cfg.n_studies, cfg.latent_dim);
    let mut rng = RngStream::new(cfg.seed, 0).derive(0x7379_6e74);

    let phylo = PhyloCorrelation {
        animal: block_correlation(nf, cfg.clade_size, cfg.clade_corr),
        plant: block_correlation(np, cfg.clade_size, cfg.clade_corr),
    };
    let u = gp_draw(&phylo.animal, cfg.rho_animal, h, &mut rng)?;
    let v = gp_draw(&phylo.plant, cfg.rho_plant, h, &mut rng)?;
    let lambda = DVector::from_column_slice(&cfg.lambda);
    let logits = (&u * DMatrix::from_diagonal(&lambda) * v.transpose()).add_scalar(cfg.lambda0);
    let links = logits.map(|x| bern(logistic(x), &mut rng));

    let detection = |f: &DMatrix<f64>, (lo, hi): (f64, f64), rng: &mut RngStream| {
        let b0 = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let b = DVector::from_fn(h, |_, _| cfg.detect_loading_sd * rng.sample::<f64, _>(StandardNormal));
        (f * b).map(|x| logistic(x + b0))
    };
    let p = detection(&u, cfg.animal_detect_logit, &mut rng);
    let q = detection(&v, cfg.plant_detect_logit, &mut rng);

    // Geography: sites nested in countries nested in zones.
    let n_sites = cfg.n_zones * cfg.countries_per_zone * cfg.sites_per_country;
    let country_of = |site: usize| site / cfg.sites_per_country;
    let zone_of = |site: usize| country_of(site) / cfg.countries_per_zone;
    let study_site: Vec<usize> = (0..ns).map(|_| rng.random_range(0..n_sites)).collect();
    let occurrence = |n: usize, rng: &mut RngStream| {
        let home: Vec<usize> = (0..n).map(|_| rng.random_range(0..n_sites)).collect();
        DMatrix::from_fn(n, ns, |x, s| {
            let (a, b) = (home[x], study_site[s]);
            let tier = if a == b {
                0
            } else if country_of(a) == country_of(b) {
                1
            } else if zone_of(a) == zone_of(b) {
                2
            } else {
                3
            };
            bern(cfg.occurrence_rates[tier], rng)
        })
    };
    let occ_animal = occurrence(nf, &mut rng);
    let occ_plant = occurrence(np, &mut rng);

    let counts = kind_counts(&cfg.kind_mix, ns);
    let mut kinds: Vec<StudyKind> = [StudyKind::Zoocentric, StudyKind::Phytocentric, StudyKind::Network, StudyKind::Pair]
        .iter()
        .zip(counts)
        .flat_map(|(&k, c)| std::iter::repeat_n(k, c))
        .collect();
    kinds.shuffle(&mut rng);

    let mut records = Vec::new();
    for s in 0..ns {
        let present_a: Vec<usize> = (0..nf).filter(|&i| occ_animal[(i, s)]).collect();
        let present_p: Vec<usize> = (0..np).filter(|&j| occ_plant[(j, s)]).collect();
        let cells: Vec<(usize, usize)> = match kinds[s] {
            StudyKind::Zoocentric => choose_focal(&present_a, cfg, &mut rng)
                .into_iter()
                .flat_map(|i| (0..np).map(move |j| (i, j)))
                .collect(),
            StudyKind::Phytocentric => choose_focal(&present_p, cfg, &mut rng)
                .into_iter()
                .flat_map(|j| (0..nf).map(move |i| (i, j)))
                .collect(),
            StudyKind::Network => (0..nf).flat_map(|i| (0..np).map(move |j| (i, j))).collect(),
            StudyKind::Pair => {
                let linked: Vec<(usize, usize)> = present_a
                    .iter()
                    .flat_map(|&i| present_p.iter().map(move |&j| (i, j)))
                    .filter(|&(i, j)| links[(i, j)])
                    .collect();
                let k = rng.random_range(1..=cfg.max_pairs_per_study);
                linked.choose_multiple(&mut rng, k.min(linked.len())).copied().collect()
            }
        };
        for (i, j) in cells {
            if links[(i, j)] && occ_animal[(i, s)] && occ_plant[(j, s)] && bern(p[i] * q[j], &mut rng) {
                records.push((i, j, s));
            }
        }
    }
    records.sort_unstable();

    let animal_traits = simulate_traits(&cfg.animal_traits, &u, &mut rng)?;
    let plant_traits = simulate_traits(&cfg.plant_traits, &v, &mut rng)?;

    let studies = (0..ns)
        .map(|s| {
            let site = study_site[s];
            let (c, z) = (country_of(site), zone_of(site));
            StudyMeta {
                study_id: format!("S{s:03}"),
                kind: kinds[s],
                site: Some(format!("site{site:02}")),
                country: format!("country{c:02}"),
                zone: format!("zone{z}"),
            }
        })
        .collect();
    Ok(SynthData {
        animal_ids: (0..nf).map(|i| format!("A{i:03}")).collect(),
        plant_ids: (0..np).map(|j| format!("P{j:03}")).collect(),
        studies,
        records,
        animal_traits,
        plant_traits,
        phylo,
        truth: SynthTruth {
            links,
            occ_animal,
            occ_plant,
            p,
            q,
            u,
            v,
            lambda0: cfg.lambda0,
            lambda,
            rho_animal: cfg.rho_animal,
            rho_plant: cfg.rho_plant,
        },
    })
}

impl SynthData {
    fn interactions_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["study_id", "animal_id", "plant_id"])?;
        let mut by_study = self.records.clone();
        by_study.sort_unstable_by_key(|&(i, j, s)| (s, i, j));
        for (i, j, s) in by_study {
            w.write_record([&self.studies[s].study_id, &self.animal_ids[i], &self.plant_ids[j]])?;
        }
        w.into_inner().map_err(|e| Error::io("<interactions>", e.into_error()))
    }

    fn studies_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["study_id", "kind", "site", "country", "zone"])?;
        for m in &self.studies {
            w.write_record([
                m.study_id.as_str(),
                m.kind.as_str(),
                m.site.as_deref().unwrap_or(""),
                &m.country,
                &m.zone,
            ])?;
        }
        w.into_inner().map_err(|e| Error::io("<studies>", e.into_error()))
    }

    // Generation-order positions of the ingested species and studies.
    fn positions(&self, labels: &[String], all: &[String]) -> Vec<usize> {
        let at: HashMap<&str, usize> = all.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
        labels.iter().map(|l| at[l.as_str()]).collect()
    }

    /// The dataset exactly as ingestion of the written files would produce
    /// it, together with the truth restricted and reordered to match.
    /// Fails when nothing was recorded.
    pub fn dataset(&self) -> Result<(Dataset, SynthTruth)> {
        let rec = ingest_records_from_readers(&self.interactions_csv()?[..], &self.studies_csv()?[..])?;
        let study_ids: Vec<String> = self.studies.iter().map(|m| m.study_id.clone()).collect();
        let ai = self.positions(&rec.index.animal_ids, &self.animal_ids);
        let pj = self.positions(&rec.index.plant_ids, &self.plant_ids);
        let ss = self.positions(&rec.index.study_ids, &study_ids);
        let traits_of = |t: &TraitMatrix, rows: &[usize]| {
            let vals = DMatrix::from_fn(rows.len(), t.n_traits(), |r, c| t.values[(rows[r], c)]);
            TraitMatrix::new(t.labels.clone(), t.kinds.clone(), vals)
        };
        let sub = |c: &DMatrix<f64>, rows: &[usize]| DMatrix::from_fn(rows.len(), rows.len(), |a, b| c[(rows[a], rows[b])]);
        let data = Dataset::assemble(
            rec.index,
            rec.observed,
            rec.studies,
            TraitTable {
                animal: traits_of(&self.animal_traits, &ai)?,
                plant: traits_of(&self.plant_traits, &pj)?,
            },
            PhyloCorrelation {
                animal: sub(&self.phylo.animal, &ai),
                plant: sub(&self.phylo.plant, &pj),
            },
        )?;
        Ok((data, self.truth.select(&ai, &pj, &ss)))
    }

    /// Writes ingestable input files and truth files for the recorded species.
    pub fn write_dir(&self, dir: &Path) -> Result<Dataset> {
        let (data, truth) = self.dataset()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, bytes: &[u8]| fs::write(dir.join(name), bytes).map_err(|e| Error::io(dir.join(name), e));
        put("interactions.csv", &self.interactions_csv()?)?;
        put("studies.csv", &self.studies_csv()?)?;

        let ix = &data.index;
        let matrix = |corner: &str, rows: &[String], cols: &[String], cell: &dyn Fn(usize, usize) -> String| {
            let mut buf = Vec::new();
            write_labelled_matrix(&mut buf, corner, rows, cols, cell).map(|_| buf)
        };
        for side in Side::BOTH {
            let (raw, rows) = match side {
                Side::Animal => (&self.animal_traits, self.positions(&ix.animal_ids, &self.animal_ids)),
                Side::Plant => (&self.plant_traits, self.positions(&ix.plant_ids, &self.plant_ids)),
            };
            let labels = ix.labels(side);
            let traits = matrix("species_id", labels, &raw.labels, &|r, c| format!("{}", raw.values[(rows[r], c)]))?;
            put(&format!("{}_traits.csv", side.name()), &traits)?;
            let c = data.phylo.side(side);
            let phylo = matrix("species_id", labels, labels, &|a, b| format!("{}", c[(a, b)]))?;
            put(&format!("{}_phylogeny.csv", side.name()), &phylo)?;
        }
        let b = |x: bool| if x { "1".to_string() } else { "0".to_string() };
        put("truth_L.csv", &matrix("animal_id", &ix.animal_ids, &ix.plant_ids, &|r, c| b(truth.links[(r, c)]))?)?;
        put("truth_O_F.csv", &matrix("animal_id", &ix.animal_ids, &ix.study_ids, &|r, c| b(truth.occ_animal[(r, c)]))?)?;
        put("truth_O_P.csv", &matrix("plant_id", &ix.plant_ids, &ix.study_ids, &|r, c| b(truth.occ_plant[(r, c)]))?)?;
        let col = vec!["detection_prob".to_string()];
        put("truth_p.csv", &matrix("animal_id", &ix.animal_ids, &col, &|r, _| format!("{}", truth.p[r]))?)?;
        put("truth_q.csv", &matrix("plant_id", &ix.plant_ids, &col, &|r, _| format!("{}", truth.q[r]))?)?;
        Ok(data)
    }
}

/// Exact posterior marginals of links and occurrence indicators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactMarginals {
    pub links: DMatrix<f64>,
    pub occ_animal: DMatrix<f64>,
    pub occ_plant: DMatrix<f64>,
    pub log_normalizer: f64,
}

pub const MAX_EXACT_BITS: usize = 12;

/// Enumerates every configuration of links and occurrence indicators with
/// the continuous parameters of `state` held fixed (interaction logits and
/// detection probabilities) and occurrence probabilities `pi_animal`,
/// `pi_plant`, returning normalized marginals.
pub fn exact_posterior_tiny(
    data: &Dataset,
    state: &LatentState,
    pi_animal: &DMatrix<f64>,
    pi_plant: &DMatrix<f64>,
) -> Result<ExactMarginals> {
    let (nf, np, ns) = data.dims();
    let bits = nf * np + nf * ns + np * ns;
    if bits > MAX_EXACT_BITS {
        return Err(Error::Argument(format!(
            "{bits} binary unknowns; exact enumeration supports at most {MAX_EXACT_BITS}"
        )));
    }
    if pi_animal.shape() != (nf, ns) || pi_plant.shape() != (np, ns) {
        return Err(Error::Dimension("occurrence probabilities do not match the data".into()));
    }
    let link_prob = state.interaction_logits().map(logistic);
    let bit = |cfg: usize, k: usize| cfg >> k & 1 == 1;
    let (off_a, off_p) = (nf * np, nf * np + nf * ns);
    let mut links = DMatrix::zeros(nf, np);
    let mut occ_a = DMatrix::zeros(nf, ns);
    let mut occ_p = DMatrix::zeros(np, ns);
    let mut total = 0.0;
    let bern_w = |p: f64, x: bool| if x { p } else { 1.0 - p };
    for cfg in 0..1usize << bits {
        let l = |i: usize, j: usize| bit(cfg, i * np + j);
        let oa = |i: usize, s: usize| bit(cfg, off_a + i * ns + s);
        let op = |j: usize, s: usize| bit(cfg, off_p + j * ns + s);
        let mut w = 1.0;
        for i in 0..nf {
            for j in 0..np {
                w *= bern_w(link_prob[(i, j)], l(i, j));
            }
            for s in 0..ns {
                w *= bern_w(pi_animal[(i, s)], oa(i, s));
            }
        }
        for j in 0..np {
            for s in 0..ns {
                w *= bern_w(pi_plant[(j, s)], op(j, s));
            }
        }
        'cells: for i in 0..nf {
            for j in 0..np {
                for s in 0..ns {
                    if w == 0.0 {
                        break 'cells;
                    }
                    if !data.focus.get(i, j, s) {
                        continue;
                    }
                    let pq = state.p[i] * state.q[j];
                    let exposed = l(i, j) && oa(i, s) && op(j, s);
                    w *= match (data.observed.contains(i, j, s), exposed) {
                        (true, true) => pq,
                        (true, false) => 0.0,
                        (false, true) => 1.0 - pq,
                        (false, false) => 1.0,
                    };
                }
            }
        }
        if w == 0.0 {
            continue;
        }
        total += w;
        for i in 0..nf {
            for j in 0..np {
                if l(i, j) {
                    links[(i, j)] += w;
                }
            }
            for s in 0..ns {
                if oa(i, s) {
                    occ_a[(i, s)] += w;
                }
            }
        }
        for j in 0..np {
            for s in 0..ns {
                if op(j, s) {
                    occ_p[(j, s)] += w;
                }
            }
        }
    }
    if !(total > 0.0) {
        return Err(Error::Argument("data have zero probability under the given parameters".into()));
    }
    Ok(ExactMarginals {
        links: links / total,
        occ_animal: occ_a / total,
        occ_plant: occ_p / total,
        log_normalizer: total.ln(),
    })
}
