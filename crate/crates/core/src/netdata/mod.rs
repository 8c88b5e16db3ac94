//! Meta-network data model: species/study indexing, the observed interaction
//! tensor, per-study focus, traits, phylogenetic correlations and the prior
//! occurrence tables built from study geography.

mod export;
mod focus;
mod ingest;
mod prior;
mod validate;

pub use export::write_labelled_matrix;
pub use focus::{derive_focus, FocalSet, FocusTensor, StudyFocus};
pub use ingest::{
    ingest_records, ingest_records_from_readers, is_constant, load_dataset, read_phylogeny, read_trait_columns, read_traits,
    DataPaths, IngestedRecords,
};
pub use prior::{build_occurrence_prior, closest_tiers, OccurrencePriorTable, Tier, TierMap};
pub use validate::{validate_inputs, ValidationReport, Violation};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Dense label ↔ index maps for animals, plants and studies.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpeciesIndex {
    pub animal_ids: Vec<String>,
    pub plant_ids: Vec<String>,
    pub study_ids: Vec<String>,
}

impl SpeciesIndex {
    pub fn n_animals(&self) -> usize {
        self.animal_ids.len()
    }

    pub fn n_plants(&self) -> usize {
        self.plant_ids.len()
    }

    pub fn n_studies(&self) -> usize {
        self.study_ids.len()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n_animals(), self.n_plants(), self.n_studies())
    }

    pub fn labels(&self, side: Side) -> &[String] {
        match side {
            Side::Animal => &self.animal_ids,
            Side::Plant => &self.plant_ids,
        }
    }

    pub fn lookup(&self, side: Side) -> HashMap<&str, usize> {
        self.labels(side)
            .iter()
            .enumerate()
            .map(|(k, s)| (s.as_str(), k))
            .collect()
    }
}

/// Which side of the bipartite network a quantity belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Animal,
    Plant,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Animal, Side::Plant];

    pub fn name(self) -> &'static str {
        match self {
            Side::Animal => "animal",
            Side::Plant => "plant",
        }
    }

    pub fn other(self) -> Side {
        match self {
            Side::Animal => Side::Plant,
            Side::Plant => Side::Animal,
        }
    }
}

/// Sparse binary tensor of recorded (animal, plant, study) interactions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedTensor {
    dims: (usize, usize, usize),
    entries: Vec<(usize, usize, usize)>,
}

impl ObservedTensor {
    /// Builds the tensor with set semantics; out-of-range triples are an error.
    pub fn new(dims: (usize, usize, usize), mut entries: Vec<(usize, usize, usize)>) -> Result<Self> {
        for &(i, j, s) in &entries {
            if i >= dims.0 || j >= dims.1 || s >= dims.2 {
                return Err(Error::Dimension(format!(
                    "triple ({i}, {j}, {s}) outside tensor of dims {dims:?}"
                )));
            }
        }
        entries.sort_unstable();
        entries.dedup();
        Ok(Self { dims, entries })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn entries(&self) -> &[(usize, usize, usize)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, i: usize, j: usize, s: usize) -> bool {
        self.entries.binary_search(&(i, j, s)).is_ok()
    }

    /// Observed (animal, plant) pairs per study.
    pub fn by_study(&self) -> Vec<Vec<(usize, usize)>> {
        let mut out = vec![Vec::new(); self.dims.2];
        for &(i, j, s) in &self.entries {
            out[s].push((i, j));
        }
        out
    }

    /// `true` where the pair was recorded in at least one study.
    pub fn pair_observed(&self) -> DMatrix<bool> {
        let mut m = DMatrix::from_element(self.dims.0, self.dims.1, false);
        for &(i, j, _) in &self.entries {
            m[(i, j)] = true;
        }
        m
    }

    pub fn n_observed_pairs(&self) -> usize {
        self.pair_observed().iter().filter(|&&b| b).count()
    }

    /// `true` where a species of `side` took part in some interaction of a study.
    pub fn species_in_study(&self, side: Side) -> DMatrix<bool> {
        let n = match side {
            Side::Animal => self.dims.0,
            Side::Plant => self.dims.1,
        };
        let mut m = DMatrix::from_element(n, self.dims.2, false);
        for &(i, j, s) in &self.entries {
            match side {
                Side::Animal => m[(i, s)] = true,
                Side::Plant => m[(j, s)] = true,
            }
        }
        m
    }

    /// Removes every record of the given pairs, across all studies.
    pub fn without_pairs(&self, pairs: &[(usize, usize)]) -> Self {
        let drop: std::collections::HashSet<(usize, usize)> = pairs.iter().copied().collect();
        Self {
            dims: self.dims,
            entries: self
                .entries
                .iter()
                .copied()
                .filter(|&(i, j, _)| !drop.contains(&(i, j)))
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StudyKind {
    Zoocentric,
    Phytocentric,
    Network,
    Pair,
}

impl StudyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StudyKind::Zoocentric => "zoocentric",
            StudyKind::Phytocentric => "phytocentric",
            StudyKind::Network => "network",
            StudyKind::Pair => "pair",
        }
    }
}

impl fmt::Display for StudyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StudyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "zoocentric" | "zoo" => Ok(StudyKind::Zoocentric),
            "phytocentric" | "phyto" => Ok(StudyKind::Phytocentric),
            "network" | "combined" => Ok(StudyKind::Network),
            "pair" => Ok(StudyKind::Pair),
            other => Err(format!("unknown study kind `{other}`")),
        }
    }
}

/// Study-level metadata: design and location in the zone/country/site hierarchy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyMeta {
    pub study_id: String,
    pub kind: StudyKind,
    pub site: Option<String>,
    pub country: String,
    pub zone: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraitKind {
    Continuous,
    Binary,
}

impl FromStr for TraitKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "continuous" => Ok(TraitKind::Continuous),
            "binary" => Ok(TraitKind::Binary),
            other => Err(format!("unknown trait kind `{other}`")),
        }
    }
}

/// Species × trait matrix for one side, rows in `SpeciesIndex` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraitMatrix {
    pub labels: Vec<String>,
    pub kinds: Vec<TraitKind>,
    pub values: DMatrix<f64>,
}

impl TraitMatrix {
    pub fn empty(n_species: usize) -> Self {
        Self {
            labels: Vec::new(),
            kinds: Vec::new(),
            values: DMatrix::zeros(n_species, 0),
        }
    }

    /// Builds the matrix and standardizes continuous columns to mean 0 and
    /// unit variance.
    pub fn new(labels: Vec<String>, kinds: Vec<TraitKind>, mut values: DMatrix<f64>) -> Result<Self> {
        if labels.len() != kinds.len() || labels.len() != values.ncols() {
            return Err(Error::Dimension(format!(
                "{} trait labels, {} kinds, {} columns",
                labels.len(),
                kinds.len(),
                values.ncols()
            )));
        }
        for (c, kind) in kinds.iter().enumerate() {
            let col: Vec<f64> = values.column(c).iter().copied().collect();
            if let Some(bad) = col.iter().find(|v| !v.is_finite()) {
                return Err(Error::Config(format!("trait `{}` has non-finite value {bad}", labels[c])));
            }
            match kind {
                TraitKind::Continuous => {
                    let z = standardize(&col)
                        .ok_or_else(|| Error::Config(format!("trait `{}` is constant", labels[c])))?;
                    for (r, v) in z.into_iter().enumerate() {
                        values[(r, c)] = v;
                    }
                }
                TraitKind::Binary => {
                    if col.iter().any(|&v| v != 0.0 && v != 1.0) {
                        return Err(Error::Config(format!("binary trait `{}` has values outside {{0,1}}", labels[c])));
                    }
                }
            }
        }
        Ok(Self {
            labels,
            kinds,
            values,
        })
    }

    pub fn n_traits(&self) -> usize {
        self.labels.len()
    }

    pub fn n_species(&self) -> usize {
        self.values.nrows()
    }
}

fn standardize(col: &[f64]) -> Option<Vec<f64>> {
    let n = col.len() as f64;
    if col.is_empty() {
        return Some(Vec::new());
    }
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) {
        return None;
    }
    let sd = var.sqrt();
    Some(col.iter().map(|x| (x - mean) / sd).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraitTable {
    pub animal: TraitMatrix,
    pub plant: TraitMatrix,
}

impl TraitTable {
    pub fn empty(n_animals: usize, n_plants: usize) -> Self {
        Self {
            animal: TraitMatrix::empty(n_animals),
            plant: TraitMatrix::empty(n_plants),
        }
    }

    pub fn side(&self, side: Side) -> &TraitMatrix {
        match side {
            Side::Animal => &self.animal,
            Side::Plant => &self.plant,
        }
    }
}

/// Phylogenetic correlation matrices for both sides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhyloCorrelation {
    pub animal: DMatrix<f64>,
    pub plant: DMatrix<f64>,
}

impl PhyloCorrelation {
    pub fn identity(n_animals: usize, n_plants: usize) -> Self {
        Self {
            animal: DMatrix::identity(n_animals, n_animals),
            plant: DMatrix::identity(n_plants, n_plants),
        }
    }

    pub fn side(&self, side: Side) -> &DMatrix<f64> {
        match side {
            Side::Animal => &self.animal,
            Side::Plant => &self.plant,
        }
    }
}

/// Everything the sampler consumes apart from the occurrence prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub index: SpeciesIndex,
    pub observed: ObservedTensor,
    pub studies: Vec<StudyMeta>,
    pub focus: FocusTensor,
    pub traits: TraitTable,
    pub phylo: PhyloCorrelation,
}

impl Dataset {
    /// Assembles a dataset, deriving the focus tensor from study kinds.
    pub fn assemble(
        index: SpeciesIndex,
        observed: ObservedTensor,
        studies: Vec<StudyMeta>,
        traits: TraitTable,
        phylo: PhyloCorrelation,
    ) -> Result<Self> {
        let focus = derive_focus(&observed, &studies)?;
        Ok(Self {
            index,
            observed,
            studies,
            focus,
            traits,
            phylo,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.observed.dims()
    }
}
