use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use super::{ObservedTensor, StudyKind, StudyMeta};
use crate::error::{Error, Result};

/// Which (animal, plant) pairs a study would have recorded.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FocalSet {
    /// F_ij = animals[i] && plants[j].
    Product { animals: Vec<bool>, plants: Vec<bool> },
    /// F_ij = 1 exactly on the listed pairs.
    Pairs(BTreeSet<(usize, usize)>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyFocus {
    pub kind: StudyKind,
    pub focal: FocalSet,
}

impl StudyFocus {
    pub fn contains(&self, i: usize, j: usize) -> bool {
        match &self.focal {
            FocalSet::Product { animals, plants } => animals[i] && plants[j],
            FocalSet::Pairs(p) => p.contains(&(i, j)),
        }
    }

    pub fn is_empty(&self) -> bool {
        match &self.focal {
            FocalSet::Product { animals, plants } => {
                !animals.iter().any(|&b| b) || !plants.iter().any(|&b| b)
            }
            FocalSet::Pairs(p) => p.is_empty(),
        }
    }
}

/// The focus tensor F, stored per study, plus pairs masked out of every study
/// (used by cross-validation holdouts).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FocusTensor {
    pub dims: (usize, usize, usize),
    pub studies: Vec<StudyFocus>,
    pub excluded_pairs: BTreeSet<(usize, usize)>,
    pub warnings: Vec<String>,
}

impl FocusTensor {
    pub fn get(&self, i: usize, j: usize, s: usize) -> bool {
        !self.excluded_pairs.contains(&(i, j)) && self.studies[s].contains(i, j)
    }

    pub fn n_focal_triples(&self) -> usize {
        let (nf, np, ns) = self.dims;
        let mut n = 0;
        for s in 0..ns {
            for i in 0..nf {
                for j in 0..np {
                    n += self.get(i, j, s) as usize;
                }
            }
        }
        n
    }
}

/// Recovers each study's focal sets from its kind and its observed records.
///
/// Zoocentric studies focus on the animals seen interacting, phytocentric
/// studies on the plants seen, network studies on everything and pair
/// studies on exactly the recorded pairs. A study with nothing recorded gets
/// an empty focus and a warning.
pub fn derive_focus(observed: &ObservedTensor, meta: &[StudyMeta]) -> Result<FocusTensor> {
    let (nf, np, ns) = observed.dims();
    if meta.len() != ns {
        return Err(Error::Dimension(format!(
            "{} study records for a tensor with {ns} studies",
            meta.len()
        )));
    }
    let by_study = observed.by_study();
    let mut warnings = Vec::new();
    let mut studies = Vec::with_capacity(ns);
    for (s, m) in meta.iter().enumerate() {
        let rows = &by_study[s];
        if rows.is_empty() && m.kind != StudyKind::Network {
            let msg = format!("study `{}` ({}) has no recorded interactions; focus is empty", m.study_id, m.kind);
            log::debug!("{msg}");
            warnings.push(msg);
        }
        let focal = match m.kind {
            StudyKind::Zoocentric => {
                let mut animals = vec![false; nf];
                for &(i, _) in rows {
                    animals[i] = true;
                }
                FocalSet::Product {
                    animals,
                    plants: vec![true; np],
                }
            }
            StudyKind::Phytocentric => {
                let mut plants = vec![false; np];
                for &(_, j) in rows {
                    plants[j] = true;
                }
                FocalSet::Product {
                    animals: vec![true; nf],
                    plants,
                }
            }
            StudyKind::Network => {
                if rows.is_empty() {
                    // Nothing recorded: the study carries no usable focus.
                    let msg = format!("network study `{}` has no recorded interactions; focus is empty", m.study_id);
                    log::debug!("{msg}");
                    warnings.push(msg);
                    FocalSet::Product {
                        animals: vec![false; nf],
                        plants: vec![false; np],
                    }
                } else {
                    FocalSet::Product {
                        animals: vec![true; nf],
                        plants: vec![true; np],
                    }
                }
            }
            StudyKind::Pair => FocalSet::Pairs(rows.iter().copied().collect()),
        };
        studies.push(StudyFocus { kind: m.kind, focal });
    }
    if !warnings.is_empty() {
        log::warn!("{} studies have no recorded interactions and contribute no focus", warnings.len());
    }
    Ok(FocusTensor {
        dims: (nf, np, ns),
        studies,
        excluded_pairs: BTreeSet::new(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(kinds: &[StudyKind]) -> Vec<StudyMeta> {
        kinds
            .iter()
            .enumerate()
            .map(|(s, &kind)| StudyMeta {
                study_id: format!("s{s}"),
                kind,
                site: None,
                country: "c".into(),
                zone: "z".into(),
            })
            .collect()
    }

    #[test]
    fn zoocentric_focus_covers_observed_animal_rows() {
        let a = ObservedTensor::new((3, 4, 1), vec![(2, 1, 0)]).unwrap();
        let f = derive_focus(&a, &meta(&[StudyKind::Zoocentric])).unwrap();
        for j in 0..4 {
            assert!(f.get(2, j, 0));
            assert!(!f.get(0, j, 0));
            assert!(!f.get(1, j, 0));
        }
    }

    #[test]
    fn phytocentric_focus_covers_observed_plant_columns() {
        let a = ObservedTensor::new((3, 4, 1), vec![(0, 3, 0)]).unwrap();
        let f = derive_focus(&a, &meta(&[StudyKind::Phytocentric])).unwrap();
        for i in 0..3 {
            assert!(f.get(i, 3, 0));
            assert!(!f.get(i, 0, 0));
        }
    }

    #[test]
    fn network_focus_is_full() {
        let a = ObservedTensor::new((3, 4, 1), vec![(0, 0, 0)]).unwrap();
        let f = derive_focus(&a, &meta(&[StudyKind::Network])).unwrap();
        assert_eq!(f.n_focal_triples(), 12);
    }

    #[test]
    fn pair_focus_is_exactly_observed_pairs() {
        let a = ObservedTensor::new((3, 4, 1), vec![(0, 1, 0), (2, 3, 0)]).unwrap();
        let f = derive_focus(&a, &meta(&[StudyKind::Pair])).unwrap();
        assert_eq!(f.n_focal_triples(), 2);
        assert!(f.get(0, 1, 0) && f.get(2, 3, 0));
    }

    #[test]
    fn empty_study_has_empty_focus_and_warns() {
        let a = ObservedTensor::new((3, 4, 2), vec![(0, 1, 0)]).unwrap();
        for kind in [StudyKind::Zoocentric, StudyKind::Network, StudyKind::Pair] {
            let f = derive_focus(&a, &meta(&[StudyKind::Network, kind])).unwrap();
            assert_eq!(f.warnings.len(), 1);
            assert!(f.studies[1].is_empty());
            for i in 0..3 {
                for j in 0..4 {
                    assert!(!f.get(i, j, 1));
                }
            }
        }
    }

    #[test]
    fn study_count_mismatch_is_an_error() {
        let a = ObservedTensor::new((1, 1, 2), vec![]).unwrap();
        assert!(derive_focus(&a, &meta(&[StudyKind::Network])).is_err());
    }

    #[test]
    fn derive_focus_is_idempotent() {
        let a = ObservedTensor::new((3, 3, 2), vec![(0, 1, 0), (1, 2, 1)]).unwrap();
        let m = meta(&[StudyKind::Zoocentric, StudyKind::Phytocentric]);
        assert_eq!(derive_focus(&a, &m).unwrap(), derive_focus(&a, &m).unwrap());
    }
}
