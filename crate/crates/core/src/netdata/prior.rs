use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ObservedTensor, Side, StudyMeta};
use crate::error::{Error, Result};

/// Proximity of a (species, study) cell to the nearest study where the
/// species was recorded, from closest to furthest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    SameStudy,
    SameSite,
    SameCountry,
    SameZone,
    DifferentZone,
}

impl Tier {
    pub const ALL: [Tier; 5] = [
        Tier::SameStudy,
        Tier::SameSite,
        Tier::SameCountry,
        Tier::SameZone,
        Tier::DifferentZone,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tier::SameStudy => "same_study",
            Tier::SameSite => "same_site",
            Tier::SameCountry => "same_country_only",
            Tier::SameZone => "same_zone_only",
            Tier::DifferentZone => "different_zone",
        }
    }
}

/// Prior occurrence probability for each proximity tier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TierMap {
    pub same_study: f64,
    pub same_site: f64,
    pub same_country_only: f64,
    pub same_zone_only: f64,
    pub different_zone: f64,
}

impl TierMap {
    /// Unobserved species are absent (0/100).
    pub fn naive() -> Self {
        Self::flat(0.0)
    }

    /// Unobserved species occur with probability 0.75 (75/100).
    pub fn default75() -> Self {
        Self::flat(0.75)
    }

    /// Expert proximity tiers: site 0.75, country 0.50, zone 0.25, elsewhere 0.
    pub fn expert() -> Self {
        Self {
            same_study: 1.0,
            same_site: 0.75,
            same_country_only: 0.50,
            same_zone_only: 0.25,
            different_zone: 0.0,
        }
    }

    fn flat(p: f64) -> Self {
        Self {
            same_study: 1.0,
            same_site: p,
            same_country_only: p,
            same_zone_only: p,
            different_zone: p,
        }
    }

    pub fn get(&self, tier: Tier) -> f64 {
        match tier {
            Tier::SameStudy => self.same_study,
            Tier::SameSite => self.same_site,
            Tier::SameCountry => self.same_country_only,
            Tier::SameZone => self.same_zone_only,
            Tier::DifferentZone => self.different_zone,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals: Vec<f64> = Tier::ALL.iter().map(|&t| self.get(t)).collect();
        if let Some(t) = Tier::ALL.iter().find(|&&t| !(0.0..=1.0).contains(&self.get(t))) {
            return Err(Error::Config(format!(
                "tier `{}` probability {} outside [0, 1]",
                t.name(),
                self.get(*t)
            )));
        }
        if vals.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Config(format!(
                "tier probabilities must be non-increasing from same_study to different_zone, got {vals:?}"
            )));
        }
        Ok(())
    }
}

/// Prior occurrence centers: species × study for each side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccurrencePriorTable {
    pub animal: DMatrix<f64>,
    pub plant: DMatrix<f64>,
}

impl OccurrencePriorTable {
    pub fn side(&self, side: Side) -> &DMatrix<f64> {
        match side {
            Side::Animal => &self.animal,
            Side::Plant => &self.plant,
        }
    }
}

/// Closest proximity tier of every (species, study) cell on one side.
///
/// A missing site label never matches another study's site.
pub fn closest_tiers(observed: &ObservedTensor, meta: &[StudyMeta], side: Side) -> Result<DMatrix<Tier>> {
    let ns = observed.dims().2;
    if meta.len() != ns {
        return Err(Error::Dimension(format!("{} study records for {ns} studies", meta.len())));
    }
    let seen = observed.species_in_study(side);
    let n = seen.nrows();
    let mut tiers = DMatrix::from_element(n, ns, Tier::DifferentZone);
    for x in 0..n {
        let where_seen: Vec<usize> = (0..ns).filter(|&s| seen[(x, s)]).collect();
        for s in 0..ns {
            if seen[(x, s)] {
                tiers[(x, s)] = Tier::SameStudy;
                continue;
            }
            let here = &meta[s];
            let mut best = Tier::DifferentZone;
            for &o in &where_seen {
                let other = &meta[o];
                let t = if here.zone != other.zone {
                    Tier::DifferentZone
                } else if here.country != other.country {
                    Tier::SameZone
                } else if here.site.is_some() && here.site == other.site {
                    Tier::SameSite
                } else {
                    Tier::SameCountry
                };
                best = best.min(t);
                if best == Tier::SameSite {
                    break;
                }
            }
            tiers[(x, s)] = best;
        }
    }
    Ok(tiers)
}

/// Prior occurrence centers from the closest-tier rule: 1 where the species
/// was recorded in the study, otherwise the probability of its closest tier.
pub fn build_occurrence_prior(
    observed: &ObservedTensor,
    meta: &[StudyMeta],
    tiers: &TierMap,
) -> Result<OccurrencePriorTable> {
    tiers.validate()?;
    let to_prob = |side| -> Result<DMatrix<f64>> {
        Ok(closest_tiers(observed, meta, side)?.map(|t| if t == Tier::SameStudy { 1.0 } else { tiers.get(t) }))
    };
    Ok(OccurrencePriorTable {
        animal: to_prob(Side::Animal)?,
        plant: to_prob(Side::Plant)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netdata::StudyKind;

    fn study(id: &str, site: Option<&str>, country: &str, zone: &str) -> StudyMeta {
        StudyMeta {
            study_id: id.into(),
            kind: StudyKind::Network,
            site: site.map(str::to_string),
            country: country.into(),
            zone: zone.into(),
        }
    }

    // Plant 0 seen in study 0 only; studies 1..4 are at decreasing proximity.
    fn fixture() -> (ObservedTensor, Vec<StudyMeta>) {
        let meta = vec![
            study("s0", Some("park"), "CM", "Central"),
            study("s1", Some("park"), "CM", "Central"),
            study("s2", Some("reserve"), "CM", "Central"),
            study("s3", Some("forest"), "GA", "Central"),
            study("s4", Some("coast"), "KE", "Eastern"),
            study("s5", None, "CM", "Central"),
        ];
        let a = ObservedTensor::new((2, 2, 6), vec![(0, 0, 0), (1, 1, 4)]).unwrap();
        (a, meta)
    }

    #[test]
    fn expert_tiers_follow_proximity() {
        let (a, meta) = fixture();
        let p = build_occurrence_prior(&a, &meta, &TierMap::expert()).unwrap();
        let row: Vec<f64> = p.plant.row(0).iter().copied().collect();
        assert_eq!(row, vec![1.0, 0.75, 0.5, 0.25, 0.0, 0.5]);
    }

    #[test]
    fn default_and_naive_tiers() {
        let (a, meta) = fixture();
        let p = build_occurrence_prior(&a, &meta, &TierMap::default75()).unwrap();
        assert_eq!(p.animal[(0, 0)], 1.0);
        assert!(p.animal.row(0).iter().skip(1).all(|&v| v == 0.75));
        let p = build_occurrence_prior(&a, &meta, &TierMap::naive()).unwrap();
        assert!(p.animal.row(0).iter().skip(1).all(|&v| v == 0.0));
    }

    #[test]
    fn closest_tier_wins() {
        // Species seen both in a different zone and at the same site.
        let (_, meta) = fixture();
        let a = ObservedTensor::new((1, 1, 6), vec![(0, 0, 4), (0, 0, 0)]).unwrap();
        let p = build_occurrence_prior(&a, &meta, &TierMap::expert()).unwrap();
        assert_eq!(p.animal[(0, 1)], 0.75);
    }

    #[test]
    fn missing_site_never_matches() {
        let meta = vec![study("s0", None, "CM", "Central"), study("s1", None, "CM", "Central")];
        let a = ObservedTensor::new((1, 1, 2), vec![(0, 0, 0)]).unwrap();
        let t = closest_tiers(&a, &meta, Side::Animal).unwrap();
        assert_eq!(t[(0, 1)], Tier::SameCountry);
    }

    #[test]
    fn non_monotone_map_rejected() {
        let mut m = TierMap::expert();
        m.same_zone_only = 0.9;
        assert!(matches!(m.validate(), Err(Error::Config(_))));
        let (a, meta) = fixture();
        assert!(build_occurrence_prior(&a, &meta, &m).is_err());
    }

    #[test]
    fn invariant_to_study_order() {
        let (a, meta) = fixture();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let meta_p: Vec<StudyMeta> = perm.iter().map(|&s| meta[s].clone()).collect();
        let inv: Vec<usize> = (0..6).map(|s| perm.iter().position(|&p| p == s).unwrap()).collect();
        let a_p = ObservedTensor::new(
            a.dims(),
            a.entries().iter().map(|&(i, j, s)| (i, j, inv[s])).collect(),
        )
        .unwrap();
        let p = build_occurrence_prior(&a, &meta, &TierMap::expert()).unwrap();
        let q = build_occurrence_prior(&a_p, &meta_p, &TierMap::expert()).unwrap();
        for s in 0..6 {
            for x in 0..2 {
                assert_eq!(p.plant[(x, s)], q.plant[(x, inv[s])]);
                assert_eq!(p.animal[(x, s)], q.animal[(x, inv[s])]);
            }
        }
    }
}
