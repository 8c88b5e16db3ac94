use nalgebra::DMatrix;
use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use super::{
    Dataset, ObservedTensor, PhyloCorrelation, Side, SpeciesIndex, StudyKind, StudyMeta, TraitKind, TraitMatrix, TraitTable,
};
use crate::error::{Error, Result};

/// Result of reading the interaction and study tables.
#[derive(Clone, Debug)]
pub struct IngestedRecords {
    pub index: SpeciesIndex,
    pub observed: ObservedTensor,
    pub studies: Vec<StudyMeta>,
    /// Data rows read from the interactions file, before de-duplication.
    pub n_rows: usize,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

pub fn ingest_records(interactions: &Path, studies: &Path) -> Result<IngestedRecords> {
    ingest_records_from_readers(open(interactions)?, open(studies)?)
}

fn column(headers: &csv::StringRecord, name: &str, file: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Parse {
            file: file.to_string(),
            line: 1,
            message: format!("missing column `{name}`"),
        })
}

fn intern(map: &mut HashMap<String, usize>, labels: &mut Vec<String>, key: &str) -> usize {
    if let Some(&k) = map.get(key) {
        return k;
    }
    let k = labels.len();
    map.insert(key.to_string(), k);
    labels.push(key.to_string());
    k
}

/// Reads `study_id,animal_id,plant_id` rows and `study_id,kind,site,country,zone`
/// metadata. Indices are dense in first-appearance order; studies that have
/// metadata but no interactions are appended after the referenced ones.
pub fn ingest_records_from_readers<R1: Read, R2: Read>(
    interactions: R1,
    studies: R2,
) -> Result<IngestedRecords> {
    let mut meta_by_id: HashMap<String, StudyMeta> = HashMap::new();
    let mut meta_order = Vec::new();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(studies);
    let headers = rdr.headers()?.clone();
    let file = "studies";
    let (c_id, c_kind, c_site, c_country, c_zone) = (
        column(&headers, "study_id", file)?,
        column(&headers, "kind", file)?,
        column(&headers, "site", file)?,
        column(&headers, "country", file)?,
        column(&headers, "zone", file)?,
    );
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let field = |c: usize| rec.get(c).unwrap_or("").to_string();
        let kind: StudyKind = field(c_kind).parse().map_err(|message| Error::Parse {
            file: file.to_string(),
            line,
            message,
        })?;
        let site = Some(field(c_site)).filter(|s| !s.is_empty());
        let m = StudyMeta {
            study_id: field(c_id),
            kind,
            site,
            country: field(c_country),
            zone: field(c_zone),
        };
        if m.study_id.is_empty() {
            return Err(Error::Parse {
                file: file.to_string(),
                line,
                message: "empty study_id".into(),
            });
        }
        if meta_by_id.contains_key(&m.study_id) {
            return Err(Error::Parse {
                file: file.to_string(),
                line,
                message: format!("duplicate study `{}`", m.study_id),
            });
        }
        meta_order.push(m.study_id.clone());
        meta_by_id.insert(m.study_id.clone(), m);
    }

    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(interactions);
    let headers = rdr.headers()?.clone();
    let file = "interactions";
    let (c_study, c_animal, c_plant) = (
        column(&headers, "study_id", file)?,
        column(&headers, "animal_id", file)?,
        column(&headers, "plant_id", file)?,
    );
    let mut index = SpeciesIndex::default();
    let (mut amap, mut pmap, mut smap) = (HashMap::new(), HashMap::new(), HashMap::new());
    let mut triples = Vec::new();
    let mut n_rows = 0;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let (sid, aid, pid) = (
            rec.get(c_study).unwrap_or(""),
            rec.get(c_animal).unwrap_or(""),
            rec.get(c_plant).unwrap_or(""),
        );
        if sid.is_empty() || aid.is_empty() || pid.is_empty() {
            return Err(Error::Parse {
                file: file.to_string(),
                line,
                message: "empty identifier".into(),
            });
        }
        if !meta_by_id.contains_key(sid) {
            return Err(Error::MissingStudy(sid.to_string()));
        }
        let s = intern(&mut smap, &mut index.study_ids, sid);
        let i = intern(&mut amap, &mut index.animal_ids, aid);
        let j = intern(&mut pmap, &mut index.plant_ids, pid);
        triples.push((i, j, s));
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(Error::EmptyInput("interactions file has no records".into()));
    }
    for sid in &meta_order {
        intern(&mut smap, &mut index.study_ids, sid);
    }
    let studies = index
        .study_ids
        .iter()
        .map(|sid| meta_by_id[sid].clone())
        .collect();
    let observed = ObservedTensor::new(index.dims(), triples)?;
    Ok(IngestedRecords {
        index,
        observed,
        studies,
        n_rows,
    })
}

/// Reads a `species_id,<trait>...` table and reorders rows to `index`.
///
/// Columns absent from `kinds` are treated as continuous.
pub fn read_traits<R: Read>(
    reader: R,
    index: &SpeciesIndex,
    side: Side,
    kinds: &HashMap<String, TraitKind>,
) -> Result<TraitMatrix> {
    let (labels, values) = read_trait_columns(reader, index, side)?;
    let kind_list = labels
        .iter()
        .map(|l| kinds.get(l).copied().unwrap_or(TraitKind::Continuous))
        .collect();
    TraitMatrix::new(labels, kind_list, values)
}

/// Raw trait labels and values in `index` order, without standardization.
pub fn read_trait_columns<R: Read>(reader: R, index: &SpeciesIndex, side: Side) -> Result<(Vec<String>, DMatrix<f64>)> {
    let file = format!("{} traits", side.name());
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let c_id = column(&headers, "species_id", &file)?;
    let trait_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != c_id).collect();
    let labels: Vec<String> = trait_cols.iter().map(|&c| headers[c].to_string()).collect();
    let lookup = index.lookup(side);
    let n = lookup.len();
    let mut values = DMatrix::from_element(n, labels.len(), f64::NAN);
    let mut seen = vec![false; n];
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let id = rec.get(c_id).unwrap_or("");
        let &row = lookup.get(id).ok_or_else(|| Error::Parse {
            file: file.clone(),
            line,
            message: format!("species `{id}` is not in the interaction data"),
        })?;
        if seen[row] {
            return Err(Error::Parse {
                file: file.clone(),
                line,
                message: format!("duplicate species `{id}`"),
            });
        }
        seen[row] = true;
        for (t, &c) in trait_cols.iter().enumerate() {
            let raw = rec.get(c).unwrap_or("");
            values[(row, t)] = raw.parse::<f64>().map_err(|_| Error::Parse {
                file: file.clone(),
                line,
                message: format!("trait `{}`: cannot parse `{raw}` (missing values must be imputed upstream)", labels[t]),
            })?;
        }
    }
    if let Some(missing) = seen.iter().position(|&b| !b) {
        return Err(Error::Parse {
            file,
            line: 0,
            message: format!("no trait row for species `{}`", index.labels(side)[missing]),
        });
    }
    Ok((labels, values))
}

/// Reads a dense labelled square matrix and reorders it to `index`. The label
/// set must equal the species set of `side`.
pub fn read_phylogeny<R: Read>(reader: R, index: &SpeciesIndex, side: Side) -> Result<DMatrix<f64>> {
    let file = format!("{} phylogeny", side.name());
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = rdr.records();
    let header = rows.next().ok_or_else(|| Error::EmptyInput(file.clone()))??;
    let col_labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let lookup = index.lookup(side);
    let n = lookup.len();
    if col_labels.len() != n {
        return Err(Error::Parse {
            file,
            line: 1,
            message: format!("{} labels but {n} species", col_labels.len()),
        });
    }
    let col_pos: Vec<usize> = col_labels
        .iter()
        .map(|l| {
            lookup.get(l.as_str()).copied().ok_or_else(|| Error::Parse {
                file: file.clone(),
                line: 1,
                message: format!("unknown species `{l}`"),
            })
        })
        .collect::<Result<_>>()?;
    let mut m = DMatrix::from_element(n, n, f64::NAN);
    let mut seen = vec![false; n];
    for (k, rec) in rows.enumerate() {
        let rec = rec?;
        let line = k + 2;
        let label = rec.get(0).unwrap_or("");
        let &r = lookup.get(label).ok_or_else(|| Error::Parse {
            file: file.clone(),
            line,
            message: format!("unknown species `{label}`"),
        })?;
        seen[r] = true;
        for (c, &pos) in col_pos.iter().enumerate() {
            let raw = rec.get(c + 1).unwrap_or("");
            m[(r, pos)] = raw.parse().map_err(|_| Error::Parse {
                file: file.clone(),
                line,
                message: format!("cannot parse `{raw}`"),
            })?;
        }
    }
    if seen.iter().any(|&b| !b) {
        return Err(Error::Parse {
            file,
            line: 0,
            message: "label set differs from the species index".into(),
        });
    }
    Ok(m)
}

/// Locations of the input tables; traits and phylogenies are optional.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DataPaths {
    pub interactions: PathBuf,
    pub studies: PathBuf,
    pub animal_traits: Option<PathBuf>,
    pub plant_traits: Option<PathBuf>,
    pub animal_phylogeny: Option<PathBuf>,
    pub plant_phylogeny: Option<PathBuf>,
}

impl DataPaths {
    /// The conventional file names inside `dir`; optional tables are used
    /// only when present.
    pub fn in_dir(dir: &Path) -> Self {
        let opt = |name: &str| Some(dir.join(name)).filter(|p| p.exists());
        Self {
            interactions: dir.join("interactions.csv"),
            studies: dir.join("studies.csv"),
            animal_traits: opt("animal_traits.csv"),
            plant_traits: opt("plant_traits.csv"),
            animal_phylogeny: opt("animal_phylogeny.csv"),
            plant_phylogeny: opt("plant_phylogeny.csv"),
        }
    }

    pub fn traits(&self, side: Side) -> Option<&Path> {
        match side {
            Side::Animal => self.animal_traits.as_deref(),
            Side::Plant => self.plant_traits.as_deref(),
        }
    }

    pub fn phylogeny(&self, side: Side) -> Option<&Path> {
        match side {
            Side::Animal => self.animal_phylogeny.as_deref(),
            Side::Plant => self.plant_phylogeny.as_deref(),
        }
    }
}

/// Whether a raw trait column carries no information.
pub fn is_constant(col: &[f64]) -> bool {
    col.windows(2).all(|w| w[0] == w[1])
}

// Constant columns cannot inform the factors; they are dropped with a warning.
fn informative_traits(labels: Vec<String>, values: DMatrix<f64>, kinds: &HashMap<String, TraitKind>) -> Result<TraitMatrix> {
    let keep: Vec<usize> = (0..labels.len())
        .filter(|&c| {
            let col: Vec<f64> = values.column(c).iter().copied().collect();
            let constant = is_constant(&col);
            if constant {
                log::warn!("trait `{}` is constant and is left out of the model", labels[c]);
            }
            !constant
        })
        .collect();
    let kept: Vec<String> = keep.iter().map(|&c| labels[c].clone()).collect();
    let kind_list = kept
        .iter()
        .map(|l| kinds.get(l).copied().unwrap_or(TraitKind::Continuous))
        .collect();
    TraitMatrix::new(kept, kind_list, values.select_columns(&keep))
}

/// Reads every table into a dataset. Missing traits give an empty trait
/// matrix, missing phylogenies the identity.
pub fn load_dataset(paths: &DataPaths, kinds: &HashMap<String, TraitKind>) -> Result<Dataset> {
    let rec = ingest_records(&paths.interactions, &paths.studies)?;
    let traits_of = |side: Side| -> Result<TraitMatrix> {
        match paths.traits(side) {
            Some(p) => {
                let (labels, values) = read_trait_columns(open(p)?, &rec.index, side)?;
                informative_traits(labels, values, kinds)
            }
            None => Ok(TraitMatrix::empty(rec.index.labels(side).len())),
        }
    };
    let phylo_of = |side: Side| -> Result<DMatrix<f64>> {
        match paths.phylogeny(side) {
            Some(p) => read_phylogeny(open(p)?, &rec.index, side),
            None => {
                let n = rec.index.labels(side).len();
                Ok(DMatrix::identity(n, n))
            }
        }
    };
    let traits = TraitTable {
        animal: traits_of(Side::Animal)?,
        plant: traits_of(Side::Plant)?,
    };
    let phylo = PhyloCorrelation {
        animal: phylo_of(Side::Animal)?,
        plant: phylo_of(Side::Plant)?,
    };
    Dataset::assemble(rec.index, rec.observed, rec.studies, traits, phylo)
}

#[cfg(test)]
mod tests {
    use super::*;

    const STUDIES: &str = "study_id,kind,site,country,zone\ns1,zoocentric,a,CM,Central\ns2,network,,GA,Central\n";

    #[test]
    fn duplicates_collapse() {
        let rows = "study_id,animal_id,plant_id\ns1,x,p\ns1,x,p\ns2,y,q\n";
        let r = ingest_records_from_readers(rows.as_bytes(), STUDIES.as_bytes()).unwrap();
        assert_eq!(r.n_rows, 3);
        assert_eq!(r.observed.len(), 2);
        assert_eq!(r.index.dims(), (2, 2, 2));
        assert_eq!(r.studies[1].site, None);
    }

    #[test]
    fn first_appearance_order() {
        let rows = "study_id,animal_id,plant_id\ns2,y,q\ns1,x,p\n";
        let r = ingest_records_from_readers(rows.as_bytes(), STUDIES.as_bytes()).unwrap();
        assert_eq!(r.index.study_ids, vec!["s2", "s1"]);
        assert_eq!(r.index.animal_ids, vec!["y", "x"]);
        assert_eq!(r.studies[0].kind, StudyKind::Network);
    }

    #[test]
    fn missing_study_is_named() {
        let rows = "study_id,animal_id,plant_id\ns9,x,p\n";
        let err = ingest_records_from_readers(rows.as_bytes(), STUDIES.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MissingStudy(ref s) if s == "s9"));
        assert!(err.to_string().contains("s9"));
    }

    #[test]
    fn unknown_kind_is_a_parse_error() {
        let studies = "study_id,kind,site,country,zone\ns1,aquatic,a,CM,Central\n";
        let rows = "study_id,animal_id,plant_id\ns1,x,p\n";
        let err = ingest_records_from_readers(rows.as_bytes(), studies.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn empty_file_is_rejected() {
        let rows = "study_id,animal_id,plant_id\n";
        let err = ingest_records_from_readers(rows.as_bytes(), STUDIES.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::EmptyInput(_)));
    }

    #[test]
    fn unreferenced_studies_are_appended() {
        let rows = "study_id,animal_id,plant_id\ns2,y,q\n";
        let r = ingest_records_from_readers(rows.as_bytes(), STUDIES.as_bytes()).unwrap();
        assert_eq!(r.index.study_ids, vec!["s2", "s1"]);
    }

    #[test]
    fn traits_are_reordered_and_standardized() {
        let rows = "study_id,animal_id,plant_id\ns1,x,p\ns1,y,p\ns1,z,p\n";
        let r = ingest_records_from_readers(rows.as_bytes(), STUDIES.as_bytes()).unwrap();
        let traits = "species_id,mass,nocturnal\nz,3,1\nx,1,0\ny,2,1\n";
        let kinds = HashMap::from([("nocturnal".to_string(), TraitKind::Binary)]);
        let t = read_traits(traits.as_bytes(), &r.index, Side::Animal, &kinds).unwrap();
        let sd = (2.0f64 / 3.0).sqrt();
        assert!((t.values[(0, 0)] + 1.0 / sd).abs() < 1e-12);
        assert_eq!(t.values[(1, 1)], 1.0);
        assert_eq!(t.kinds, vec![TraitKind::Continuous, TraitKind::Binary]);
    }

    #[test]
    fn phylogeny_is_reordered() {
        let rows = "study_id,animal_id,plant_id\ns1,x,p\ns1,y,p\n";
        let r = ingest_records_from_readers(rows.as_bytes(), STUDIES.as_bytes()).unwrap();
        let phylo = ",y,x\ny,1,0.3\nx,0.3,1\n";
        let m = read_phylogeny(phylo.as_bytes(), &r.index, Side::Animal).unwrap();
        assert_eq!(m[(0, 1)], 0.3);
        assert_eq!(m[(0, 0)], 1.0);
        let bad = ",y,w\ny,1,0\nw,0,1\n";
        assert!(read_phylogeny(bad.as_bytes(), &r.index, Side::Animal).is_err());
    }

    #[test]
    fn load_dataset_drops_constant_traits_and_defaults_missing_tables() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        std::fs::write(d.join("interactions.csv"), "study_id,animal_id,plant_id\ns1,a1,p1\ns1,a2,p1\n").unwrap();
        std::fs::write(d.join("studies.csv"), "study_id,kind,site,country,zone\ns1,network,x,c,z\n").unwrap();
        std::fs::write(d.join("animal_traits.csv"), "species_id,mass,flat\na1,1.0,3\na2,2.0,3\n").unwrap();
        let paths = DataPaths::in_dir(d);
        assert!(paths.plant_traits.is_none());
        let data = load_dataset(&paths, &HashMap::new()).unwrap();
        assert_eq!(data.traits.animal.labels, vec!["mass".to_string()]);
        assert_eq!(data.traits.plant.n_traits(), 0);
        assert_eq!(data.phylo.animal, DMatrix::identity(2, 2));
        assert!(is_constant(&[2.0, 2.0]) && !is_constant(&[2.0, 2.5]));
    }
}
