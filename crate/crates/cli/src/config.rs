use anyhow::{bail, Context, Result};
use biplink::gibbs::{ChainConfig, SamplerVariant};
use biplink::model::Hyperparams;
use biplink::netdata::{load_dataset, DataPaths, Dataset, TierMap, TraitKind};
use biplink::synth::SynthConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use crate::cli::CommonArgs;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub interactions: Option<PathBuf>,
    pub studies: Option<PathBuf>,
    pub animal_traits: Option<PathBuf>,
    pub plant_traits: Option<PathBuf>,
    pub animal_phylogeny: Option<PathBuf>,
    pub plant_phylogeny: Option<PathBuf>,
    /// Trait column label -> `continuous` | `binary`.
    pub trait_kinds: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: String,
    /// `naive`, `default75`, `expert`, `custom` (uses `tiers`) or `file:<path>`.
    pub prior: String,
    pub tiers: Option<TierMap>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: "coilplus".into(),
            prior: "expert".into(),
            tiers: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSection {
    pub n_iter: usize,
    pub n_burn: usize,
    pub thin: f64,
    pub n_chains: usize,
    pub seed: u64,
    /// Sweeps between checkpoints; 0 disables checkpointing.
    pub checkpoint_every: usize,
    /// Worker threads; defaults to the chain count.
    pub jobs: Option<usize>,
}

impl Default for ChainSection {
    fn default() -> Self {
        let c = ChainConfig::default();
        Self {
            n_iter: c.n_iter,
            n_burn: c.n_burn,
            thin: c.thin_keep_fraction,
            n_chains: c.n_chains,
            seed: c.seed,
            checkpoint_every: 1000,
            jobs: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub thresholds: Vec<f64>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            thresholds: biplink::posterior::DEFAULT_THRESHOLDS.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub replicates: usize,
    pub pairs: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            replicates: biplink::evalx::DEFAULT_REPLICATES,
            pairs: biplink::evalx::DEFAULT_HOLDOUT_PAIRS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraitsConfig {
    pub permutations: usize,
}

impl Default for TraitsConfig {
    fn default() -> Self {
        Self {
            permutations: biplink::evalx::DEFAULT_PERMUTATIONS,
        }
    }
}

/// Everything a run needs; read from TOML, then overridden by flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub chain: ChainSection,
    pub hyper: Hyperparams,
    pub output: OutputConfig,
    pub cv: CvConfig,
    pub traits: TraitsConfig,
    pub simulate: SynthConfig,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| biplink::Error::Config(e.to_string()).into())
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| biplink::Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).with_context(|| format!("reading {}", path.display()))?;
        let abs = std::path::absolute(path).map_err(|e| biplink::Error::io(path, e))?;
        let base = abs.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        if let Some(rest) = cfg.model.prior.strip_prefix("file:") {
            let p = Path::new(rest);
            if p.is_relative() {
                cfg.model.prior = format!("file:{}", base.join(p).display());
            }
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let d = &mut self.data;
        for p in [
            &mut d.interactions,
            &mut d.studies,
            &mut d.animal_traits,
            &mut d.plant_traits,
            &mut d.animal_phylogeny,
            &mut d.plant_phylogeny,
        ] {
            resolve(base, p);
        }
        resolve(base, &mut self.output.dir);
    }

    /// Flags override file values.
    pub fn apply(&mut self, a: &CommonArgs) {
        if let Some(dir) = &a.data {
            let p = DataPaths::in_dir(&std::path::absolute(dir).unwrap_or_else(|_| dir.clone()));
            let d = &mut self.data;
            d.interactions = Some(p.interactions);
            d.studies = Some(p.studies);
            d.animal_traits = p.animal_traits.or(d.animal_traits.take());
            d.plant_traits = p.plant_traits.or(d.plant_traits.take());
            d.animal_phylogeny = p.animal_phylogeny.or(d.animal_phylogeny.take());
            d.plant_phylogeny = p.plant_phylogeny.or(d.plant_phylogeny.take());
        }
        for (k, v) in &a.trait_kind {
            self.data.trait_kinds.insert(k.clone(), v.clone());
        }
        if let Some(v) = &a.variant {
            self.model.variant = v.clone();
        }
        if let Some(p) = &a.prior {
            self.model.prior = p.clone();
        }
        let c = &mut self.chain;
        if let Some(v) = a.iters {
            c.n_iter = v;
        }
        if let Some(v) = a.burnin {
            c.n_burn = v;
        }
        if let Some(v) = a.thin {
            c.thin = v;
        }
        if let Some(v) = a.chains {
            c.n_chains = v;
        }
        if let Some(v) = a.seed {
            c.seed = v;
            self.simulate.seed = v;
        }
        if let Some(v) = a.jobs {
            c.jobs = Some(v);
        }
        if let Some(v) = a.checkpoint_every {
            c.checkpoint_every = v;
        }
        if !a.threshold.is_empty() {
            self.output.thresholds = a.threshold.clone();
        }
        if let Some(v) = a.replicates {
            self.cv.replicates = v;
        }
        if let Some(v) = a.pairs {
            self.cv.pairs = v;
        }
        if let Some(v) = a.permutations {
            self.traits.permutations = v;
        }
    }

    pub fn variant(&self) -> Result<SamplerVariant> {
        Ok(self.model.variant.parse()?)
    }

    /// Variants to compare; `both` is accepted where a comparison makes sense.
    pub fn variants(&self) -> Result<Vec<SamplerVariant>> {
        if self.model.variant.trim().eq_ignore_ascii_case("both") {
            Ok(vec![SamplerVariant::Coil, SamplerVariant::CoilPlus])
        } else {
            Ok(vec![self.variant()?])
        }
    }

    pub fn chain_config(&self) -> Result<ChainConfig> {
        self.chain_config_for(self.variant()?)
    }

    pub fn chain_config_for(&self, variant: SamplerVariant) -> Result<ChainConfig> {
        let c = &self.chain;
        let cfg = ChainConfig {
            n_iter: c.n_iter,
            n_burn: c.n_burn,
            thin_keep_fraction: c.thin,
            n_chains: c.n_chains,
            seed: c.seed,
            variant,
            hyper: self.hyper.clone(),
            ..ChainConfig::default()
        };
        cfg.validate()?;
        for &t in &self.output.thresholds {
            if !(t > 0.0 && t < 1.0) {
                return Err(biplink::Error::Config(format!("threshold {t} must lie in (0,1)")).into());
            }
        }
        Ok(cfg)
    }

    pub fn jobs(&self) -> usize {
        self.chain.jobs.unwrap_or(self.chain.n_chains).max(1)
    }

    pub fn tier_map(&self) -> Result<TierMap> {
        let p = self.model.prior.trim();
        let tiers = match p {
            "naive" | "naive_0_100" | "0/100" => TierMap::naive(),
            "default75" | "default_75" | "75/100" => TierMap::default75(),
            "expert" => TierMap::expert(),
            "custom" => self
                .model
                .tiers
                .ok_or_else(|| biplink::Error::Config("prior `custom` needs a [model.tiers] table".into()))?,
            _ => match p.strip_prefix("file:") {
                Some(path) => read_tier_file(Path::new(path))?,
                None => bail!(biplink::Error::Config(format!(
                    "unknown prior `{p}` (expected naive, default75, expert, custom or file:<path>)"
                ))),
            },
        };
        tiers.validate()?;
        Ok(tiers)
    }

    pub fn trait_kinds(&self) -> Result<HashMap<String, TraitKind>> {
        self.data
            .trait_kinds
            .iter()
            .map(|(k, v)| {
                v.parse()
                    .map(|kind| (k.clone(), kind))
                    .map_err(|e: String| biplink::Error::Config(e).into())
            })
            .collect()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).context("serializing config")
    }

    /// The data paths must be set before any command that reads data.
    pub fn data_paths(&self) -> Result<DataPaths> {
        let d = &self.data;
        let need = |p: &Option<PathBuf>, what: &str| {
            p.clone()
                .ok_or_else(|| biplink::Error::Config(format!("no {what} file given (set [data] or --data)")))
        };
        Ok(DataPaths {
            interactions: need(&d.interactions, "interactions")?,
            studies: need(&d.studies, "studies")?,
            animal_traits: d.animal_traits.clone(),
            plant_traits: d.plant_traits.clone(),
            animal_phylogeny: d.animal_phylogeny.clone(),
            plant_phylogeny: d.plant_phylogeny.clone(),
        })
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        Ok(load_dataset(&self.data_paths()?, &self.trait_kinds()?)?)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TierFile {
    #[serde(default = "one")]
    same_study: f64,
    same_site: f64,
    same_country_only: f64,
    same_zone_only: f64,
    different_zone: f64,
}

fn one() -> f64 {
    1.0
}

fn read_tier_file(path: &Path) -> Result<TierMap> {
    let text = std::fs::read_to_string(path).map_err(|e| biplink::Error::io(path, e))?;
    let t: TierFile = toml::from_str(&text).map_err(|e| biplink::Error::Config(format!("{}: {e}", path.display())))?;
    Ok(TierMap {
        same_study: t.same_study,
        same_site: t.same_site,
        same_country_only: t.same_country_only,
        same_zone_only: t.same_zone_only,
        different_zone: t.different_zone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn nested_tables_and_unknown_keys() {
        let c = RunConfig::from_toml_str("[chain]\nn_iter = 10\nn_burn = 4\n[hyper]\nlatent_dim = 3\n").unwrap();
        assert_eq!((c.chain.n_iter, c.chain.n_burn, c.hyper.latent_dim), (10, 4, 3));
        assert!(RunConfig::from_toml_str("[chain]\nbogus = 1\n").is_err());
    }

    #[test]
    fn prior_scenarios() {
        let mut c = RunConfig::default();
        for (name, want) in [("naive", TierMap::naive()), ("default75", TierMap::default75()), ("expert", TierMap::expert())] {
            c.model.prior = name.into();
            assert_eq!(c.tier_map().unwrap(), want);
        }
        c.model.prior = "custom".into();
        assert!(c.tier_map().is_err());
        c.model.prior = "nonsense".into();
        assert!(c.tier_map().is_err());
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("tiers.toml");
        std::fs::write(&f, "same_site = 0.9\nsame_country_only = 0.6\nsame_zone_only = 0.3\ndifferent_zone = 0.1\n").unwrap();
        c.model.prior = format!("file:{}", f.display());
        assert_eq!(c.tier_map().unwrap().same_site, 0.9);
        std::fs::write(&f, "same_site = 0.1\nsame_country_only = 0.6\nsame_zone_only = 0.3\ndifferent_zone = 0.1\n").unwrap();
        assert!(c.tier_map().is_err());
    }

    #[test]
    fn hash_changes_with_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.chain.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }
}
