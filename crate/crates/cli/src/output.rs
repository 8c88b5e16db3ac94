use anyhow::{Context, Result};
use biplink::gibbs::ChainOutput;
use biplink::netdata::{closest_tiers, write_labelled_matrix, Dataset, Side, Tier};
use biplink::posterior::{loglik_rhat, occurrence_tier_summary, PosteriorSummary};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.toml";
pub const SAMPLES: &str = "samples.bin";

/// Output root: flag, then config, then `$BIPLINK_OUT/<command>`, then
/// `./biplink_out/<command>`.
pub fn output_dir(flag: Option<&Path>, cfg: &RunConfig, command: &str) -> PathBuf {
    if let Some(p) = flag.or(cfg.output.dir.as_deref()) {
        return p.to_path_buf();
    }
    match std::env::var_os("BIPLINK_OUT").filter(|v| !v.is_empty()) {
        Some(root) => PathBuf::from(root).join(command),
        None => PathBuf::from("biplink_out").join(command),
    }
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| biplink::Error::io(dir, e))?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| biplink::Error::io(path, e))?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| biplink::Error::io(path, e))?;
    Ok(())
}

pub fn write_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    let path = dir.join(CONFIG);
    fs::write(&path, cfg.to_toml()?).map_err(|e| biplink::Error::io(&path, e))?;
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes the provenance record last, with a digest of every other
/// top-level file so a rerun can be compared byte for byte.
pub fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, seed: u64) -> Result<()> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| biplink::Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != MANIFEST)
        .collect();
    names.sort();
    let mut files = serde_json::Map::new();
    for n in names {
        let bytes = fs::read(dir.join(&n)).map_err(|e| biplink::Error::io(dir.join(&n), e))?;
        files.insert(n, json!(sha256_hex(&bytes)));
    }
    write_json(
        &dir.join(MANIFEST),
        &json!({
            "software": "biplink",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "seed": seed,
            "config_hash": cfg.hash(),
            "files": files,
        }),
    )
}

/// Everything derived from pooled samples of a fit.
pub fn write_fit_reports(dir: &Path, cfg: &RunConfig, data: &Dataset, outputs: &[ChainOutput], summary: &PosteriorSummary) -> Result<()> {
    let ix = &data.index;
    let m = &summary.mean_prob;
    write_labelled_matrix(create(&dir.join("mean_prob.csv"))?, "animal_id", &ix.animal_ids, &ix.plant_ids, |r, c| {
        format!("{}", m[(r, c)])
    })?;

    let seen = data.observed.pair_observed();
    let cutoff = summary.thresholds.iter().copied().fold(f64::INFINITY, f64::min);
    let mut fresh: Vec<(usize, usize)> = (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
        .filter(|&(i, j)| !seen[(i, j)] && m[(i, j)] > cutoff)
        .collect();
    fresh.sort_by(|a, b| m[*b].total_cmp(&m[*a]).then(a.cmp(b)));
    let mut w = csv::Writer::from_writer(create(&dir.join("new_links.csv"))?);
    w.write_record(["animal_id", "plant_id", "mean_prob"])?;
    for (i, j) in fresh {
        w.write_record([ix.animal_ids[i].as_str(), ix.plant_ids[j].as_str(), &format!("{}", m[(i, j)])])?;
    }
    w.flush().context("writing new_links.csv")?;

    let tiers = occurrence_tier_summary(
        outputs,
        &closest_tiers(&data.observed, &data.studies, Side::Animal)?,
        &closest_tiers(&data.observed, &data.studies, Side::Plant)?,
    )?;
    let mut w = csv::Writer::from_writer(create(&dir.join("occurrence_tiers.csv"))?);
    w.write_record(["side", "tier", "cells", "mean_occurrence"])?;
    for side in Side::BOTH {
        let (means, cells) = match side {
            Side::Animal => (&tiers.animal, &tiers.animal_cells),
            Side::Plant => (&tiers.plant, &tiers.plant_cells),
        };
        for (k, tier) in Tier::ALL.iter().enumerate() {
            let v = means[k].map_or(String::new(), |v| format!("{v}"));
            w.write_record([side.name(), tier.name(), &cells[k].to_string(), &v])?;
        }
    }
    w.flush().context("writing occurrence_tiers.csv")?;

    let mut w = csv::Writer::from_writer(create(&dir.join("traces.csv"))?);
    w.write_record(["chain", "iteration", "loglik", "rho_animal", "rho_plant", "lambda0"])?;
    let cell = |t: &[f64], k: usize| t.get(k).map_or(String::new(), |v| format!("{v}"));
    for o in outputs {
        for k in 0..o.loglik_trace.len() {
            w.write_record([
                o.chain_id.to_string(),
                k.to_string(),
                cell(&o.loglik_trace, k),
                cell(&o.rho_u_trace, k),
                cell(&o.rho_v_trace, k),
                cell(&o.lambda0_trace, k),
            ])?;
        }
    }
    w.flush().context("writing traces.csv")?;

    write_json(
        &dir.join("summary.json"),
        &json!({
            "variant": outputs.first().map(|o| o.variant.to_string()),
            "n_animals": m.nrows(),
            "n_plants": m.ncols(),
            "n_samples": summary.n_samples,
            "thresholds": summary.thresholds,
            "new_link_counts": summary.new_link_counts,
            "prevalence": summary.prevalence,
            "observed_prevalence": summary.observed_prevalence,
        }),
    )?;
    write_json(&dir.join("diagnostics.json"), &diagnostics(cfg, outputs))
}

fn finite(x: f64) -> serde_json::Value {
    if x.is_finite() {
        json!(x)
    } else {
        serde_json::Value::Null
    }
}

fn diagnostics(cfg: &RunConfig, outputs: &[ChainOutput]) -> serde_json::Value {
    let rhat = match loglik_rhat(outputs, cfg.chain.n_burn) {
        Ok((classic, split)) => json!({ "classic": finite(classic), "split": finite(split) }),
        Err(e) => json!({ "unavailable": e.to_string() }),
    };
    let chains: Vec<_> = outputs
        .iter()
        .map(|o| {
            let t = o.occurrence.total();
            json!({
                "chain": o.chain_id,
                "retained": o.n_samples(),
                "occurrence_acceptance": finite(t.rate()),
                "switch_acceptance": finite(t.switch_rate()),
                "occurrence_flips": o.occurrence.flips,
            })
        })
        .collect();
    json!({ "loglik_rhat": rhat, "chains": chains })
}
