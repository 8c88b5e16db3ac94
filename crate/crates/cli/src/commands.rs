use anyhow::{Context, Result};
use biplink::evalx::{
    logit_samples, make_holdout, pseudo_precision, pseudo_precision_bounds, recall_at, signed_trait_correlations,
    variable_importance,
};
use biplink::gibbs::{ChainOutput, FitProblem, SamplerVariant};
use biplink::netdata::{build_occurrence_prior, is_constant, read_trait_columns, validate_inputs, write_labelled_matrix, Dataset, Side, TraitKind};
use biplink::pgrand::RngStream;
use biplink::posterior::{load_outputs, save_outputs, summarize};
use biplink::synth::generate;
use serde_json::json;
use std::fs::File;
use std::path::{Path, PathBuf};

use crate::cli::{Command, CommonArgs};
use crate::config::RunConfig;
use crate::output::{self, create_dir, output_dir, write_config, write_json, write_manifest, CONFIG, SAMPLES};
use crate::run::{checkpoint_dir, run_chains, Checkpointing};

/// Outcome of a command that completed but found problems in its input.
pub enum Outcome {
    Ok,
    Invalid,
}

pub fn dispatch(cmd: &Command) -> Result<Outcome> {
    match cmd {
        Command::Fit(a) => fit(a).map(|_| Outcome::Ok),
        Command::Cv(a) => cv(a).map(|_| Outcome::Ok),
        Command::Traits { common, fit } => traits(common, fit.as_deref()).map(|_| Outcome::Ok),
        Command::Summarize { common, fit } => summarize_cmd(common, fit).map(|_| Outcome::Ok),
        Command::Simulate(a) => simulate(a).map(|_| Outcome::Ok),
        Command::Validate(a) => validate(a),
    }
}

fn load_config(args: &CommonArgs, base: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match base.or(args.config.as_deref()) {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(args);
    Ok(cfg)
}

/// The saved configuration of an earlier fit, overridden by flags.
fn fit_config(args: &CommonArgs, fit_dir: &Path) -> Result<RunConfig> {
    if args.config.is_some() {
        return Err(biplink::Error::Config("--config and --fit are exclusive: a fit carries its own configuration".into()).into());
    }
    load_config(args, Some(&fit_dir.join(CONFIG)))
}

fn prepare_out(args: &CommonArgs, cfg: &mut RunConfig, command: &str) -> Result<PathBuf> {
    let dir = output_dir(args.out.as_deref(), cfg, command);
    create_dir(&dir)?;
    cfg.output.dir = None;
    Ok(dir)
}

fn fit_with(cfg: &RunConfig, data: &Dataset, variant: SamplerVariant, ckpt: Option<&Checkpointing>) -> Result<Option<Vec<ChainOutput>>> {
    let chain_cfg = cfg.chain_config_for(variant)?;
    let prior = build_occurrence_prior(&data.observed, &data.studies, &cfg.tier_map()?)?;
    let report = validate_inputs(data, Some(&prior));
    if !report.passes() {
        return Err(biplink::Error::Config(format!("input validation failed:\n{report}")).into());
    }
    let problem = FitProblem::new(data.clone(), prior)?;
    run_chains(&problem, &chain_cfg, cfg.jobs(), ckpt)
}

fn fit(args: &CommonArgs) -> Result<()> {
    let mut cfg = load_config(args, None)?;
    cfg.chain_config()?;
    let out = prepare_out(args, &mut cfg, "fit")?;
    let data = cfg.load_dataset()?;
    let ckpt = Checkpointing {
        dir: checkpoint_dir(&out),
        every: cfg.chain.checkpoint_every,
        resume: args.resume,
        stop_after: args.stop_after,
    };
    let Some(outputs) = fit_with(&cfg, &data, cfg.variant()?, Some(&ckpt))? else {
        println!("stopped early; continue with --resume (checkpoints in {})", ckpt.dir.display());
        return Ok(());
    };
    save_outputs(&out.join(SAMPLES), &outputs)?;
    let summary = summarize(&outputs, &data.observed, &cfg.output.thresholds)?;
    output::write_fit_reports(&out, &cfg, &data, &outputs, &summary)?;
    write_config(&out, &cfg)?;
    write_manifest(&out, "fit", &cfg, cfg.chain.seed)?;
    println!("fit written to {}", out.display());
    Ok(())
}

fn summarize_cmd(args: &CommonArgs, fit_dir: &Path) -> Result<()> {
    let mut cfg = fit_config(args, fit_dir)?;
    let out = match &args.out {
        Some(p) => p.clone(),
        None => fit_dir.to_path_buf(),
    };
    create_dir(&out)?;
    cfg.output.dir = None;
    let data = cfg.load_dataset()?;
    let outputs = load_outputs(&fit_dir.join(SAMPLES))?;
    let summary = summarize(&outputs, &data.observed, &cfg.output.thresholds)?;
    if out != fit_dir {
        save_outputs(&out.join(SAMPLES), &outputs)?;
    }
    output::write_fit_reports(&out, &cfg, &data, &outputs, &summary)?;
    write_config(&out, &cfg)?;
    write_manifest(&out, "summarize", &cfg, cfg.chain.seed)?;
    println!("summary written to {}", out.display());
    Ok(())
}

// Chain seed for one cross-validation replicate.
fn replicate_seed(seed: u64, replicate: usize) -> u64 {
    seed ^ (replicate as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn cv(args: &CommonArgs) -> Result<()> {
    let mut cfg = load_config(args, None)?;
    let variants = cfg.variants()?;
    for &v in &variants {
        cfg.chain_config_for(v)?;
    }
    if cfg.cv.replicates == 0 {
        return Err(biplink::Error::Config("at least one replicate is required".into()).into());
    }
    let out = prepare_out(args, &mut cfg, "cv")?;
    let data = cfg.load_dataset()?;
    let seed = cfg.chain.seed;

    let mut w = csv::Writer::from_path(out.join("cv_report.csv"))?;
    w.write_record(["replicate", "variant", "pseudo_precision", "recall_50", "recall_75"])?;
    let mut rows = Vec::new();
    for r in 0..cfg.cv.replicates {
        let (held, spec) = make_holdout(&data, cfg.cv.pairs, r, seed)?;
        let mut rep_cfg = cfg.clone();
        rep_cfg.chain.seed = replicate_seed(seed, r);
        for &variant in &variants {
            let outputs = fit_with(&rep_cfg, &held, variant, None)?.expect("runs to completion without a stop");
            let summary = summarize(&outputs, &held.observed, &[])?;
            let m = &summary.mean_prob;
            let pp = pseudo_precision(m, &spec)?;
            let r50 = recall_at(m, &spec, 0.5)?;
            let r75 = recall_at(m, &spec, 0.75)?;
            let prevalence = m.mean();
            log::info!("replicate {r} {variant}: pseudo-precision {pp:.3}, recall@0.5 {r50:.3}");
            w.write_record([r.to_string(), variant.to_string(), format!("{pp}"), format!("{r50}"), format!("{r75}")])?;
            rows.push((variant, pp, r50, r75, prevalence));
        }
    }
    w.flush().context("writing cv_report.csv")?;

    let per_variant: Vec<_> = variants
        .iter()
        .map(|&v| {
            let sel: Vec<_> = rows.iter().filter(|x| x.0 == v).collect();
            let stat = |f: &dyn Fn(&(SamplerVariant, f64, f64, f64, f64)) -> f64| {
                let xs: Vec<f64> = sel.iter().map(|x| f(x)).collect();
                let n = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let sd = if xs.len() > 1 {
                    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                } else {
                    0.0
                };
                json!({ "mean": mean, "sd": sd })
            };
            let prev = sel.iter().map(|x| x.4).sum::<f64>() / sel.len() as f64;
            let (lo, hi) = pseudo_precision_bounds(prev);
            json!({
                "variant": v.to_string(),
                "pseudo_precision": stat(&|x| x.1),
                "recall_50": stat(&|x| x.2),
                "recall_75": stat(&|x| x.3),
                "mean_prevalence": prev,
                "pseudo_precision_bounds": [lo, hi],
            })
        })
        .collect();
    write_json(
        &out.join("cv_summary.json"),
        &json!({ "replicates": cfg.cv.replicates, "heldout_pairs": cfg.cv.pairs, "variants": per_variant }),
    )?;
    write_config(&out, &cfg)?;
    write_manifest(&out, "cv", &cfg, seed)?;
    println!("cross-validation written to {}", out.display());
    Ok(())
}

fn traits(args: &CommonArgs, fit_dir: Option<&Path>) -> Result<()> {
    let mut cfg = match fit_dir {
        Some(d) => fit_config(args, d)?,
        None => load_config(args, None)?,
    };
    if cfg.traits.permutations < 2 {
        return Err(biplink::Error::Config("at least two permutations are needed".into()).into());
    }
    let out = prepare_out(args, &mut cfg, "traits")?;
    let data = cfg.load_dataset()?;
    let outputs = match fit_dir {
        Some(d) => load_outputs(&d.join(SAMPLES))?,
        None => {
            let o = fit_with(&cfg, &data, cfg.variant()?, None)?.expect("runs to completion without a stop");
            save_outputs(&out.join(SAMPLES), &o)?;
            o
        }
    };

    let mut imp = csv::Writer::from_path(out.join("varimp.csv"))?;
    imp.write_record(["side", "trait", "score", "statistic", "null_mean", "null_sd", "skipped_partners", "error"])?;
    for (s, side) in Side::BOTH.into_iter().enumerate() {
        let path = match side {
            Side::Animal => &cfg.data.animal_traits,
            Side::Plant => &cfg.data.plant_traits,
        };
        let Some(path) = path else { continue };
        let f = File::open(path).map_err(|e| biplink::Error::io(path, e))?;
        let (labels, values) = read_trait_columns(f, &data.index, side)?;
        let samples = logit_samples(&outputs, side);
        let mut signed_rows = Vec::new();
        for (c, label) in labels.iter().enumerate() {
            let col: Vec<f64> = values.column(c).iter().copied().collect();
            let result = if is_constant(&col) {
                Err(format!("trait `{label}` is constant"))
            } else {
                let mut rng = RngStream::new(cfg.chain.seed, (s * 1_000_000 + c) as u64).derive(0x7661_7269);
                variable_importance(&col, &samples, cfg.traits.permutations, &mut rng).map_err(|e| e.to_string())
            };
            match result {
                Ok(v) => {
                    imp.write_record([
                        side.name(),
                        label,
                        &format!("{}", v.score),
                        &format!("{}", v.statistic),
                        &format!("{}", v.null_mean),
                        &format!("{}", v.null_sd),
                        &v.skipped.to_string(),
                        "",
                    ])?;
                    signed_rows.push((label.clone(), signed_trait_correlations(&col, &samples)?));
                }
                Err(msg) => {
                    log::warn!("{} trait `{label}`: {msg}", side.name());
                    imp.write_record([side.name(), label, "", "", "", "", "", &msg])?;
                }
            }
        }
        let partners = data.index.labels(side.other());
        let row_labels: Vec<String> = signed_rows.iter().map(|r| r.0.clone()).collect();
        let file = out.join(format!("signed_{}.csv", side.name()));
        let w = File::create(&file).map_err(|e| biplink::Error::io(&file, e))?;
        write_labelled_matrix(std::io::BufWriter::new(w), "trait", &row_labels, partners, |r, c| {
            let v = signed_rows[r].1[c];
            if v.is_finite() {
                format!("{v}")
            } else {
                String::new()
            }
        })?;
    }
    imp.flush().context("writing varimp.csv")?;
    write_config(&out, &cfg)?;
    write_manifest(&out, "traits", &cfg, cfg.chain.seed)?;
    println!("trait analysis written to {}", out.display());
    Ok(())
}

fn simulate(args: &CommonArgs) -> Result<()> {
    let mut cfg = load_config(args, None)?;
    cfg.simulate.validate()?;
    let out = prepare_out(args, &mut cfg, "simulate")?;
    let synth = generate(&cfg.simulate)?;
    let data = synth.write_dir(&out)?;

    // A ready-to-use run configuration pointing at the files next to it.
    let mut run = RunConfig {
        chain: cfg.chain.clone(),
        model: cfg.model.clone(),
        hyper: cfg.hyper.clone(),
        ..RunConfig::default()
    };
    let here = |n: &str| Some(PathBuf::from(n));
    run.data.interactions = here("interactions.csv");
    run.data.studies = here("studies.csv");
    run.data.animal_traits = here("animal_traits.csv");
    run.data.plant_traits = here("plant_traits.csv");
    run.data.animal_phylogeny = here("animal_phylogeny.csv");
    run.data.plant_phylogeny = here("plant_phylogeny.csv");
    for t in cfg.simulate.animal_traits.iter().chain(&cfg.simulate.plant_traits) {
        let kind = match t.kind {
            TraitKind::Continuous => "continuous",
            TraitKind::Binary => "binary",
        };
        run.data.trait_kinds.insert(t.label.clone(), kind.into());
    }
    let path = out.join("run.toml");
    std::fs::write(&path, run.to_toml()?).map_err(|e| biplink::Error::io(&path, e))?;
    write_config(&out, &cfg)?;
    write_manifest(&out, "simulate", &cfg, cfg.simulate.seed)?;
    let (na, np, ns) = data.dims();
    println!(
        "simulated {na} animals, {np} plants, {ns} studies, {} records into {}",
        data.observed.len(),
        out.display()
    );
    Ok(())
}

fn validate(args: &CommonArgs) -> Result<Outcome> {
    let cfg = load_config(args, None)?;
    let data = cfg.load_dataset()?;
    let prior = build_occurrence_prior(&data.observed, &data.studies, &cfg.tier_map()?)?;
    let report = validate_inputs(&data, Some(&prior));
    let (na, np, ns) = data.dims();
    println!("{na} animals, {np} plants, {ns} studies, {} records", data.observed.len());
    print!("{report}");
    if report.passes() {
        Ok(Outcome::Ok)
    } else {
        Ok(Outcome::Invalid)
    }
}
