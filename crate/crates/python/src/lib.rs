//! Python bindings: simulate, validate and fit from data directories.

use std::collections::HashMap;
use std::path::Path;

use ::biplink::gibbs::{run_chain, ChainConfig, FitProblem};
use ::biplink::netdata::{build_occurrence_prior, load_dataset, validate_inputs, DataPaths, Dataset, TierMap};
use ::biplink::posterior::{loglik_rhat, summarize};
use ::biplink::synth::{generate, SynthConfig};
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: ::biplink::Error) -> PyErr {
    match e {
        ::biplink::Error::Numeric { .. } => PyArithmeticError::new_err(e.to_string()),
        ::biplink::Error::Io { ref source, .. } => PyOSError::new_err(format!("{e}: {source}")),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn tier_map(name: &str) -> PyResult<TierMap> {
    match name {
        "naive" => Ok(TierMap::naive()),
        "default75" => Ok(TierMap::default75()),
        "expert" => Ok(TierMap::expert()),
        other => Err(PyValueError::new_err(format!(
            "unknown prior `{other}` (expected naive, default75 or expert)"
        ))),
    }
}

fn load(data_dir: &str) -> PyResult<Dataset> {
    load_dataset(&DataPaths::in_dir(Path::new(data_dir)), &HashMap::new()).map_err(to_py)
}

/// Package version.
#[pyfunction]
fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// Writes a synthetic dataset with truth files to `out_dir`; returns its size.
#[pyfunction]
#[pyo3(signature = (out_dir, seed=1, n_animals=None, n_plants=None, n_studies=None))]
fn simulate<'py>(
    py: Python<'py>,
    out_dir: &str,
    seed: u64,
    n_animals: Option<usize>,
    n_plants: Option<usize>,
    n_studies: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let defaults = SynthConfig::default();
    let cfg = SynthConfig {
        seed,
        n_animals: n_animals.unwrap_or(defaults.n_animals),
        n_plants: n_plants.unwrap_or(defaults.n_plants),
        n_studies: n_studies.unwrap_or(defaults.n_studies),
        ..defaults
    };
    cfg.validate().map_err(to_py)?;
    let data = generate(&cfg)
        .and_then(|s| s.write_dir(Path::new(out_dir)))
        .map_err(to_py)?;
    let (na, np, ns) = data.dims();
    let d = PyDict::new(py);
    d.set_item("n_animals", na)?;
    d.set_item("n_plants", np)?;
    d.set_item("n_studies", ns)?;
    d.set_item("n_records", data.observed.len())?;
    Ok(d)
}

/// Consistency problems found in a data directory; empty when it is usable.
#[pyfunction]
#[pyo3(signature = (data_dir, prior="expert"))]
fn validate(data_dir: &str, prior: &str) -> PyResult<Vec<String>> {
    let data = load(data_dir)?;
    let table = build_occurrence_prior(&data.observed, &data.studies, &tier_map(prior)?).map_err(to_py)?;
    Ok(validate_inputs(&data, Some(&table))
        .violations
        .iter()
        .map(|v| format!("{}: {}", v.location, v.message))
        .collect())
}

/// Fits the model and returns species labels, the posterior mean link
/// probabilities (animals × plants) and convergence diagnostics.
#[pyfunction]
#[pyo3(signature = (data_dir, variant="coilplus", prior="expert", iters=2000, burnin=1000, thin=0.5, chains=2, seed=1, latent_dim=None))]
#[allow(clippy::too_many_arguments)]
fn fit<'py>(
    py: Python<'py>,
    data_dir: &str,
    variant: &str,
    prior: &str,
    iters: usize,
    burnin: usize,
    thin: f64,
    chains: usize,
    seed: u64,
    latent_dim: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut config = ChainConfig {
        n_iter: iters,
        n_burn: burnin,
        thin_keep_fraction: thin,
        n_chains: chains,
        seed,
        variant: variant.parse().map_err(to_py)?,
        ..ChainConfig::default()
    };
    if let Some(h) = latent_dim {
        config.hyper.latent_dim = h;
    }
    config.validate().map_err(to_py)?;
    let data = load(data_dir)?;
    let table = build_occurrence_prior(&data.observed, &data.studies, &tier_map(prior)?).map_err(to_py)?;
    let problem = FitProblem::new(data, table).map_err(to_py)?;
    let outputs = (0..chains)
        .map(|k| run_chain(&problem, &config, k))
        .collect::<::biplink::Result<Vec<_>>>()
        .map_err(to_py)?;
    let summary = summarize(&outputs, &problem.data.observed, &[]).map_err(to_py)?;
    let m = &summary.mean_prob;
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    let d = PyDict::new(py);
    d.set_item("animal_ids", problem.data.index.animal_ids.clone())?;
    d.set_item("plant_ids", problem.data.index.plant_ids.clone())?;
    d.set_item("mean_prob", rows)?;
    d.set_item("n_samples", summary.n_samples)?;
    match loglik_rhat(&outputs, burnin) {
        Ok((classic, split)) => {
            d.set_item("rhat", classic)?;
            d.set_item("rhat_split", split)?;
        }
        Err(_) => {
            d.set_item("rhat", py.None())?;
            d.set_item("rhat_split", py.None())?;
        }
    }
    Ok(d)
}

#[pymodule]
fn biplink(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(version, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_names_resolve() {
        assert_eq!(tier_map("naive").unwrap(), TierMap::naive());
        assert_eq!(tier_map("expert").unwrap(), TierMap::expert());
    }

    #[test]
    fn numeric_errors_are_arithmetic_errors() {
        Python::initialize();
        Python::attach(|py| {
            let e = to_py(::biplink::Error::Numeric {
                iteration: 0,
                block: "links",
                message: "nan".into(),
            });
            assert!(e.is_instance_of::<PyArithmeticError>(py));
            assert!(to_py(::biplink::Error::Config("x".into())).is_instance_of::<PyValueError>(py));
        });
    }
}
