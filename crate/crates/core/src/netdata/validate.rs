use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;

use super::{Dataset, OccurrencePriorTable, Side, TraitKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passes(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            location: location.into(),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passes() {
            return writeln!(f, "validation passed");
        }
        writeln!(f, "{} violation(s):", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  {}: {}", v.location, v.message)?;
        }
        Ok(())
    }
}

const PSD_TOL: f64 = 1e-8;
const STD_TOL: f64 = 1e-6;

/// Checks every structural invariant of the inputs; never fails, the report
/// carries the findings.
pub fn validate_inputs(data: &Dataset, prior: Option<&OccurrencePriorTable>) -> ValidationReport {
    let mut r = ValidationReport::default();
    let (nf, np, ns) = data.dims();

    for (name, labels) in [
        ("animal_ids", &data.index.animal_ids),
        ("plant_ids", &data.index.plant_ids),
        ("study_ids", &data.index.study_ids),
    ] {
        let mut seen = HashSet::new();
        for l in labels {
            if !seen.insert(l) {
                r.push(name, format!("duplicate label `{l}`"));
            }
        }
    }
    if data.index.dims() != (nf, np, ns) {
        r.push("index", format!("index dims {:?} differ from tensor dims {:?}", data.index.dims(), (nf, np, ns)));
    }
    if data.studies.len() != ns {
        r.push("studies", format!("{} metadata rows for {ns} studies", data.studies.len()));
    }
    for m in &data.studies {
        if m.country.is_empty() || m.zone.is_empty() {
            r.push(format!("study {}", m.study_id), "country and zone labels must be non-empty");
        }
        if matches!(m.site.as_deref(), Some("")) {
            r.push(format!("study {}", m.study_id), "site label present but empty");
        }
    }

    if data.focus.dims != (nf, np, ns) || data.focus.studies.len() != ns {
        r.push("focus", "focus tensor dims differ from observed tensor");
    } else {
        for &(i, j, s) in data.observed.entries() {
            if !data.focus.get(i, j, s) {
                r.push(format!("focus[{i},{j},{s}]"), "observed interaction outside study focus");
            }
        }
    }

    for side in Side::BOTH {
        let t = data.traits.side(side);
        let n = match side {
            Side::Animal => nf,
            Side::Plant => np,
        };
        let loc = format!("{} traits", side.name());
        if t.values.nrows() != n {
            r.push(&loc, format!("{} rows for {n} species", t.values.nrows()));
            continue;
        }
        for (c, kind) in t.kinds.iter().enumerate() {
            let col = t.values.column(c);
            let cloc = format!("{loc} `{}`", t.labels[c]);
            if col.iter().any(|v| !v.is_finite()) {
                r.push(&cloc, "missing or non-finite cell");
                continue;
            }
            match kind {
                TraitKind::Continuous => {
                    let m = col.mean();
                    let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
                    if m.abs() > STD_TOL || (v - 1.0).abs() > STD_TOL {
                        r.push(&cloc, format!("continuous column not standardized (mean {m:.3e}, var {v:.6})"));
                    }
                }
                TraitKind::Binary => {
                    if col.iter().any(|&x| x != 0.0 && x != 1.0) {
                        r.push(&cloc, "binary column outside {0,1}");
                    }
                }
            }
        }

        let c = data.phylo.side(side);
        let loc = format!("{} phylogeny", side.name());
        check_correlation(&mut r, &loc, c, n);

        if let Some(prior) = prior {
            let p = prior.side(side);
            let loc = format!("{} occurrence prior", side.name());
            if p.shape() != (n, ns) {
                r.push(&loc, format!("shape {:?}, expected {:?}", p.shape(), (n, ns)));
                continue;
            }
            let seen = data.observed.species_in_study(side);
            for x in 0..n {
                for s in 0..ns {
                    let v = p[(x, s)];
                    if !(0.0..=1.0).contains(&v) {
                        r.push(format!("{loc}[{x},{s}]"), format!("probability {v} outside [0, 1]"));
                    } else if seen[(x, s)] && v != 1.0 {
                        r.push(
                            format!("{loc}[{x},{s}]"),
                            format!("observed species must have prior 1 (got {})", p[(x, s)]),
                        );
                    }
                }
            }
        }
    }
    r
}

fn check_correlation(r: &mut ValidationReport, loc: &str, c: &DMatrix<f64>, n: usize) {
    if c.shape() != (n, n) {
        r.push(loc, format!("shape {:?}, expected {n}x{n}", c.shape()));
        return;
    }
    if c.iter().any(|v| !v.is_finite()) {
        r.push(loc, "non-finite entry");
        return;
    }
    for a in 0..n {
        if (c[(a, a)] - 1.0).abs() > 1e-12 {
            r.push(format!("{loc}[{a},{a}]"), format!("unit diagonal violated ({})", c[(a, a)]));
        }
        for b in (a + 1)..n {
            if (c[(a, b)] - c[(b, a)]).abs() > 1e-12 {
                r.push(format!("{loc}[{a},{b}]"), "matrix not symmetric");
            }
        }
    }
    if n > 0 {
        let sym = (c + c.transpose()) * 0.5;
        let min_eig = SymmetricEigen::new(sym).eigenvalues.min();
        if min_eig < -PSD_TOL {
            r.push(loc, format!("not positive semidefinite (smallest eigenvalue {min_eig:.3e})"));
        }
    }
}
