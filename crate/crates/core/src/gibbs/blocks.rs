//! Full-conditional updates for the continuous parameters, the true links and
//! the detection augmentation.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::{FitProblem, Workspace};
use crate::error::{Error, Result};
use crate::model::{lambda_from_deltas, DetectionDraw, Hyperparams, LatentState};
use crate::netdata::{FocalSet, Side, TraitKind};
use crate::pgrand::{clamp_prob, logistic, sample_pg, sample_pg_count, RngStream};

const JITTER: f64 = 1e-8;

/// Draws x ~ N(Q⁻¹ b, Q⁻¹) from the canonical (precision, linear term) form.
pub fn sample_canonical<R: Rng + ?Sized>(q: &DMatrix<f64>, b: &DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
    let chol = match Cholesky::new(q.clone()) {
        Some(c) => c,
        None => {
            let n = q.nrows();
            Cholesky::new(q + DMatrix::identity(n, n) * JITTER)
                .ok_or_else(|| Error::Argument("conditional precision is not positive definite".into()))?
        }
    };
    let mean = chol.solve(b);
    let z = DVector::from_fn(b.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let dev = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Argument("singular Cholesky factor".into()))?;
    Ok(mean + dev)
}

/// Interaction Polya-Gamma auxiliaries ω_ij ~ PG(1, ψ_ij) for every pair.
pub(crate) fn draw_interaction_pg(ws: &mut Workspace, rng: &mut RngStream) -> Result<()> {
    for (w, &psi) in ws.omega.iter_mut().zip(ws.psi.iter()) {
        *w = sample_pg(psi, rng)?;
    }
    Ok(())
}

/// Links given everything else, with D integrated out.
///
/// The conditional Bernoulli parameter is logistic(ψ + m·log(1 − pq)), which
/// is also what gets recorded as the Rao-Blackwellized link probability.
pub(crate) fn update_links(problem: &FitProblem, state: &mut LatentState, ws: &mut Workspace, rng: &mut RngStream) {
    ws.exposure = crate::model::exposure_counts(&problem.data.focus, &state.occ_animal, &state.occ_plant);
    let (nf, np) = state.links.shape();
    for j in 0..np {
        for i in 0..nf {
            if problem.pair_observed[(i, j)] {
                state.links[(i, j)] = true;
                ws.link_prob[(i, j)] = 1.0;
                continue;
            }
            let m = ws.exposure[(i, j)];
            let eta = if m > 0.0 {
                ws.psi[(i, j)] + m * (1.0 - clamp_prob(state.p[i] * state.q[j])).ln()
            } else {
                ws.psi[(i, j)]
            };
            let r = logistic(eta);
            ws.link_prob[(i, j)] = r;
            state.links[(i, j)] = rng.random::<f64>() < r;
        }
    }
}

/// One draw of (D_F, D_P) for an exposed triple with nothing recorded:
/// states (0,0), (1,0), (0,1) with weights (1−p)(1−q), p(1−q), (1−p)q.
pub fn draw_undetected<R: Rng + ?Sized>(p: f64, q: f64, rng: &mut R) -> (bool, bool) {
    let w00 = (1.0 - p) * (1.0 - q);
    let w10 = p * (1.0 - q);
    let w01 = (1.0 - p) * q;
    let u = rng.random::<f64>() * (w00 + w10 + w01);
    if u < w00 {
        (false, false)
    } else if u < w00 + w10 {
        (true, false)
    } else {
        (false, true)
    }
}

/// Trials and successes of the detection regressions.
#[derive(Clone, Debug, Default)]
pub(crate) struct DetectionCounts {
    pub animal_trials: Vec<usize>,
    pub animal_hits: Vec<usize>,
    pub plant_trials: Vec<usize>,
    pub plant_hits: Vec<usize>,
}

impl DetectionCounts {
    pub fn side(&self, side: Side) -> (&[usize], &[usize]) {
        match side {
            Side::Animal => (&self.animal_trials, &self.animal_hits),
            Side::Plant => (&self.plant_trials, &self.plant_hits),
        }
    }
}

/// Redraws the detection indicators of every exposed triple (F·O·L = 1).
pub(crate) fn refresh_detections(problem: &FitProblem, state: &mut LatentState, rng: &mut RngStream) -> DetectionCounts {
    let (nf, np, _) = problem.data.dims();
    let mut counts = DetectionCounts {
        animal_trials: vec![0; nf],
        animal_hits: vec![0; nf],
        plant_trials: vec![0; np],
        plant_hits: vec![0; np],
    };
    let mut draws = Vec::with_capacity(state.detections.len());
    let observed = &problem.data.observed;
    let mut visit = |i: usize, j: usize, s: usize, state: &LatentState, rng: &mut RngStream| {
        let (df, dp) = if observed.contains(i, j, s) {
            (true, true)
        } else {
            draw_undetected(state.p[i], state.q[j], rng)
        };
        counts.animal_trials[i] += 1;
        counts.plant_trials[j] += 1;
        counts.animal_hits[i] += df as usize;
        counts.plant_hits[j] += dp as usize;
        draws.push(DetectionDraw {
            animal: i,
            plant: j,
            study: s,
            animal_detected: df,
            plant_detected: dp,
        });
    };
    for (s, st) in problem.data.focus.studies.iter().enumerate() {
        match &st.focal {
            FocalSet::Product { animals, plants } => {
                let js: Vec<usize> = (0..np).filter(|&j| plants[j] && state.occ_plant[(j, s)]).collect();
                for i in (0..nf).filter(|&i| animals[i] && state.occ_animal[(i, s)]) {
                    for &j in &js {
                        if state.links[(i, j)] && !problem.excluded[(i, j)] {
                            visit(i, j, s, state, rng);
                        }
                    }
                }
            }
            FocalSet::Pairs(_) => {}
        }
    }
    for (s, pairs) in &problem.pair_studies {
        for &(i, j) in pairs {
            if state.links[(i, j)] && state.occ_animal[(i, *s)] && state.occ_plant[(j, *s)] {
                visit(i, j, *s, state, rng);
            }
        }
    }
    state.detections = draws;
    counts
}

fn oriented(m: &DMatrix<f64>, side: Side) -> DMatrix<f64> {
    match side {
        Side::Animal => m.clone(),
        Side::Plant => m.transpose(),
    }
}

/// Column-by-column Gaussian update of one side's latent factors.
pub(crate) fn update_factors(
    problem: &FitProblem,
    side: Side,
    state: &mut LatentState,
    ws: &mut Workspace,
    counts: &DetectionCounts,
    rng: &mut RngStream,
) -> Result<()> {
    update_factors_with(problem, side, state, ws, counts, rng, sample_canonical)
}

/// As [`update_factors`], with the Gaussian draw from (precision, linear
/// term) supplied by the caller.
pub(crate) fn update_factors_with<F>(
    problem: &FitProblem,
    side: Side,
    state: &mut LatentState,
    ws: &mut Workspace,
    counts: &DetectionCounts,
    rng: &mut RngStream,
    mut draw: F,
) -> Result<()>
where
    F: FnMut(&DMatrix<f64>, &DVector<f64>, &mut RngStream) -> Result<DVector<f64>>,
{
    let h_dim = state.latent_dim();
    let mut own = state.factors(side).clone();
    let other = state.factors(side.other()).clone();
    let omega = oriented(&ws.omega, side);
    let links = state.links.map(|l| if l { 0.5 } else { -0.5 });
    let kappa = oriented(&links, side);
    let mut psi = oriented(&ws.psi, side);
    let n = own.nrows();

    let traits = problem.data.traits.side(side);
    let coef = state.trait_coefficients(side).clone();
    let n_traits = traits.n_traits();
    let mut trait_eta = &own * coef.loadings.transpose();
    for l in 0..n_traits {
        trait_eta.column_mut(l).add_scalar_mut(coef.intercept[l]);
    }
    let mut trait_omega = DMatrix::zeros(n, n_traits);
    for l in 0..n_traits {
        if traits.kinds[l] == TraitKind::Binary {
            for i in 0..n {
                trait_omega[(i, l)] = sample_pg(trait_eta[(i, l)], rng)?;
            }
        }
    }

    let (det0, det) = match side {
        Side::Animal => (state.delta0, state.delta.clone()),
        Side::Plant => (state.zeta0, state.zeta.clone()),
    };
    let (trials, hits) = counts.side(side);
    let mut det_eta = &own * &det;
    det_eta.add_scalar_mut(det0);
    let mut det_omega = DVector::zeros(n);
    for i in 0..n {
        if trials[i] > 0 {
            det_omega[i] = sample_pg_count(trials[i], det_eta[i], rng)?;
        }
    }

    let prior_prec = problem.gp(side).precision(state.rho(side));
    for h in 0..h_dim {
        let lam = state.lambda[h];
        let a: Vec<f64> = other.column(h).iter().map(|v| lam * v).collect();
        let mut d = DVector::zeros(n);
        let mut b = DVector::zeros(n);
        for i in 0..n {
            let uih = own[(i, h)];
            let (mut di, mut bi) = (0.0, 0.0);
            for (j, &aj) in a.iter().enumerate() {
                let w = omega[(i, j)];
                let rest = psi[(i, j)] - uih * aj;
                di += w * aj * aj;
                bi += aj * (kappa[(i, j)] - w * rest);
            }
            for l in 0..n_traits {
                let beta = coef.loadings[(l, h)];
                let rest = trait_eta[(i, l)] - uih * beta;
                let x = traits.values[(i, l)];
                match traits.kinds[l] {
                    TraitKind::Continuous => {
                        let s2 = coef.variance[l];
                        di += beta * beta / s2;
                        bi += beta * (x - rest) / s2;
                    }
                    TraitKind::Binary => {
                        let w = trait_omega[(i, l)];
                        di += w * beta * beta;
                        bi += beta * (x - 0.5 - w * rest);
                    }
                }
            }
            if trials[i] > 0 {
                let c = det[h];
                let rest = det_eta[i] - uih * c;
                di += det_omega[i] * c * c;
                bi += c * (hits[i] as f64 - 0.5 * trials[i] as f64 - det_omega[i] * rest);
            }
            d[i] = di;
            b[i] = bi;
        }
        let mut q = prior_prec.clone();
        for i in 0..n {
            q[(i, i)] += d[i];
        }
        let fresh = draw(&q, &b, rng)?;
        for i in 0..n {
            let diff = fresh[i] - own[(i, h)];
            if diff == 0.0 {
                continue;
            }
            for (j, &aj) in a.iter().enumerate() {
                psi[(i, j)] += diff * aj;
            }
            for l in 0..n_traits {
                trait_eta[(i, l)] += diff * coef.loadings[(l, h)];
            }
            det_eta[i] += diff * det[h];
        }
        own.set_column(h, &fresh);
    }
    ws.psi = oriented(&psi, side);
    match side {
        Side::Animal => state.u = own,
        Side::Plant => state.v = own,
    }
    state.refresh_detection_probs();
    Ok(())
}

/// Baseline λ₀ by conjugate normal, then each shrinkage increment by a
/// random walk on its log scale against the PG-augmented likelihood.
pub(crate) fn update_shrinkage(
    hyper: &Hyperparams,
    state: &mut LatentState,
    ws: &mut Workspace,
    rng: &mut RngStream,
) -> Result<()> {
    let kappa = state.links.map(|l| if l { 0.5 } else { -0.5 });
    let mut prec = 1.0 / hyper.coef_prior_var;
    let mut lin = 0.0;
    for ((&w, &k), &psi) in ws.omega.iter().zip(kappa.iter()).zip(ws.psi.iter()) {
        prec += w;
        lin += k - w * (psi - state.lambda0);
    }
    let z: f64 = rng.sample(StandardNormal);
    state.lambda0 = lin / prec + z / prec.sqrt();

    let h_dim = state.latent_dim();
    // Quadratic form of the augmented likelihood in λ: gᵀλ − ½ λᵀ G λ.
    let resid = DMatrix::from_fn(kappa.nrows(), kappa.ncols(), |i, j| kappa[(i, j)] - ws.omega[(i, j)] * state.lambda0);
    let rv = &resid * &state.v;
    let g = DVector::from_fn(h_dim, |h, _| state.u.column(h).dot(&rv.column(h)));
    let mut gram = DMatrix::zeros(h_dim, h_dim);
    for h in 0..h_dim {
        for k in h..h_dim {
            let vv = state.v.column(h).component_mul(&state.v.column(k));
            let t = &ws.omega * vv;
            let uu = state.u.column(h).component_mul(&state.u.column(k));
            let val = uu.dot(&t);
            gram[(h, k)] = val;
            gram[(k, h)] = val;
        }
    }
    let loglik = |lambda: &DVector<f64>| g.dot(lambda) - 0.5 * lambda.dot(&(&gram * lambda));
    let mut current = loglik(&state.lambda);
    for l in 0..h_dim {
        let a = hyper.shrinkage_shape(l);
        let old = state.mgp_deltas[l];
        let step: f64 = rng.sample(StandardNormal);
        let prop = old * (hyper.shrinkage_step * step).exp();
        let mut deltas = state.mgp_deltas.clone();
        deltas[l] = prop;
        let lambda = lambda_from_deltas(&deltas);
        let cand = loglik(&lambda);
        // Gamma(a, 1) prior on δ plus the log-scale Jacobian.
        let log_ratio = cand - current + a * (prop.ln() - old.ln()) - (prop - old);
        if rng.random::<f64>().ln() < log_ratio {
            state.mgp_deltas = deltas;
            state.lambda = lambda;
            current = cand;
        }
    }
    ws.psi = state.interaction_logits();
    Ok(())
}

/// Griddy Gibbs for the phylogenetic weights of both sides.
pub(crate) fn update_rho(problem: &FitProblem, hyper: &Hyperparams, state: &mut LatentState, rng: &mut RngStream) -> Result<()> {
    for side in Side::BOTH {
        let gp = problem.gp(side);
        let f = state.factors(side);
        let logs: Vec<f64> = hyper.rho_grid.iter().map(|&r| gp.log_density(r, f)).collect();
        let idx = sample_log_weights(&logs, rng)
            .ok_or_else(|| Error::Argument("every grid point has zero density".into()))?;
        match side {
            Side::Animal => state.rho_u = hyper.rho_grid[idx],
            Side::Plant => state.rho_v = hyper.rho_grid[idx],
        }
    }
    Ok(())
}

/// Index drawn with probability ∝ exp(logs[k]); None if all are −∞ or NaN.
pub fn sample_log_weights<R: Rng + ?Sized>(logs: &[f64], rng: &mut R) -> Option<usize> {
    let max = logs.iter().copied().filter(|x| !x.is_nan()).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let w: Vec<f64> = logs.iter().map(|&x| if x.is_nan() { 0.0 } else { (x - max).exp() }).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, &wk) in w.iter().enumerate() {
        if u < wk {
            return Some(k);
        }
        u -= wk;
    }
    w.iter().rposition(|&x| x > 0.0)
}

fn design(factors: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, h) = factors.shape();
    DMatrix::from_fn(n, h + 1, |i, k| if k == 0 { 1.0 } else { factors[(i, k - 1)] })
}

/// Trait regression coefficients and residual variances of both sides.
pub(crate) fn update_trait_coeffs(
    problem: &FitProblem,
    hyper: &Hyperparams,
    state: &mut LatentState,
    rng: &mut RngStream,
) -> Result<()> {
    for side in Side::BOTH {
        let traits = problem.data.traits.side(side);
        if traits.n_traits() == 0 {
            continue;
        }
        let x = design(state.factors(side));
        let n = x.nrows();
        let k = x.ncols();
        let prior_prec = DMatrix::identity(k, k) / hyper.coef_prior_var;
        let mut coef = state.trait_coefficients(side).clone();
        for l in 0..traits.n_traits() {
            let y = traits.values.column(l);
            let draw = match traits.kinds[l] {
                TraitKind::Continuous => {
                    let s2 = coef.variance[l];
                    let q = x.transpose() * &x / s2 + &prior_prec;
                    let b = x.transpose() * y / s2;
                    let beta = sample_canonical(&q, &b, rng)?;
                    let rss = (y - &x * &beta).norm_squared();
                    let (a0, b0) = hyper.trait_var_prior;
                    let gamma = Gamma::new(a0 + 0.5 * n as f64, 1.0 / (b0 + 0.5 * rss))
                        .map_err(|e| Error::Argument(format!("residual variance update: {e}")))?;
                    coef.variance[l] = 1.0 / gamma.sample(rng);
                    beta
                }
                TraitKind::Binary => {
                    let mut current = DVector::zeros(k);
                    current[0] = coef.intercept[l];
                    for h in 1..k {
                        current[h] = coef.loadings[(l, h - 1)];
                    }
                    let eta = &x * &current;
                    let mut q = prior_prec.clone();
                    let mut b = DVector::zeros(k);
                    for i in 0..n {
                        let w = sample_pg(eta[i], rng)?;
                        let row = x.row(i);
                        q += row.transpose() * row * w;
                        b += row.transpose() * (y[i] - 0.5);
                    }
                    sample_canonical(&q, &b, rng)?
                }
            };
            coef.intercept[l] = draw[0];
            for h in 1..k {
                coef.loadings[(l, h - 1)] = draw[h];
            }
        }
        match side {
            Side::Animal => state.animal_traits = coef,
            Side::Plant => state.plant_traits = coef,
        }
    }
    Ok(())
}

/// Detection indicators, then both detection regressions, then p and q.
pub(crate) fn update_detection(
    problem: &FitProblem,
    hyper: &Hyperparams,
    state: &mut LatentState,
    rng: &mut RngStream,
) -> Result<()> {
    let counts = refresh_detections(problem, state, rng);
    for side in Side::BOTH {
        let x = design(state.factors(side));
        let k = x.ncols();
        let (trials, hits) = counts.side(side);
        let mut current = DVector::zeros(k);
        match side {
            Side::Animal => {
                current[0] = state.delta0;
                current.rows_mut(1, k - 1).copy_from(&state.delta);
            }
            Side::Plant => {
                current[0] = state.zeta0;
                current.rows_mut(1, k - 1).copy_from(&state.zeta);
            }
        }
        let eta = &x * &current;
        let mut q = DMatrix::identity(k, k) / hyper.coef_prior_var;
        let mut b = DVector::zeros(k);
        for i in 0..x.nrows() {
            if trials[i] == 0 {
                continue;
            }
            let w = sample_pg_count(trials[i], eta[i], rng)?;
            let row = x.row(i);
            q += row.transpose() * row * w;
            b += row.transpose() * (hits[i] as f64 - 0.5 * trials[i] as f64);
        }
        let draw = sample_canonical(&q, &b, rng)?;
        let tail = draw.rows(1, k - 1).into_owned();
        match side {
            Side::Animal => {
                state.delta0 = draw[0];
                state.delta = tail;
            }
            Side::Plant => {
                state.zeta0 = draw[0];
                state.zeta = tail;
            }
        }
    }
    state.refresh_detection_probs();
    Ok(())
}
