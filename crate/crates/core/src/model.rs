//! Parameter state, hyperparameters, linear predictors and the observation
//! likelihood of the latent factor link model.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netdata::{FocalSet, FocusTensor, ObservedTensor, Side, TraitKind, TraitMatrix};
use crate::pgrand::{clamp_prob, logistic};

/// Detection indicators of one exposed triple (augmentation of p_i q_j).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionDraw {
    pub animal: usize,
    pub plant: usize,
    pub study: usize,
    pub animal_detected: bool,
    pub plant_detected: bool,
}

/// Trait-submodel coefficients of one side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraitCoefficients {
    /// Per-trait intercepts.
    pub intercept: DVector<f64>,
    /// Trait × latent-dimension loadings.
    pub loadings: DMatrix<f64>,
    /// Residual variances; only meaningful for continuous columns.
    pub variance: DVector<f64>,
}

impl TraitCoefficients {
    pub fn zeros(n_traits: usize, h: usize) -> Self {
        Self {
            intercept: DVector::zeros(n_traits),
            loadings: DMatrix::zeros(n_traits, h),
            variance: DVector::from_element(n_traits, 1.0),
        }
    }
}

/// Full parameter state of one chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub lambda0: f64,
    pub lambda: DVector<f64>,
    pub mgp_deltas: DVector<f64>,
    pub rho_u: f64,
    pub rho_v: f64,
    pub animal_traits: TraitCoefficients,
    pub plant_traits: TraitCoefficients,
    pub delta0: f64,
    pub delta: DVector<f64>,
    pub zeta0: f64,
    pub zeta: DVector<f64>,
    /// Animal detection probabilities.
    pub p: DVector<f64>,
    /// Plant detection probabilities.
    pub q: DVector<f64>,
    pub links: DMatrix<bool>,
    pub occ_animal: DMatrix<bool>,
    pub occ_plant: DMatrix<bool>,
    pub pi_animal: DMatrix<f64>,
    pub pi_plant: DMatrix<f64>,
    pub detections: Vec<DetectionDraw>,
}

impl LatentState {
    pub fn latent_dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn factors(&self, side: Side) -> &DMatrix<f64> {
        match side {
            Side::Animal => &self.u,
            Side::Plant => &self.v,
        }
    }

    pub fn rho(&self, side: Side) -> f64 {
        match side {
            Side::Animal => self.rho_u,
            Side::Plant => self.rho_v,
        }
    }

    pub fn trait_coefficients(&self, side: Side) -> &TraitCoefficients {
        match side {
            Side::Animal => &self.animal_traits,
            Side::Plant => &self.plant_traits,
        }
    }

    pub fn occurrence(&self, side: Side) -> &DMatrix<bool> {
        match side {
            Side::Animal => &self.occ_animal,
            Side::Plant => &self.occ_plant,
        }
    }

    pub fn occurrence_prob(&self, side: Side) -> &DMatrix<f64> {
        match side {
            Side::Animal => &self.pi_animal,
            Side::Plant => &self.pi_plant,
        }
    }

    /// Recomputes p and q from the detection regressions.
    pub fn refresh_detection_probs(&mut self) {
        for i in 0..self.u.nrows() {
            self.p[i] = logistic(detection_logit(Side::Animal, i, self));
        }
        for j in 0..self.v.nrows() {
            self.q[j] = logistic(detection_logit(Side::Plant, j, self));
        }
    }

    /// λ_h = 1 / ∏_{l ≤ h} δ_l.
    pub fn refresh_lambda(&mut self) {
        self.lambda = lambda_from_deltas(&self.mgp_deltas);
    }

    /// Matrix of interaction logits λ₀ + Σ_h λ_h U_ih V_jh.
    pub fn interaction_logits(&self) -> DMatrix<f64> {
        let mut scaled = self.u.clone();
        for (h, mut col) in scaled.column_iter_mut().enumerate() {
            col *= self.lambda[h];
        }
        let mut psi = scaled * self.v.transpose();
        psi.add_scalar_mut(self.lambda0);
        psi
    }

    /// Structural invariants; returns a description of the first violation.
    pub fn check_invariants(&self, observed: &ObservedTensor, focus: &FocusTensor) -> std::result::Result<(), String> {
        if self.lambda.iter().any(|&l| !(l > 0.0)) {
            return Err("shrinkage weights must be positive".into());
        }
        for r in [self.rho_u, self.rho_v] {
            if !(r > 0.0 && r < 1.0) {
                return Err(format!("phylogenetic weight {r} outside (0,1)"));
            }
        }
        for &(i, j, s) in observed.entries() {
            if !self.links[(i, j)] || !self.occ_animal[(i, s)] || !self.occ_plant[(j, s)] {
                return Err(format!("observed triple ({i},{j},{s}) not supported by L and O"));
            }
        }
        for d in &self.detections {
            let exposed = focus.get(d.animal, d.plant, d.study)
                && self.links[(d.animal, d.plant)]
                && self.occ_animal[(d.animal, d.study)]
                && self.occ_plant[(d.plant, d.study)];
            let seen = observed.contains(d.animal, d.plant, d.study);
            if !exposed {
                continue;
            }
            if seen && !(d.animal_detected && d.plant_detected) {
                return Err(format!("observed triple ({},{},{}) not jointly detected", d.animal, d.plant, d.study));
            }
            if !seen && d.animal_detected && d.plant_detected {
                return Err(format!(
                    "unobserved exposed triple ({},{},{}) jointly detected",
                    d.animal, d.plant, d.study
                ));
            }
        }
        Ok(())
    }
}

pub fn lambda_from_deltas(deltas: &DVector<f64>) -> DVector<f64> {
    let mut acc = 1.0;
    DVector::from_iterator(
        deltas.len(),
        deltas.iter().map(|d| {
            acc *= d;
            1.0 / acc
        }),
    )
}

/// Model hyperparameters and sampler tuning constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    /// Latent dimension H.
    pub latent_dim: usize,
    /// Gamma shape of the first shrinkage increment.
    pub mgp_a1: f64,
    /// Gamma shape of the later shrinkage increments.
    pub mgp_a2: f64,
    /// Prior variance of every regression coefficient and intercept.
    pub coef_prior_var: f64,
    pub rho_grid: Vec<f64>,
    /// Standard deviation of the truncated normal occurrence-probability prior.
    pub occ_prior_sd: f64,
    /// Random-walk standard deviation of the occurrence-probability proposal.
    pub mh_step: f64,
    /// Probability of proposing O = 1 when currently 0.
    pub p01: f64,
    /// Probability of proposing O = 0 when currently 1.
    pub p10: f64,
    /// Inverse-gamma (shape, rate) prior on continuous trait residual variances.
    pub trait_var_prior: (f64, f64),
    /// Random-walk standard deviation for log shrinkage increments.
    pub shrinkage_step: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            latent_dim: 10,
            mgp_a1: 2.0,
            mgp_a2: 3.0,
            coef_prior_var: 4.0,
            rho_grid: default_rho_grid(),
            occ_prior_sd: 1.0,
            mh_step: 0.1,
            p01: 0.25,
            p10: 0.65,
            trait_var_prior: (2.0, 1.0),
            shrinkage_step: 0.3,
        }
    }
}

/// {0.01, 0.05, 0.10, ..., 0.95, 0.99}.
pub fn default_rho_grid() -> Vec<f64> {
    let mut g = vec![0.01];
    g.extend((1..=19).map(|k| k as f64 * 0.05));
    g.push(0.99);
    g
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.latent_dim < 1 {
            return bad("latent dimension must be at least 1".into());
        }
        if self.rho_grid.is_empty() || self.rho_grid.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
            return bad(format!("rho grid must be non-empty and inside (0,1): {:?}", self.rho_grid));
        }
        for (name, p) in [("p01", self.p01), ("p10", self.p10)] {
            if !(p > 0.0 && p < 1.0) {
                return bad(format!("{name} = {p} must lie in (0,1)"));
            }
        }
        for (name, x) in [
            ("mgp_a1", self.mgp_a1),
            ("mgp_a2", self.mgp_a2),
            ("coef_prior_var", self.coef_prior_var),
            ("occ_prior_sd", self.occ_prior_sd),
            ("mh_step", self.mh_step),
            ("shrinkage_step", self.shrinkage_step),
            ("trait_var_prior.shape", self.trait_var_prior.0),
            ("trait_var_prior.rate", self.trait_var_prior.1),
        ] {
            if !(x > 0.0) || !x.is_finite() {
                return bad(format!("{name} = {x} must be positive"));
            }
        }
        Ok(())
    }

    pub fn shrinkage_shape(&self, h: usize) -> f64 {
        if h == 0 {
            self.mgp_a1
        } else {
            self.mgp_a2
        }
    }
}

/// λ₀ + Σ_h λ_h U_ih V_jh.
pub fn interaction_logit(i: usize, j: usize, state: &LatentState) -> f64 {
    state.lambda0
        + (0..state.latent_dim())
            .map(|h| state.lambda[h] * state.u[(i, h)] * state.v[(j, h)])
            .sum::<f64>()
}

/// Σ = ρC + (1 − ρ)I.
pub fn build_sigma(rho: f64, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Argument(format!("rho = {rho} must lie in (0,1)")));
    }
    let n = c.nrows();
    Ok(c * rho + DMatrix::identity(n, n) * (1.0 - rho))
}

/// P(A = 1 | l, f, o) = p q when l·f·o = 1, otherwise 0.
pub fn observation_prob(l: bool, f: bool, o: bool, p: f64, q: f64) -> f64 {
    if l && f && o {
        p * q
    } else {
        0.0
    }
}

/// Number of studies exposing each pair: m_ij = Σ_s F_ijs O_F[i,s] O_P[j,s].
pub fn exposure_counts(focus: &FocusTensor, occ_animal: &DMatrix<bool>, occ_plant: &DMatrix<bool>) -> DMatrix<f64> {
    let (nf, np, ns) = focus.dims;
    let mut mf = DMatrix::<f64>::zeros(nf, ns);
    let mut mp = DMatrix::<f64>::zeros(np, ns);
    let mut m = DMatrix::<f64>::zeros(nf, np);
    for (s, st) in focus.studies.iter().enumerate() {
        match &st.focal {
            FocalSet::Product { animals, plants } => {
                for i in 0..nf {
                    if animals[i] && occ_animal[(i, s)] {
                        mf[(i, s)] = 1.0;
                    }
                }
                for j in 0..np {
                    if plants[j] && occ_plant[(j, s)] {
                        mp[(j, s)] = 1.0;
                    }
                }
            }
            FocalSet::Pairs(pairs) => {
                for &(i, j) in pairs {
                    if occ_animal[(i, s)] && occ_plant[(j, s)] {
                        m[(i, j)] += 1.0;
                    }
                }
            }
        }
    }
    m.gemm(1.0, &mf, &mp.transpose(), 1.0);
    for &(i, j) in &focus.excluded_pairs {
        m[(i, j)] = 0.0;
    }
    m
}

/// Log-likelihood of A over all exposed triples (F·O·L = 1); −∞ when an
/// observed triple is not exposed.
pub fn log_likelihood(state: &LatentState, observed: &ObservedTensor, focus: &FocusTensor) -> f64 {
    for &(i, j, s) in observed.entries() {
        if !(focus.get(i, j, s) && state.links[(i, j)] && state.occ_animal[(i, s)] && state.occ_plant[(j, s)]) {
            return f64::NEG_INFINITY;
        }
    }
    let m = exposure_counts(focus, &state.occ_animal, &state.occ_plant);
    log_likelihood_with_exposure(state, observed, &m)
}

pub(crate) fn log_likelihood_with_exposure(state: &LatentState, observed: &ObservedTensor, m: &DMatrix<f64>) -> f64 {
    let mut ll = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if state.links[(i, j)] && m[(i, j)] > 0.0 {
                ll += m[(i, j)] * (1.0 - clamp_prob(state.p[i] * state.q[j])).ln();
            }
        }
    }
    for &(i, j, _) in observed.entries() {
        let pq = clamp_prob(state.p[i] * state.q[j]);
        ll += pq.ln() - (1.0 - pq).ln();
    }
    ll
}

/// Linear predictor of a trait column: intercept + factors · loadings.
pub fn trait_predictor(side: Side, column: usize, state: &LatentState) -> DVector<f64> {
    let coef = state.trait_coefficients(side);
    let f = state.factors(side);
    let loading = coef.loadings.row(column).transpose();
    let mut eta = f * loading;
    eta.add_scalar_mut(coef.intercept[column]);
    eta
}

/// Expected trait value: identity link for continuous, logistic for binary.
pub fn trait_mean(side: Side, column: usize, traits: &TraitMatrix, state: &LatentState) -> DVector<f64> {
    let eta = trait_predictor(side, column, state);
    match traits.kinds[column] {
        TraitKind::Continuous => eta,
        TraitKind::Binary => eta.map(logistic),
    }
}

/// δ₀ + U_i·δ for animals, ζ₀ + V_j·ζ for plants.
pub fn detection_logit(side: Side, index: usize, state: &LatentState) -> f64 {
    match side {
        Side::Animal => state.delta0 + state.u.row(index).dot(&state.delta.transpose()),
        Side::Plant => state.zeta0 + state.v.row(index).dot(&state.zeta.transpose()),
    }
}

/// Eigendecomposition of a phylogenetic correlation matrix, giving cheap
/// precision matrices and log densities of Σ(ρ) for any ρ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpPrior {
    eigvecs: DMatrix<f64>,
    eigvals: DVector<f64>,
}

impl GpPrior {
    pub fn new(c: &DMatrix<f64>) -> Self {
        let sym = (c + c.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        Self {
            eigvals: eig.eigenvalues.map(|e| e.max(0.0)),
            eigvecs: eig.eigenvectors,
        }
    }

    fn spectrum(&self, rho: f64) -> DVector<f64> {
        self.eigvals.map(|e| rho * e + (1.0 - rho))
    }

    /// Σ(ρ)⁻¹.
    pub fn precision(&self, rho: f64) -> DMatrix<f64> {
        let inv = self.spectrum(rho).map(|x| 1.0 / x);
        let mut scaled = self.eigvecs.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= inv[k];
        }
        scaled * self.eigvecs.transpose()
    }

    /// Σ_h log N(columns[:, h]; 0, Σ(ρ)), dropping the 2π constant.
    pub fn log_density(&self, rho: f64, columns: &DMatrix<f64>) -> f64 {
        let spec = self.spectrum(rho);
        let logdet: f64 = spec.iter().map(|x| x.ln()).sum();
        let proj = self.eigvecs.transpose() * columns;
        let mut quad = 0.0;
        for h in 0..proj.ncols() {
            for k in 0..proj.nrows() {
                quad += proj[(k, h)].powi(2) / spec[k];
            }
        }
        -0.5 * quad - 0.5 * columns.ncols() as f64 * logdet
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::netdata::{derive_focus, StudyKind, StudyMeta};
    use crate::pgrand::RngStream;
    use rand::Rng;

    pub(crate) fn blank_state(nf: usize, np: usize, ns: usize, h: usize) -> LatentState {
        let deltas = DVector::from_element(h, 1.0);
        LatentState {
            u: DMatrix::zeros(nf, h),
            v: DMatrix::zeros(np, h),
            lambda0: 0.0,
            lambda: lambda_from_deltas(&deltas),
            mgp_deltas: deltas,
            rho_u: 0.5,
            rho_v: 0.5,
            animal_traits: TraitCoefficients::zeros(0, h),
            plant_traits: TraitCoefficients::zeros(0, h),
            delta0: 0.0,
            delta: DVector::zeros(h),
            zeta0: 0.0,
            zeta: DVector::zeros(h),
            p: DVector::from_element(nf, 0.5),
            q: DVector::from_element(np, 0.5),
            links: DMatrix::from_element(nf, np, false),
            occ_animal: DMatrix::from_element(nf, ns, false),
            occ_plant: DMatrix::from_element(np, ns, false),
            pi_animal: DMatrix::from_element(nf, ns, 0.5),
            pi_plant: DMatrix::from_element(np, ns, 0.5),
            detections: Vec::new(),
        }
    }

    #[test]
    fn interaction_logit_cases() {
        let mut s = blank_state(2, 2, 1, 1);
        s.lambda0 = -1.3;
        s.v[(0, 0)] = 4.0;
        assert_eq!(interaction_logit(0, 0, &s), -1.3);
        s.lambda0 = 0.0;
        s.lambda[0] = 2.0;
        s.u[(1, 0)] = 0.5;
        s.v[(1, 0)] = -1.0;
        assert!((interaction_logit(1, 1, &s) + 1.0).abs() < 1e-15);
        s.lambda0 = 0.7;
        let base = interaction_logit(1, 1, &s) - 0.7;
        s.u[(1, 0)] *= 2.0;
        assert!((interaction_logit(1, 1, &s) - 0.7 - 2.0 * base).abs() < 1e-12);
        assert!((s.interaction_logits()[(1, 1)] - interaction_logit(1, 1, &s)).abs() < 1e-12);
    }

    #[test]
    fn sigma_cases() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0]);
        let s = build_sigma(0.5, &c).unwrap();
        assert!((s[(0, 1)] - 0.4).abs() < 1e-15);
        assert_eq!(s[(0, 0)], 1.0);
        assert!((build_sigma(1e-12, &c).unwrap() - DMatrix::identity(2, 2)).abs().max() < 1e-11);
        assert!((build_sigma(1.0 - 1e-12, &c).unwrap() - &c).abs().max() < 1e-11);
        assert!(build_sigma(0.0, &c).is_err());
        assert!(build_sigma(1.0, &c).is_err());
    }

    #[test]
    fn sigma_min_eigenvalue_bound() {
        let mut rng = RngStream::new(5, 0);
        for _ in 0..20 {
            let n = 6;
            let x = DMatrix::from_fn(n, 3, |_, _| rng.random::<f64>() - 0.5);
            let g = &x * x.transpose();
            let d = g.diagonal().map(|v| 1.0 / v.sqrt());
            let c = DMatrix::from_fn(n, n, |a, b| g[(a, b)] * d[a] * d[b]);
            let rho: f64 = rng.random::<f64>() * 0.98 + 0.01;
            let s = build_sigma(rho, &c).unwrap();
            let min = SymmetricEigen::new(s).eigenvalues.min();
            assert!(min >= (1.0 - rho) - 1e-8);
        }
    }

    #[test]
    fn observation_prob_cases() {
        assert_eq!(observation_prob(true, true, false, 0.3, 0.9), 0.0);
        assert_eq!(observation_prob(true, true, true, 0.5, 0.5), 0.25);
        assert_eq!(observation_prob(false, true, true, 0.9, 0.9), 0.0);
    }

    #[test]
    fn gp_prior_matches_dense_algebra() {
        let c = DMatrix::from_row_slice(3, 3, &[1.0, 0.6, 0.2, 0.6, 1.0, 0.3, 0.2, 0.3, 1.0]);
        let gp = GpPrior::new(&c);
        let sigma = build_sigma(0.7, &c).unwrap();
        let inv = sigma.clone().try_inverse().unwrap();
        assert!((gp.precision(0.7) - &inv).abs().max() < 1e-10);
        let u = DMatrix::from_row_slice(3, 2, &[0.3, -1.0, 0.1, 0.5, -0.7, 2.0]);
        let logdet = sigma.determinant().ln();
        let quad: f64 = (0..2).map(|h| (u.column(h).transpose() * &inv * u.column(h))[(0, 0)]).sum();
        assert!((gp.log_density(0.7, &u) - (-0.5 * quad - logdet)).abs() < 1e-10);
    }

    fn tiny_instance(rng: &mut RngStream) -> (LatentState, ObservedTensor, FocusTensor) {
        let (nf, np, ns) = (2, 2, 2);
        let kinds = [StudyKind::Zoocentric, StudyKind::Network];
        let meta: Vec<StudyMeta> = kinds
            .iter()
            .enumerate()
            .map(|(s, &kind)| StudyMeta {
                study_id: format!("s{s}"),
                kind,
                site: None,
                country: "c".into(),
                zone: "z".into(),
            })
            .collect();
        let entries: Vec<_> = (0..nf)
            .flat_map(|i| (0..np).flat_map(move |j| (0..ns).map(move |s| (i, j, s))))
            .filter(|_| rng.random::<f64>() < 0.3)
            .collect();
        let a = ObservedTensor::new((nf, np, ns), entries).unwrap();
        let f = derive_focus(&a, &meta).unwrap();
        let mut st = blank_state(nf, np, ns, 1);
        for i in 0..nf {
            st.p[i] = rng.random::<f64>() * 0.9 + 0.05;
            for s in 0..ns {
                st.occ_animal[(i, s)] = rng.random::<f64>() < 0.7;
            }
        }
        for j in 0..np {
            st.q[j] = rng.random::<f64>() * 0.9 + 0.05;
            for s in 0..ns {
                st.occ_plant[(j, s)] = rng.random::<f64>() < 0.7;
            }
            for i in 0..nf {
                st.links[(i, j)] = rng.random::<f64>() < 0.6;
            }
        }
        (st, a, f)
    }

    #[test]
    fn log_likelihood_matches_triple_product() {
        let mut rng = RngStream::new(99, 0);
        let mut checked = 0;
        for _ in 0..300 {
            let (st, a, f) = tiny_instance(&mut rng);
            // Oracle: product of P(A_ijs | l, f, o) over every triple.
            let mut prob = 1.0;
            for i in 0..2 {
                for j in 0..2 {
                    for s in 0..2 {
                        let o = st.occ_animal[(i, s)] && st.occ_plant[(j, s)];
                        let p1 = observation_prob(st.links[(i, j)], f.get(i, j, s), o, st.p[i], st.q[j]);
                        prob *= if a.contains(i, j, s) { p1 } else { 1.0 - p1 };
                    }
                }
            }
            let ll = log_likelihood(&st, &a, &f);
            if prob == 0.0 {
                assert_eq!(ll, f64::NEG_INFINITY);
            } else {
                assert!((ll - prob.ln()).abs() < 1e-10, "{ll} vs {}", prob.ln());
                checked += 1;
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn log_likelihood_small_cases() {
        let meta = vec![StudyMeta {
            study_id: "s".into(),
            kind: StudyKind::Network,
            site: None,
            country: "c".into(),
            zone: "z".into(),
        }];
        let a = ObservedTensor::new((1, 1, 1), vec![]).unwrap();
        let f = derive_focus(&a, &meta).unwrap();
        let st = blank_state(1, 1, 1, 1);
        assert_eq!(log_likelihood(&st, &a, &f), 0.0);

        let a = ObservedTensor::new((1, 1, 1), vec![(0, 0, 0)]).unwrap();
        let f = derive_focus(&a, &meta).unwrap();
        let mut st = blank_state(1, 1, 1, 1);
        st.links[(0, 0)] = true;
        st.occ_animal[(0, 0)] = true;
        st.occ_plant[(0, 0)] = true;
        assert!((log_likelihood(&st, &a, &f) - 0.25f64.ln()).abs() < 1e-12);
        st.links[(0, 0)] = false;
        assert_eq!(log_likelihood(&st, &a, &f), f64::NEG_INFINITY);
    }

    #[test]
    fn trait_and_detection_predictors() {
        let mut s = blank_state(3, 2, 1, 1);
        s.animal_traits = TraitCoefficients::zeros(1, 1);
        s.animal_traits.intercept[0] = 0.4;
        s.u = DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 0.5]);
        assert_eq!(trait_predictor(Side::Animal, 0, &s), DVector::from_element(3, 0.4));
        s.animal_traits.intercept[0] = 0.0;
        s.animal_traits.loadings[(0, 0)] = 1.0;
        assert_eq!(trait_predictor(Side::Animal, 0, &s), s.u.column(0).into_owned());

        s.delta0 = 0.0;
        s.refresh_detection_probs();
        assert!(s.p.iter().all(|&p| p == 0.5));
        s.delta[0] = 0.8;
        let before: Vec<f64> = (0..3).map(|i| logistic(detection_logit(Side::Animal, i, &s))).collect();
        s.delta0 = 0.3;
        for (i, b) in before.iter().enumerate() {
            assert!(logistic(detection_logit(Side::Animal, i, &s)) > *b);
        }
        s.delta.fill(0.0);
        for i in 0..3 {
            assert_eq!(detection_logit(Side::Animal, i, &s), 0.3);
        }
    }

    #[test]
    fn continuous_trait_prior_mean_is_zero() {
        // Prior draws of (β₀, β) ~ N(0, v): the predicted trait mean averages to 0.
        let mut rng = RngStream::new(8, 0);
        let mut s = blank_state(4, 1, 1, 2);
        s.u = DMatrix::from_fn(4, 2, |_, _| rng.random::<f64>() - 0.5);
        s.animal_traits = TraitCoefficients::zeros(1, 2);
        let n = 20_000;
        let mut acc = DVector::zeros(4);
        for _ in 0..n {
            let z: [f64; 3] = std::array::from_fn(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng));
            s.animal_traits.intercept[0] = 2.0 * z[0];
            s.animal_traits.loadings[(0, 0)] = 2.0 * z[1];
            s.animal_traits.loadings[(0, 1)] = 2.0 * z[2];
            acc += trait_predictor(Side::Animal, 0, &s);
        }
        acc /= n as f64;
        assert!(acc.amax() < 0.06, "{acc}");
    }

    #[test]
    fn shrinkage_weights_positive_and_prior_mean_decreasing() {
        let hp = Hyperparams::default();
        let deltas = DVector::from_vec(vec![2.0, 3.0, 0.5]);
        let l = lambda_from_deltas(&deltas);
        assert!((l[0] - 0.5).abs() < 1e-15 && (l[1] - 1.0 / 6.0).abs() < 1e-15 && (l[2] - 1.0 / 3.0).abs() < 1e-15);
        // E[λ_h] = 1/(a1 - 1) · (1/(a2 - 1))^(h-1).
        let means: Vec<f64> = (0..5)
            .map(|h| (1.0 / (hp.mgp_a1 - 1.0)) * (1.0 / (hp.mgp_a2 - 1.0)).powi(h))
            .collect();
        assert!(means.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn hyperparams_validation() {
        assert!(Hyperparams::default().validate().is_ok());
        assert_eq!(default_rho_grid().len(), 21);
        let hp = Hyperparams {
            rho_grid: vec![0.0, 0.5],
            ..Hyperparams::default()
        };
        assert!(hp.validate().is_err());
        let hp = Hyperparams {
            latent_dim: 0,
            ..Hyperparams::default()
        };
        assert!(hp.validate().is_err());
    }
}
