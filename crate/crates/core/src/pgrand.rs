//! Random-variate kernel: seeded ChaCha streams, exact Polya-Gamma PG(1, z)
//! draws and truncated normal draws on the unit interval.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use crate::error::{Error, Result};

/// A deterministic random stream identified by `(seed, stream_id)`.
///
/// Distinct stream ids select disjoint ChaCha keystreams, so chains and
/// evaluation jobs never share draws. The full generator position is part of
/// the serialized form, which is what makes checkpoint/resume bit-exact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A child stream keyed on this stream's identity and `label`; does not
    /// advance `self`.
    pub fn derive(&self, label: u64) -> Self {
        let mixed = splitmix64(self.stream_id ^ splitmix64(label.wrapping_add(0x9E37_79B9)));
        Self::new(self.seed, mixed)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// log Φ(x), accurate in the far lower tail.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x > -30.0 {
        norm_cdf(x).ln()
    } else {
        // Mills-ratio asymptotic expansion.
        let x2 = x * x;
        let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * PI).ln() + series.ln()
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Probability floor used inside log and logit transforms.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

pub fn logit(p: f64) -> f64 {
    let p = clamp_prob(p);
    (p / (1.0 - p)).ln()
}

// Truncation point of the Devroye-style alternating series sampler.
const PG_TRUNC: f64 = 0.64;

/// Mean of PG(1, z): tanh(z/2) / (2z), with limit 1/4 at zero.
pub fn pg_mean(z: f64) -> f64 {
    if z.abs() < 1e-6 {
        0.25 - z * z / 48.0
    } else {
        (0.5 * z).tanh() / (2.0 * z)
    }
}

/// Variance of PG(1, z).
pub fn pg_variance(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        1.0 / 24.0 - z * z / 240.0
    } else {
        let c = z.cosh();
        // Var = (sinh z - z) / (4 z^3 (cosh(z/2))^2)
        (z.sinh() - z) / (4.0 * z.powi(3) * 0.5 * (c + 1.0))
    }
}

/// Draw ω ~ PG(1, z) exactly.
pub fn sample_pg<R: Rng + ?Sized>(z: f64, rng: &mut R) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::Argument(format!("Polya-Gamma tilt must be finite, got {z}")));
    }
    Ok(draw_pg1(z, rng))
}

/// Draw ω ~ PG(n, z) as a sum of `n` independent PG(1, z) draws.
pub fn sample_pg_sum<R: Rng + ?Sized>(n: usize, z: f64, rng: &mut R) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::Argument(format!("Polya-Gamma tilt must be finite, got {z}")));
    }
    Ok((0..n).map(|_| draw_pg1(z, rng)).sum())
}

/// Above this count a PG(n, z) draw uses the moment-matched normal.
pub const PG_NORMAL_THRESHOLD: usize = 100;

/// Draw ω ~ PG(n, z): exact sum for small `n`, moment-matched normal for
/// large `n` where the central limit makes the two indistinguishable.
pub fn sample_pg_count<R: Rng + ?Sized>(n: usize, z: f64, rng: &mut R) -> Result<f64> {
    if n <= PG_NORMAL_THRESHOLD {
        return sample_pg_sum(n, z, rng);
    }
    if !z.is_finite() {
        return Err(Error::Argument(format!("Polya-Gamma tilt must be finite, got {z}")));
    }
    let mean = n as f64 * pg_mean(z);
    let sd = (n as f64 * pg_variance(z)).sqrt();
    loop {
        let x = mean + sd * rng.sample::<f64, _>(StandardNormal);
        if x > 0.0 {
            return Ok(x);
        }
    }
}

fn draw_pg1<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    // Sample J*(1, z/2) and scale by 1/4.
    let z = 0.5 * z.abs();
    let k = 0.125 * PI * PI + 0.5 * z * z;
    let p_exp = mass_truncated_exponential(z, k);
    loop {
        let x = if rng.random::<f64>() < p_exp {
            let e: f64 = Exp1.sample(rng);
            PG_TRUNC + e / k
        } else {
            truncated_inverse_gaussian(z, rng)
        };
        let mut s = series_coef(0, x);
        let y = rng.random::<f64>() * s;
        let mut n = 0;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series_coef(n, x);
                if y <= s {
                    return 0.25 * x;
                }
            } else {
                s += series_coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

fn series_coef(n: usize, x: f64) -> f64 {
    let nh = n as f64 + 0.5;
    let kn = nh * PI;
    if x > PG_TRUNC {
        kn * (-0.5 * kn * kn * x).exp()
    } else if x > 0.0 {
        (-1.5 * ((0.5 * PI).ln() + x.ln()) + kn.ln() - 2.0 * nh * nh / x).exp()
    } else {
        0.0
    }
}

// Probability that the proposal comes from the exponential tail piece.
fn mass_truncated_exponential(z: f64, k: f64) -> f64 {
    let t = PG_TRUNC;
    let rt = (1.0 / t).sqrt();
    let b = rt * (t * z - 1.0);
    let a = -rt * (t * z + 1.0);
    let x0 = k.ln() + k * t;
    let xb = x0 - z + log_norm_cdf(b);
    let xa = x0 + z + log_norm_cdf(a);
    let q_over_p = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + q_over_p)
}

// Inverse Gaussian IG(1/z, 1) restricted to (0, PG_TRUNC).
fn truncated_inverse_gaussian<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let t = PG_TRUNC;
    let mu = if z > 0.0 { 1.0 / z } else { f64::INFINITY };
    if mu > t {
        loop {
            let mut e1: f64 = Exp1.sample(rng);
            let mut e2: f64 = Exp1.sample(rng);
            while e1 * e1 > 2.0 * e2 / t {
                e1 = Exp1.sample(rng);
                e2 = Exp1.sample(rng);
            }
            let x = t / ((1.0 + t * e1) * (1.0 + t * e1));
            let alpha = (-0.5 * z * z * x).exp();
            if rng.random::<f64>() <= alpha {
                return x;
            }
        }
    } else {
        loop {
            let y: f64 = StandardNormal.sample(rng);
            let y = y * y;
            let mut x = mu + 0.5 * mu * mu * y - 0.5 * mu * (4.0 * mu * y + (mu * y) * (mu * y)).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x <= t {
                return x;
            }
        }
    }
}

/// Draw from N(center, sd²) restricted to the open unit interval.
pub fn sample_truncnorm01<R: Rng + ?Sized>(center: f64, sd: f64, rng: &mut R) -> Result<f64> {
    sample_truncnorm(center, sd, 0.0, 1.0, rng)
}

/// Draw from N(center, sd²) restricted to (lo, hi) by inverse CDF.
///
/// Works on whichever side of the mean keeps the CDF values small, so the
/// interval may sit many standard deviations into a tail.
pub fn sample_truncnorm<R: Rng + ?Sized>(
    center: f64,
    sd: f64,
    lo: f64,
    hi: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::Argument(format!("standard deviation must be positive, got {sd}")));
    }
    if !center.is_finite() || !(lo < hi) {
        return Err(Error::Argument(format!(
            "bad truncated normal parameters: center {center}, interval ({lo}, {hi})"
        )));
    }
    let mut a = (lo - center) / sd;
    let mut b = (hi - center) / sd;
    // Reflect so that the interval lies (mostly) in the lower tail.
    let flip = a > 0.0;
    if flip {
        (a, b) = (-b, -a);
    }
    let fa = norm_cdf(a);
    let fb = norm_cdf(b);
    let x = loop {
        let u: f64 = rng.random();
        let p = fa + u * (fb - fa);
        let x = norm_quantile(p);
        if x.is_finite() && x > a && x < b {
            break x;
        }
        if fb - fa <= 0.0 {
            // Interval so deep in the tail that Φ underflows: exponential
            // approximation to the tail density at the near edge.
            let e: f64 = Exp1.sample(rng);
            let x = b - e / b.abs().max(1e-300);
            if x > a && x < b {
                break x;
            }
        }
    };
    let x = if flip { -x } else { x };
    Ok((center + sd * x).clamp(lo.next_up(), hi.next_down()))
}

/// Log density (unnormalized over the truncation) of N(center, sd²) at x,
/// or -inf outside (lo, hi).
pub fn truncnorm_log_kernel(x: f64, center: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    if x <= lo || x >= hi {
        f64::NEG_INFINITY
    } else {
        let d = (x - center) / sd;
        -0.5 * d * d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (v / n).sqrt())
    }

    #[test]
    fn pg_mean_at_zero_and_two() {
        let mut rng = RngStream::new(7, 0);
        for (z, expected) in [(0.0, 0.25), (2.0, 0.190_398_538_988_941_2)] {
            assert!((pg_mean(z) - expected).abs() < 1e-12);
            let xs: Vec<f64> = (0..100_000).map(|_| sample_pg(z, &mut rng).unwrap()).collect();
            let (m, se) = mean_se(&xs);
            assert!((m - expected).abs() < 3.0 * se, "z={z}: {m} vs {expected} (se {se})");
            assert!(xs.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn pg_rejects_non_finite() {
        let mut rng = RngStream::new(1, 0);
        assert!(sample_pg(f64::NAN, &mut rng).is_err());
        assert!(sample_pg(f64::INFINITY, &mut rng).is_err());
    }

    #[test]
    fn pg_variance_matches_closed_form_limit() {
        assert!((pg_variance(0.0) - 1.0 / 24.0).abs() < 1e-12);
        // Continuity across the small-z switch.
        assert!((pg_variance(1e-4) - pg_variance(1.001e-4)).abs() < 1e-8);
        let mut rng = RngStream::new(3, 1);
        let xs: Vec<f64> = (0..100_000).map(|_| sample_pg(1.5, &mut rng).unwrap()).collect();
        let (m, _) = mean_se(&xs);
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0);
        assert!((v - pg_variance(1.5)).abs() / pg_variance(1.5) < 0.03);
    }

    #[test]
    fn pg_count_moments_on_both_branches() {
        let mut rng = RngStream::new(4, 2);
        for n in [3usize, 400] {
            let xs: Vec<f64> = (0..20_000).map(|_| sample_pg_count(n, 1.2, &mut rng).unwrap()).collect();
            let (m, se) = mean_se(&xs);
            let expected = n as f64 * pg_mean(1.2);
            assert!((m - expected).abs() < 3.5 * se, "n={n}: {m} vs {expected}");
        }
        assert_eq!(sample_pg_count(0, 1.0, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn streams_reproduce_and_differ() {
        let mut a = RngStream::new(42, 3);
        let mut b = RngStream::new(42, 3);
        let mut c = RngStream::new(42, 4);
        let xa: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..16).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
        assert_ne!(a.derive(1), a.derive(2));
    }

    #[test]
    fn truncnorm_symmetric_center() {
        let mut rng = RngStream::new(11, 0);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| sample_truncnorm01(0.5, 1.0, &mut rng).unwrap())
            .collect();
        let (m, se) = mean_se(&xs);
        assert!((m - 0.5).abs() < 3.0 * se);
        assert!(xs.iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn truncnorm_mode_location() {
        let mut rng = RngStream::new(12, 0);
        let upper = (0..50_000)
            .filter(|_| sample_truncnorm01(0.75, 1.0, &mut rng).unwrap() > 0.5)
            .count();
        assert!(upper > 25_000);
    }

    #[test]
    fn truncnorm_far_center_matches_quadrature() {
        // Oracle: mean of N(-5, 1) on (0, 1) by midpoint quadrature.
        let n = 200_000;
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..n {
            let x = (k as f64 + 0.5) / n as f64;
            let w = (-0.5 * (x + 5.0) * (x + 5.0)).exp();
            num += x * w;
            den += w;
        }
        let oracle_mean = num / den;
        let mut rng = RngStream::new(13, 0);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| sample_truncnorm01(-5.0, 1.0, &mut rng).unwrap())
            .collect();
        assert!(xs.iter().all(|&x| x > 0.0 && x < 1.0));
        let (m, se) = mean_se(&xs);
        assert!((m - oracle_mean).abs() < 4.0 * se, "{m} vs {oracle_mean}");
        assert!(m < 0.25);
    }

    #[test]
    fn truncnorm_rejects_bad_sd() {
        let mut rng = RngStream::new(1, 0);
        assert!(sample_truncnorm01(0.5, 0.0, &mut rng).is_err());
        assert!(sample_truncnorm01(0.5, -1.0, &mut rng).is_err());
    }

    #[test]
    fn log_norm_cdf_tail_is_continuous() {
        let left = log_norm_cdf(-30.0 - 1e-9);
        let right = log_norm_cdf(-30.0 + 1e-9);
        assert!((left - right).abs() < 1e-6);
        assert!((log_norm_cdf(0.0) - 0.5f64.ln()).abs() < 1e-14);
    }
}
