//! Proper and threshold-weighted scoring rules.
//!
//! Closed forms for the (truncated) normal family are written generically
//! over [`Scalar`] so the same expressions serve both plain evaluation and
//! the `(mu, log sigma)` gradients needed by network training. A
//! Gauss-Kronrod quadrature evaluator of the integral CRPS definition acts
//! as the independent oracle for all of them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Dual2, Scalar};
use crate::dist::{DistError, Distribution, EnsembleForecast, TruncatedNormal};
use crate::special::FRAC_1_SQRT_PI;

/// Densities below this are floored before taking logs, capping the log
/// score near 690.8 so optimizers see finite values.
pub const DENSITY_FLOOR: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("fair CRPS requires at least 2 members, got {0}")]
    TooFewMembers(usize),
    #[error("quadrature failed to reach tolerance {tol:.1e}: error estimate {err:.3e} with {segments} segments")]
    QuadratureNoConvergence { tol: f64, err: f64, segments: usize },
}

pub type Result<T> = std::result::Result<T, ScoreError>;

/// Indicator weight w(z) = 1{z > t} together with its chaining function
/// v(x) = max(x, t), so that v(x) - v(x') integrates w over [x', x].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub threshold: f64,
}

impl WeightSpec {
    pub fn new(threshold: f64) -> Self {
        Self { threshold }
    }

    pub fn weight(&self, z: f64) -> f64 {
        if z > self.threshold {
            1.0
        } else {
            0.0
        }
    }

    pub fn chain(&self, x: f64) -> f64 {
        x.max(self.threshold)
    }
}

// ---------------------------------------------------------------------------
// Log score and censored likelihood score
// ---------------------------------------------------------------------------

/// Negative log density, floored so the score stays finite.
pub fn log_score(d: &Distribution, y: f64) -> Result<f64> {
    let f = d.pdf(y)?;
    Ok(-(f.max(DENSITY_FLOOR)).ln())
}

/// Censored likelihood score with indicator weight at `w.threshold`: above
/// the threshold it is the log score, below it scores the total censored
/// mass. Both terms enter negatively so the score is proper.
pub fn censored_likelihood_score(d: &Distribution, y: f64, w: &WeightSpec) -> Result<f64> {
    if y > w.threshold {
        log_score(d, y)
    } else {
        // -log(1 - integral of w*f) = -log F(t)
        let ft = d.cdf(w.threshold);
        Ok(-(ft.max(DENSITY_FLOOR)).ln())
    }
}

// ---------------------------------------------------------------------------
// Closed-form truncated-normal CRPS / twCRPS
// ---------------------------------------------------------------------------

/// Antiderivative of Phi: G1(z) = z Phi(z) + phi(z).
fn g1<S: Scalar>(z: S) -> S {
    z * z.norm_cdf() + z.norm_pdf()
}

/// Antiderivative of Phi^2 with G2(-inf) = 0:
/// G2(z) = z Phi(z)^2 + 2 Phi(z) phi(z) - Phi(z sqrt 2) / sqrt(pi).
fn g2<S: Scalar>(z: S) -> S {
    let cdf = z.norm_cdf();
    z * cdf * cdf + S::constant(2.0) * cdf * z.norm_pdf()
        - S::constant(FRAC_1_SQRT_PI) * (z * S::constant(std::f64::consts::SQRT_2)).norm_cdf()
}

/// Below this mass above the truncation point, the distribution is treated
/// as the point mass at `lower` that it numerically is; the 1/p^2 factors
/// in the closed forms would otherwise amplify rounding into garbage.
const TN_MASS_FLOOR: f64 = 1e-12;

/// phi(z) - z * (1 - Phi(z)); positive, ~phi(z)/z^2 in the upper tail.
fn tail_piece<S: Scalar>(z: S) -> S {
    z.norm_pdf() - z * (-z).norm_cdf()
}

/// Heavily truncated branch of the CRPS/twCRPS body: the integrand over
/// [max(z_s, alpha), infinity) written entirely in survival-scale terms,
///   sigma * [ G2(-z_s)/p^2 + 2 (T(z_y) - T(z_s))/p + (z_y - z_s) ],
/// with T the `tail_piece`. Algebraically identical to the generic form
/// but free of the 1/p^2 cancellation when alpha is large.
fn crps_tail_stable<S: Scalar>(sigma: S, p: S, zs: S, zy: S) -> S {
    let g2_neg = -zs * (-zs).norm_cdf() * (-zs).norm_cdf()
        + S::constant(2.0) * (-zs).norm_cdf() * zs.norm_pdf()
        - S::constant(FRAC_1_SQRT_PI) * (-zs * S::constant(std::f64::consts::SQRT_2)).norm_cdf();
    let s1 = tail_piece(zy) - tail_piece(zs);
    sigma * (g2_neg / (p * p) + S::constant(2.0) * s1 / p + (zy - zs))
}

/// CRPS of a normal left-truncated at `lower` (`-inf` for none), generic so
/// that dual arithmetic yields exact (mu, sigma) derivatives. Observations
/// below the truncation point contribute the extra (lower - y) length on
/// which the integrand is exactly one.
fn crps_tn_generic<S: Scalar>(mu: S, sigma: S, lower: f64, y: f64) -> S {
    if lower.is_finite() {
        let alpha = (S::constant(lower) - mu) / sigma;
        let p = (-alpha).norm_cdf(); // 1 - Phi(alpha), stable in the tail
        if p.value() < TN_MASS_FLOOR {
            // Point mass at the truncation point.
            return S::constant((y - lower).abs());
        }
        let y_eff = y.max(lower);
        let zy = (S::constant(y_eff) - mu) / sigma;
        if alpha.value() > 2.0 {
            // Heavy truncation: cancellation-free form.
            return crps_tail_stable(sigma, p, alpha, zy) + S::constant((lower - y).max(0.0));
        }
        let cdf_a = alpha.norm_cdf();
        let a_part = (g2(zy) - g2(alpha))
            - S::constant(2.0) * cdf_a * (g1(zy) - g1(alpha))
            + cdf_a * cdf_a * (zy - alpha);
        sigma / (p * p) * (a_part + g2(-zy)) + S::constant((lower - y).max(0.0))
    } else {
        let zy = (S::constant(y) - mu) / sigma;
        sigma * (g2(zy) + g2(-zy))
    }
}

/// twCRPS with indicator weight 1{x > t}: the CRPS integrand restricted to
/// x > t. When t < lower the stretch (max(t, y), lower) has integrand one.
fn twcrps_tn_generic<S: Scalar>(mu: S, sigma: S, lower: f64, y: f64, t: f64) -> S {
    if t == f64::NEG_INFINITY {
        return crps_tn_generic(mu, sigma, lower, y);
    }
    let (below, s) = if lower.is_finite() {
        ((lower - t.max(y)).max(0.0), t.max(lower))
    } else {
        (0.0, t)
    };
    if lower.is_finite() {
        let alpha = (S::constant(lower) - mu) / sigma;
        let p = (-alpha).norm_cdf();
        if p.value() < TN_MASS_FLOOR {
            // Point mass at `lower`: the weighted integrand survives only
            // between the v-mapped observation and truncation point.
            return S::constant((y.max(t) - lower.max(t)).abs());
        }
    }
    let zs = (S::constant(s) - mu) / sigma;
    let body = if lower.is_finite() {
        let alpha = (S::constant(lower) - mu) / sigma;
        let cdf_a = alpha.norm_cdf();
        let p = (-alpha).norm_cdf();
        if y <= s {
            sigma / (p * p) * g2(-zs)
        } else if alpha.value() > 2.0 {
            let zy = (S::constant(y) - mu) / sigma;
            crps_tail_stable(sigma, p, zs, zy)
        } else {
            let zy = (S::constant(y) - mu) / sigma;
            let a_part = (g2(zy) - g2(zs))
                - S::constant(2.0) * cdf_a * (g1(zy) - g1(zs))
                + cdf_a * cdf_a * (zy - zs);
            sigma / (p * p) * (a_part + g2(-zy))
        }
    } else if y <= s {
        sigma * g2(-zs)
    } else {
        let zy = (S::constant(y) - mu) / sigma;
        sigma * (g2(zy) - g2(zs) + g2(-zy))
    };
    body + S::constant(below)
}

/// Closed-form CRPS for a truncated normal forecast.
pub fn crps_closed_tn(d: &TruncatedNormal, y: f64) -> f64 {
    crps_tn_generic(d.mu(), d.sigma(), d.lower(), y)
}

/// Closed-form CRPS straight from raw parameters (no validated
/// distribution required); optimizer-safe for degenerate mass.
pub fn crps_tn_value(mu: f64, sigma: f64, lower: f64, y: f64) -> f64 {
    crps_tn_generic(mu, sigma, lower, y)
}

/// Closed-form twCRPS straight from raw parameters.
pub fn twcrps_tn_value(mu: f64, sigma: f64, lower: f64, y: f64, t: f64) -> f64 {
    twcrps_tn_generic(mu, sigma, lower, y, t)
}

/// Closed-form threshold-weighted CRPS for a truncated normal forecast.
pub fn twcrps_closed_tn(d: &TruncatedNormal, y: f64, w: &WeightSpec) -> f64 {
    twcrps_tn_generic(d.mu(), d.sigma(), d.lower(), y, w.threshold)
}

fn dual_sigma(sigma: f64) -> Dual2 {
    // d sigma / d log sigma = sigma
    Dual2::new(sigma, 0.0, sigma)
}

/// (value, d/d mu, d/d log sigma) of the closed-form CRPS.
pub fn crps_tn_grad(mu: f64, sigma: f64, lower: f64, y: f64) -> (f64, f64, f64) {
    let r = crps_tn_generic(Dual2::var0(mu), dual_sigma(sigma), lower, y);
    (r.v, r.d0, r.d1)
}

/// (value, d/d mu, d/d log sigma) of the closed-form twCRPS.
pub fn twcrps_tn_grad(mu: f64, sigma: f64, lower: f64, y: f64, t: f64) -> (f64, f64, f64) {
    let r = twcrps_tn_generic(Dual2::var0(mu), dual_sigma(sigma), lower, y, t);
    (r.v, r.d0, r.d1)
}

fn tn_cdf_generic<S: Scalar>(mu: S, sigma: S, lower: f64, x: f64) -> S {
    if lower.is_finite() && x <= lower {
        return S::constant(0.0);
    }
    let z = (S::constant(x) - mu) / sigma;
    if lower.is_finite() {
        let alpha = (S::constant(lower) - mu) / sigma;
        let p = (-alpha).norm_cdf();
        if p.value() < TN_MASS_FLOOR {
            // Point mass at `lower`; x > lower here.
            return S::constant(1.0);
        }
        S::constant(1.0) - (-z).norm_cdf() / p
    } else {
        z.norm_cdf()
    }
}

/// (value, d/d mu, d/d log sigma) of the truncated-normal cdf at `x`.
pub fn tn_cdf_grad(mu: f64, sigma: f64, lower: f64, x: f64) -> (f64, f64, f64) {
    let r = tn_cdf_generic(Dual2::var0(mu), dual_sigma(sigma), lower, x);
    (r.v, r.d0, r.d1)
}

fn tn_log_score_generic<S: Scalar>(mu: S, sigma: S, lower: f64, y: f64) -> S {
    if lower.is_finite() && y < lower {
        return S::constant(-DENSITY_FLOOR.ln());
    }
    let z = (S::constant(y) - mu) / sigma;
    // log phi(z) = -log sqrt(2 pi) - z^2 / 2
    let log_phi = S::constant(-0.9189385332046727) - S::constant(0.5) * z * z;
    let log_den = if lower.is_finite() {
        let alpha = (S::constant(lower) - mu) / sigma;
        let p = (-alpha).norm_cdf();
        if p.value() < TN_MASS_FLOOR {
            return S::constant(-DENSITY_FLOOR.ln());
        }
        log_phi - sigma.ln() - p.ln()
    } else {
        log_phi - sigma.ln()
    };
    if log_den.value() < DENSITY_FLOOR.ln() {
        return S::constant(-DENSITY_FLOOR.ln());
    }
    -log_den
}

/// (value, d/d mu, d/d log sigma) of the truncated-normal log score.
pub fn tn_log_score_grad(mu: f64, sigma: f64, lower: f64, y: f64) -> (f64, f64, f64) {
    let r = tn_log_score_generic(Dual2::var0(mu), dual_sigma(sigma), lower, y);
    (r.v, r.d0, r.d1)
}

/// (value, d/d mu, d/d log sigma) of the truncated-normal censored
/// likelihood score at threshold `t`.
pub fn tn_cls_grad(mu: f64, sigma: f64, lower: f64, y: f64, t: f64) -> (f64, f64, f64) {
    if y > t {
        tn_log_score_grad(mu, sigma, lower, y)
    } else {
        let ft = tn_cdf_generic(Dual2::var0(mu), dual_sigma(sigma), lower, t);
        if ft.v < DENSITY_FLOOR {
            return (-DENSITY_FLOOR.ln(), 0.0, 0.0);
        }
        let r = -ft.ln();
        (r.v, r.d0, r.d1)
    }
}

// ---------------------------------------------------------------------------
// Sample-based CRPS variants
// ---------------------------------------------------------------------------

/// Sum over sorted values of x_k (2k - M - 1), k 1-based: equals the sum
/// over all ordered pairs (i, j) of |x_i - x_j| divided by two.
fn pair_distance_sum(sorted: &[f64]) -> f64 {
    let m = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(idx, x)| x * (2.0 * (idx as f64 + 1.0) - m - 1.0))
        .sum()
}

fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

/// Sample CRPS of an ensemble treated as the predictive distribution itself.
pub fn crps_sample(e: &EnsembleForecast, y: f64) -> f64 {
    let m = e.len() as f64;
    let dist_term = e.members().iter().map(|x| (x - y).abs()).sum::<f64>() / m;
    dist_term - pair_distance_sum(e.members()) / (m * m)
}

/// Threshold-weighted sample CRPS: sample CRPS of the v-mapped members and
/// observation, with v(x) = max(x, t).
pub fn twcrps_sample(e: &EnsembleForecast, y: f64, w: &WeightSpec) -> f64 {
    let mapped = sorted_copy(&e.members().iter().map(|x| w.chain(*x)).collect::<Vec<_>>());
    let m = mapped.len() as f64;
    let vy = w.chain(y);
    let dist_term = mapped.iter().map(|x| (x - vy).abs()).sum::<f64>() / m;
    dist_term - pair_distance_sum(&mapped) / (m * m)
}

/// Fair (unbiased) CRPS: the spread sum is divided by 2M(M-1), which makes
/// the estimator unbiased for the population CRPS of the distribution the
/// members were drawn from. May be negative.
pub fn fair_crps(e: &EnsembleForecast, y: f64) -> Result<f64> {
    let m = e.len();
    if m < 2 {
        return Err(ScoreError::TooFewMembers(m));
    }
    let mf = m as f64;
    let dist_term = e.members().iter().map(|x| (x - y).abs()).sum::<f64>() / mf;
    Ok(dist_term - pair_distance_sum(e.members()) / (mf * (mf - 1.0)))
}

/// Fair threshold-weighted CRPS via the v-map.
pub fn fair_twcrps(e: &EnsembleForecast, y: f64, w: &WeightSpec) -> Result<f64> {
    let m = e.len();
    if m < 2 {
        return Err(ScoreError::TooFewMembers(m));
    }
    let mapped = sorted_copy(&e.members().iter().map(|x| w.chain(*x)).collect::<Vec<_>>());
    let mf = m as f64;
    let vy = w.chain(y);
    let dist_term = mapped.iter().map(|x| (x - vy).abs()).sum::<f64>() / mf;
    Ok(dist_term - pair_distance_sum(&mapped) / (mf * (mf - 1.0)))
}

// ---------------------------------------------------------------------------
// Quadrature oracle
// ---------------------------------------------------------------------------

const GK_NODES: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

/// One Gauss-Kronrod 7-15 panel; returns (integral, error estimate).
fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kronrod = 0.0;
    let mut gauss = 0.0;
    for (i, &x) in GK_NODES.iter().enumerate() {
        let pair = if x == 0.0 { f(c) } else { f(c - h * x) + f(c + h * x) };
        kronrod += GK_WEIGHTS[i] * pair;
        if i % 2 == 1 {
            gauss += GAUSS_WEIGHTS[i / 2] * pair;
        }
    }
    (kronrod * h, (kronrod - gauss).abs() * h)
}

/// Adaptive integration of `f` over [a, b], pre-splitting at `breaks` and
/// then bisecting the segment with the largest error estimate.
fn adaptive_quad(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    breaks: &[f64],
    abs_tol: f64,
    max_segments: usize,
) -> Result<f64> {
    if b <= a {
        return Ok(0.0);
    }
    let mut edges: Vec<f64> = vec![a, b];
    edges.extend(breaks.iter().copied().filter(|x| *x > a && *x < b));
    edges.sort_by(|x, y| x.partial_cmp(y).unwrap());
    edges.dedup();
    let mut segments: Vec<(f64, f64, f64, f64)> = Vec::new();
    for pair in edges.windows(2) {
        let (integral, err) = gk15(f, pair[0], pair[1]);
        segments.push((pair[0], pair[1], integral, err));
    }
    loop {
        let total_err: f64 = segments.iter().map(|s| s.3).sum();
        if total_err <= abs_tol {
            return Ok(segments.iter().map(|s| s.2).sum());
        }
        if segments.len() >= max_segments {
            return Err(ScoreError::QuadratureNoConvergence {
                tol: abs_tol,
                err: total_err,
                segments: segments.len(),
            });
        }
        let worst_idx = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.partial_cmp(&y.1 .3).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let (lo, hi, _, _) = segments.swap_remove(worst_idx);
        let mid = 0.5 * (lo + hi);
        let (i1, e1) = gk15(f, lo, mid);
        let (i2, e2) = gk15(f, mid, hi);
        segments.push((lo, mid, i1, e1));
        segments.push((mid, hi, i2, e2));
    }
}

/// Direct numerical evaluation of the CRPS integral, optionally restricted
/// to x > w.threshold. This is the independent oracle for the closed forms
/// and sample estimators above.
pub fn crps_quadrature(d: &Distribution, y: f64, w: Option<&WeightSpec>) -> Result<f64> {
    let (mut lo, mut hi) = d.support_hint();
    lo = lo.min(y - 1e-9);
    hi = hi.max(y + 1e-9);
    if let Some(w) = w {
        if w.threshold >= hi {
            return Ok(0.0);
        }
        lo = lo.max(w.threshold);
    }
    let mut breaks = d.kink_points();
    breaks.push(y);
    let f = |x: f64| {
        let step = if y <= x { 1.0 } else { 0.0 };
        let diff = d.cdf(x) - step;
        diff * diff
    };
    adaptive_quad(&f, lo, hi, &breaks, 1e-8, 4096)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::NormalMixture;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn tn(mu: f64, sigma: f64) -> TruncatedNormal {
        TruncatedNormal::new(mu, sigma, 0.0).unwrap()
    }

    #[test]
    fn log_score_reference_values() {
        let d = Distribution::normal(0.0, 1.0).unwrap();
        let ls = log_score(&d, 0.0).unwrap();
        assert!((ls - 0.9189385332046727).abs() < 1e-12);
        // Density floor: far-tail observation caps near 690.8.
        let capped = log_score(&d, 1e6).unwrap();
        assert!((capped - 690.7755).abs() < 0.01);
        assert!(log_score(&Distribution::ensemble(vec![1.0]).unwrap(), 0.5).is_err());
    }

    #[test]
    fn censored_likelihood_matches_pieces() {
        let d = Distribution::normal(0.0, 1.0).unwrap();
        let w = WeightSpec::new(1.0);
        assert_eq!(
            censored_likelihood_score(&d, 1.7, &w).unwrap(),
            log_score(&d, 1.7).unwrap()
        );
        // Below threshold: -log F(t), with F(t) = 0.9 via the quantile.
        let t = crate::special::norm_quantile(0.9);
        let w = WeightSpec::new(t);
        let got = censored_likelihood_score(&d, 0.0, &w).unwrap();
        assert!((got - 0.10536051565782628).abs() < 1e-12);
    }

    #[test]
    fn censored_likelihood_propriety_monte_carlo() {
        // Truth N(0,1) vs candidate N(1,1): the truth must win in
        // expectation; paired differences give the Monte Carlo error.
        let truth = Distribution::normal(0.0, 1.0).unwrap();
        let wrong = Distribution::normal(1.0, 1.0).unwrap();
        let w = WeightSpec::new(0.5);
        let mut rng = StdRng::seed_from_u64(31);
        let n = 1_000_000;
        let mut diff_sum = 0.0;
        let mut diff_sq = 0.0;
        for _ in 0..n {
            let y = truth.sample_one(&mut rng);
            let d = censored_likelihood_score(&wrong, y, &w).unwrap()
                - censored_likelihood_score(&truth, y, &w).unwrap();
            diff_sum += d;
            diff_sq += d * d;
        }
        let mean = diff_sum / n as f64;
        let se = ((diff_sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(mean > 3.0 * se, "truth should win: mean diff {mean}, se {se}");
    }

    #[test]
    fn crps_closed_normal_anchor() {
        // CRPS(N(0,1), 0) = 2 phi(0) - 1/sqrt(pi).
        let d = TruncatedNormal::normal(0.0, 1.0).unwrap();
        let want = 2.0 * crate::special::norm_pdf(0.0) - FRAC_1_SQRT_PI;
        assert!((crps_closed_tn(&d, 0.0) - want).abs() < 1e-14);
        assert!((want - 0.23369497725510928).abs() < 1e-12);
    }

    #[test]
    fn crps_point_mass_limit() {
        let d = TruncatedNormal::new(5.0, 1e-6, 0.0).unwrap();
        assert!((crps_closed_tn(&d, 3.0) - 2.0).abs() < 1e-5);
        let q = crps_quadrature(&Distribution::TruncNormal(d), 3.0, None).unwrap();
        assert!((q - 2.0).abs() < 1e-5);
    }

    #[test]
    fn heavily_truncated_branch_is_stable_and_exact() {
        // Deep-truncation parameters where the naive 1/p^2 form loses all
        // precision; the stable branch must still match quadrature.
        for &(mu, sigma, y) in &[
            (-3.0, 1.0, 1.0),
            (-10.85, 0.5, 0.3),
            (-8.0, 2.0, 5.0),
            (-4.0, 0.8, 0.05),
        ] {
            let d = TruncatedNormal::new(mu, sigma, 0.0).unwrap();
            let closed = crps_closed_tn(&d, y);
            let quad = crps_quadrature(&Distribution::TruncNormal(d), y, None).unwrap();
            assert!(
                (closed - quad).abs() < 1e-6,
                "mu={mu} sigma={sigma}: closed {closed} quad {quad}"
            );
            assert!(closed >= 0.0);
            let w = WeightSpec::new(0.2);
            let tw = twcrps_closed_tn(&d, y, &w);
            let twq = crps_quadrature(&Distribution::TruncNormal(d), y, Some(&w)).unwrap();
            assert!((tw - twq).abs() < 1e-6, "tw {tw} vs {twq}");
        }
        // Point-mass floor: all mass below the truncation point.
        let d = TruncatedNormal::new(-60.0, 1.0, 0.0).unwrap();
        assert_eq!(crps_closed_tn(&d, 2.5), 2.5);
    }

    #[test]
    fn crps_closed_matches_quadrature_on_grid() {
        let mus = [-3.0, -0.5, 0.0, 0.8, 2.0, 4.0];
        let sigmas = [0.4, 1.0, 2.5, 5.0];
        let ys = [0.0, 0.3, 1.5, 4.0, 8.0];
        for &mu in &mus {
            for &sigma in &sigmas {
                for &y in &ys {
                    let d = tn(mu, sigma);
                    let closed = crps_closed_tn(&d, y);
                    let quad = crps_quadrature(&Distribution::TruncNormal(d), y, None).unwrap();
                    assert!(
                        (closed - quad).abs() < 1e-6,
                        "mu={mu} sigma={sigma} y={y}: closed {closed} quad {quad}"
                    );
                }
            }
        }
    }

    #[test]
    fn twcrps_closed_matches_quadrature_on_grid() {
        let cases = [
            (0.0, 1.0, 1.5, 1.0),
            (0.8, 0.6, 0.2, 1.0),
            (2.0, 2.0, 5.0, 3.0),
            (1.0, 1.0, 1.5, -1.0), // threshold below the truncation point
            (0.5, 1.2, 0.4, 2.0),
            (3.0, 0.7, 3.2, 2.8),
        ];
        for &(mu, sigma, y, t) in &cases {
            let d = tn(mu, sigma);
            let w = WeightSpec::new(t);
            let closed = twcrps_closed_tn(&d, y, &w);
            let quad = crps_quadrature(&Distribution::TruncNormal(d), y, Some(&w)).unwrap();
            assert!(
                (closed - quad).abs() < 1e-6,
                "mu={mu} sigma={sigma} y={y} t={t}: closed {closed} quad {quad}"
            );
        }
    }

    #[test]
    fn twcrps_limits() {
        let d = tn(1.0, 1.0);
        let w = WeightSpec::new(-5.0);
        assert!((twcrps_closed_tn(&d, 1.5, &w) - crps_closed_tn(&d, 1.5)).abs() < 1e-10);
        let w = WeightSpec::new(1e6);
        assert!(twcrps_closed_tn(&d, 1.5, &w).abs() < 1e-12);
    }

    #[test]
    fn crps_sample_hand_values() {
        let e = EnsembleForecast::new(vec![2.0]).unwrap();
        assert!((crps_sample(&e, 5.0) - 3.0).abs() < 1e-14);
        let e = EnsembleForecast::new(vec![1.0, 3.0]).unwrap();
        assert!((crps_sample(&e, 2.0) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn crps_sample_converges_to_closed_form() {
        let d = tn(0.0, 1.0);
        let mut rng = StdRng::seed_from_u64(12);
        let draws = Distribution::TruncNormal(d).sample(&mut rng, 500);
        let e = EnsembleForecast::new(draws).unwrap();
        let sample = crps_sample(&e, 1.0);
        let closed = crps_closed_tn(&d, 1.0);
        assert!((sample - closed).abs() < 0.02, "sample {sample} closed {closed}");
    }

    #[test]
    fn twcrps_sample_hand_values() {
        let e = EnsembleForecast::new(vec![1.0, 3.0]).unwrap();
        let w = WeightSpec::new(2.5);
        assert!((twcrps_sample(&e, 2.0, &w) - 0.125).abs() < 1e-14);
        let w_low = WeightSpec::new(-10.0);
        assert!((twcrps_sample(&e, 2.0, &w_low) - crps_sample(&e, 2.0)).abs() < 1e-14);
        let w_high = WeightSpec::new(10.0);
        assert!(twcrps_sample(&e, 2.0, &w_high).abs() < 1e-14);
    }

    #[test]
    fn fair_crps_hand_values() {
        let e = EnsembleForecast::new(vec![1.0, 3.0]).unwrap();
        assert!(fair_crps(&e, 2.0).unwrap().abs() < 1e-14);
        // Zero-spread ensemble: |c - y| regardless of M.
        let e = EnsembleForecast::new(vec![4.0; 5]).unwrap();
        assert!((fair_crps(&e, 1.5).unwrap() - 2.5).abs() < 1e-14);
        assert!(matches!(
            fair_crps(&EnsembleForecast::new(vec![1.0]).unwrap(), 0.0),
            Err(ScoreError::TooFewMembers(1))
        ));
        let w = WeightSpec::new(2.5);
        let e = EnsembleForecast::new(vec![1.0, 3.0]).unwrap();
        assert!(fair_twcrps(&e, 2.0, &w).unwrap().abs() < 1e-14);
        let w_low = WeightSpec::new(-9.0);
        assert!(
            (fair_twcrps(&e, 2.0, &w_low).unwrap() - fair_crps(&e, 2.0).unwrap()).abs() < 1e-14
        );
    }

    #[test]
    fn fair_crps_unbiasedness_monte_carlo() {
        // Mean fair CRPS of M=2 ensembles from N(0,1) at y = 0.7 equals the
        // population CRPS within the spec bound 0.01.
        let d = TruncatedNormal::normal(0.0, 1.0).unwrap();
        let target = crps_closed_tn(&d, 0.7);
        let dist = Distribution::TruncNormal(d);
        let mut rng = StdRng::seed_from_u64(5);
        let reps = 100_000;
        let mut total = 0.0;
        for _ in 0..reps {
            let e = EnsembleForecast::new(dist.sample(&mut rng, 2)).unwrap();
            total += fair_crps(&e, 0.7).unwrap();
        }
        let mean = total / reps as f64;
        assert!((mean - target).abs() < 0.01, "mean {mean} target {target}");
    }

    #[test]
    fn fair_twcrps_unbiasedness_monte_carlo() {
        let d = Distribution::normal(0.0, 1.0).unwrap();
        let w = WeightSpec::new(1.0);
        let target = crps_quadrature(&d, 1.4, Some(&w)).unwrap();
        let mut rng = StdRng::seed_from_u64(6);
        let reps = 100_000;
        let mut total = 0.0;
        for _ in 0..reps {
            let e = EnsembleForecast::new(d.sample(&mut rng, 2)).unwrap();
            total += fair_twcrps(&e, 1.4, &w).unwrap();
        }
        let mean = total / reps as f64;
        assert!((mean - target).abs() < 0.01, "mean {mean} target {target}");
    }

    #[test]
    fn sample_crps_never_below_fair() {
        let mut rng = StdRng::seed_from_u64(77);
        for _ in 0..50 {
            let m = rng.gen_range(2..20);
            let members: Vec<f64> = (0..m).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let y = rng.gen_range(-6.0..6.0);
            let e = EnsembleForecast::new(members).unwrap();
            assert!(crps_sample(&e, y) >= fair_crps(&e, y).unwrap() - 1e-12);
        }
    }

    #[test]
    fn quadrature_handles_mixtures_and_ensembles() {
        // Mixture CRPS against the Gaussian-mixture closed form
        // (Grimit et al.): sum_i w_i A(y - m_i, s_i^2)
        //   - 0.5 sum_ij w_i w_j A(m_i - m_j, s_i^2 + s_j^2),
        // with A(m, s2) = m (2 Phi(m/s) - 1) + 2 s phi(m/s).
        let a = |m: f64, s2: f64| {
            let s = s2.sqrt();
            m * (2.0 * crate::special::norm_cdf(m / s) - 1.0)
                + 2.0 * s * crate::special::norm_pdf(m / s)
        };
        let mix = NormalMixture::half_half(0.0, 2.0, 1.0).unwrap();
        let y = 0.7;
        let closed = 0.5 * a(y, 1.0) + 0.5 * a(y - 2.0, 1.0)
            - 0.5
                * (0.25 * a(0.0, 2.0)
                    + 0.25 * a(-2.0, 2.0)
                    + 0.25 * a(2.0, 2.0)
                    + 0.25 * a(0.0, 2.0));
        let quad = crps_quadrature(&Distribution::Mixture(mix), y, None).unwrap();
        assert!((closed - quad).abs() < 1e-7, "closed {closed} quad {quad}");

        // Ensemble: quadrature of the step cdf equals the sample formula.
        let e = EnsembleForecast::new(vec![0.2, 1.0, 2.5]).unwrap();
        let direct = crps_sample(&e, 1.4);
        let quad = crps_quadrature(&Distribution::Ensemble(e), 1.4, None).unwrap();
        assert!((direct - quad).abs() < 1e-8);
    }

    #[test]
    fn weighted_quadrature_with_unit_weight_equals_unweighted() {
        let d = Distribution::trunc_normal(1.0, 1.0, 0.0).unwrap();
        let w = WeightSpec::new(-1e3);
        let a = crps_quadrature(&d, 1.3, Some(&w)).unwrap();
        let b = crps_quadrature(&d, 1.3, None).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn crps_gradients_match_finite_differences() {
        let h = 1e-6;
        for &(mu, sigma, lower, y) in &[
            (1.2, 0.8, 0.0, 1.9),
            (0.3, 1.5, 0.0, 0.7),
            (2.0, 0.5, f64::NEG_INFINITY, 1.0),
        ] {
            let (v, dmu, dls) = crps_tn_grad(mu, sigma, lower, y);
            assert!((v - crps_tn_generic(mu, sigma, lower, y)).abs() < 1e-14);
            let fd_mu = (crps_tn_generic(mu + h, sigma, lower, y)
                - crps_tn_generic(mu - h, sigma, lower, y))
                / (2.0 * h);
            // log-sigma steps: sigma * exp(+-h)
            let fd_ls = (crps_tn_generic(mu, sigma * h.exp(), lower, y)
                - crps_tn_generic(mu, sigma * (-h).exp(), lower, y))
                / (2.0 * h);
            assert!((dmu - fd_mu).abs() < 1e-5 * (1.0 + fd_mu.abs()), "dmu {dmu} fd {fd_mu}");
            assert!((dls - fd_ls).abs() < 1e-5 * (1.0 + fd_ls.abs()), "dls {dls} fd {fd_ls}");
        }
    }

    #[test]
    fn score_gradients_match_finite_differences() {
        let h = 1e-6;
        let (mu, sigma, lower) = (1.1, 0.9, 0.0);
        for &(y, t) in &[(1.8, 1.2), (0.4, 1.2), (2.4, 3.0)] {
            let (_, dmu, dls) = twcrps_tn_grad(mu, sigma, lower, y, t);
            let f = |m: f64, s: f64| twcrps_tn_generic(m, s, lower, y, t);
            let fd_mu = (f(mu + h, sigma) - f(mu - h, sigma)) / (2.0 * h);
            let fd_ls = (f(mu, sigma * h.exp()) - f(mu, sigma * (-h).exp())) / (2.0 * h);
            assert!((dmu - fd_mu).abs() < 1e-5 * (1.0 + fd_mu.abs()));
            assert!((dls - fd_ls).abs() < 1e-5 * (1.0 + fd_ls.abs()));

            let (_, dmu, dls) = tn_cls_grad(mu, sigma, lower, y, t);
            let f = |m: f64, s: f64| {
                if y > t {
                    tn_log_score_generic(m, s, lower, y)
                } else {
                    -tn_cdf_generic(m, s, lower, t).ln()
                }
            };
            let fd_mu = (f(mu + h, sigma) - f(mu - h, sigma)) / (2.0 * h);
            let fd_ls = (f(mu, sigma * h.exp()) - f(mu, sigma * (-h).exp())) / (2.0 * h);
            assert!((dmu - fd_mu).abs() < 1e-5 * (1.0 + fd_mu.abs()));
            assert!((dls - fd_ls).abs() < 1e-5 * (1.0 + fd_ls.abs()));

            let (v, dmu, dls) = tn_cdf_grad(mu, sigma, lower, y);
            assert!((v - tn_cdf_generic(mu, sigma, lower, y)).abs() < 1e-14);
            let f = |m: f64, s: f64| tn_cdf_generic(m, s, lower, y);
            let fd_mu = (f(mu + h, sigma) - f(mu - h, sigma)) / (2.0 * h);
            let fd_ls = (f(mu, sigma * h.exp()) - f(mu, sigma * (-h).exp())) / (2.0 * h);
            assert!((dmu - fd_mu).abs() < 1e-6);
            assert!((dls - fd_ls).abs() < 1e-6);
        }
    }
}
