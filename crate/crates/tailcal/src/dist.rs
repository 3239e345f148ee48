//! Predictive distributions used as forecasts.
//!
//! Five concrete families (truncated normal, normal mixtures, the
//! piecewise-scale normal, ensembles, and two-forecast blends) plus two
//! derived forms: the excess distribution above a threshold and a
//! truncated-normal body spliced with a generalized-Pareto upper tail
//! (the synthetic-data truth when tail misspecification is switched on).
//!
//! All values are immutable after construction; `sample` takes a
//! caller-owned generator so parallel workers use independent streams.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::special::{norm_cdf, norm_pdf, norm_quantile, norm_sf};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("invalid distribution parameter: {0}")]
    InvalidParameter(String),
    #[error("operation not supported for {0}")]
    Unsupported(&'static str),
    #[error("probability {0} outside (0, 1)")]
    ProbabilityOutOfRange(f64),
}

pub type Result<T> = std::result::Result<T, DistError>;

/// Inverse survival function of the standard normal, accurate in both tails.
fn norm_isf(q: f64) -> f64 {
    -norm_quantile(q)
}

// ---------------------------------------------------------------------------
// Truncated normal
// ---------------------------------------------------------------------------

/// Normal distribution left-truncated at `lower` (`f64::NEG_INFINITY` gives
/// the plain normal). Scale below 1e-8 is rejected at construction; model
/// links parameterize log sigma so this only triggers on pathological input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedNormal {
    mu: f64,
    sigma: f64,
    lower: f64,
    /// Mass of the untruncated normal above `lower`, cached at construction.
    #[serde(skip, default = "one")]
    norm_mass: f64,
}

fn one() -> f64 {
    1.0
}

impl TruncatedNormal {
    pub fn new(mu: f64, sigma: f64, lower: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(DistError::InvalidParameter(format!("mu not finite: {mu}")));
        }
        if !(sigma >= 1e-8) || !sigma.is_finite() {
            return Err(DistError::InvalidParameter(format!(
                "sigma must be finite and >= 1e-8, got {sigma}"
            )));
        }
        if lower.is_nan() || lower == f64::INFINITY {
            return Err(DistError::InvalidParameter(format!("bad lower bound {lower}")));
        }
        let norm_mass = if lower == f64::NEG_INFINITY {
            1.0
        } else {
            norm_sf((lower - mu) / sigma)
        };
        // A vanishing mass above the truncation point degenerates to a
        // point mass at `lower`; cdf/pdf/quantile handle that limit, so
        // construction stays total for finite parameters (optimizers do
        // wander out there).
        Ok(Self { mu, sigma, lower, norm_mass })
    }

    /// Untruncated normal as the `lower = -inf` special case.
    pub fn normal(mu: f64, sigma: f64) -> Result<Self> {
        Self::new(mu, sigma, f64::NEG_INFINITY)
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn lower(&self) -> f64 {
        self.lower
    }
    /// P(X > lower) under the untruncated normal.
    pub fn norm_mass(&self) -> f64 {
        self.norm_mass
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lower {
            return 0.0;
        }
        if self.norm_mass < 1e-12 {
            // Numerically a point mass at the truncation point.
            return 1.0;
        }
        let z = (x - self.mu) / self.sigma;
        // 1 - sf(z)/mass is stable where it matters (upper tail).
        (1.0 - norm_sf(z) / self.norm_mass).clamp(0.0, 1.0)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < self.lower || self.norm_mass < 1e-12 {
            return 0.0;
        }
        let z = (x - self.mu) / self.sigma;
        norm_pdf(z) / (self.sigma * self.norm_mass)
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(DistError::ProbabilityOutOfRange(p));
        }
        if self.norm_mass < 1e-12 {
            return Ok(self.lower);
        }
        let q = (1.0 - p) * self.norm_mass;
        Ok(self.mu + self.sigma * norm_isf(q.max(f64::MIN_POSITIVE)))
    }

    pub fn mean(&self) -> f64 {
        if self.lower == f64::NEG_INFINITY {
            return self.mu;
        }
        let alpha = (self.lower - self.mu) / self.sigma;
        self.mu + self.sigma * norm_pdf(alpha) / self.norm_mass
    }
}

// ---------------------------------------------------------------------------
// Normal mixture
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub sd: f64,
}

/// Finite mixture of normals with weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalMixture {
    components: Vec<MixtureComponent>,
}

impl NormalMixture {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(DistError::InvalidParameter("mixture needs >= 1 component".into()));
        }
        let mut total = 0.0;
        for c in &components {
            if !(c.weight >= 0.0) || !c.weight.is_finite() {
                return Err(DistError::InvalidParameter(format!("bad weight {}", c.weight)));
            }
            if !(c.sd > 0.0) || !c.sd.is_finite() || !c.mean.is_finite() {
                return Err(DistError::InvalidParameter(format!(
                    "bad component (mean={}, sd={})",
                    c.mean, c.sd
                )));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(DistError::InvalidParameter(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { components })
    }

    /// Single-component mixture, i.e. a plain normal.
    pub fn normal(mean: f64, sd: f64) -> Result<Self> {
        Self::new(vec![MixtureComponent { weight: 1.0, mean, sd }])
    }

    /// Equal-weight two-component mixture.
    pub fn half_half(mean1: f64, mean2: f64, sd: f64) -> Result<Self> {
        Self::new(vec![
            MixtureComponent { weight: 0.5, mean: mean1, sd },
            MixtureComponent { weight: 0.5, mean: mean2, sd },
        ])
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * norm_cdf((x - c.mean) / c.sd))
            .sum()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * norm_pdf((x - c.mean) / c.sd) / c.sd)
            .sum()
    }

    fn bounds(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for c in &self.components {
            lo = lo.min(c.mean - 40.0 * c.sd);
            hi = hi.max(c.mean + 40.0 * c.sd);
        }
        (lo, hi)
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(DistError::ProbabilityOutOfRange(p));
        }
        let (lo, hi) = self.bounds();
        Ok(invert_cdf(|x| self.cdf(x), lo, hi, p))
    }
}

/// Bisect a nondecreasing cdf to F(x) = p, then polish with bisection to
/// near machine width. The bracket must contain the solution.
fn invert_cdf(cdf: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, p: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

// ---------------------------------------------------------------------------
// Piecewise-scale normal
// ---------------------------------------------------------------------------

/// Location-family distribution whose scale differs below and above zero:
/// cdf(x) = Phi((x - mu)/inner) for x >= 0 and Phi((x - mu)/outer) for x < 0.
///
/// For mu > 0 the two branches overlap and the "cdf" jumps downward at zero,
/// so it is not a valid distribution function; it is kept exactly as written
/// because the mixture-estimation study depends on this behavior. The
/// density is the branchwise derivative and is not renormalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseScaleNormal {
    mu: f64,
    inner_scale: f64,
    outer_scale: f64,
}

impl PiecewiseScaleNormal {
    /// The study's configuration: scale 1 at and above zero, 2 below.
    pub fn new(mu: f64) -> Result<Self> {
        Self::with_scales(mu, 1.0, 2.0)
    }

    pub fn with_scales(mu: f64, inner_scale: f64, outer_scale: f64) -> Result<Self> {
        if !mu.is_finite() || !(inner_scale > 0.0) || !(outer_scale > 0.0) {
            return Err(DistError::InvalidParameter(format!(
                "bad piecewise parameters (mu={mu}, inner={inner_scale}, outer={outer_scale})"
            )));
        }
        Ok(Self { mu, inner_scale, outer_scale })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x >= 0.0 {
            norm_cdf((x - self.mu) / self.inner_scale)
        } else {
            norm_cdf((x - self.mu) / self.outer_scale)
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x >= 0.0 {
            norm_pdf((x - self.mu) / self.inner_scale) / self.inner_scale
        } else {
            norm_pdf((x - self.mu) / self.outer_scale) / self.outer_scale
        }
    }

    /// Generalized inverse inf{x : cdf(x) >= p}. Exact inverse on the
    /// branches; returns 0 in the jump gap that opens for mu < 0.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(DistError::ProbabilityOutOfRange(p));
        }
        let z = norm_quantile(p);
        let below = self.mu + self.outer_scale * z;
        if below < 0.0 {
            return Ok(below);
        }
        let above = self.mu + self.inner_scale * z;
        if above >= 0.0 {
            return Ok(above);
        }
        Ok(0.0)
    }
}

// ---------------------------------------------------------------------------
// Ensemble forecast
// ---------------------------------------------------------------------------

/// Empirical distribution of a forecast sample; members are kept sorted so
/// cdf evaluation is a binary search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleForecast {
    members: Vec<f64>,
}

impl EnsembleForecast {
    pub fn new(mut members: Vec<f64>) -> Result<Self> {
        if members.is_empty() {
            return Err(DistError::InvalidParameter("ensemble needs >= 1 member".into()));
        }
        if members.iter().any(|m| !m.is_finite()) {
            return Err(DistError::InvalidParameter("non-finite ensemble member".into()));
        }
        members.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(Self { members })
    }

    pub fn members(&self) -> &[f64] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let below = self.members.partition_point(|m| *m <= x);
        below as f64 / self.members.len() as f64
    }

    /// (# members < y, # members == y)
    pub fn rank_counts(&self, y: f64) -> (usize, usize) {
        let strictly_below = self.members.partition_point(|m| *m < y);
        let at_or_below = self.members.partition_point(|m| *m <= y);
        (strictly_below, at_or_below - strictly_below)
    }
}

// ---------------------------------------------------------------------------
// Two-forecast blend
// ---------------------------------------------------------------------------

/// Convex combination a·F1 + (1-a)·F2 of two forecasts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureOfForecasts {
    pub a: f64,
    pub first: Box<Distribution>,
    pub second: Box<Distribution>,
}

impl MixtureOfForecasts {
    pub fn new(a: f64, first: Distribution, second: Distribution) -> Result<Self> {
        if !(0.0..=1.0).contains(&a) {
            return Err(DistError::InvalidParameter(format!("mixing weight {a} outside [0,1]")));
        }
        Ok(Self { a, first: Box::new(first), second: Box::new(second) })
    }
}

// ---------------------------------------------------------------------------
// Excess distribution
// ---------------------------------------------------------------------------

/// Forecast distribution conditioned on exceeding a threshold, rescaled to
/// [0, 1]: F_t(x) = (F(x) - F(t)) / (1 - F(t)) for x >= t, zero below, and
/// identically one when F(t) = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcessDistribution {
    pub base: Box<Distribution>,
    pub threshold: f64,
    cdf_at_t: f64,
}

impl ExcessDistribution {
    fn new(base: Distribution, threshold: f64) -> Self {
        let cdf_at_t = base.cdf(threshold);
        Self { base: Box::new(base), threshold, cdf_at_t }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if self.cdf_at_t >= 1.0 {
            return 1.0;
        }
        if x < self.threshold {
            return 0.0;
        }
        ((self.base.cdf(x) - self.cdf_at_t) / (1.0 - self.cdf_at_t)).clamp(0.0, 1.0)
    }

    pub fn pdf(&self, x: f64) -> Result<f64> {
        if self.cdf_at_t >= 1.0 || x < self.threshold {
            return Ok(0.0);
        }
        Ok(self.base.pdf(x)? / (1.0 - self.cdf_at_t))
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(DistError::ProbabilityOutOfRange(p));
        }
        if self.cdf_at_t >= 1.0 {
            return Ok(self.threshold);
        }
        self.base.quantile(self.cdf_at_t + p * (1.0 - self.cdf_at_t))
    }
}

// ---------------------------------------------------------------------------
// Truncated-normal body with generalized-Pareto upper tail
// ---------------------------------------------------------------------------

/// Valid distribution equal to a truncated normal below its `split_q`
/// quantile and a generalized-Pareto excess above it. With `shape > 0` the
/// upper tail is heavier than any normal tail, which is what makes
/// normal-family fits tail-miscalibrated on synthetic data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplicedGpdTail {
    body: TruncatedNormal,
    split_q: f64,
    shape: f64,
    scale: f64,
    split_x: f64,
}

impl SplicedGpdTail {
    pub fn new(body: TruncatedNormal, split_q: f64, shape: f64, scale: f64) -> Result<Self> {
        if !(split_q > 0.0 && split_q < 1.0) {
            return Err(DistError::InvalidParameter(format!("split_q {split_q} outside (0,1)")));
        }
        if !(scale > 0.0) || !shape.is_finite() || shape < 0.0 {
            return Err(DistError::InvalidParameter(format!(
                "bad tail parameters (shape={shape}, scale={scale})"
            )));
        }
        let split_x = body.quantile(split_q)?;
        Ok(Self { body, split_q, shape, scale, split_x })
    }

    pub fn body(&self) -> &TruncatedNormal {
        self.body_ref()
    }
    fn body_ref(&self) -> &TruncatedNormal {
        &self.body
    }
    pub fn split_x(&self) -> f64 {
        self.split_x
    }

    fn gp_cdf(&self, z: f64) -> f64 {
        if z <= 0.0 {
            return 0.0;
        }
        if self.shape == 0.0 {
            1.0 - (-z / self.scale).exp()
        } else {
            1.0 - (1.0 + self.shape * z / self.scale).powf(-1.0 / self.shape)
        }
    }

    fn gp_pdf(&self, z: f64) -> f64 {
        if z < 0.0 {
            return 0.0;
        }
        if self.shape == 0.0 {
            (-z / self.scale).exp() / self.scale
        } else {
            (1.0 + self.shape * z / self.scale).powf(-1.0 / self.shape - 1.0) / self.scale
        }
    }

    fn gp_quantile(&self, u: f64) -> f64 {
        if self.shape == 0.0 {
            -self.scale * (1.0 - u).ln()
        } else {
            self.scale / self.shape * ((1.0 - u).powf(-self.shape) - 1.0)
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.split_x {
            self.body.cdf(x)
        } else {
            self.split_q + (1.0 - self.split_q) * self.gp_cdf(x - self.split_x)
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x <= self.split_x {
            self.body.pdf(x)
        } else {
            (1.0 - self.split_q) * self.gp_pdf(x - self.split_x)
        }
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(DistError::ProbabilityOutOfRange(p));
        }
        if p <= self.split_q {
            self.body.quantile(p)
        } else {
            Ok(self.split_x + self.gp_quantile((p - self.split_q) / (1.0 - self.split_q)))
        }
    }
}

// ---------------------------------------------------------------------------
// Distribution enum
// ---------------------------------------------------------------------------

/// A predictive distribution exposing cdf/pdf/quantile/sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Distribution {
    TruncNormal(TruncatedNormal),
    Mixture(NormalMixture),
    Piecewise(PiecewiseScaleNormal),
    Ensemble(EnsembleForecast),
    Blend(MixtureOfForecasts),
    Excess(ExcessDistribution),
    SplicedTail(SplicedGpdTail),
}

impl Distribution {
    pub fn trunc_normal(mu: f64, sigma: f64, lower: f64) -> Result<Self> {
        Ok(Self::TruncNormal(TruncatedNormal::new(mu, sigma, lower)?))
    }

    pub fn normal(mu: f64, sigma: f64) -> Result<Self> {
        Ok(Self::TruncNormal(TruncatedNormal::normal(mu, sigma)?))
    }

    pub fn ensemble(members: Vec<f64>) -> Result<Self> {
        Ok(Self::Ensemble(EnsembleForecast::new(members)?))
    }

    pub fn is_continuous(&self) -> bool {
        match self {
            Distribution::Ensemble(_) => false,
            Distribution::Blend(b) => b.first.is_continuous() && b.second.is_continuous(),
            Distribution::Excess(e) => e.base.is_continuous(),
            _ => true,
        }
    }

    /// Cumulative distribution function; total over the reals.
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Distribution::TruncNormal(d) => d.cdf(x),
            Distribution::Mixture(d) => d.cdf(x),
            Distribution::Piecewise(d) => d.cdf(x),
            Distribution::Ensemble(d) => d.cdf(x),
            Distribution::Blend(b) => b.a * b.first.cdf(x) + (1.0 - b.a) * b.second.cdf(x),
            Distribution::Excess(e) => e.cdf(x),
            Distribution::SplicedTail(d) => d.cdf(x),
        }
    }

    /// Probability density; errors for sample-backed distributions.
    pub fn pdf(&self, x: f64) -> Result<f64> {
        match self {
            Distribution::TruncNormal(d) => Ok(d.pdf(x)),
            Distribution::Mixture(d) => Ok(d.pdf(x)),
            Distribution::Piecewise(d) => Ok(d.pdf(x)),
            Distribution::Ensemble(_) => Err(DistError::Unsupported("ensemble pdf")),
            Distribution::Blend(b) => {
                Ok(b.a * b.first.pdf(x)? + (1.0 - b.a) * b.second.pdf(x)?)
            }
            Distribution::Excess(e) => e.pdf(x),
            Distribution::SplicedTail(d) => Ok(d.pdf(x)),
        }
    }

    /// Quantile function on (0, 1); errors for sample-backed distributions.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        match self {
            Distribution::TruncNormal(d) => d.quantile(p),
            Distribution::Mixture(d) => d.quantile(p),
            Distribution::Piecewise(d) => d.quantile(p),
            Distribution::Ensemble(_) => Err(DistError::Unsupported("ensemble quantile")),
            Distribution::Blend(b) => {
                if !(p > 0.0 && p < 1.0) {
                    return Err(DistError::ProbabilityOutOfRange(p));
                }
                if !self.is_continuous() {
                    return Err(DistError::Unsupported("quantile of sample-backed blend"));
                }
                let (lo0, hi0) = b.first.support_hint();
                let (lo1, hi1) = b.second.support_hint();
                Ok(invert_cdf(|x| self.cdf(x), lo0.min(lo1) - 1.0, hi0.max(hi1) + 1.0, p))
            }
            Distribution::Excess(e) => e.quantile(p),
            Distribution::SplicedTail(d) => d.quantile(p),
        }
    }

    /// Draw `n` values; deterministic given the generator state.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.sample_one(rng));
        }
        out
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Distribution::TruncNormal(d) => {
                let u = unit_open(rng);
                d.quantile(u).expect("u in (0,1)")
            }
            Distribution::Mixture(d) => {
                let mut pick = rng.gen::<f64>();
                let comps = d.components();
                let mut chosen = comps[comps.len() - 1];
                for c in comps {
                    if pick < c.weight {
                        chosen = *c;
                        break;
                    }
                    pick -= c.weight;
                }
                chosen.mean + chosen.sd * norm_quantile(unit_open(rng))
            }
            Distribution::Piecewise(d) => d.quantile(unit_open(rng)).expect("u in (0,1)"),
            Distribution::Ensemble(d) => {
                let idx = rng.gen_range(0..d.len());
                d.members()[idx]
            }
            Distribution::Blend(b) => {
                if rng.gen::<f64>() < b.a {
                    b.first.sample_one(rng)
                } else {
                    b.second.sample_one(rng)
                }
            }
            Distribution::Excess(e) => {
                if let Distribution::Ensemble(ens) = e.base.as_ref() {
                    let above: Vec<f64> = ens
                        .members()
                        .iter()
                        .copied()
                        .filter(|m| *m > e.threshold)
                        .collect();
                    if above.is_empty() {
                        return e.threshold;
                    }
                    return above[rng.gen_range(0..above.len())];
                }
                e.quantile(unit_open(rng)).expect("u in (0,1)")
            }
            Distribution::SplicedTail(d) => d.quantile(unit_open(rng)).expect("u in (0,1)"),
        }
    }

    /// Excess distribution above `t`; degenerates to the constant-one cdf
    /// when all mass sits at or below the threshold.
    pub fn excess(&self, t: f64) -> Distribution {
        Distribution::Excess(ExcessDistribution::new(self.clone(), t))
    }

    /// Rough [q(1e-10), q(1-1e-10)] bracket used to truncate integrals.
    pub fn support_hint(&self) -> (f64, f64) {
        const Z: f64 = 6.5; // |Phi^-1(1e-10)| ~ 6.36
        match self {
            Distribution::TruncNormal(d) => {
                let lo = if d.lower() == f64::NEG_INFINITY {
                    d.mu() - Z * d.sigma()
                } else {
                    d.lower()
                };
                (lo, d.quantile(1.0 - 1e-10).unwrap_or(d.mu() + Z * d.sigma()))
            }
            Distribution::Mixture(d) => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for c in d.components() {
                    lo = lo.min(c.mean - Z * c.sd);
                    hi = hi.max(c.mean + Z * c.sd);
                }
                (lo, hi)
            }
            Distribution::Piecewise(d) => {
                (
                    (d.mu - Z * d.outer_scale).min(0.0),
                    (d.mu + Z * d.inner_scale).max(0.0),
                )
            }
            Distribution::Ensemble(d) => {
                (d.members()[0], d.members()[d.len() - 1])
            }
            Distribution::Blend(b) => {
                let (lo0, hi0) = b.first.support_hint();
                let (lo1, hi1) = b.second.support_hint();
                (lo0.min(lo1), hi0.max(hi1))
            }
            Distribution::Excess(e) => {
                let (_, hi) = e.base.support_hint();
                (e.threshold, hi.max(e.threshold))
            }
            Distribution::SplicedTail(d) => {
                let (lo, _) = Distribution::TruncNormal(*d.body_ref()).support_hint();
                (lo, d.quantile(1.0 - 1e-10).unwrap_or(d.split_x + 100.0 * d.scale))
            }
        }
    }

    /// Points where the cdf (or its derivative) is discontinuous; quadrature
    /// splits intervals there.
    pub fn kink_points(&self) -> Vec<f64> {
        match self {
            Distribution::TruncNormal(d) => {
                if d.lower() == f64::NEG_INFINITY {
                    vec![]
                } else {
                    vec![d.lower()]
                }
            }
            Distribution::Mixture(_) => vec![],
            Distribution::Piecewise(_) => vec![0.0],
            Distribution::Ensemble(d) => d.members().to_vec(),
            Distribution::Blend(b) => {
                let mut v = b.first.kink_points();
                v.extend(b.second.kink_points());
                v
            }
            Distribution::Excess(e) => {
                let mut v = e.base.kink_points();
                v.push(e.threshold);
                v
            }
            Distribution::SplicedTail(d) => {
                let mut v = Distribution::TruncNormal(*d.body_ref()).kink_points();
                v.push(d.split_x);
                v
            }
        }
    }
}

fn unit_open<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.gen::<f64>().max(f64::MIN_POSITIVE)
}
