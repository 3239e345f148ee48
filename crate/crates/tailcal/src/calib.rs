//! Calibration and tail-calibration diagnostics.
//!
//! PIT and conditional-PIT values, the combined tail-calibration ratio
//! curve with its occurrence/severity decomposition, and the scalar
//! miscalibration measures (MCB, TMCB, CPIT-MCB) under a selectable
//! divergence. The step-function divergences are computed in closed form
//! (sums of triangle/trapezoid areas), and their adjoints with respect to
//! the step points and the occurrence ratio are exposed for gradient-based
//! training.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{DistError, Distribution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibError {
    #[error("empty PIT set")]
    EmptyPitSet,
    #[error("PIT value {0} outside [0, 1]")]
    InvalidPit(f64),
    #[error("sum of forecast exceedance probabilities above t={0} is zero")]
    DegenerateExceedance(f64),
    #[error("no observations exceed threshold {0}")]
    EmptyExceedanceSet(f64),
    #[error("conditional PIT requires y > t, got y={y}, t={t}")]
    BelowThreshold { y: f64, t: f64 },
    #[error(transparent)]
    Dist(#[from] DistError),
}

pub type Result<T> = std::result::Result<T, CalibError>;

/// One (forecast, observation) pair with its metadata; the unit of all
/// score and calibration computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastCase {
    pub forecast: Distribution,
    pub obs: f64,
    #[serde(default)]
    pub station_id: String,
    #[serde(default)]
    pub date: String,
}

impl ForecastCase {
    pub fn new(forecast: Distribution, obs: f64) -> Self {
        Self { forecast, obs, station_id: String::new(), date: String::new() }
    }
}

/// Which empirical transform a batch of [0,1] values came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PitKind {
    Unconditional,
    Conditional { threshold: f64 },
}

/// A batch of PIT (or conditional PIT) values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitSet {
    values: Vec<f64>,
    pub kind: PitKind,
}

impl PitSet {
    pub fn new(values: Vec<f64>, kind: PitKind) -> Result<Self> {
        if values.is_empty() {
            return Err(CalibError::EmptyPitSet);
        }
        for v in &values {
            if !(0.0..=1.0).contains(v) {
                return Err(CalibError::InvalidPit(*v));
            }
        }
        Ok(Self { values, kind })
    }

    pub fn unconditional(values: Vec<f64>) -> Result<Self> {
        Self::new(values, PitKind::Unconditional)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sorted(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }
}

/// Divergence between an empirical step curve and the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DivergenceKind {
    /// Exact Wasserstein-1 distance of the step curve to the diagonal.
    #[default]
    W1,
    /// The order-statistic estimator: mean |scale * z_(i) - i/n|.
    W1OrderStat,
    /// Integrated squared distance (Cramer).
    Cramer,
    /// Kolmogorov-Smirnov supremum distance.
    Ks,
}

// ---------------------------------------------------------------------------
// PIT / CPIT
// ---------------------------------------------------------------------------

/// Probability integral transform. Continuous forecasts evaluate the cdf;
/// ensembles use the randomized rank (r + V) / (M + 1) with V uniform on
/// {1, ..., s+1} over the s tied members, which is draw-free when there are
/// no ties.
pub fn pit<R: Rng + ?Sized>(d: &Distribution, y: f64, rng: &mut R) -> f64 {
    match d {
        Distribution::Ensemble(e) => {
            let (r, s) = e.rank_counts(y);
            let v = if s == 0 { 1 } else { rng.gen_range(1..=s + 1) };
            (r + v) as f64 / (e.len() + 1) as f64
        }
        _ => d.cdf(y),
    }
}

/// Conditional PIT: the excess-distribution cdf at `y`, defined for y > t.
/// Returns one when the forecast puts no mass above the threshold.
pub fn cpit(d: &Distribution, y: f64, t: f64) -> Result<f64> {
    if y <= t {
        return Err(CalibError::BelowThreshold { y, t });
    }
    let ft = d.cdf(t);
    if ft >= 1.0 {
        return Ok(1.0);
    }
    Ok(((d.cdf(y) - ft) / (1.0 - ft)).clamp(0.0, 1.0))
}

// ---------------------------------------------------------------------------
// Step-curve divergences
// ---------------------------------------------------------------------------

/// Integral of |c - u| over [a, b].
fn abs_seg(a: f64, b: f64, c: f64) -> f64 {
    if c <= a {
        ((b - c) * (b - c) - (a - c) * (a - c)) / 2.0
    } else if c >= b {
        ((c - a) * (c - a) - (c - b) * (c - b)) / 2.0
    } else {
        ((c - a) * (c - a) + (b - c) * (b - c)) / 2.0
    }
}

/// Integral of (c - u)^2 over [a, b].
fn sq_seg(a: f64, b: f64, c: f64) -> f64 {
    ((c - a).powi(3) - (c - b).powi(3)) / 3.0
}

/// Integral of sign(c - u) over [a, b].
fn sign_seg(a: f64, b: f64, c: f64) -> f64 {
    2.0 * c.clamp(a, b) - a - b
}

/// Divergence between the identity and the step curve that jumps by
/// `scale / n` at each of the sorted points (levels L_j = scale * j / n on
/// [z_(j), z_(j+1))). `scale = 1` gives an empirical cdf; `scale = ohat`
/// gives the tail-calibration ratio curve. An empty point set is the
/// all-zero curve.
pub fn step_divergence(sorted_points: &[f64], scale: f64, div: DivergenceKind) -> f64 {
    let n = sorted_points.len();
    if n == 0 {
        return match div {
            DivergenceKind::W1 | DivergenceKind::W1OrderStat => 0.5,
            DivergenceKind::Cramer => 1.0 / 3.0,
            DivergenceKind::Ks => 1.0,
        };
    }
    match div {
        DivergenceKind::W1OrderStat => {
            sorted_points
                .iter()
                .enumerate()
                .map(|(i, z)| (scale * z - (i + 1) as f64 / n as f64).abs())
                .sum::<f64>()
                / n as f64
        }
        _ => {
            let seg: fn(f64, f64, f64) -> f64 = match div {
                DivergenceKind::W1 => abs_seg,
                DivergenceKind::Cramer => sq_seg,
                DivergenceKind::Ks => |a, b, c| (c - a).abs().max((c - b).abs()),
                DivergenceKind::W1OrderStat => unreachable!(),
            };
            let mut total: f64 = 0.0;
            let mut prev = 0.0;
            for (j, z) in sorted_points.iter().enumerate() {
                let level = scale * j as f64 / n as f64;
                let v = seg(prev, *z, level);
                total = if div == DivergenceKind::Ks { total.max(v) } else { total + v };
                prev = *z;
            }
            let v = seg(prev, 1.0, scale);
            if div == DivergenceKind::Ks {
                total.max(v)
            } else {
                total + v
            }
        }
    }
}

/// `step_divergence` together with its adjoints: derivative with respect to
/// each sorted point and with respect to `scale`. The derivatives hold
/// almost everywhere; the KS variant routes a subgradient through the
/// attaining corner.
pub fn step_divergence_grads(
    sorted_points: &[f64],
    scale: f64,
    div: DivergenceKind,
) -> (f64, Vec<f64>, f64) {
    let n = sorted_points.len();
    let nf = n as f64;
    let mut d_points = vec![0.0; n];
    if n == 0 {
        return (step_divergence(sorted_points, scale, div), d_points, 0.0);
    }
    match div {
        DivergenceKind::W1OrderStat => {
            let mut total = 0.0;
            let mut d_scale = 0.0;
            for (i, z) in sorted_points.iter().enumerate() {
                let r = scale * z - (i + 1) as f64 / nf;
                total += r.abs();
                let s = r.signum();
                d_points[i] = s * scale / nf;
                d_scale += s * z / nf;
            }
            (total / nf, d_points, d_scale)
        }
        DivergenceKind::W1 => {
            let mut total = 0.0;
            let mut d_scale = 0.0;
            let mut prev = 0.0;
            for (j, z) in sorted_points.iter().enumerate() {
                let level = scale * j as f64 / nf;
                total += abs_seg(prev, *z, level);
                d_scale += j as f64 / nf * sign_seg(prev, *z, level);
                prev = *z;
            }
            total += abs_seg(prev, 1.0, scale);
            d_scale += sign_seg(prev, 1.0, scale);
            // z_(k) is the upper limit of the level-(k-1) segment and the
            // lower limit of the level-k segment.
            for k in 1..=n {
                let zk = sorted_points[k - 1];
                let level_left = scale * (k as f64 - 1.0) / nf;
                let level_right = scale * k as f64 / nf;
                d_points[k - 1] = (level_left - zk).abs() - (level_right - zk).abs();
            }
            (total, d_points, d_scale)
        }
        DivergenceKind::Cramer => {
            let mut total = 0.0;
            let mut d_scale = 0.0;
            let mut prev = 0.0;
            for (j, z) in sorted_points.iter().enumerate() {
                let level = scale * j as f64 / nf;
                total += sq_seg(prev, *z, level);
                d_scale +=
                    j as f64 / nf * ((level - prev) * (level - prev) - (level - z) * (level - z));
                prev = *z;
            }
            total += sq_seg(prev, 1.0, scale);
            d_scale += (scale - prev) * (scale - prev) - (scale - 1.0) * (scale - 1.0);
            for k in 1..=n {
                let zk = sorted_points[k - 1];
                let level_left = scale * (k as f64 - 1.0) / nf;
                let level_right = scale * k as f64 / nf;
                d_points[k - 1] =
                    (level_left - zk) * (level_left - zk) - (level_right - zk) * (level_right - zk);
            }
            (total, d_points, d_scale)
        }
        DivergenceKind::Ks => {
            let mut best = 0.0;
            let mut best_point: Option<(usize, f64)> = None;
            let mut best_scale_coeff = 0.0;
            let mut prev = 0.0;
            for j in 0..=n {
                let level = scale * j as f64 / nf;
                let hi = if j == n { 1.0 } else { sorted_points[j] };
                for (corner, is_left) in [(prev, true), (hi, false)] {
                    let v = (level - corner).abs();
                    if v > best {
                        best = v;
                        let sign = (level - corner).signum();
                        best_scale_coeff = sign * j as f64 / nf;
                        best_point = match (is_left, j) {
                            (true, 0) => None,
                            (true, _) => Some((j - 1, -sign)),
                            (false, jj) if jj == n => None,
                            (false, jj) => Some((jj, -sign)),
                        };
                    }
                }
                prev = hi;
            }
            if let Some((idx, sign)) = best_point {
                d_points[idx] = sign;
            }
            (best, d_points, best_scale_coeff)
        }
    }
}

// ---------------------------------------------------------------------------
// Miscalibration measures
// ---------------------------------------------------------------------------

/// Miscalibration of a PIT sample: divergence between its empirical cdf and
/// the identity.
pub fn mcb(pits: &PitSet, div: DivergenceKind) -> Result<f64> {
    Ok(step_divergence(&pits.sorted(), 1.0, div))
}

/// Conditional PIT values (unsorted, case order) and the summed forecast
/// exceedance probability above `t`.
pub fn tail_stats(cases: &[ForecastCase], t: f64) -> Result<(Vec<f64>, f64)> {
    let mut cpits = Vec::new();
    let mut prob_sum = 0.0;
    for case in cases {
        prob_sum += 1.0 - case.forecast.cdf(t);
        if case.obs > t {
            cpits.push(cpit(&case.forecast, case.obs, t)?);
        }
    }
    Ok((cpits, prob_sum))
}

/// Tail miscalibration: divergence of the combined ratio curve from the
/// identity. With an empty exceedance set (but positive forecast mass) the
/// curve is identically zero and the default divergence returns 1/2.
pub fn tmcb(cases: &[ForecastCase], t: f64, div: DivergenceKind) -> Result<f64> {
    let (mut cpits, prob_sum) = tail_stats(cases, t)?;
    if prob_sum <= 0.0 {
        return Err(CalibError::DegenerateExceedance(t));
    }
    cpits.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let ohat = cpits.len() as f64 / prob_sum;
    Ok(step_divergence(&cpits, ohat, div))
}

/// Miscalibration of the conditional PIT values alone: ignores the
/// occurrence ratio by construction.
pub fn cpit_mcb(cases: &[ForecastCase], t: f64, div: DivergenceKind) -> Result<f64> {
    let (cpits, _) = tail_stats(cases, t)?;
    if cpits.is_empty() {
        return Err(CalibError::EmptyExceedanceSet(t));
    }
    let set = PitSet::new(cpits, PitKind::Conditional { threshold: t })?;
    mcb(&set, div)
}

// ---------------------------------------------------------------------------
// Calibration curves
// ---------------------------------------------------------------------------

/// A step curve over u in [0, 1] plus the scalar occurrence ratio; covers
/// both PIT curves (occurrence ratio one) and tail-calibration ratio curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub u_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub occurrence_ratio: f64,
    /// Set when no observation exceeded the threshold; the curve is all
    /// zero rather than an error so that sweeps over small data continue.
    pub no_exceedances: bool,
}

impl CalibrationCurve {
    /// Columns u, value, ohat.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "u,value,ohat")?;
        for (u, v) in self.u_grid.iter().zip(&self.values) {
            writeln!(w, "{u},{v},{}", self.occurrence_ratio)?;
        }
        Ok(())
    }
}

/// Combined tail-calibration ratio curve evaluated on `u_grid`.
///
/// Values are assembled as ohat * H(u), so the occurrence/severity
/// decomposition holds exactly, term by term.
pub fn rhat_curve(cases: &[ForecastCase], t: f64, u_grid: &[f64]) -> Result<CalibrationCurve> {
    if cases.is_empty() {
        return Err(CalibError::EmptyPitSet);
    }
    let (mut cpits, prob_sum) = tail_stats(cases, t)?;
    if prob_sum <= 0.0 {
        return Err(CalibError::DegenerateExceedance(t));
    }
    cpits.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = cpits.len();
    let ohat = m as f64 / prob_sum;
    let values: Vec<f64> = u_grid
        .iter()
        .map(|u| {
            if m == 0 {
                0.0
            } else {
                let count = cpits.partition_point(|z| *z <= *u);
                ohat * (count as f64 / m as f64)
            }
        })
        .collect();
    Ok(CalibrationCurve {
        u_grid: u_grid.to_vec(),
        values,
        occurrence_ratio: ohat,
        no_exceedances: m == 0,
    })
}

/// Empirical cdf curve of a PIT set on `u_grid` (occurrence ratio one).
pub fn pit_curve(pits: &PitSet, u_grid: &[f64]) -> CalibrationCurve {
    let sorted = pits.sorted();
    let n = sorted.len() as f64;
    let values = u_grid
        .iter()
        .map(|u| sorted.partition_point(|z| *z <= *u) as f64 / n)
        .collect();
    CalibrationCurve {
        u_grid: u_grid.to_vec(),
        values,
        occurrence_ratio: 1.0,
        no_exceedances: false,
    }
}

/// Evenly spaced grid on [0, 1] with `n + 1` points.
pub fn unit_grid(n: usize) -> Vec<f64> {
    (0..=n).map(|i| i as f64 / n as f64).collect()
}

// ---------------------------------------------------------------------------
// Smoothed (differentiable) PIT machinery
// ---------------------------------------------------------------------------

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid-smoothed fraction of members at or below `y`:
/// (1/M) sum sigmoid((y - m_i) / nu). Differentiable in the members and y,
/// converging to the hard count as nu -> 0 away from ties.
pub fn smoothed_pit(members: &[f64], y: f64, nu: f64) -> f64 {
    assert!(nu > 0.0, "smoothing width must be positive");
    members.iter().map(|m| sigmoid((y - m) / nu)).sum::<f64>() / members.len() as f64
}

/// Derivative of `smoothed_pit` with respect to each member.
pub fn smoothed_pit_member_grads(members: &[f64], y: f64, nu: f64) -> Vec<f64> {
    let mf = members.len() as f64;
    members
        .iter()
        .map(|m| {
            let s = sigmoid((y - m) / nu);
            -s * (1.0 - s) / (nu * mf)
        })
        .collect()
}

/// Smoothed conditional PIT and exceedance probability of an ensemble:
/// exceedance = 1 - smoothed_pit(t), cpit = (pit_y - pit_t) / max(exceed, 1e-9).
pub fn smoothed_tail_stats(members: &[f64], y: f64, t: f64, nu: f64) -> (f64, f64) {
    let pit_y = smoothed_pit(members, y, nu);
    let pit_t = smoothed_pit(members, t, nu);
    let exceed = 1.0 - pit_t;
    let cpit = (pit_y - pit_t) / exceed.max(1e-9);
    (cpit, exceed)
}

/// `smoothed_tail_stats` plus member-wise derivatives of both outputs.
pub fn smoothed_tail_stats_grads(
    members: &[f64],
    y: f64,
    t: f64,
    nu: f64,
) -> (f64, f64, Vec<f64>, Vec<f64>) {
    let pit_y = smoothed_pit(members, y, nu);
    let pit_t = smoothed_pit(members, t, nu);
    let d_pit_y = smoothed_pit_member_grads(members, y, nu);
    let d_pit_t = smoothed_pit_member_grads(members, t, nu);
    let exceed = 1.0 - pit_t;
    let denom = exceed.max(1e-9);
    let cpit = (pit_y - pit_t) / denom;
    let denom_active = exceed > 1e-9;
    let mut d_cpit = Vec::with_capacity(members.len());
    let mut d_exceed = Vec::with_capacity(members.len());
    for i in 0..members.len() {
        let de = -d_pit_t[i];
        d_exceed.push(de);
        let numer_grad = d_pit_y[i] - d_pit_t[i];
        let denom_grad = if denom_active { de } else { 0.0 };
        d_cpit.push((numer_grad * denom - (pit_y - pit_t) * denom_grad) / (denom * denom));
    }
    (cpit, exceed, d_cpit, d_exceed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::TruncatedNormal;
    use crate::special::norm_quantile;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn normal(mu: f64, sd: f64) -> Distribution {
        Distribution::normal(mu, sd).unwrap()
    }

    #[test]
    fn pit_of_continuous_forecast_is_cdf() {
        let mut rng = StdRng::seed_from_u64(0);
        assert_eq!(pit(&normal(0.0, 1.0), 0.0, &mut rng), 0.5);
    }

    #[test]
    fn pit_of_ensemble_uses_randomized_rank() {
        // No ties: (r + 1) / (M + 1) with no draw consumed.
        let e = Distribution::ensemble(vec![1.0, 2.0, 3.0]).unwrap();
        let mut rng = StdRng::seed_from_u64(0);
        assert_eq!(pit(&e, 2.5, &mut rng), 0.75);
        // All members tied with the observation: rank uniform over slots.
        let e = Distribution::ensemble(vec![4.0, 4.0, 4.0]).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..64 {
            let mut rng = StdRng::seed_from_u64(seed);
            let v = pit(&e, 4.0, &mut rng);
            seen.insert((v * 4.0).round() as i64);
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn pit_of_ideal_forecaster_is_uniform() {
        let mut rng = StdRng::seed_from_u64(3);
        let mut pits = Vec::with_capacity(10_000);
        for _ in 0..10_000 {
            let mu: f64 = norm_quantile(rand::Rng::gen::<f64>(&mut rng).max(1e-12));
            let d = normal(mu, 1.0);
            let y = d.sample_one(&mut rng);
            pits.push(pit(&d, y, &mut rng));
        }
        let set = PitSet::unconditional(pits).unwrap();
        let ks = mcb(&set, DivergenceKind::Ks).unwrap();
        assert!(ks < 0.02, "ks = {ks}");
    }

    #[test]
    fn cpit_hand_values() {
        let d = normal(0.0, 1.0);
        let t = norm_quantile(0.9);
        let y = norm_quantile(0.95);
        assert!((cpit(&d, y, t).unwrap() - 0.5).abs() < 1e-12);
        // No forecast mass above the threshold.
        let e = Distribution::ensemble(vec![0.0, 1.0]).unwrap();
        assert_eq!(cpit(&e, 2.0, 1.5).unwrap(), 1.0);
        // t -> -inf recovers the PIT.
        let far = -1e12;
        assert!((cpit(&d, 0.3, far).unwrap() - d.cdf(0.3)).abs() < 1e-9);
        assert!(matches!(cpit(&d, 0.5, 1.0), Err(CalibError::BelowThreshold { .. })));
    }

    #[test]
    fn rhat_curve_hand_example() {
        // Four cases with F_i(t) = 0.8 and exactly one exceedance:
        // ohat = 1 / (4 * 0.2) = 1.25.
        let t = 2.0;
        let mu = t - norm_quantile(0.8);
        let mut cases: Vec<ForecastCase> =
            (0..4).map(|_| ForecastCase::new(normal(mu, 1.0), 0.0)).collect();
        cases[2].obs = 3.0;
        let grid = unit_grid(4);
        let curve = rhat_curve(&cases, t, &grid).unwrap();
        assert!((curve.occurrence_ratio - 1.25).abs() < 1e-12);
        // curve(1) = ohat since every CPIT value is <= 1.
        assert!((curve.values[4] - curve.occurrence_ratio).abs() < 1e-15);
        assert!(!curve.no_exceedances);
    }

    #[test]
    fn rhat_decomposition_identity_exact() {
        let mut rng = StdRng::seed_from_u64(5);
        let mut cases = Vec::new();
        for _ in 0..500 {
            let mu = 2.0 * rand::Rng::gen::<f64>(&mut rng);
            let d = normal(mu, 1.0);
            let y = d.sample_one(&mut rng);
            cases.push(ForecastCase::new(d, y));
        }
        let t = 2.5;
        let grid = unit_grid(20);
        let curve = rhat_curve(&cases, t, &grid).unwrap();
        let (cpits, prob_sum) = tail_stats(&cases, t).unwrap();
        let ohat = cpits.len() as f64 / prob_sum;
        let mut sorted = cpits.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (u, v) in grid.iter().zip(&curve.values) {
            let h = sorted.partition_point(|z| *z <= *u) as f64 / sorted.len() as f64;
            assert_eq!(*v, ohat * h, "decomposition must hold exactly at u={u}");
        }
    }

    #[test]
    fn rhat_curve_empty_exceedances_warns() {
        // t = 5: tiny but positive forecast mass above, no exceeding obs.
        let cases = vec![ForecastCase::new(normal(0.0, 1.0), 0.0); 5];
        let curve = rhat_curve(&cases, 5.0, &unit_grid(4)).unwrap();
        assert!(curve.no_exceedances);
        assert!(curve.values.iter().all(|v| *v == 0.0));
        assert_eq!(curve.occurrence_ratio, 0.0);
    }

    #[test]
    fn mcb_hand_values() {
        let set = PitSet::unconditional(vec![0.25, 0.5, 0.75, 1.0]).unwrap();
        assert_eq!(mcb(&set, DivergenceKind::W1OrderStat).unwrap(), 0.0);
        // All-zero PITs: mean of {1/4, 2/4, 3/4, 1} = 0.625.
        let set = PitSet::unconditional(vec![0.0; 4]).unwrap();
        assert!((mcb(&set, DivergenceKind::W1OrderStat).unwrap() - 0.625).abs() < 1e-15);
        // Exact W1 of the all-zero set: integral of (1 - u) = 1/2.
        assert!((mcb(&set, DivergenceKind::W1).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mcb_of_uniform_sample_is_small() {
        let mut rng = StdRng::seed_from_u64(8);
        let pits: Vec<f64> = (0..10_000).map(|_| rand::Rng::gen::<f64>(&mut rng)).collect();
        let set = PitSet::unconditional(pits).unwrap();
        let v = mcb(&set, DivergenceKind::W1).unwrap();
        assert!(v < 0.02, "w1 = {v}");
    }

    #[test]
    fn mcb_zero_iff_exact_grid() {
        let n = 7;
        let grid: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64).collect();
        let set = PitSet::unconditional(grid.clone()).unwrap();
        assert_eq!(mcb(&set, DivergenceKind::W1OrderStat).unwrap(), 0.0);
        let mut off = grid;
        off[3] += 1e-3;
        let set = PitSet::unconditional(off).unwrap();
        assert!(mcb(&set, DivergenceKind::W1OrderStat).unwrap() > 0.0);
    }

    #[test]
    fn tmcb_limit_recovers_mcb() {
        let mut rng = StdRng::seed_from_u64(4);
        let mut cases = Vec::new();
        for _ in 0..200 {
            let d = normal(rand::Rng::gen::<f64>(&mut rng), 1.0);
            let y = d.sample_one(&mut rng);
            cases.push(ForecastCase::new(d, y));
        }
        let t = -1e5;
        let pits: Vec<f64> = cases.iter().map(|c| c.forecast.cdf(c.obs)).collect();
        let set = PitSet::unconditional(pits).unwrap();
        for div in [DivergenceKind::W1, DivergenceKind::W1OrderStat, DivergenceKind::Cramer] {
            let a = tmcb(&cases, t, div).unwrap();
            let b = mcb(&set, div).unwrap();
            assert!((a - b).abs() < 1e-12, "{div:?}: tmcb {a} vs mcb {b}");
        }
    }

    #[test]
    fn tmcb_with_doubled_ohat_tends_to_half() {
        // Forecasts assign exceedance probability 1/2 but every observation
        // exceeds: ohat = 2 with uniform CPITs, so the exact W1 distance is
        // the integral of |2u - u| = 1/2 up to step discretization.
        let m = 2000;
        let mut cases = Vec::new();
        for i in 0..m {
            let d = TruncatedNormal::normal(0.0, 1.0).unwrap();
            let u = 0.5 + 0.5 * ((i as f64 + 0.5) / m as f64);
            let y = d.quantile(u).unwrap();
            cases.push(ForecastCase::new(Distribution::TruncNormal(d), y));
        }
        let v = tmcb(&cases, 0.0, DivergenceKind::W1).unwrap();
        assert!((v - 0.5).abs() < 5e-3, "tmcb = {v}");
    }

    #[test]
    fn tmcb_degenerate_and_empty() {
        let e = Distribution::ensemble(vec![0.0, 1.0]).unwrap();
        let cases = vec![ForecastCase::new(e, 0.5)];
        assert!(matches!(
            tmcb(&cases, 5.0, DivergenceKind::W1),
            Err(CalibError::DegenerateExceedance(_))
        ));
        // Positive forecast mass above t but no exceeding observation: the
        // curve is all zero and the W1 distance to the diagonal is 1/2.
        let cases = vec![ForecastCase::new(normal(0.0, 1.0), 0.0); 3];
        assert!((tmcb(&cases, 3.0, DivergenceKind::W1).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cpit_mcb_hand_values() {
        let mk = |vals: Vec<f64>| PitSet::new(vals, PitKind::Conditional { threshold: 0.0 }).unwrap();
        // Shifted grid {0.2, 0.4, 0.6, 0.8}: mean |z_(i) - i/4| =
        // (0.05 + 0.10 + 0.15 + 0.20) / 4 = 0.125.
        let set = mk(vec![0.2, 0.4, 0.6, 0.8]);
        assert!((mcb(&set, DivergenceKind::W1OrderStat).unwrap() - 0.125).abs() < 1e-15);
        let set = mk(vec![0.25, 0.5, 0.75, 1.0]);
        assert_eq!(mcb(&set, DivergenceKind::W1OrderStat).unwrap(), 0.0);
    }

    #[test]
    fn cpit_mcb_equals_tmcb_when_ohat_is_one() {
        let d = normal(0.0, 1.0);
        let t = 0.0; // each forecast has exceedance probability 1/2
        let mut cases = Vec::new();
        for i in 0..10 {
            // Half the observations exceed: ohat = 5 / (10 * 0.5) = 1.
            let y = if i % 2 == 0 { 1.0 + i as f64 * 0.1 } else { -1.0 };
            cases.push(ForecastCase::new(d.clone(), y));
        }
        let a = cpit_mcb(&cases, t, DivergenceKind::W1).unwrap();
        let b = tmcb(&cases, t, DivergenceKind::W1).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!(matches!(
            cpit_mcb(&[ForecastCase::new(d, -1.0)], t, DivergenceKind::W1),
            Err(CalibError::EmptyExceedanceSet(_))
        ));
    }

    #[test]
    fn ideal_forecaster_tail_calibration() {
        let mut rng = StdRng::seed_from_u64(13);
        let n = 100_000;
        let mut cases = Vec::with_capacity(n);
        for _ in 0..n {
            let mu = norm_quantile(rand::Rng::gen::<f64>(&mut rng).max(1e-12));
            let d = normal(mu, 1.0);
            let y = d.sample_one(&mut rng);
            cases.push(ForecastCase::new(d, y));
        }
        // 95th percentile of the unconditional N(0, sqrt 2) outcome.
        let t = std::f64::consts::SQRT_2 * norm_quantile(0.95);
        let v = tmcb(&cases, t, DivergenceKind::W1).unwrap();
        assert!(v < 0.05, "tmcb = {v}");
        let curve = rhat_curve(&cases, t, &unit_grid(100)).unwrap();
        let sup = curve
            .u_grid
            .iter()
            .zip(&curve.values)
            .map(|(u, v)| (u - v).abs())
            .fold(0.0f64, f64::max);
        assert!(sup < 0.05, "sup deviation = {sup}");
        let pits: Vec<f64> = cases.iter().map(|c| c.forecast.cdf(c.obs)).collect();
        let v = mcb(&PitSet::unconditional(pits).unwrap(), DivergenceKind::W1).unwrap();
        assert!(v < 0.01, "mcb = {v}");
    }

    #[test]
    fn mcb_tmcb_shrink_at_root_n_rate() {
        let run = |n: usize, seed: u64| -> (f64, f64) {
            let mut rng = StdRng::seed_from_u64(seed);
            let mut cases = Vec::with_capacity(n);
            for _ in 0..n {
                let mu = norm_quantile(rand::Rng::gen::<f64>(&mut rng).max(1e-12));
                let d = normal(mu, 1.0);
                let y = d.sample_one(&mut rng);
                cases.push(ForecastCase::new(d, y));
            }
            let pits: Vec<f64> = cases.iter().map(|c| c.forecast.cdf(c.obs)).collect();
            let m = mcb(&PitSet::unconditional(pits).unwrap(), DivergenceKind::W1).unwrap();
            let t = tmcb(&cases, 0.5, DivergenceKind::W1).unwrap();
            (m, t)
        };
        let (m3, t3) = run(1_000, 6);
        let (m4, t4) = run(10_000, 6);
        let mcb_ratio = m3 / m4;
        let tmcb_ratio = t3 / t4;
        assert!((2.0..=4.5).contains(&mcb_ratio), "mcb ratio {mcb_ratio} ({m3} / {m4})");
        assert!((2.0..=4.5).contains(&tmcb_ratio), "tmcb ratio {tmcb_ratio} ({t3} / {t4})");
    }

    #[test]
    fn smoothed_pit_hand_values() {
        assert!((smoothed_pit(&[1.0, 2.0], 50.0, 0.01) - 1.0).abs() < 1e-6);
        assert_eq!(smoothed_pit(&[2.0], 2.0, 0.01), 0.5);
        let v = smoothed_pit(&[1.0, 2.0, 3.0], 2.5, 0.01);
        assert!((v - 2.0 / 3.0).abs() < 1e-4, "v = {v}");
    }

    #[test]
    fn smoothed_pit_is_monotone_in_y() {
        let members = [0.3, 1.1, 2.7, 2.9];
        let mut prev = -1.0;
        for i in 0..200 {
            let y = -1.0 + i as f64 * 0.025;
            let v = smoothed_pit(&members, y, 0.05);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn smoothed_tail_stats_limits() {
        let (_, exceed) = smoothed_tail_stats(&[10.0, 11.0], 10.5, 1.0, 0.01);
        assert!((exceed - 1.0).abs() < 1e-6);
        // nu -> 0 converges to the hard cpit and exceedance probability.
        let members = [0.5, 1.5, 2.5, 3.5];
        let e = crate::dist::EnsembleForecast::new(members.to_vec()).unwrap();
        let d = Distribution::Ensemble(e);
        let (y, t) = (3.0, 1.0);
        let (cp, ex) = smoothed_tail_stats(&members, y, t, 1e-4);
        let hard_cp = cpit(&d, y, t).unwrap();
        let hard_ex = 1.0 - d.cdf(t);
        assert!((cp - hard_cp).abs() < 1e-3, "cp {cp} hard {hard_cp}");
        assert!((ex - hard_ex).abs() < 1e-3);
    }

    #[test]
    fn smoothed_grads_match_finite_differences() {
        let members = [0.5, 1.2, 2.0, 3.1];
        let (y, t, nu) = (2.4, 1.0, 0.05);
        let (_, _, d_cpit, d_exceed) = smoothed_tail_stats_grads(&members, y, t, nu);
        let h = 1e-6;
        for i in 0..members.len() {
            let mut up = members;
            up[i] += h;
            let mut dn = members;
            dn[i] -= h;
            let (cp_u, ex_u) = smoothed_tail_stats(&up, y, t, nu);
            let (cp_d, ex_d) = smoothed_tail_stats(&dn, y, t, nu);
            let fd_cp = (cp_u - cp_d) / (2.0 * h);
            let fd_ex = (ex_u - ex_d) / (2.0 * h);
            assert!(
                (d_cpit[i] - fd_cp).abs() <= 1e-4 * (1.0 + fd_cp.abs()),
                "cpit grad {} vs fd {fd_cp}",
                d_cpit[i]
            );
            assert!((d_exceed[i] - fd_ex).abs() <= 1e-4 * (1.0 + fd_ex.abs()));
        }
    }

    #[test]
    fn step_divergence_grads_match_finite_differences() {
        // Points chosen off the i/n lattice so no |.| kink is hit exactly.
        let points = vec![0.1, 0.35, 0.55, 0.82, 0.97];
        for div in [DivergenceKind::W1, DivergenceKind::W1OrderStat, DivergenceKind::Cramer] {
            for &scale in &[1.0, 1.3, 0.7] {
                let (v, d_pts, d_scale) = step_divergence_grads(&points, scale, div);
                assert!((v - step_divergence(&points, scale, div)).abs() < 1e-14);
                let h = 1e-7;
                for i in 0..points.len() {
                    let mut up = points.clone();
                    up[i] += h;
                    let mut dn = points.clone();
                    dn[i] -= h;
                    let fd = (step_divergence(&up, scale, div) - step_divergence(&dn, scale, div))
                        / (2.0 * h);
                    assert!(
                        (d_pts[i] - fd).abs() < 1e-5,
                        "{div:?} scale {scale} point {i}: {} vs {fd}",
                        d_pts[i]
                    );
                }
                let fd = (step_divergence(&points, scale + h, div)
                    - step_divergence(&points, scale - h, div))
                    / (2.0 * h);
                assert!(
                    (d_scale - fd).abs() < 1e-5,
                    "{div:?} scale {scale}: d_scale {d_scale} vs {fd}"
                );
            }
        }
    }

    proptest! {
        #[test]
        fn exact_w1_close_to_order_stat_estimator(
            values in proptest::collection::vec(0.0f64..=1.0, 1..200)
        ) {
            let set = PitSet::unconditional(values.clone()).unwrap();
            let exact = mcb(&set, DivergenceKind::W1).unwrap();
            let approx = mcb(&set, DivergenceKind::W1OrderStat).unwrap();
            let n = values.len() as f64;
            prop_assert!((exact - approx).abs() < 1.0 / n,
                "n={n}: exact {exact} vs approx {approx}");
        }

        #[test]
        fn divergences_are_nonnegative(
            values in proptest::collection::vec(0.0f64..=1.0, 1..100),
            scale in 0.0f64..3.0
        ) {
            let mut sorted = values;
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for div in [DivergenceKind::W1, DivergenceKind::W1OrderStat,
                        DivergenceKind::Cramer, DivergenceKind::Ks] {
                prop_assert!(step_divergence(&sorted, scale, div) >= 0.0);
            }
        }
    }
}
