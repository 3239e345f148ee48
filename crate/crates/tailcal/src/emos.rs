//! Ensemble model output statistics: truncated-normal regression on
//! ensemble summary statistics with seasonal harmonics, fitted per cluster
//! of climatologically similar stations by minimizing a (possibly
//! regularized) scoring-rule loss with numeric gradients.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::WeatherRow;
use crate::dist::TruncatedNormal;
use crate::loss::{evaluate_outputs, ForecastOutput, LossError, LossSpec};
use crate::optim::{minimize, OptimError, OptimResult, OptimizerConfig, OptimizerKind};

#[derive(Debug, Error)]
pub enum EmosError {
    #[error("station {station} has {have} observations but {need} are required for features")]
    TooFewObservations { station: String, have: usize, need: usize },
    #[error("cluster {cluster}: {source}")]
    Optim { cluster: usize, source: OptimError },
    #[error("cluster {cluster}: {source}")]
    Loss { cluster: usize, source: LossError },
    #[error("empty dataset for cluster {0}")]
    EmptyCluster(usize),
    #[error("station {0} missing from the clustering")]
    UnclusteredStation(String),
}

pub type Result<T> = std::result::Result<T, EmosError>;

/// The eight regression coefficients: location intercept/gain and scale
/// intercept/gain plus one sine/cosine harmonic pair for each.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EmosParams {
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    pub delta: f64,
    pub lambda_mu_s: f64,
    pub lambda_mu_c: f64,
    pub lambda_sigma_s: f64,
    pub lambda_sigma_c: f64,
}

impl EmosParams {
    pub fn to_array(self) -> [f64; 8] {
        [
            self.alpha,
            self.beta,
            self.eta,
            self.delta,
            self.lambda_mu_s,
            self.lambda_mu_c,
            self.lambda_sigma_s,
            self.lambda_sigma_c,
        ]
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        Self {
            alpha: a[0],
            beta: a[1],
            eta: a[2],
            delta: a[3],
            lambda_mu_s: a[4],
            lambda_mu_c: a[5],
            lambda_sigma_s: a[6],
            lambda_sigma_c: a[7],
        }
    }
}

/// One training case in covariate form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmosCase {
    pub ens_mean: f64,
    pub ens_sd: f64,
    pub doy: f64,
    pub obs: f64,
}

impl From<&WeatherRow> for EmosCase {
    fn from(r: &WeatherRow) -> Self {
        Self { ens_mean: r.ens_mean, ens_sd: r.ens_sd, doy: r.doy as f64, obs: r.obs }
    }
}

fn harmonics(doy: f64) -> (f64, f64) {
    let angle = 2.0 * std::f64::consts::PI * doy / 365.25;
    (angle.sin(), angle.cos())
}

/// Predictive truncated normal for one covariate triple. The log scale is
/// clamped to [-15, 15], so the scale never reaches the rejected region.
pub fn emos_link(params: &EmosParams, ens_mean: f64, ens_sd: f64, doy: f64) -> TruncatedNormal {
    let (mu, sigma) = emos_link_raw(params, ens_mean, ens_sd, doy);
    TruncatedNormal::new(mu, sigma, 0.0).expect("clamped log scale is always valid")
}

fn emos_link_raw(params: &EmosParams, ens_mean: f64, ens_sd: f64, doy: f64) -> (f64, f64) {
    let (s, c) = harmonics(doy);
    let mu = params.alpha + params.beta * ens_mean + params.lambda_mu_s * s + params.lambda_mu_c * c;
    let log_sigma = (params.eta
        + params.delta * ens_sd
        + params.lambda_sigma_s * s
        + params.lambda_sigma_c * c)
        .clamp(-15.0, 15.0);
    (mu, log_sigma.exp())
}

// ---------------------------------------------------------------------------
// Semi-local clustering
// ---------------------------------------------------------------------------

/// Station-to-cluster assignment from k-means on climatological quantiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationClustering {
    pub assignments: BTreeMap<String, usize>,
    pub centroids: Vec<Vec<f64>>,
    pub k: usize,
    pub feature_count: usize,
}

impl StationClustering {
    pub fn cluster_of(&self, station: &str) -> Result<usize> {
        self.assignments
            .get(station)
            .copied()
            .ok_or_else(|| EmosError::UnclusteredStation(station.to_string()))
    }
}

/// Interpolated empirical quantile (type 7).
fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn station_features(obs: &[f64], feature_count: usize) -> Vec<f64> {
    let mut sorted = obs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (1..=feature_count)
        .map(|j| empirical_quantile(&sorted, j as f64 / (feature_count + 1) as f64))
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding on per-station quantile
/// features; deterministic for a fixed seed.
pub fn cluster_stations(
    per_station_obs: &BTreeMap<String, Vec<f64>>,
    k: usize,
    feature_count: usize,
    seed: u64,
) -> Result<StationClustering> {
    assert!(k >= 1, "cluster count must be >= 1");
    let mut names = Vec::new();
    let mut features = Vec::new();
    for (name, obs) in per_station_obs {
        if obs.len() < feature_count {
            return Err(EmosError::TooFewObservations {
                station: name.clone(),
                have: obs.len(),
                need: feature_count,
            });
        }
        names.push(name.clone());
        features.push(station_features(obs, feature_count));
    }
    let n = names.len();
    let k = k.min(n);
    let mut rng = StdRng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(features[rng.gen_range(0..n)].clone());
    while centroids.len() < k {
        let d2: Vec<f64> = features
            .iter()
            .map(|f| centroids.iter().map(|c| sq_dist(f, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            let mut pick = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if pick < *d {
                    idx = i;
                    break;
                }
                pick -= d;
            }
            idx
        };
        centroids.push(features[next].clone());
    }

    let mut assignment = vec![0usize; n];
    for _ in 0..100 {
        let mut changed = false;
        for (i, f) in features.iter().enumerate() {
            let best = (0..k)
                .min_by(|a, b| {
                    sq_dist(f, &centroids[*a]).partial_cmp(&sq_dist(f, &centroids[*b])).unwrap()
                })
                .unwrap();
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> =
                features.iter().zip(&assignment).filter(|(_, a)| **a == c).map(|(f, _)| f).collect();
            if members.is_empty() {
                continue;
            }
            for (j, v) in centroid.iter_mut().enumerate() {
                *v = members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }

    let assignments = names.into_iter().zip(assignment).collect();
    Ok(StationClustering { assignments, centroids, k, feature_count })
}

/// Total within-cluster sum of squares for each candidate k (elbow data).
pub fn elbow_report(
    per_station_obs: &BTreeMap<String, Vec<f64>>,
    k_max: usize,
    feature_count: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    for k in 1..=k_max {
        let clustering = cluster_stations(per_station_obs, k, feature_count, seed)?;
        let mut wss = 0.0;
        for (name, obs) in per_station_obs {
            let f = station_features(obs, feature_count);
            let c = clustering.assignments[name];
            wss += sq_dist(&f, &clustering.centroids[c]);
        }
        out.push((k, wss));
    }
    Ok(out)
}

/// Group station observations out of rows.
pub fn observations_by_station(rows: &[WeatherRow]) -> BTreeMap<String, Vec<f64>> {
    let mut map: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows {
        map.entry(r.station_id.clone()).or_default().push(r.obs);
    }
    map
}

/// Split rows into per-cluster case lists, ordered by cluster id.
pub fn split_by_cluster(
    rows: &[WeatherRow],
    clustering: &StationClustering,
) -> Result<Vec<Vec<EmosCase>>> {
    let mut out = vec![Vec::new(); clustering.k];
    for r in rows {
        let c = clustering.cluster_of(&r.station_id)?;
        out[c].push(EmosCase::from(r));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

/// Ordinary least squares of y on (1, m, sin, cos) for the location start
/// values; the scale intercept starts at the log residual standard error.
fn init_params(cases: &[EmosCase]) -> EmosParams {
    let n = cases.len();
    let mut xtx = [[0.0f64; 4]; 4];
    let mut xty = [0.0f64; 4];
    for c in cases {
        let (s, co) = harmonics(c.doy);
        let x = [1.0, c.ens_mean, s, co];
        for i in 0..4 {
            for j in 0..4 {
                xtx[i][j] += x[i] * x[j];
            }
            xty[i] += x[i] * c.obs;
        }
    }
    // Gaussian elimination with partial pivoting on the 4x4 system.
    let mut a = xtx;
    let mut b = xty;
    let mut coef = [0.0f64; 4];
    let mut singular = false;
    for col in 0..4 {
        let pivot = (col..4).max_by(|i, j| a[*i][col].abs().partial_cmp(&a[*j][col].abs()).unwrap());
        let pivot = pivot.unwrap();
        if a[pivot][col].abs() < 1e-12 {
            singular = true;
            break;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for jj in col..4 {
                a[row][jj] -= f * a[col][jj];
            }
            b[row] -= f * b[col];
        }
    }
    if !singular {
        for col in (0..4).rev() {
            let mut v = b[col];
            for jj in col + 1..4 {
                v -= a[col][jj] * coef[jj];
            }
            coef[col] = v / a[col][col];
        }
    } else {
        coef = [cases.iter().map(|c| c.obs).sum::<f64>() / n as f64, 0.0, 0.0, 0.0];
    }
    let mut rss = 0.0;
    for c in cases {
        let (s, co) = harmonics(c.doy);
        let fit = coef[0] + coef[1] * c.ens_mean + coef[2] * s + coef[3] * co;
        rss += (c.obs - fit) * (c.obs - fit);
    }
    let dof = (n.saturating_sub(4)).max(1) as f64;
    let eta = (rss / dof).sqrt().max(1e-3).ln();
    EmosParams {
        alpha: coef[0],
        beta: coef[1],
        eta,
        delta: 0.0,
        lambda_mu_s: coef[2],
        lambda_mu_c: coef[3],
        lambda_sigma_s: 0.0,
        lambda_sigma_c: 0.0,
    }
}

fn cluster_objective(theta: &[f64], cases: &[EmosCase], spec: &LossSpec) -> f64 {
    let params = EmosParams::from_array(theta.try_into().expect("theta has 8 entries"));
    let outputs: Vec<ForecastOutput> = cases
        .iter()
        .map(|c| {
            let (mu, sigma) = emos_link_raw(&params, c.ens_mean, c.ens_sd, c.doy);
            ForecastOutput::Tn { mu, sigma, lower: 0.0 }
        })
        .collect();
    let obs: Vec<f64> = cases.iter().map(|c| c.obs).collect();
    match evaluate_outputs(&outputs, &obs, spec) {
        Ok(report) => report.total,
        Err(_) => f64::NAN,
    }
}

/// Per-cluster coefficients plus the optimizer summaries.
#[derive(Debug, Clone)]
pub struct EmosFit {
    pub params: Vec<EmosParams>,
    pub optim: Vec<OptimResult>,
}

/// Minimize the loss per cluster (in parallel) starting from the linear-
/// regression initialization. Defaults to BFGS with numeric gradients; the
/// Nelder-Mead fallback engages automatically on line-search failure.
pub fn emos_fit(
    cases_by_cluster: &[Vec<EmosCase>],
    spec: &LossSpec,
    cfg: &OptimizerConfig,
) -> Result<EmosFit> {
    let results: Vec<Result<(EmosParams, OptimResult)>> = cases_by_cluster
        .par_iter()
        .enumerate()
        .map(|(cluster, cases)| {
            if cases.is_empty() {
                return Err(EmosError::EmptyCluster(cluster));
            }
            let x0 = init_params(cases).to_array();
            let res = minimize(|theta| cluster_objective(theta, cases, spec), &x0, cfg)
                .map_err(|source| EmosError::Optim { cluster, source })?;
            let params = EmosParams::from_array(res.params.clone().try_into().unwrap());
            Ok((params, res))
        })
        .collect();
    let mut params = Vec::with_capacity(results.len());
    let mut optim = Vec::with_capacity(results.len());
    for r in results {
        let (p, o) = r?;
        params.push(p);
        optim.push(o);
    }
    Ok(EmosFit { params, optim })
}

/// Serialized EMOS artifact payload: per-cluster coefficients plus the
/// clustering they belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmosArtifact {
    pub clustering: StationClustering,
    pub params: Vec<EmosParams>,
}

impl EmosArtifact {
    /// Predictive distribution for one row.
    pub fn predict(&self, row: &WeatherRow) -> Result<TruncatedNormal> {
        let c = self.clustering.cluster_of(&row.station_id)?;
        Ok(emos_link(&self.params[c], row.ens_mean, row.ens_sd, row.doy as f64))
    }
}

/// Default EMOS optimizer configuration.
pub fn default_optimizer() -> OptimizerConfig {
    OptimizerConfig { kind: OptimizerKind::BfgsNumeric, max_iters: 400, tolerance: 1e-8, ..Default::default() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calib::{mcb, tmcb, DivergenceKind, ForecastCase, PitSet};
    use crate::data::{generate_synth, SynthConfig};
    use crate::dist::Distribution;
    use crate::loss::{BaseScore, PenaltyKind};

    #[test]
    fn link_hand_values() {
        let p = EmosParams { beta: 1.0, ..Default::default() };
        let d = emos_link(&p, 5.0, 1.0, 100.0);
        assert_eq!(d.mu(), 5.0);
        assert_eq!(d.sigma(), 1.0);
        assert_eq!(d.lower(), 0.0);
        // No harmonic coefficients: prediction independent of doy.
        let d2 = emos_link(&p, 5.0, 1.0, 300.0);
        assert_eq!(d.mu(), d2.mu());
        assert_eq!(d.sigma(), d2.sigma());
        // Quarter year: sin term is exactly one.
        let p = EmosParams { beta: 1.0, lambda_mu_s: 2.0, ..Default::default() };
        let d = emos_link(&p, 5.0, 1.0, 365.25 / 4.0);
        assert!((d.mu() - 7.0).abs() < 1e-12);
        // Scale always positive for wild coefficients.
        let p = EmosParams { eta: -500.0, ..Default::default() };
        assert!(emos_link(&p, 1.0, 1.0, 1.0).sigma() > 0.0);
    }

    fn obs_map(groups: &[(&str, Vec<f64>)]) -> BTreeMap<String, Vec<f64>> {
        groups.iter().map(|(n, v)| (n.to_string(), v.clone())).collect()
    }

    #[test]
    fn clustering_separates_distinct_climates() {
        let mut rng = StdRng::seed_from_u64(2);
        let mut groups = Vec::new();
        for i in 0..6 {
            let center = if i < 3 { 5.0 } else { 15.0 };
            let obs: Vec<f64> =
                (0..50).map(|_| center + rng.gen::<f64>() * 2.0 - 1.0).collect();
            groups.push((format!("S{i:03}"), obs));
        }
        let map: BTreeMap<String, Vec<f64>> = groups.into_iter().collect();
        let clustering = cluster_stations(&map, 2, 9, 0).unwrap();
        let a = clustering.assignments["S000"];
        for i in 0..3 {
            assert_eq!(clustering.assignments[&format!("S{i:03}")], a);
        }
        let b = clustering.assignments["S003"];
        assert_ne!(a, b);
        for i in 3..6 {
            assert_eq!(clustering.assignments[&format!("S{i:03}")], b);
        }
    }

    #[test]
    fn clustering_edge_cases() {
        let map = obs_map(&[
            ("A", (0..20).map(|i| i as f64).collect()),
            ("B", (0..20).map(|i| i as f64 + 5.0).collect()),
            ("C", (0..20).map(|i| i as f64 * 2.0).collect()),
        ]);
        // k = 1: everyone together.
        let one = cluster_stations(&map, 1, 9, 0).unwrap();
        assert!(one.assignments.values().all(|c| *c == 0));
        // k = station count: zero within-cluster variance.
        let all = cluster_stations(&map, 3, 9, 0).unwrap();
        let mut seen: Vec<usize> = all.assignments.values().copied().collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 3);
        let elbow = elbow_report(&map, 3, 9, 0).unwrap();
        assert!(elbow[2].1 < 1e-12, "wss at k=n should be 0, got {}", elbow[2].1);
        // Too few observations names the station.
        let bad = obs_map(&[("TINY", vec![1.0, 2.0])]);
        match cluster_stations(&bad, 1, 9, 0) {
            Err(EmosError::TooFewObservations { station, have: 2, need: 9 }) => {
                assert_eq!(station, "TINY");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn clustering_is_deterministic() {
        let map = obs_map(&[
            ("A", (0..30).map(|i| (i as f64 * 0.37).sin() + 5.0).collect()),
            ("B", (0..30).map(|i| (i as f64 * 0.73).cos() + 9.0).collect()),
            ("C", (0..30).map(|i| (i as f64 * 0.11).sin() + 7.0).collect()),
            ("D", (0..30).map(|i| (i as f64 * 0.53).cos() + 6.0).collect()),
        ]);
        let a = cluster_stations(&map, 2, 5, 42).unwrap();
        let b = cluster_stations(&map, 2, 5, 42).unwrap();
        assert_eq!(a, b);
    }

    fn synthetic_from_theta(theta: &EmosParams, n: usize, seed: u64) -> Vec<EmosCase> {
        let mut rng = StdRng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let ens_mean = 4.0 + 6.0 * rng.gen::<f64>();
                let ens_sd = 0.6 + 1.2 * rng.gen::<f64>();
                let doy = 1.0 + 364.0 * rng.gen::<f64>();
                let d = emos_link(theta, ens_mean, ens_sd, doy);
                let obs = Distribution::TruncNormal(d).sample_one(&mut rng);
                EmosCase { ens_mean, ens_sd, doy, obs }
            })
            .collect()
    }

    #[test]
    fn fit_recovers_true_parameters_on_well_specified_data() {
        let truth = EmosParams {
            alpha: 0.4,
            beta: 0.9,
            eta: 0.1,
            delta: 0.2,
            lambda_mu_s: 0.5,
            lambda_mu_c: -0.3,
            lambda_sigma_s: 0.1,
            lambda_sigma_c: -0.05,
        };
        let cases = synthetic_from_theta(&truth, 10_000, 8);
        let spec = LossSpec::baseline(BaseScore::CrpsClosed, 12.5);
        let fit = emos_fit(&[cases], &spec, &default_optimizer()).unwrap();
        let got = fit.params[0].to_array();
        let want = truth.to_array();
        for (i, (g, w)) in got.iter().zip(&want).enumerate() {
            assert!((g - w).abs() < 0.05, "theta[{i}]: {g} vs {w}");
        }
    }

    #[test]
    fn gamma_zero_penalty_kind_is_irrelevant() {
        let truth = EmosParams { alpha: 1.0, beta: 0.8, eta: 0.2, ..Default::default() };
        let cases = synthetic_from_theta(&truth, 800, 3);
        let cfg = default_optimizer();
        let base = LossSpec::baseline(BaseScore::CrpsClosed, 9.0);
        let with_pen = base.with_penalty(PenaltyKind::Mcb, 0.0);
        let a = emos_fit(&[cases.clone()], &base, &cfg).unwrap();
        let b = emos_fit(&[cases], &with_pen, &cfg).unwrap();
        assert_eq!(a.params[0], b.params[0]);
    }

    #[test]
    fn training_score_never_worse_than_initialization() {
        let truth = EmosParams { alpha: 0.2, beta: 1.1, eta: 0.3, delta: 0.1, ..Default::default() };
        let cases = synthetic_from_theta(&truth, 1500, 11);
        let spec = LossSpec::baseline(BaseScore::CrpsClosed, 9.0);
        let x0 = init_params(&cases).to_array();
        let at_init = cluster_objective(&x0, &cases, &spec);
        let fit = emos_fit(&[cases], &spec, &default_optimizer()).unwrap();
        assert!(fit.optim[0].final_value <= at_init + 1e-12);
    }

    #[test]
    fn bfgs_and_nelder_mead_agree_on_smooth_objective() {
        let truth = EmosParams { alpha: 0.5, beta: 0.9, eta: 0.15, delta: 0.1, ..Default::default() };
        let cases = synthetic_from_theta(&truth, 2000, 5);
        let spec = LossSpec::baseline(BaseScore::CrpsClosed, 9.0);
        let bfgs = emos_fit(&[cases.clone()], &spec, &default_optimizer()).unwrap();
        let nm_cfg = OptimizerConfig { max_iters: 20_000, ..OptimizerConfig::nelder_mead() };
        let nm = emos_fit(&[cases], &spec, &nm_cfg).unwrap();
        assert!(
            (bfgs.optim[0].final_value - nm.optim[0].final_value).abs() < 1e-3,
            "bfgs {} vs nm {}",
            bfgs.optim[0].final_value,
            nm.optim[0].final_value
        );
    }

    #[test]
    fn cluster_order_is_irrelevant_within_cluster() {
        let truth = EmosParams { alpha: 0.3, beta: 1.0, eta: 0.2, ..Default::default() };
        let mut cases = synthetic_from_theta(&truth, 600, 9);
        let spec = LossSpec::baseline(BaseScore::CrpsClosed, 9.0);
        let cfg = default_optimizer();
        let a = emos_fit(&[cases.clone()], &spec, &cfg).unwrap();
        cases.reverse();
        let b = emos_fit(&[cases], &spec, &cfg).unwrap();
        for (x, y) in a.params[0].to_array().iter().zip(b.params[0].to_array()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn tmcb_penalty_improves_tail_calibration_on_misspecified_data() {
        let data = generate_synth(&SynthConfig {
            tail_misspecification: true,
            station_count: 6,
            train_days: 500,
            test_days: 500,
            seed: 4,
            ..Default::default()
        })
        .unwrap();
        let t = 12.5;
        let clustering = cluster_stations(&observations_by_station(&data.train), 1, 9, 0).unwrap();
        let train = split_by_cluster(&data.train, &clustering).unwrap();
        let cfg = default_optimizer();
        let baseline_spec = LossSpec::baseline(BaseScore::CrpsClosed, t);
        let tmcb_spec = baseline_spec.with_penalty(PenaltyKind::Tmcb, 5.0);
        let baseline = emos_fit(&train, &baseline_spec, &cfg).unwrap();
        let penalized = emos_fit(&train, &tmcb_spec, &cfg).unwrap();

        let eval = |params: &EmosParams| -> (f64, f64) {
            let cases: Vec<ForecastCase> = data
                .test
                .iter()
                .map(|r| {
                    let d = emos_link(params, r.ens_mean, r.ens_sd, r.doy as f64);
                    ForecastCase::new(Distribution::TruncNormal(d), r.obs)
                })
                .collect();
            let pits: Vec<f64> = cases.iter().map(|c| c.forecast.cdf(c.obs)).collect();
            let m = mcb(&PitSet::unconditional(pits).unwrap(), DivergenceKind::W1).unwrap();
            let tm = tmcb(&cases, t, DivergenceKind::W1).unwrap();
            (m, tm)
        };
        let (mcb_base, tmcb_base) = eval(&baseline.params[0]);
        let (_, tmcb_pen) = eval(&penalized.params[0]);
        // Baseline: calibrated in the bulk, miscalibrated in the tail.
        assert!(mcb_base < 0.05, "baseline mcb {mcb_base}");
        assert!(tmcb_base > 3.0 * mcb_base, "baseline tmcb {tmcb_base} vs mcb {mcb_base}");
        // The penalty improves test tail calibration.
        assert!(
            tmcb_pen < tmcb_base,
            "tmcb penalty should improve tail calibration: {tmcb_pen} vs {tmcb_base}"
        );
    }
}
