//! Composite training objectives: a base proper score plus an optional
//! regularization term (weighted score, MCB, TMCB, or CPIT-MCB) scaled by
//! gamma. Penalties are always computed over the full case list passed in,
//! never on minibatch estimates.
//!
//! Two entry points: [`evaluate_loss`] scores ready-made forecast cases,
//! and [`loss_gradient`] drives a [`DiffForecaster`] to obtain the exact
//! parameter gradient of the same objective through per-case adjoints.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Dual2, Scalar};
use crate::calib::{
    self, smoothed_pit, smoothed_pit_member_grads, smoothed_tail_stats, smoothed_tail_stats_grads,
    step_divergence, step_divergence_grads, CalibError, DivergenceKind, ForecastCase,
};
use crate::dist::Distribution;
use crate::scores::{
    censored_likelihood_score, crps_closed_tn, crps_sample, crps_tn_grad, fair_crps, fair_twcrps,
    log_score, tn_cdf_grad, tn_cls_grad, tn_log_score_grad, twcrps_closed_tn, twcrps_sample,
    twcrps_tn_grad, ScoreError, WeightSpec,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("empty case list")]
    EmptyCases,
    #[error("case {index}: forecast family incompatible with base score {base:?}")]
    IncompatibleForecast { index: usize, base: BaseScore },
    #[error("penalty {0:?} on sample forecasts requires pit smoothing (nu)")]
    SmoothingRequired(PenaltyKind),
    #[error("invalid loss spec: {0}")]
    InvalidSpec(String),
    #[error("case {index}: {source}")]
    Score { index: usize, source: ScoreError },
    #[error(transparent)]
    Calib(#[from] CalibError),
}

pub type Result<T> = std::result::Result<T, LossError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseScore {
    CrpsClosed,
    CrpsSample,
    FairCrps,
    LogScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyKind {
    None,
    /// Mean weighted score: twCRPS for CRPS bases, censored likelihood for
    /// the log score.
    Weighted,
    Mcb,
    Tmcb,
    CpitMcb,
}

/// One row of the loss-function table: base score, penalty, gamma, the
/// threshold defining the tail, the divergence behind the calibration
/// penalties, and the smoothing width for sample-backed forecasts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub base: BaseScore,
    pub penalty: PenaltyKind,
    #[serde(default)]
    pub gamma: f64,
    pub threshold: f64,
    #[serde(default)]
    pub divergence: DivergenceKind,
    #[serde(default, rename = "nu", skip_serializing_if = "Option::is_none")]
    pub pit_smoothing: Option<f64>,
}

impl LossSpec {
    pub fn baseline(base: BaseScore, threshold: f64) -> Self {
        Self {
            base,
            penalty: PenaltyKind::None,
            gamma: 0.0,
            threshold,
            divergence: DivergenceKind::W1,
            pit_smoothing: None,
        }
    }

    pub fn with_penalty(mut self, penalty: PenaltyKind, gamma: f64) -> Self {
        self.penalty = penalty;
        self.gamma = gamma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) {
            return Err(LossError::InvalidSpec(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !self.threshold.is_finite() && self.penalty != PenaltyKind::None {
            return Err(LossError::InvalidSpec("penalties need a finite threshold".into()));
        }
        if let Some(nu) = self.pit_smoothing {
            if !(nu > 0.0) {
                return Err(LossError::InvalidSpec(format!("nu must be positive, got {nu}")));
            }
        }
        Ok(())
    }

    fn weight(&self) -> WeightSpec {
        WeightSpec::new(self.threshold)
    }
}

/// Decomposed objective value; total = base_mean + gamma * penalty_value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub base_mean: f64,
    pub penalty_value: f64,
}

impl LossReport {
    fn assemble(base_mean: f64, penalty_value: f64, gamma: f64) -> Self {
        Self { total: base_mean + gamma * penalty_value, base_mean, penalty_value }
    }
}

// ---------------------------------------------------------------------------
// Evaluation over forecast cases
// ---------------------------------------------------------------------------

fn base_score_of(case: &ForecastCase, spec: &LossSpec, index: usize) -> Result<f64> {
    let incompatible = || LossError::IncompatibleForecast { index, base: spec.base };
    let wrap = |source: ScoreError| LossError::Score { index, source };
    match spec.base {
        BaseScore::CrpsClosed => match &case.forecast {
            Distribution::TruncNormal(tn) => Ok(crps_closed_tn(tn, case.obs)),
            _ => Err(incompatible()),
        },
        BaseScore::CrpsSample => match &case.forecast {
            Distribution::Ensemble(e) => Ok(crps_sample(e, case.obs)),
            _ => Err(incompatible()),
        },
        BaseScore::FairCrps => match &case.forecast {
            Distribution::Ensemble(e) => fair_crps(e, case.obs).map_err(wrap),
            _ => Err(incompatible()),
        },
        BaseScore::LogScore => log_score(&case.forecast, case.obs).map_err(wrap),
    }
}

fn weighted_score_of(case: &ForecastCase, spec: &LossSpec, index: usize) -> Result<f64> {
    let incompatible = || LossError::IncompatibleForecast { index, base: spec.base };
    let wrap = |source: ScoreError| LossError::Score { index, source };
    let w = spec.weight();
    match spec.base {
        BaseScore::CrpsClosed => match &case.forecast {
            Distribution::TruncNormal(tn) => Ok(twcrps_closed_tn(tn, case.obs, &w)),
            _ => Err(incompatible()),
        },
        BaseScore::CrpsSample => match &case.forecast {
            Distribution::Ensemble(e) => Ok(twcrps_sample(e, case.obs, &w)),
            _ => Err(incompatible()),
        },
        BaseScore::FairCrps => match &case.forecast {
            Distribution::Ensemble(e) => fair_twcrps(e, case.obs, &w).map_err(wrap),
            _ => Err(incompatible()),
        },
        BaseScore::LogScore => censored_likelihood_score(&case.forecast, case.obs, &w).map_err(wrap),
    }
}

/// PIT of one case for penalty purposes: exact cdf for continuous
/// forecasts, sigmoid-smoothed rank for ensembles (requires `nu`).
fn penalty_pit(case: &ForecastCase, spec: &LossSpec) -> Result<f64> {
    match &case.forecast {
        Distribution::Ensemble(e) => {
            let nu = spec
                .pit_smoothing
                .ok_or(LossError::SmoothingRequired(spec.penalty))?;
            Ok(smoothed_pit(e.members(), case.obs, nu))
        }
        d => Ok(d.cdf(case.obs)),
    }
}

/// (cpit if obs exceeds, exceedance probability) for penalty purposes.
fn penalty_tail(case: &ForecastCase, spec: &LossSpec) -> Result<(Option<f64>, f64)> {
    match &case.forecast {
        Distribution::Ensemble(e) => {
            let nu = spec
                .pit_smoothing
                .ok_or(LossError::SmoothingRequired(spec.penalty))?;
            let (cpit, exceed) = smoothed_tail_stats(e.members(), case.obs, spec.threshold, nu);
            let cp = if case.obs > spec.threshold { Some(cpit.clamp(0.0, 1.0)) } else { None };
            Ok((cp, exceed))
        }
        d => {
            let exceed = 1.0 - d.cdf(spec.threshold);
            let cp = if case.obs > spec.threshold {
                Some(calib::cpit(d, case.obs, spec.threshold)?)
            } else {
                None
            };
            Ok((cp, exceed))
        }
    }
}

fn penalty_value_of(cases: &[ForecastCase], spec: &LossSpec) -> Result<f64> {
    match spec.penalty {
        PenaltyKind::None => Ok(0.0),
        PenaltyKind::Weighted => {
            let mut total = 0.0;
            for (i, case) in cases.iter().enumerate() {
                total += weighted_score_of(case, spec, i)?;
            }
            Ok(total / cases.len() as f64)
        }
        PenaltyKind::Mcb => {
            let mut pits = Vec::with_capacity(cases.len());
            for case in cases {
                pits.push(penalty_pit(case, spec)?.clamp(0.0, 1.0));
            }
            pits.sort_by(|a, b| a.partial_cmp(b).unwrap());
            Ok(step_divergence(&pits, 1.0, spec.divergence))
        }
        PenaltyKind::Tmcb => {
            let mut cpits = Vec::new();
            let mut prob_sum = 0.0;
            for case in cases {
                let (cp, exceed) = penalty_tail(case, spec)?;
                prob_sum += exceed;
                if let Some(z) = cp {
                    cpits.push(z);
                }
            }
            if prob_sum <= 0.0 {
                return Err(CalibError::DegenerateExceedance(spec.threshold).into());
            }
            cpits.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let ohat = cpits.len() as f64 / prob_sum;
            Ok(step_divergence(&cpits, ohat, spec.divergence))
        }
        PenaltyKind::CpitMcb => {
            let mut cpits = Vec::new();
            for case in cases {
                let (cp, _) = penalty_tail(case, spec)?;
                if let Some(z) = cp {
                    cpits.push(z);
                }
            }
            if cpits.is_empty() {
                return Err(CalibError::EmptyExceedanceSet(spec.threshold).into());
            }
            cpits.sort_by(|a, b| a.partial_cmp(b).unwrap());
            Ok(step_divergence(&cpits, 1.0, spec.divergence))
        }
    }
}

/// Evaluate the composite objective over a dataset of forecast cases.
pub fn evaluate_loss(cases: &[ForecastCase], spec: &LossSpec) -> Result<LossReport> {
    spec.validate()?;
    if cases.is_empty() {
        return Err(LossError::EmptyCases);
    }
    let mut base_total = 0.0;
    for (i, case) in cases.iter().enumerate() {
        base_total += base_score_of(case, spec, i)?;
    }
    let base_mean = base_total / cases.len() as f64;
    let penalty_value = penalty_value_of(cases, spec)?;
    Ok(LossReport::assemble(base_mean, penalty_value, spec.gamma))
}

// ---------------------------------------------------------------------------
// Differentiable path
// ---------------------------------------------------------------------------

/// A forecast in differentiable form: either truncated-normal parameters or
/// generated sample members.
#[derive(Debug, Clone, PartialEq)]
pub enum ForecastOutput {
    Tn { mu: f64, sigma: f64, lower: f64 },
    Samples(Vec<f64>),
}

/// Loss derivative with respect to one case's forecast representation.
/// Parametric forecasts differentiate in (mu, log sigma).
#[derive(Debug, Clone, PartialEq)]
pub enum ForecastAdjoint {
    Tn { d_mu: f64, d_log_sigma: f64 },
    Samples(Vec<f64>),
}

/// A model that can emit differentiable forecasts for its training cases
/// and turn per-case adjoints into a parameter gradient.
pub trait DiffForecaster {
    fn param_count(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, p: &[f64]);
    /// Forecast outputs aligned with the model's case list. `draw_seed`
    /// pins any latent draws, so equal seeds give equal outputs.
    fn forward(&mut self, draw_seed: u64) -> Vec<ForecastOutput>;
    /// Full parameter gradient for the adjoints of the last `forward`.
    fn backward(&mut self, adjoints: &[ForecastAdjoint]) -> Vec<f64>;
}

fn zero_adjoint(out: &ForecastOutput) -> ForecastAdjoint {
    match out {
        ForecastOutput::Tn { .. } => ForecastAdjoint::Tn { d_mu: 0.0, d_log_sigma: 0.0 },
        ForecastOutput::Samples(m) => ForecastAdjoint::Samples(vec![0.0; m.len()]),
    }
}

fn add_tn(adj: &mut ForecastAdjoint, scale: f64, d_mu: f64, d_ls: f64) {
    if let ForecastAdjoint::Tn { d_mu: am, d_log_sigma: als } = adj {
        *am += scale * d_mu;
        *als += scale * d_ls;
    }
}

fn add_samples(adj: &mut ForecastAdjoint, scale: f64, grads: &[f64]) {
    if let ForecastAdjoint::Samples(a) = adj {
        for (x, g) in a.iter_mut().zip(grads) {
            *x += scale * g;
        }
    }
}

/// d crps_sample / d member_k in the original member order, plus the value.
/// `fair` switches the spread denominator from 2 M^2 to 2 M (M - 1).
pub(crate) fn sample_crps_value_grads(members: &[f64], y: f64, fair: bool) -> (f64, Vec<f64>) {
    let m = members.len();
    let mf = m as f64;
    let spread_den = if fair { mf * (mf - 1.0) } else { mf * mf };
    // rank information via an index sort
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|a, b| members[*a].partial_cmp(&members[*b]).unwrap());
    let mut dist_term = 0.0;
    let mut pair_sum = 0.0;
    let mut grads = vec![0.0; m];
    for (rank, &orig) in idx.iter().enumerate() {
        let x = members[orig];
        dist_term += (x - y).abs();
        // sum_j sign(x_k - x_j) over sorted ranks; ties are measure zero
        let sign_sum = (2 * rank) as f64 - (mf - 1.0);
        pair_sum += x * sign_sum;
        grads[orig] = (x - y).signum() / mf - sign_sum / spread_den;
    }
    let value = dist_term / mf - pair_sum / spread_den;
    (value, grads)
}

/// twCRPS variant: v-map the members and observation, then chain the
/// indicator derivative dv/dx = 1{x > t}.
pub(crate) fn sample_twcrps_value_grads(members: &[f64], y: f64, t: f64, fair: bool) -> (f64, Vec<f64>) {
    let mapped: Vec<f64> = members.iter().map(|x| x.max(t)).collect();
    let (value, mut grads) = sample_crps_value_grads(&mapped, y.max(t), fair);
    for (g, x) in grads.iter_mut().zip(members) {
        if *x <= t {
            *g = 0.0;
        }
    }
    (value, grads)
}

fn tn_cdf_dual(mu: f64, sigma: f64, lower: f64, x: f64) -> Dual2 {
    let (v, d0, d1) = tn_cdf_grad(mu, sigma, lower, x);
    Dual2::new(v, d0, d1)
}

/// Mean base score and its adjoints (already divided by the case count).
pub fn base_adjoints(
    outputs: &[ForecastOutput],
    obs: &[f64],
    spec: &LossSpec,
) -> Result<(f64, Vec<ForecastAdjoint>)> {
    if outputs.is_empty() || outputs.len() != obs.len() {
        return Err(LossError::EmptyCases);
    }
    let nf = outputs.len() as f64;
    let mut adjoints: Vec<ForecastAdjoint> = outputs.iter().map(zero_adjoint).collect();
    let mut base_total = 0.0;
    for (i, (out, &y)) in outputs.iter().zip(obs).enumerate() {
        match (out, spec.base) {
            (ForecastOutput::Tn { mu, sigma, lower }, BaseScore::CrpsClosed) => {
                let (v, dmu, dls) = crps_tn_grad(*mu, *sigma, *lower, y);
                base_total += v;
                add_tn(&mut adjoints[i], 1.0 / nf, dmu, dls);
            }
            (ForecastOutput::Tn { mu, sigma, lower }, BaseScore::LogScore) => {
                let (v, dmu, dls) = tn_log_score_grad(*mu, *sigma, *lower, y);
                base_total += v;
                add_tn(&mut adjoints[i], 1.0 / nf, dmu, dls);
            }
            (ForecastOutput::Samples(m), BaseScore::CrpsSample) => {
                let (v, g) = sample_crps_value_grads(m, y, false);
                base_total += v;
                add_samples(&mut adjoints[i], 1.0 / nf, &g);
            }
            (ForecastOutput::Samples(m), BaseScore::FairCrps) => {
                if m.len() < 2 {
                    return Err(LossError::Score {
                        index: i,
                        source: ScoreError::TooFewMembers(m.len()),
                    });
                }
                let (v, g) = sample_crps_value_grads(m, y, true);
                base_total += v;
                add_samples(&mut adjoints[i], 1.0 / nf, &g);
            }
            _ => return Err(LossError::IncompatibleForecast { index: i, base: spec.base }),
        }
    }
    Ok((base_total / nf, adjoints))
}

/// Raw penalty value and its adjoints (gamma is NOT applied here). Exposed
/// separately because sample-backed finetuning evaluates the base score and
/// the penalty on ensembles of different sizes.
pub fn penalty_adjoints(
    outputs: &[ForecastOutput],
    obs: &[f64],
    spec: &LossSpec,
) -> Result<(f64, Vec<ForecastAdjoint>)> {
    if outputs.is_empty() || outputs.len() != obs.len() {
        return Err(LossError::EmptyCases);
    }
    let n = outputs.len();
    let nf = n as f64;
    let mut adjoints: Vec<ForecastAdjoint> = outputs.iter().map(zero_adjoint).collect();
    let value = match spec.penalty {
        PenaltyKind::None => 0.0,
        PenaltyKind::Weighted => {
            let t = spec.threshold;
            let mut total = 0.0;
            for (i, (out, &y)) in outputs.iter().zip(obs).enumerate() {
                match (out, spec.base) {
                    (ForecastOutput::Tn { mu, sigma, lower }, BaseScore::CrpsClosed) => {
                        let (v, dmu, dls) = twcrps_tn_grad(*mu, *sigma, *lower, y, t);
                        total += v;
                        add_tn(&mut adjoints[i], 1.0 / nf, dmu, dls);
                    }
                    (ForecastOutput::Tn { mu, sigma, lower }, BaseScore::LogScore) => {
                        let (v, dmu, dls) = tn_cls_grad(*mu, *sigma, *lower, y, t);
                        total += v;
                        add_tn(&mut adjoints[i], 1.0 / nf, dmu, dls);
                    }
                    (ForecastOutput::Samples(m), BaseScore::CrpsSample) => {
                        let (v, g) = sample_twcrps_value_grads(m, y, t, false);
                        total += v;
                        add_samples(&mut adjoints[i], 1.0 / nf, &g);
                    }
                    (ForecastOutput::Samples(m), BaseScore::FairCrps) => {
                        let (v, g) = sample_twcrps_value_grads(m, y, t, true);
                        total += v;
                        add_samples(&mut adjoints[i], 1.0 / nf, &g);
                    }
                    _ => {
                        return Err(LossError::IncompatibleForecast { index: i, base: spec.base })
                    }
                }
            }
            total / nf
        }
        PenaltyKind::Mcb => {
            // PIT per case with its (mu, log sigma) or member gradients.
            let mut pits: Vec<(f64, usize)> = Vec::with_capacity(n);
            let mut pit_grads: Vec<PitGrad> = Vec::with_capacity(n);
            for (i, (out, &y)) in outputs.iter().zip(obs).enumerate() {
                match out {
                    ForecastOutput::Tn { mu, sigma, lower } => {
                        let (v, dmu, dls) = tn_cdf_grad(*mu, *sigma, *lower, y);
                        pits.push((v, i));
                        pit_grads.push(PitGrad::Tn(dmu, dls));
                    }
                    ForecastOutput::Samples(m) => {
                        let nu = spec
                            .pit_smoothing
                            .ok_or(LossError::SmoothingRequired(spec.penalty))?;
                        pits.push((smoothed_pit(m, y, nu), i));
                        pit_grads.push(PitGrad::Samples(smoothed_pit_member_grads(m, y, nu)));
                    }
                }
            }
            pits.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let sorted: Vec<f64> = pits.iter().map(|p| p.0.clamp(0.0, 1.0)).collect();
            let (value, d_sorted, _) = step_divergence_grads(&sorted, 1.0, spec.divergence);
            for (k, (_, case_idx)) in pits.iter().enumerate() {
                apply_pit_grad(&mut adjoints[*case_idx], d_sorted[k], &pit_grads[*case_idx]);
            }
            value
        }
        PenaltyKind::Tmcb | PenaltyKind::CpitMcb => {
            let t = spec.threshold;
            let with_ohat = spec.penalty == PenaltyKind::Tmcb;
            // Exceedance probabilities for all cases, CPITs with gradients
            // for the exceeding ones.
            let mut cpits: Vec<(f64, usize)> = Vec::new();
            let mut cpit_grads: Vec<PitGrad> = vec![PitGrad::Empty; n];
            let mut exceed_grads: Vec<PitGrad> = vec![PitGrad::Empty; n];
            let mut prob_sum = 0.0;
            for (i, (out, &y)) in outputs.iter().zip(obs).enumerate() {
                match out {
                    ForecastOutput::Tn { mu, sigma, lower } => {
                        let ft = tn_cdf_dual(*mu, *sigma, *lower, t);
                        prob_sum += 1.0 - ft.v;
                        exceed_grads[i] = PitGrad::Tn(-ft.d0, -ft.d1);
                        if y > t {
                            if 1.0 - ft.v < 1e-15 {
                                cpits.push((1.0, i));
                                cpit_grads[i] = PitGrad::Tn(0.0, 0.0);
                            } else {
                                let fy = tn_cdf_dual(*mu, *sigma, *lower, y);
                                let one = Dual2::constant(1.0);
                                let z = (fy - ft) / (one - ft);
                                cpits.push((z.v, i));
                                cpit_grads[i] = PitGrad::Tn(z.d0, z.d1);
                            }
                        }
                    }
                    ForecastOutput::Samples(m) => {
                        let nu = spec
                            .pit_smoothing
                            .ok_or(LossError::SmoothingRequired(spec.penalty))?;
                        let (cpit, exceed, d_cpit, d_exceed) =
                            smoothed_tail_stats_grads(m, y, t, nu);
                        prob_sum += exceed;
                        exceed_grads[i] = PitGrad::Samples(d_exceed);
                        if y > t {
                            cpits.push((cpit, i));
                            cpit_grads[i] = PitGrad::Samples(d_cpit);
                        }
                    }
                }
            }
            if with_ohat && prob_sum <= 0.0 {
                return Err(LossError::Calib(CalibError::DegenerateExceedance(t)));
            }
            if !with_ohat && cpits.is_empty() {
                return Err(LossError::Calib(CalibError::EmptyExceedanceSet(t)));
            }
            cpits.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let sorted: Vec<f64> = cpits.iter().map(|p| p.0.clamp(0.0, 1.0)).collect();
            let m_exceed = sorted.len() as f64;
            let scale = if with_ohat { m_exceed / prob_sum } else { 1.0 };
            let (value, d_sorted, d_scale) = step_divergence_grads(&sorted, scale, spec.divergence);
            for (k, (_, case_idx)) in cpits.iter().enumerate() {
                apply_pit_grad(&mut adjoints[*case_idx], d_sorted[k], &cpit_grads[*case_idx]);
            }
            if with_ohat {
                // d scale / d p_i = -m / prob_sum^2 through every case's
                // exceedance probability.
                let chain = -m_exceed / (prob_sum * prob_sum);
                for i in 0..n {
                    apply_pit_grad(&mut adjoints[i], d_scale * chain, &exceed_grads[i]);
                }
            }
            value
        }
    };
    Ok((value, adjoints))
}

fn merge_adjoints(into: &mut [ForecastAdjoint], from: &[ForecastAdjoint], scale: f64) {
    for (a, b) in into.iter_mut().zip(from) {
        match b {
            ForecastAdjoint::Tn { d_mu, d_log_sigma } => add_tn(a, scale, *d_mu, *d_log_sigma),
            ForecastAdjoint::Samples(g) => add_samples(a, scale, g),
        }
    }
}

/// Composite loss value and per-case adjoints for differentiable outputs.
/// Observations must align with `outputs`.
pub fn loss_adjoints(
    outputs: &[ForecastOutput],
    obs: &[f64],
    spec: &LossSpec,
) -> Result<(LossReport, Vec<ForecastAdjoint>)> {
    spec.validate()?;
    let (base_mean, mut adjoints) = base_adjoints(outputs, obs, spec)?;
    let penalty_value = if spec.penalty == PenaltyKind::None {
        0.0
    } else {
        let (value, pen_adj) = penalty_adjoints(outputs, obs, spec)?;
        merge_adjoints(&mut adjoints, &pen_adj, spec.gamma);
        value
    };
    Ok((LossReport::assemble(base_mean, penalty_value, spec.gamma), adjoints))
}

/// Value-only twin of [`loss_adjoints`] for optimizers that differentiate
/// numerically; skips all gradient bookkeeping.
pub fn evaluate_outputs(
    outputs: &[ForecastOutput],
    obs: &[f64],
    spec: &LossSpec,
) -> Result<LossReport> {
    spec.validate()?;
    if outputs.is_empty() || outputs.len() != obs.len() {
        return Err(LossError::EmptyCases);
    }
    let nf = outputs.len() as f64;
    let mut base_total = 0.0;
    for (i, (out, &y)) in outputs.iter().zip(obs).enumerate() {
        base_total += match (out, spec.base) {
            (ForecastOutput::Tn { mu, sigma, lower }, BaseScore::CrpsClosed) => {
                crate::scores::crps_tn_value(*mu, *sigma, *lower, y)
            }
            (ForecastOutput::Tn { mu, sigma, lower }, BaseScore::LogScore) => {
                tn_log_score_grad(*mu, *sigma, *lower, y).0
            }
            (ForecastOutput::Samples(m), BaseScore::CrpsSample) => {
                sample_crps_value_grads(m, y, false).0
            }
            (ForecastOutput::Samples(m), BaseScore::FairCrps) => {
                sample_crps_value_grads(m, y, true).0
            }
            _ => return Err(LossError::IncompatibleForecast { index: i, base: spec.base }),
        };
    }
    let base_mean = base_total / nf;

    let penalty_value = match spec.penalty {
        PenaltyKind::None => 0.0,
        PenaltyKind::Weighted => {
            let t = spec.threshold;
            let mut total = 0.0;
            for (i, (out, &y)) in outputs.iter().zip(obs).enumerate() {
                total += match (out, spec.base) {
                    (ForecastOutput::Tn { mu, sigma, lower }, BaseScore::CrpsClosed) => {
                        crate::scores::twcrps_tn_value(*mu, *sigma, *lower, y, t)
                    }
                    (ForecastOutput::Tn { mu, sigma, lower }, BaseScore::LogScore) => {
                        tn_cls_grad(*mu, *sigma, *lower, y, t).0
                    }
                    (ForecastOutput::Samples(m), BaseScore::CrpsSample) => {
                        sample_twcrps_value_grads(m, y, t, false).0
                    }
                    (ForecastOutput::Samples(m), BaseScore::FairCrps) => {
                        sample_twcrps_value_grads(m, y, t, true).0
                    }
                    _ => {
                        return Err(LossError::IncompatibleForecast { index: i, base: spec.base })
                    }
                };
            }
            total / nf
        }
        PenaltyKind::Mcb => {
            let mut pits = Vec::with_capacity(outputs.len());
            for (out, &y) in outputs.iter().zip(obs) {
                pits.push(output_pit(out, y, spec)?.clamp(0.0, 1.0));
            }
            pits.sort_by(|a, b| a.partial_cmp(b).unwrap());
            step_divergence(&pits, 1.0, spec.divergence)
        }
        PenaltyKind::Tmcb | PenaltyKind::CpitMcb => {
            let t = spec.threshold;
            let with_ohat = spec.penalty == PenaltyKind::Tmcb;
            let mut cpits = Vec::new();
            let mut prob_sum = 0.0;
            for (out, &y) in outputs.iter().zip(obs) {
                let (cp, exceed) = output_tail(out, y, spec)?;
                prob_sum += exceed;
                if let Some(z) = cp {
                    cpits.push(z.clamp(0.0, 1.0));
                }
            }
            if with_ohat && prob_sum <= 0.0 {
                return Err(LossError::Calib(CalibError::DegenerateExceedance(t)));
            }
            if !with_ohat && cpits.is_empty() {
                return Err(LossError::Calib(CalibError::EmptyExceedanceSet(t)));
            }
            cpits.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let scale = if with_ohat { cpits.len() as f64 / prob_sum } else { 1.0 };
            step_divergence(&cpits, scale, spec.divergence)
        }
    };

    Ok(LossReport::assemble(base_mean, penalty_value, spec.gamma))
}

fn output_pit(out: &ForecastOutput, y: f64, spec: &LossSpec) -> Result<f64> {
    match out {
        ForecastOutput::Tn { mu, sigma, lower } => Ok(tn_cdf_grad(*mu, *sigma, *lower, y).0),
        ForecastOutput::Samples(m) => {
            let nu = spec.pit_smoothing.ok_or(LossError::SmoothingRequired(spec.penalty))?;
            Ok(smoothed_pit(m, y, nu))
        }
    }
}

fn output_tail(out: &ForecastOutput, y: f64, spec: &LossSpec) -> Result<(Option<f64>, f64)> {
    let t = spec.threshold;
    match out {
        ForecastOutput::Tn { mu, sigma, lower } => {
            let ft = tn_cdf_grad(*mu, *sigma, *lower, t).0;
            let exceed = 1.0 - ft;
            let cp = if y > t {
                if exceed < 1e-15 {
                    Some(1.0)
                } else {
                    Some(((tn_cdf_grad(*mu, *sigma, *lower, y).0 - ft) / exceed).clamp(0.0, 1.0))
                }
            } else {
                None
            };
            Ok((cp, exceed))
        }
        ForecastOutput::Samples(m) => {
            let nu = spec.pit_smoothing.ok_or(LossError::SmoothingRequired(spec.penalty))?;
            let (cpit, exceed) = smoothed_tail_stats(m, y, t, nu);
            let cp = if y > t { Some(cpit.clamp(0.0, 1.0)) } else { None };
            Ok((cp, exceed))
        }
    }
}

#[derive(Debug, Clone)]
enum PitGrad {
    Empty,
    Tn(f64, f64),
    Samples(Vec<f64>),
}

fn apply_pit_grad(adj: &mut ForecastAdjoint, scale: f64, grad: &PitGrad) {
    match grad {
        PitGrad::Empty => {}
        PitGrad::Tn(dmu, dls) => add_tn(adj, scale, *dmu, *dls),
        PitGrad::Samples(g) => add_samples(adj, scale, g),
    }
}

/// Exact gradient of the composite objective with respect to the model's
/// parameter vector, by chaining per-case adjoints through the model.
pub fn loss_gradient(
    observations: &[f64],
    spec: &LossSpec,
    model: &mut dyn DiffForecaster,
    draw_seed: u64,
) -> Result<(LossReport, Vec<f64>)> {
    let outputs = model.forward(draw_seed);
    let (report, adjoints) = loss_adjoints(&outputs, observations, spec)?;
    Ok((report, model.backward(&adjoints)))
}
