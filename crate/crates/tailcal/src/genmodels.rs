//! The two network forecasters: a distributional regression network
//! emitting truncated-normal parameters, and a conditional generative model
//! producing forecast samples from latent noise. Both share the covariates
//! (ensemble mean and spread, seasonal harmonics, a learned 2-D station
//! embedding), are pre-trained on the CRPS with minibatch Adam, and are
//! finetuned full-batch under the regularized objectives.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::ForecastCase;
use crate::data::WeatherRow;
use crate::dist::{DistError, Distribution, EnsembleForecast, TruncatedNormal};
use crate::loss::{
    base_adjoints, loss_adjoints, penalty_adjoints, BaseScore, DiffForecaster, ForecastAdjoint,
    ForecastOutput, LossError, LossSpec, PenaltyKind,
};
use crate::metrics::{evaluate_cases, MetricSet};
use crate::nnet::{Activation, EmbeddingGrads, EmbeddingTable, Mlp, MlpGrads, NnetError, Tape};
use crate::optim::{AdamState, OptimizerConfig};

#[derive(Debug, Error)]
pub enum GenModelError {
    #[error("unknown station `{0}`")]
    UnknownStation(String),
    #[error("empty training data")]
    EmptyData,
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error(transparent)]
    Nnet(#[from] NnetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Calib(#[from] crate::calib::CalibError),
}

pub type Result<T> = std::result::Result<T, GenModelError>;

// ---------------------------------------------------------------------------
// Shared pieces
// ---------------------------------------------------------------------------

/// Standardization constants for the two ensemble covariates, estimated on
/// the training rows and stored with the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean_center: f64,
    pub mean_scale: f64,
    pub sd_center: f64,
    pub sd_scale: f64,
}

impl FeatureScaler {
    pub fn fit(rows: &[WeatherRow]) -> Self {
        let n = rows.len().max(1) as f64;
        let mm = rows.iter().map(|r| r.ens_mean).sum::<f64>() / n;
        let ms = rows.iter().map(|r| r.ens_sd).sum::<f64>() / n;
        let vm = rows.iter().map(|r| (r.ens_mean - mm).powi(2)).sum::<f64>() / n;
        let vs = rows.iter().map(|r| (r.ens_sd - ms).powi(2)).sum::<f64>() / n;
        Self {
            mean_center: mm,
            mean_scale: vm.sqrt().max(1e-6),
            sd_center: ms,
            sd_scale: vs.sqrt().max(1e-6),
        }
    }
}

/// Covariates for one case after standardization, with embedding slots to
/// be filled from the current table.
#[derive(Debug, Clone, Copy)]
pub struct PreparedCase {
    pub mean_std: f64,
    pub sd_std: f64,
    pub sd_raw: f64,
    pub sin_doy: f64,
    pub cos_doy: f64,
    pub station: usize,
    pub obs: f64,
}

fn doy_harmonics(doy: f64) -> (f64, f64) {
    let angle = 2.0 * std::f64::consts::PI * doy / 365.25;
    (angle.sin(), angle.cos())
}

/// Sorted unique station ids of a row set.
pub fn station_list(rows: &[WeatherRow]) -> Vec<String> {
    let mut names: Vec<String> = rows.iter().map(|r| r.station_id.clone()).collect();
    names.sort();
    names.dedup();
    names
}

fn prepare_cases(
    rows: &[WeatherRow],
    stations: &[String],
    scaler: &FeatureScaler,
) -> Result<Vec<PreparedCase>> {
    rows.iter()
        .map(|r| {
            let station = stations
                .binary_search(&r.station_id)
                .map_err(|_| GenModelError::UnknownStation(r.station_id.clone()))?;
            let (sin_doy, cos_doy) = doy_harmonics(r.doy as f64);
            Ok(PreparedCase {
                mean_std: (r.ens_mean - scaler.mean_center) / scaler.mean_scale,
                sd_std: (r.ens_sd - scaler.sd_center) / scaler.sd_scale,
                sd_raw: r.ens_sd,
                sin_doy,
                cos_doy,
                station,
                obs: r.obs,
            })
        })
        .collect()
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn inverse_softplus(y: f64) -> f64 {
    // ln(e^y - 1); for y > 30 the identity is exact to double precision.
    if y > 30.0 {
        y
    } else {
        (y.max(1e-6).exp_m1()).ln()
    }
}

/// Common training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Ensemble size used for sample-based training (generative model).
    pub members: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn drn_default() -> Self {
        Self { hidden: vec![16, 16], epochs: 200, batch_size: 2048, learning_rate: 1e-3, members: 0, seed: 0 }
    }

    pub fn cgm_default() -> Self {
        Self { hidden: vec![16, 16], epochs: 50, batch_size: 2048, learning_rate: 1e-3, members: 250, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps: usize,
}

fn adam_cfg(lr: f64) -> OptimizerConfig {
    OptimizerConfig { adam_step: lr, ..OptimizerConfig::default() }
}

// ---------------------------------------------------------------------------
// Distributional regression network
// ---------------------------------------------------------------------------

pub const DRN_INPUT_DIM: usize = 6; // mean, sd, sin, cos, embed0, embed1

/// Truncated-normal-headed network forecaster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrnModel {
    pub trunk: Mlp,
    pub embedding: EmbeddingTable,
    pub scaler: FeatureScaler,
    pub stations: Vec<String>,
}

impl DrnModel {
    pub fn init(stations: Vec<String>, scaler: FeatureScaler, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut dims = vec![DRN_INPUT_DIM];
        dims.extend_from_slice(hidden);
        dims.push(2);
        let mut acts = vec![Activation::Relu; hidden.len()];
        acts.push(Activation::Identity);
        let trunk = Mlp::he_init(&dims, &acts, &mut rng)?;
        let embedding = EmbeddingTable::init(stations.len(), &mut rng);
        Ok(Self { trunk, embedding, scaler, stations })
    }

    pub fn station_index(&self, id: &str) -> Result<usize> {
        self.stations
            .binary_search(&id.to_string())
            .map_err(|_| GenModelError::UnknownStation(id.to_string()))
    }

    fn features(&self, case: &PreparedCase) -> Result<[f64; DRN_INPUT_DIM]> {
        let e = self.embedding.embed(case.station)?;
        Ok([case.mean_std, case.sd_std, case.sin_doy, case.cos_doy, e[0], e[1]])
    }

    fn head(out: &[f64]) -> (f64, f64) {
        (out[0], out[1].clamp(-15.0, 15.0).exp())
    }

    /// Forward one case to (mu, sigma) plus the tape for backprop.
    fn forward_case(&self, case: &PreparedCase) -> Result<((f64, f64), Tape)> {
        let (out, tape) = self.trunk.forward(&self.features(case)?)?;
        Ok((Self::head(&out), tape))
    }

    /// Predictive distribution for one row.
    pub fn predict_row(&self, row: &WeatherRow) -> Result<TruncatedNormal> {
        let station = self.station_index(&row.station_id)?;
        let (sin_doy, cos_doy) = doy_harmonics(row.doy as f64);
        let case = PreparedCase {
            mean_std: (row.ens_mean - self.scaler.mean_center) / self.scaler.mean_scale,
            sd_std: (row.ens_sd - self.scaler.sd_center) / self.scaler.sd_scale,
            sd_raw: row.ens_sd,
            sin_doy,
            cos_doy,
            station,
            obs: row.obs,
        };
        let ((mu, sigma), _) = self.forward_case(&case)?;
        Ok(TruncatedNormal::new(mu, sigma, 0.0)?)
    }

    pub fn param_count(&self) -> usize {
        self.trunk.param_count() + self.embedding.param_count()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.trunk.flatten_into(&mut out);
        self.embedding.flatten_into(&mut out);
        out
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let used = self.trunk.set_from_flat(p);
        self.embedding.set_from_flat(&p[used..]);
    }

    /// Backward pass for one case: output adjoint (d mu, d log sigma) into
    /// trunk and embedding gradient accumulators.
    fn backward_case(
        &self,
        case: &PreparedCase,
        tape: &Tape,
        d_mu: f64,
        d_log_sigma: f64,
        trunk_grads: &mut MlpGrads,
        embed_grads: &mut EmbeddingGrads,
    ) -> Result<()> {
        // Head: mu is raw output 0; log sigma is clamped output 1.
        let (grads, input_grad) = self.trunk.backward(tape, &[d_mu, d_log_sigma])?;
        trunk_grads.add(&grads);
        embed_grads.accumulate(case.station, [input_grad[4], input_grad[5]]);
        Ok(())
    }
}

/// The network plus its prepared dataset, exposing the differentiable-model
/// interface used by full-batch finetuning and gradient checks.
pub struct DrnDiff<'a> {
    pub model: &'a mut DrnModel,
    cases: Vec<PreparedCase>,
    tapes: Vec<Tape>,
}

impl<'a> DrnDiff<'a> {
    pub fn new(model: &'a mut DrnModel, rows: &[WeatherRow]) -> Result<Self> {
        let cases = prepare_cases(rows, &model.stations, &model.scaler)?;
        Ok(Self { model, cases, tapes: Vec::new() })
    }

    pub fn observations(&self) -> Vec<f64> {
        self.cases.iter().map(|c| c.obs).collect()
    }
}

impl DiffForecaster for DrnDiff<'_> {
    fn param_count(&self) -> usize {
        self.model.param_count()
    }
    fn params(&self) -> Vec<f64> {
        self.model.params()
    }
    fn set_params(&mut self, p: &[f64]) {
        self.model.set_params(p);
    }
    fn forward(&mut self, _draw_seed: u64) -> Vec<ForecastOutput> {
        self.tapes.clear();
        let mut outputs = Vec::with_capacity(self.cases.len());
        for case in &self.cases {
            let ((mu, sigma), tape) = self.model.forward_case(case).expect("dims fixed");
            self.tapes.push(tape);
            outputs.push(ForecastOutput::Tn { mu, sigma, lower: 0.0 });
        }
        outputs
    }
    fn backward(&mut self, adjoints: &[ForecastAdjoint]) -> Vec<f64> {
        let mut trunk_grads = MlpGrads::zeros_like(&self.model.trunk);
        let mut embed_grads = EmbeddingGrads::zeros_like(&self.model.embedding);
        for ((case, tape), adj) in self.cases.iter().zip(&self.tapes).zip(adjoints) {
            if let ForecastAdjoint::Tn { d_mu, d_log_sigma } = adj {
                self.model
                    .backward_case(case, tape, *d_mu, *d_log_sigma, &mut trunk_grads, &mut embed_grads)
                    .expect("tape matches");
            }
        }
        let mut flat = Vec::with_capacity(self.model.param_count());
        trunk_grads.flatten_into(&mut flat);
        embed_grads.flatten_into(&mut flat);
        flat
    }
}

/// Minibatch Adam on the closed-form CRPS, shuffled from the config seed.
pub fn drn_train(rows: &[WeatherRow], cfg: &TrainConfig) -> Result<(DrnModel, TrainSummary)> {
    if rows.is_empty() {
        return Err(GenModelError::EmptyData);
    }
    let stations = station_list(rows);
    let scaler = FeatureScaler::fit(rows);
    let mut model = DrnModel::init(stations, scaler, &cfg.hidden, cfg.seed)?;
    // Output starting values: location at the observed mean, scale at the
    // observed spread.
    let n = rows.len() as f64;
    let obs_mean = rows.iter().map(|r| r.obs).sum::<f64>() / n;
    let obs_var = rows.iter().map(|r| (r.obs - obs_mean).powi(2)).sum::<f64>() / n;
    {
        let bias = model.trunk.output_bias_mut();
        bias[0] = obs_mean;
        bias[1] = obs_var.sqrt().max(0.1).ln();
    }

    let cases = prepare_cases(rows, &model.stations, &model.scaler)?;
    let spec = LossSpec::baseline(BaseScore::CrpsClosed, f64::NAN);
    let mut adam = AdamState::new(model.param_count(), &adam_cfg(cfg.learning_rate));
    let mut shuffle_rng = StdRng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let mut order: Vec<usize> = (0..cases.len()).collect();
    let mut steps = 0;
    let mut initial_loss = f64::NAN;
    let mut last_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        // Fisher-Yates from the replicate seed.
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut outputs = Vec::with_capacity(batch.len());
            let mut tapes = Vec::with_capacity(batch.len());
            let mut obs = Vec::with_capacity(batch.len());
            for &i in batch {
                let ((mu, sigma), tape) = model.forward_case(&cases[i])?;
                outputs.push(ForecastOutput::Tn { mu, sigma, lower: 0.0 });
                tapes.push(tape);
                obs.push(cases[i].obs);
            }
            let (mean_loss, adjoints) = base_adjoints(&outputs, &obs, &spec)?;
            if !mean_loss.is_finite() {
                return Err(GenModelError::Diverged { epoch, batch: batch_idx });
            }
            if steps == 0 {
                initial_loss = mean_loss;
            }
            last_loss = mean_loss;
            let mut trunk_grads = MlpGrads::zeros_like(&model.trunk);
            let mut embed_grads = EmbeddingGrads::zeros_like(&model.embedding);
            for ((&i, tape), adj) in batch.iter().zip(&tapes).zip(&adjoints) {
                if let ForecastAdjoint::Tn { d_mu, d_log_sigma } = adj {
                    model.backward_case(
                        &cases[i],
                        tape,
                        *d_mu,
                        *d_log_sigma,
                        &mut trunk_grads,
                        &mut embed_grads,
                    )?;
                }
            }
            let mut flat = Vec::with_capacity(model.param_count());
            trunk_grads.flatten_into(&mut flat);
            embed_grads.flatten_into(&mut flat);
            let mut params = model.params();
            adam.step(&mut params, &flat);
            model.set_params(&params);
            steps += 1;
        }
    }
    Ok((model, TrainSummary { initial_loss, final_loss: last_loss, steps }))
}

/// Full-batch finetuning under a regularized objective for a fixed number
/// of steps (no minibatching: the calibration penalties need the entire
/// training set).
pub fn drn_finetune(
    model: &mut DrnModel,
    rows: &[WeatherRow],
    spec: &LossSpec,
    steps: usize,
    learning_rate: f64,
) -> Result<TrainSummary> {
    let mut diff = DrnDiff::new(model, rows)?;
    let obs = diff.observations();
    let mut adam = AdamState::new(diff.param_count(), &adam_cfg(learning_rate));
    let mut initial_loss = f64::NAN;
    let mut last_loss = f64::NAN;
    for step in 0..steps {
        let outputs = diff.forward(0);
        let (report, adjoints) = loss_adjoints(&outputs, &obs, spec)?;
        if !report.total.is_finite() {
            return Err(GenModelError::Diverged { epoch: step, batch: 0 });
        }
        if step == 0 {
            initial_loss = report.total;
        }
        last_loss = report.total;
        let grad = diff.backward(&adjoints);
        let mut params = diff.params();
        adam.step(&mut params, &grad);
        diff.set_params(&params);
    }
    Ok(TrainSummary { initial_loss, final_loss: last_loss, steps })
}

// ---------------------------------------------------------------------------
// Conditional generative model
// ---------------------------------------------------------------------------

pub const CGM_INPUT_DIM: usize = 5; // signal, sin, cos, embed0, embed1

/// Sample-generating forecaster: one branch post-processes the ensemble
/// mean, the other transforms latent noise scaled by the ensemble spread;
/// their sum goes through a softplus so generated wind speeds stay
/// positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgmModel {
    pub mean_branch: Mlp,
    pub noise_branch: Mlp,
    pub embedding: EmbeddingTable,
    pub scaler: FeatureScaler,
    pub stations: Vec<String>,
}

struct CgmForward {
    mean_out: f64,
    mean_tape: Tape,
    noise_outs: Vec<f64>,
    noise_tapes: Vec<Tape>,
    members: Vec<f64>,
}

impl CgmModel {
    pub fn init(stations: Vec<String>, scaler: FeatureScaler, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut dims = vec![CGM_INPUT_DIM];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let mut acts = vec![Activation::Relu; hidden.len()];
        acts.push(Activation::Identity);
        let mean_branch = Mlp::he_init(&dims, &acts, &mut rng)?;
        let noise_branch = Mlp::he_init(&dims, &acts, &mut rng)?;
        let embedding = EmbeddingTable::init(stations.len(), &mut rng);
        Ok(Self { mean_branch, noise_branch, embedding, scaler, stations })
    }

    pub fn station_index(&self, id: &str) -> Result<usize> {
        self.stations
            .binary_search(&id.to_string())
            .map_err(|_| GenModelError::UnknownStation(id.to_string()))
    }

    pub fn param_count(&self) -> usize {
        self.mean_branch.param_count() + self.noise_branch.param_count() + self.embedding.param_count()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.mean_branch.flatten_into(&mut out);
        self.noise_branch.flatten_into(&mut out);
        self.embedding.flatten_into(&mut out);
        out
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let a = self.mean_branch.set_from_flat(p);
        let b = self.noise_branch.set_from_flat(&p[a..]);
        self.embedding.set_from_flat(&p[a + b..]);
    }

    /// Forward one case for a fixed latent vector; optionally keeps tapes.
    fn forward_case(&self, case: &PreparedCase, latents: &[f64], with_tapes: bool) -> Result<CgmForward> {
        let e = self.embedding.embed(case.station)?;
        let mean_in = [case.mean_std, case.sin_doy, case.cos_doy, e[0], e[1]];
        let (mean_vec, mean_tape) = self.mean_branch.forward(&mean_in)?;
        let mean_out = mean_vec[0];
        let mut noise_outs = Vec::with_capacity(latents.len());
        let mut noise_tapes = Vec::with_capacity(if with_tapes { latents.len() } else { 0 });
        let mut members = Vec::with_capacity(latents.len());
        for &eps in latents {
            let noise_in = [eps * case.sd_raw, case.sin_doy, case.cos_doy, e[0], e[1]];
            let (noise_vec, tape) = self.noise_branch.forward(&noise_in)?;
            noise_outs.push(noise_vec[0]);
            members.push(softplus(mean_out + noise_vec[0]));
            if with_tapes {
                noise_tapes.push(tape);
            }
        }
        Ok(CgmForward { mean_out, mean_tape, noise_outs, noise_tapes, members })
    }

    /// Backward one case: member adjoints chain through the softplus into
    /// both branches and the embedding row.
    #[allow(clippy::too_many_arguments)]
    fn backward_case(
        &self,
        case: &PreparedCase,
        fwd: &CgmForward,
        d_members: &[f64],
        mean_grads: &mut MlpGrads,
        noise_grads: &mut MlpGrads,
        embed_grads: &mut EmbeddingGrads,
    ) -> Result<()> {
        let mut d_mean = 0.0;
        let mut d_embed = [0.0; 2];
        for (j, &dm) in d_members.iter().enumerate() {
            if dm == 0.0 {
                continue;
            }
            let pre = fwd.mean_out + fwd.noise_outs[j];
            let g = dm * sigmoid(pre);
            d_mean += g;
            let (grads, input_grad) = self.noise_branch.backward(&fwd.noise_tapes[j], &[g])?;
            noise_grads.add(&grads);
            d_embed[0] += input_grad[3];
            d_embed[1] += input_grad[4];
        }
        let (grads, input_grad) = self.mean_branch.backward(&fwd.mean_tape, &[d_mean])?;
        mean_grads.add(&grads);
        d_embed[0] += input_grad[3];
        d_embed[1] += input_grad[4];
        embed_grads.accumulate(case.station, d_embed);
        Ok(())
    }

    /// Generate an ensemble forecast for one row; deterministic given the
    /// generator state, every member strictly positive.
    pub fn generate_row<R: Rng + ?Sized>(
        &self,
        row: &WeatherRow,
        members: usize,
        rng: &mut R,
    ) -> Result<EnsembleForecast> {
        let station = self.station_index(&row.station_id)?;
        let (sin_doy, cos_doy) = doy_harmonics(row.doy as f64);
        let case = PreparedCase {
            mean_std: (row.ens_mean - self.scaler.mean_center) / self.scaler.mean_scale,
            sd_std: (row.ens_sd - self.scaler.sd_center) / self.scaler.sd_scale,
            sd_raw: row.ens_sd,
            sin_doy,
            cos_doy,
            station,
            obs: row.obs,
        };
        let latents = draw_latents(rng, members);
        let fwd = self.forward_case(&case, &latents, false)?;
        Ok(EnsembleForecast::new(fwd.members)?)
    }
}

fn draw_latents<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| crate::special::norm_quantile(rng.gen::<f64>().max(1e-12)))
        .collect()
}

/// Minibatch Adam on the sample CRPS of generated ensembles; the latent
/// draws are resampled each step and treated as constants (pathwise
/// gradients through the noise branch).
pub fn cgm_train(rows: &[WeatherRow], cfg: &TrainConfig) -> Result<(CgmModel, TrainSummary)> {
    if rows.is_empty() {
        return Err(GenModelError::EmptyData);
    }
    let stations = station_list(rows);
    let scaler = FeatureScaler::fit(rows);
    let mut model = CgmModel::init(stations, scaler, &cfg.hidden, cfg.seed)?;
    let n = rows.len() as f64;
    let obs_mean = rows.iter().map(|r| r.obs).sum::<f64>() / n;
    model.mean_branch.output_bias_mut()[0] = inverse_softplus(obs_mean.max(0.1));

    let cases = prepare_cases(rows, &model.stations, &model.scaler)?;
    let mut adam = AdamState::new(model.param_count(), &adam_cfg(cfg.learning_rate));
    let mut rng = StdRng::seed_from_u64(cfg.seed ^ 0xc63a_11ce);
    let mut order: Vec<usize> = (0..cases.len()).collect();
    let mut steps = 0;
    let mut initial_loss = f64::NAN;
    let mut last_loss = f64::NAN;
    for epoch in 0..cfg.epochs {
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut mean_grads = MlpGrads::zeros_like(&model.mean_branch);
            let mut noise_grads = MlpGrads::zeros_like(&model.noise_branch);
            let mut embed_grads = EmbeddingGrads::zeros_like(&model.embedding);
            let mut batch_loss = 0.0;
            let bn = batch.len() as f64;
            for &i in batch {
                let latents = draw_latents(&mut rng, cfg.members);
                let fwd = model.forward_case(&cases[i], &latents, true)?;
                let (value, mut d_members) =
                    crate::loss::sample_crps_value_grads(&fwd.members, cases[i].obs, false);
                batch_loss += value;
                for d in d_members.iter_mut() {
                    *d /= bn;
                }
                model.backward_case(
                    &cases[i],
                    &fwd,
                    &d_members,
                    &mut mean_grads,
                    &mut noise_grads,
                    &mut embed_grads,
                )?;
            }
            batch_loss /= bn;
            if !batch_loss.is_finite() {
                return Err(GenModelError::Diverged { epoch, batch: batch_idx });
            }
            if steps == 0 {
                initial_loss = batch_loss;
            }
            last_loss = batch_loss;
            let mut flat = Vec::with_capacity(model.param_count());
            mean_grads.flatten_into(&mut flat);
            noise_grads.flatten_into(&mut flat);
            embed_grads.flatten_into(&mut flat);
            let mut params = model.params();
            adam.step(&mut params, &flat);
            model.set_params(&params);
            steps += 1;
        }
    }
    Ok((model, TrainSummary { initial_loss, final_loss: last_loss, steps }))
}

/// One full-batch finetune gradient for the generative model: fair CRPS on
/// `fair_members`-sized ensembles plus gamma times the penalty computed on
/// separate `penalty_members`-sized ensembles. Latents are drawn from
/// `draw_seed`, so repeated calls (e.g. finite differences) see identical
/// noise. Returns (total, base_mean, penalty_value, gradient).
pub fn cgm_finetune_objective_grad(
    model: &CgmModel,
    cases: &[PreparedCase],
    spec: &LossSpec,
    fair_members: usize,
    penalty_members: usize,
    draw_seed: u64,
) -> Result<(f64, f64, f64, Vec<f64>)> {
    let obs: Vec<f64> = cases.iter().map(|c| c.obs).collect();
    let mut rng = StdRng::seed_from_u64(draw_seed);
    let fair_latents: Vec<Vec<f64>> =
        cases.iter().map(|_| draw_latents(&mut rng, fair_members)).collect();
    let pen_latents: Vec<Vec<f64>> =
        cases.iter().map(|_| draw_latents(&mut rng, penalty_members)).collect();

    // Pass 1: members only.
    let mut fair_outputs = Vec::with_capacity(cases.len());
    let mut pen_outputs = Vec::with_capacity(cases.len());
    for (case, latents) in cases.iter().zip(&fair_latents) {
        fair_outputs.push(ForecastOutput::Samples(model.forward_case(case, latents, false)?.members));
    }
    for (case, latents) in cases.iter().zip(&pen_latents) {
        pen_outputs.push(ForecastOutput::Samples(model.forward_case(case, latents, false)?.members));
    }
    let base_spec = LossSpec { penalty: PenaltyKind::None, gamma: 0.0, ..*spec };
    let (base_mean, base_adj) = base_adjoints(&fair_outputs, &obs, &base_spec)?;
    let (pen_value, pen_adj) = if spec.penalty == PenaltyKind::None {
        (0.0, Vec::new())
    } else {
        penalty_adjoints(&pen_outputs, &obs, spec)?
    };

    // Pass 2: re-forward with tapes and accumulate.
    let mut mean_grads = MlpGrads::zeros_like(&model.mean_branch);
    let mut noise_grads = MlpGrads::zeros_like(&model.noise_branch);
    let mut embed_grads = EmbeddingGrads::zeros_like(&model.embedding);
    for (i, case) in cases.iter().enumerate() {
        if let ForecastAdjoint::Samples(d) = &base_adj[i] {
            if d.iter().any(|g| *g != 0.0) {
                let fwd = model.forward_case(case, &fair_latents[i], true)?;
                model.backward_case(case, &fwd, d, &mut mean_grads, &mut noise_grads, &mut embed_grads)?;
            }
        }
        if let Some(ForecastAdjoint::Samples(d)) = pen_adj.get(i) {
            let scaled: Vec<f64> = d.iter().map(|g| spec.gamma * g).collect();
            if scaled.iter().any(|g| *g != 0.0) {
                let fwd = model.forward_case(case, &pen_latents[i], true)?;
                model.backward_case(
                    case,
                    &fwd,
                    &scaled,
                    &mut mean_grads,
                    &mut noise_grads,
                    &mut embed_grads,
                )?;
            }
        }
    }
    let mut flat = Vec::with_capacity(model.param_count());
    mean_grads.flatten_into(&mut flat);
    noise_grads.flatten_into(&mut flat);
    embed_grads.flatten_into(&mut flat);
    let total = base_mean + spec.gamma * pen_value;
    Ok((total, base_mean, pen_value, flat))
}

/// Full-batch finetuning of the generative model: fair CRPS with a small
/// ensemble plus the smoothed penalty on a larger one, fresh latents per
/// step.
pub fn cgm_finetune(
    model: &mut CgmModel,
    rows: &[WeatherRow],
    spec: &LossSpec,
    steps: usize,
    learning_rate: f64,
    fair_members: usize,
    penalty_members: usize,
    seed: u64,
) -> Result<TrainSummary> {
    let cases = prepare_cases(rows, &model.stations, &model.scaler)?;
    let mut adam = AdamState::new(model.param_count(), &adam_cfg(learning_rate));
    let mut initial_loss = f64::NAN;
    let mut last_loss = f64::NAN;
    for step in 0..steps {
        let (total, _, _, grad) = cgm_finetune_objective_grad(
            model,
            &cases,
            spec,
            fair_members,
            penalty_members,
            seed.wrapping_add(step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        )?;
        if !total.is_finite() {
            return Err(GenModelError::Diverged { epoch: step, batch: 0 });
        }
        if step == 0 {
            initial_loss = total;
        }
        last_loss = total;
        let mut params = model.params();
        adam.step(&mut params, &grad);
        model.set_params(&params);
    }
    Ok(TrainSummary { initial_loss, final_loss: last_loss, steps })
}

/// Differentiable-model view of the generative model for gradient checks:
/// the objective is the ordinary composite loss on `members`-sized
/// ensembles (same ensemble for base and penalty).
pub struct CgmDiff<'a> {
    pub model: &'a mut CgmModel,
    cases: Vec<PreparedCase>,
    members: usize,
    latents: Vec<Vec<f64>>,
    forwards: Vec<CgmForward>,
}

impl<'a> CgmDiff<'a> {
    pub fn new(model: &'a mut CgmModel, rows: &[WeatherRow], members: usize) -> Result<Self> {
        let cases = prepare_cases(rows, &model.stations, &model.scaler)?;
        Ok(Self { model, cases, members, latents: Vec::new(), forwards: Vec::new() })
    }

    pub fn observations(&self) -> Vec<f64> {
        self.cases.iter().map(|c| c.obs).collect()
    }
}

impl DiffForecaster for CgmDiff<'_> {
    fn param_count(&self) -> usize {
        self.model.param_count()
    }
    fn params(&self) -> Vec<f64> {
        self.model.params()
    }
    fn set_params(&mut self, p: &[f64]) {
        self.model.set_params(p);
    }
    fn forward(&mut self, draw_seed: u64) -> Vec<ForecastOutput> {
        let mut rng = StdRng::seed_from_u64(draw_seed);
        self.latents = self.cases.iter().map(|_| draw_latents(&mut rng, self.members)).collect();
        self.forwards = self
            .cases
            .iter()
            .zip(&self.latents)
            .map(|(c, l)| self.model.forward_case(c, l, true).expect("dims fixed"))
            .collect();
        self.forwards.iter().map(|f| ForecastOutput::Samples(f.members.clone())).collect()
    }
    fn backward(&mut self, adjoints: &[ForecastAdjoint]) -> Vec<f64> {
        let mut mean_grads = MlpGrads::zeros_like(&self.model.mean_branch);
        let mut noise_grads = MlpGrads::zeros_like(&self.model.noise_branch);
        let mut embed_grads = EmbeddingGrads::zeros_like(&self.model.embedding);
        for ((case, fwd), adj) in self.cases.iter().zip(&self.forwards).zip(adjoints) {
            if let ForecastAdjoint::Samples(d) = adj {
                self.model
                    .backward_case(case, fwd, d, &mut mean_grads, &mut noise_grads, &mut embed_grads)
                    .expect("tape matches");
            }
        }
        let mut flat = Vec::with_capacity(self.model.param_count());
        mean_grads.flatten_into(&mut flat);
        noise_grads.flatten_into(&mut flat);
        embed_grads.flatten_into(&mut flat);
        flat
    }
}

// ---------------------------------------------------------------------------
// Replicate orchestration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkFamily {
    Drn,
    Cgm,
}

impl NetworkFamily {
    pub fn name(&self) -> &'static str {
        match self {
            NetworkFamily::Drn => "drn",
            NetworkFamily::Cgm => "cgm",
        }
    }
}

/// Configuration of a replicate experiment: per-replicate seeds drive the
/// weight initialization and minibatch shuffling; data stays fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub replicates: usize,
    pub base_seed: u64,
    pub threshold: f64,
    pub penalties: Vec<PenaltyKind>,
    pub gammas: Vec<f64>,
    pub train: TrainConfig,
    pub finetune_steps: usize,
    pub finetune_lr: f64,
    /// Generative model only: fair-CRPS ensemble size during finetuning.
    pub fair_members: usize,
    /// Generative model only: penalty ensemble size during finetuning.
    pub penalty_members: usize,
    pub pit_smoothing: f64,
    /// Ensemble size when evaluating sample-based forecasts.
    pub eval_members: usize,
    pub eval_seed: u64,
}

impl SuiteConfig {
    pub fn desk_default(family: NetworkFamily, threshold: f64) -> Self {
        Self {
            replicates: 10,
            base_seed: 100,
            threshold,
            penalties: vec![
                PenaltyKind::Weighted,
                PenaltyKind::Mcb,
                PenaltyKind::Tmcb,
                PenaltyKind::CpitMcb,
            ],
            gammas: vec![5.0],
            train: match family {
                NetworkFamily::Drn => TrainConfig::drn_default(),
                NetworkFamily::Cgm => TrainConfig::cgm_default(),
            },
            finetune_steps: 50,
            finetune_lr: 1e-3,
            fair_members: 50,
            penalty_members: 250,
            pit_smoothing: 0.01,
            eval_members: 250,
            eval_seed: 7_777,
        }
    }

    /// The finetuning loss for a penalty/gamma pair; the generative model
    /// trains on the fair CRPS, the parametric network on the closed form.
    pub fn finetune_spec(&self, family: NetworkFamily, penalty: PenaltyKind, gamma: f64) -> LossSpec {
        LossSpec {
            base: match family {
                NetworkFamily::Drn => BaseScore::CrpsClosed,
                NetworkFamily::Cgm => BaseScore::FairCrps,
            },
            penalty,
            gamma,
            threshold: self.threshold,
            divergence: Default::default(),
            pit_smoothing: Some(self.pit_smoothing),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub family: String,
    pub penalty: String,
    pub gamma: f64,
    pub replicate: usize,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSuite {
    pub records: Vec<ReplicateRecord>,
    pub failures: Vec<(usize, String)>,
}

pub fn penalty_name(p: PenaltyKind) -> &'static str {
    match p {
        PenaltyKind::None => "none",
        PenaltyKind::Weighted => "weighted",
        PenaltyKind::Mcb => "mcb",
        PenaltyKind::Tmcb => "tmcb",
        PenaltyKind::CpitMcb => "cpit-mcb",
    }
}

impl ReplicateSuite {
    pub fn metrics_for(&self, penalty: &str, gamma: f64) -> Vec<(usize, MetricSet)> {
        self.records
            .iter()
            .filter(|r| r.penalty == penalty && (r.gamma - gamma).abs() < 1e-12)
            .map(|r| (r.replicate, r.metrics))
            .collect()
    }

    /// (baseline TMCB, TMCB improvement) per replicate for one penalty and
    /// gamma, the scatter behind the improvement-vs-miscalibration plots.
    pub fn improvement_scatter(&self, penalty: &str, gamma: f64) -> Vec<(usize, f64, f64)> {
        let baselines = self.metrics_for("none", 0.0);
        self.metrics_for(penalty, gamma)
            .into_iter()
            .filter_map(|(rep, m)| {
                baselines
                    .iter()
                    .find(|(r, _)| *r == rep)
                    .map(|(_, b)| (rep, b.tmcb, b.tmcb - m.tmcb))
            })
            .collect()
    }
}

/// Evaluate a fitted model of either family on test rows.
pub fn evaluate_network(
    family: NetworkFamily,
    drn: Option<&DrnModel>,
    cgm: Option<&CgmModel>,
    rows: &[WeatherRow],
    threshold: f64,
    eval_members: usize,
    eval_seed: u64,
) -> Result<MetricSet> {
    let cases: Vec<ForecastCase> = match family {
        NetworkFamily::Drn => {
            let model = drn.expect("drn model");
            rows.iter()
                .map(|r| {
                    Ok(ForecastCase::new(
                        Distribution::TruncNormal(model.predict_row(r)?),
                        r.obs,
                    ))
                })
                .collect::<Result<_>>()?
        }
        NetworkFamily::Cgm => {
            let model = cgm.expect("cgm model");
            rows.iter()
                .enumerate()
                .map(|(i, r)| {
                    let mut rng = StdRng::seed_from_u64(
                        eval_seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                    );
                    let e = model.generate_row(r, eval_members, &mut rng)?;
                    Ok(ForecastCase::new(Distribution::Ensemble(e), r.obs))
                })
                .collect::<Result<_>>()?
        }
    };
    Ok(evaluate_cases(&cases, threshold, eval_seed)?)
}

fn run_one_replicate(
    family: NetworkFamily,
    train_rows: &[WeatherRow],
    test_rows: &[WeatherRow],
    cfg: &SuiteConfig,
    replicate: usize,
) -> Result<Vec<ReplicateRecord>> {
    let mut records = Vec::new();
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.base_seed.wrapping_add(replicate as u64);
    let mut record = |penalty: &str, gamma: f64, metrics: MetricSet| {
        records.push(ReplicateRecord {
            family: family.name().to_string(),
            penalty: penalty.to_string(),
            gamma,
            replicate,
            metrics,
        });
    };
    match family {
        NetworkFamily::Drn => {
            let (baseline, _) = drn_train(train_rows, &train_cfg)?;
            let m = evaluate_network(
                family,
                Some(&baseline),
                None,
                test_rows,
                cfg.threshold,
                cfg.eval_members,
                cfg.eval_seed,
            )?;
            record("none", 0.0, m);
            for &penalty in &cfg.penalties {
                for &gamma in &cfg.gammas {
                    let mut tuned = baseline.clone();
                    let spec = cfg.finetune_spec(family, penalty, gamma);
                    drn_finetune(&mut tuned, train_rows, &spec, cfg.finetune_steps, cfg.finetune_lr)?;
                    let m = evaluate_network(
                        family,
                        Some(&tuned),
                        None,
                        test_rows,
                        cfg.threshold,
                        cfg.eval_members,
                        cfg.eval_seed,
                    )?;
                    record(penalty_name(penalty), gamma, m);
                }
            }
        }
        NetworkFamily::Cgm => {
            let (baseline, _) = cgm_train(train_rows, &train_cfg)?;
            let m = evaluate_network(
                family,
                None,
                Some(&baseline),
                test_rows,
                cfg.threshold,
                cfg.eval_members,
                cfg.eval_seed,
            )?;
            record("none", 0.0, m);
            for &penalty in &cfg.penalties {
                for &gamma in &cfg.gammas {
                    let mut tuned = baseline.clone();
                    let spec = cfg.finetune_spec(family, penalty, gamma);
                    cgm_finetune(
                        &mut tuned,
                        train_rows,
                        &spec,
                        cfg.finetune_steps,
                        cfg.finetune_lr,
                        cfg.fair_members,
                        cfg.penalty_members,
                        train_cfg.seed ^ 0xf17e,
                    )?;
                    let m = evaluate_network(
                        family,
                        None,
                        Some(&tuned),
                        test_rows,
                        cfg.threshold,
                        cfg.eval_members,
                        cfg.eval_seed,
                    )?;
                    record(penalty_name(penalty), gamma, m);
                }
            }
        }
    }
    Ok(records)
}

/// Train `replicates` baselines (varying only the training seed), finetune
/// each under every penalty/gamma pair, and evaluate everything on the test
/// rows. Replicates run in parallel; individual failures are recorded and
/// the suite continues.
pub fn run_replicates(
    family: NetworkFamily,
    train_rows: &[WeatherRow],
    test_rows: &[WeatherRow],
    cfg: &SuiteConfig,
) -> ReplicateSuite {
    let results: Vec<(usize, Result<Vec<ReplicateRecord>>)> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| (r, run_one_replicate(family, train_rows, test_rows, cfg, r)))
        .collect();
    let mut suite = ReplicateSuite::default();
    for (r, res) in results {
        match res {
            Ok(records) => suite.records.extend(records),
            Err(e) => suite.failures.push((r, e.to_string())),
        }
    }
    suite
}
