//! Encoder-decoder that infers full-resolution images for the ACS-only bins
//! from all VR bin images, trained from scratch with Adam on an MSE loss.
//!
//! Everything runs in f64 on the CPU. Mini-batch gradients are computed per
//! slice (in parallel) and reduced in slice order, so a fixed seed gives
//! bit-identical weights regardless of thread count.

mod checkpoint;
mod layers;
mod net;

pub use checkpoint::{load_model, save_model, MODEL_MAGIC};
pub use layers::Volume;
pub use net::{ModelConfig, UNet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::recon::{Method, ReconOutput};
use crate::sampling::{SamplingPlan, Scheme};
use crate::tensor::RealImage;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Statistics removed by [`normalize_slice`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
    /// Set when the slice is constant; the divisor is then 1.
    pub degenerate: bool,
}

pub const NORM_SCHEMA_VERSION: u32 = 1;

/// Zero mean, unit (population) standard deviation over all channels jointly.
pub fn normalize_slice(v: &Volume) -> (Volume, NormStats) {
    let n = v.data.len() as f64;
    let mean = v.data.iter().sum::<f64>() / n;
    let var = v.data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let degenerate = std < 1e-12;
    let stats = NormStats {
        mean,
        std: if degenerate { 1.0 } else { std },
        degenerate,
    };
    (apply_norm(v, &stats), stats)
}

/// Normalize with statistics taken from another volume.
pub fn apply_norm(v: &Volume, stats: &NormStats) -> Volume {
    Volume {
        data: v.data.iter().map(|x| (x - stats.mean) / stats.std).collect(),
        ..v.clone()
    }
}

pub fn denormalize(v: &Volume, stats: &NormStats) -> Volume {
    Volume {
        data: v.data.iter().map(|x| x * stats.std + stats.mean).collect(),
        ..v.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    /// One bias-corrected Adam update of `params`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Weights plus optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: Vec<f64>,
    pub adam: AdamState,
    pub norm_schema_version: u32,
}

impl ModelState {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, LearnError> {
        let net = UNet::new(config.clone())?;
        let params = net.init_params(seed);
        Ok(Self {
            config,
            adam: AdamState::new(params.len()),
            params,
            norm_schema_version: NORM_SCHEMA_VERSION,
        })
    }

    pub fn net(&self) -> Result<UNet, LearnError> {
        UNet::new(self.config.clone())
    }

    /// Normalize, run the network and de-normalize one slice.
    pub fn predict(&self, input: &Volume) -> Result<Volume, LearnError> {
        let net = self.net()?;
        let (x, stats) = normalize_slice(input);
        Ok(denormalize(&net.forward(&self.params, &x)?, &stats))
    }
}

/// Single-joint (one anatomy) or multi-joint (mixed) training data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Sj,
    Mj,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            epochs: 50,
            batch_size: 4,
            seed: 0,
            mode: TrainMode::Sj,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(LearnError::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(LearnError::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Un-normalized training example: all VR bin images in, reference images of
/// the ACS-only bins out.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub input: Volume,
    pub target: Volume,
}

impl TrainingPair {
    /// Input and target normalized with the input's statistics.
    pub fn normalized(&self) -> (Volume, Volume) {
        let (x, stats) = normalize_slice(&self.input);
        (x, apply_norm(&self.target, &stats))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

pub fn loss_curve_csv(curve: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,train_mse,val_mse\n");
    for e in curve {
        let val = e.val_mse.map(|v| format!("{v}")).unwrap_or_default();
        s.push_str(&format!("{},{},{}\n", e.epoch, e.train_mse, val));
    }
    s
}

/// Mean normalized-domain MSE of `state` over `pairs`.
pub fn evaluate_mse(state: &ModelState, pairs: &[(Volume, Volume)]) -> Result<f64, LearnError> {
    let net = state.net()?;
    let losses = pairs
        .par_iter()
        .map(|(x, t)| {
            let y = net.forward(&state.params, x)?;
            let n = y.data.len() as f64;
            Ok(y.data.iter().zip(&t.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n)
        })
        .collect::<Result<Vec<f64>, LearnError>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Train from a seeded initialization. The shuffle order of epoch `e` is
/// drawn from a generator seeded with `(seed, e)`.
pub fn train(
    model: ModelConfig,
    train_set: &[TrainingPair],
    val_set: &[TrainingPair],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<(ModelState, Vec<EpochLoss>), LearnError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    let mut state = ModelState::init(model, cfg.seed)?;
    let net = state.net()?;
    let train_norm: Vec<(Volume, Volume)> = train_set.iter().map(TrainingPair::normalized).collect();
    let val_norm: Vec<(Volume, Volume)> = val_set.iter().map(TrainingPair::normalized).collect();
    let mut order: Vec<usize> = (0..train_norm.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let params = &state.params;
            let results = batch
                .par_iter()
                .map(|&i| {
                    let (x, t) = &train_norm[i];
                    net.loss_and_gradients(params, x, t)
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| match e {
                    LearnError::NonFinite(m) => LearnError::NonFinite(format!(
                        "{m} at epoch {epoch}, step {}",
                        state.adam.step + 1
                    )),
                    other => other,
                })?;
            let scale = 1.0 / batch.len() as f64;
            let mut grad = vec![0.0; net.n_params()];
            for (loss, g) in &results {
                epoch_loss += loss;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b * scale;
                }
            }
            state.adam.step(&mut state.params, &grad, cfg.learning_rate);
        }
        let entry = EpochLoss {
            epoch,
            train_mse: epoch_loss / train_norm.len() as f64,
            val_mse: if val_norm.is_empty() {
                None
            } else {
                Some(evaluate_mse(&state, &val_norm)?)
            },
        };
        on_epoch(&entry);
        curve.push(entry);
    }
    Ok((state, curve))
}

/// Network input from a conventional reconstruction: every bin as a channel.
pub fn network_input(recon: &ReconOutput) -> Volume {
    Volume::from_images(&recon.bins)
}

/// Reference images of the ACS-only bins, the training target.
pub fn network_target(reference: &ReconOutput, plan: &SamplingPlan) -> Volume {
    let bins: Vec<RealImage> = plan
        .bins_with(Scheme::AcsOnly)
        .into_iter()
        .map(|b| reference.bins[b].clone())
        .collect();
    Volume::from_images(&bins)
}

fn infer(
    state: &ModelState,
    recon: &ReconOutput,
    plan: &SamplingPlan,
    method: Method,
) -> Result<ReconOutput, LearnError> {
    let acs_bins = plan.bins_with(Scheme::AcsOnly);
    if recon.bins.len() != plan.n_bins() || state.config.in_channels != recon.bins.len() {
        return Err(LearnError::Shape(format!(
            "model takes {} bins, reconstruction has {}, plan has {}",
            state.config.in_channels,
            recon.bins.len(),
            plan.n_bins()
        )));
    }
    if state.config.out_channels != acs_bins.len() {
        return Err(LearnError::Shape(format!(
            "model predicts {} bins, plan has {} ACS-only bins",
            state.config.out_channels,
            acs_bins.len()
        )));
    }
    let pred = state.predict(&network_input(recon))?;
    let mut bins = recon.bins.clone();
    for (img, &b) in pred.to_images().into_iter().zip(&acs_bins) {
        bins[b] = img.map(|v| v.max(0.0));
    }
    Ok(ReconOutput {
        method,
        bin_centers_khz: recon.bin_centers_khz.clone(),
        bins,
        provenance: format!("{} inferred from {}", method.label(), recon.provenance),
    })
}

/// DL-VR: replace the ACS-only bins of a CR-VR reconstruction by network
/// predictions; fully sampled bins pass through.
pub fn infer_full_stack(
    state: &ModelState,
    cr_vr: &ReconOutput,
    plan: &SamplingPlan,
) -> Result<ReconOutput, LearnError> {
    infer(state, cr_vr, plan, Method::DlVr)
}

/// DL-ZReplace: as [`infer_full_stack`] but from a CR-ZReplace input whose
/// ACS-only bins are zero, with a model trained on such inputs.
pub fn infer_zreplace(
    state: &ModelState,
    cr_zreplace: &ReconOutput,
    plan: &SamplingPlan,
) -> Result<ReconOutput, LearnError> {
    for b in plan.bins_with(Scheme::AcsOnly) {
        if cr_zreplace.bins.get(b).is_some_and(|im| im.data().iter().any(|&v| v != 0.0)) {
            return Err(LearnError::Shape(format!("ACS-only bin {b} of the input is not zero")));
        }
    }
    infer(state, cr_zreplace, plan, Method::DlZreplace)
}
