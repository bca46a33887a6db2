//! Dataset-level experiment: synthetic subjects split by subject into
//! train/val/test, conventional reconstructions, DL-VR and DL-ZReplace
//! training, and evaluation of all five methods on the test subjects.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learn::{
    infer_full_stack, infer_zreplace, network_input, network_target, train, EpochLoss, LearnError,
    ModelConfig, ModelState, TrainConfig, TrainMode, TrainingPair,
};
use crate::metrics::{
    psnr_with_peak, resi, ssim, EdgeSegment, EvalRecord, EvalReport, MetricsError, SsimParams,
};
use crate::phantom::{
    generate_phantom, simulate_bins, to_kspace, Anatomy, PhantomError, PhantomSpec, PhantomTruth,
    SyntheticAnatomy,
};
use crate::recon::{reconstruct_conventional, rsos_bins, rsos_coils, ReconError, ReconOptions, ReconOutput};
use crate::sampling::{build_vr_plan, AcquisitionParams, SamplingError, SamplingPlan, Scheme};
use crate::tensor::{ifft2_centered, symmetric_bin_centers, MultiSpectralStack, RealImage, TensorError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Recon(#[from] ReconError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub rows: usize,
    pub cols: usize,
    pub n_coils: usize,
    pub noise_sigma: f64,
    pub field_span_khz: f64,
    pub bin_fwhm_khz: f64,
    pub bin_spacing_khz: f64,
    pub slices_per_subject: usize,
    /// Anatomy of every subject in single-joint mode.
    pub anatomy: Anatomy,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            rows: 64,
            cols: 64,
            n_coils: 4,
            noise_sigma: 0.002,
            field_span_khz: 12.0,
            bin_fwhm_khz: 2.25,
            bin_spacing_khz: 1.0,
            slices_per_subject: 3,
            anatomy: Anatomy::Knee,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: 16,
            val: 2,
            test: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub channels: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            channels: vec![8, 16, 16, 32, 32],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 120,
            batch_size: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Pixels above this quantile of |grad f| (within tissue) form the
    /// high-gradient region.
    pub high_gradient_quantile: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            high_gradient_quantile: 0.9,
        }
    }
}

/// Everything needed to reproduce an experiment. Defaults are desk scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub mode: TrainMode,
    pub phantom: PhantomConfig,
    pub acquisition: AcquisitionParams,
    pub recon: ReconOptions,
    pub model: ModelSection,
    pub train: TrainSection,
    pub split: SplitConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            mode: TrainMode::Mj,
            phantom: PhantomConfig::default(),
            acquisition: AcquisitionParams {
                n_bins: 8,
                matrix: [64, 64],
                acs: [16, 32],
                ..AcquisitionParams::default()
            },
            recon: ReconOptions::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            split: SplitConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        let p = &self.phantom;
        if self.split.train == 0 || self.split.val == 0 || self.split.test == 0 {
            return bad("split counts must be positive".into());
        }
        if p.slices_per_subject == 0 || p.n_coils == 0 {
            return bad("slices per subject and coil count must be positive".into());
        }
        if self.acquisition.matrix != [p.rows, p.cols] {
            return bad(format!(
                "acquisition matrix {:?} differs from phantom size {}x{}",
                self.acquisition.matrix, p.rows, p.cols
            ));
        }
        if !(p.bin_fwhm_khz > 0.0 && p.bin_spacing_khz > 0.0) {
            return bad("bin FWHM and spacing must be positive".into());
        }
        if !(self.eval.high_gradient_quantile > 0.0 && self.eval.high_gradient_quantile < 1.0) {
            return bad("high_gradient_quantile must lie in (0, 1)".into());
        }
        self.acquisition.validate()?;
        build_vr_plan(&self.acquisition)?;
        let model = self.model_config();
        model.validate()?;
        let dims = self.recon.output_dims.unwrap_or(self.acquisition.matrix);
        model.check_dims(dims[0], dims[1])?;
        self.train_config().validate()?;
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::new(self.acquisition.n_bins, self.model.channels.clone())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed: derive_seed(self.seed, &[4]),
            mode: self.mode,
        }
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        symmetric_bin_centers(self.acquisition.n_bins, self.phantom.bin_spacing_khz)
    }

    pub fn plan(&self) -> Result<SamplingPlan, PipelineError> {
        Ok(build_vr_plan(&self.acquisition)?)
    }
}

/// SplitMix64 mixing of a base seed with a path of stream identifiers.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    path.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub index: usize,
    pub anatomy: Anatomy,
    pub split: Split,
}

/// Subjects in split order; IDs are unique and splits disjoint by construction.
pub fn subjects(cfg: &ExperimentConfig) -> Vec<Subject> {
    let s = cfg.split;
    let splits = std::iter::repeat_n(Split::Train, s.train)
        .chain(std::iter::repeat_n(Split::Val, s.val))
        .chain(std::iter::repeat_n(Split::Test, s.test));
    splits
        .enumerate()
        .map(|(index, split)| Subject {
            id: format!("sub-{index:03}"),
            index,
            anatomy: match cfg.mode {
                TrainMode::Sj => cfg.phantom.anatomy,
                TrainMode::Mj if index % 2 == 0 => Anatomy::Knee,
                TrainMode::Mj => Anatomy::Hip,
            },
            split,
        })
        .collect()
}

pub fn slice_spec(cfg: &ExperimentConfig, subject: &Subject, slice: usize) -> PhantomSpec {
    let p = &cfg.phantom;
    let syn = SyntheticAnatomy {
        rows: p.rows,
        cols: p.cols,
        n_coils: p.n_coils,
        noise_sigma: p.noise_sigma,
        field_span_khz: p.field_span_khz,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1, subject.index as u64, slice as u64]));
    syn.sample(subject.anatomy, &mut rng)
}

/// Ground truth plus noisy multi-coil k-space of one slice.
pub struct SimulatedSlice {
    pub spec: PhantomSpec,
    pub truth: PhantomTruth,
    pub kspace: MultiSpectralStack,
}

/// Seeds of the phantom texture and of the k-space noise of one slice.
pub fn slice_seeds(cfg: &ExperimentConfig, subject: &Subject, slice: usize) -> (u64, u64) {
    let ids = [subject.index as u64, slice as u64];
    (
        derive_seed(cfg.seed, &[2, ids[0], ids[1]]),
        derive_seed(cfg.seed, &[3, ids[0], ids[1]]),
    )
}

pub fn simulate_slice(cfg: &ExperimentConfig, subject: &Subject, slice: usize) -> Result<SimulatedSlice, PipelineError> {
    let (phantom_seed, noise_seed) = slice_seeds(cfg, subject, slice);
    simulate_spec(cfg, slice_spec(cfg, subject, slice), phantom_seed, noise_seed)
}

pub fn simulate_spec(
    cfg: &ExperimentConfig,
    spec: PhantomSpec,
    phantom_seed: u64,
    noise_seed: u64,
) -> Result<SimulatedSlice, PipelineError> {
    let truth = generate_phantom(&spec, phantom_seed)?;
    let images = simulate_bins(&truth, &cfg.bin_centers(), cfg.phantom.bin_fwhm_khz)?;
    let kspace = to_kspace(&images, spec.noise_sigma, noise_seed)?;
    Ok(SimulatedSlice { spec, truth, kspace })
}

/// Plain inverse transform of the complete k-space, coil RSOS per bin.
pub fn fully_sampled_bins(kspace: &MultiSpectralStack) -> Result<Vec<RealImage>, PipelineError> {
    (0..kspace.n_bins())
        .map(|b| {
            let coils = kspace
                .bin(b)
                .iter()
                .map(ifft2_centered)
                .collect::<Result<Vec<_>, _>>()?;
            Ok(rsos_coils(&coils)?)
        })
        .collect()
}

/// Conventional reconstructions of one slice.
#[derive(Clone, Debug)]
pub struct SliceRecons {
    pub reference: ReconOutput,
    pub cr_vr: ReconOutput,
    pub cr_zreplace: ReconOutput,
    /// Bin-combined image of the complete k-space; the RESI normalizer.
    pub conventional: RealImage,
}

pub fn reconstruct_slice(
    cfg: &ExperimentConfig,
    plan: &SamplingPlan,
    kspace: &MultiSpectralStack,
) -> Result<SliceRecons, PipelineError> {
    let [reference, cr_vr, cr_zreplace] = reconstruct_conventional(plan, kspace, &cfg.recon)?;
    Ok(SliceRecons {
        reference,
        cr_vr,
        cr_zreplace,
        conventional: conventional_image(cfg, kspace)?,
    })
}

/// Bin-combined image of the complete k-space at the output matrix.
pub fn conventional_image(cfg: &ExperimentConfig, kspace: &MultiSpectralStack) -> Result<RealImage, PipelineError> {
    let img = rsos_bins(&fully_sampled_bins(kspace)?);
    Ok(match cfg.recon.output_dims {
        Some(d) => crate::recon::upsample_magnitude(&img, d)?,
        None => img,
    })
}

/// A simulated and conventionally reconstructed slice; k-space is dropped.
#[derive(Clone, Debug)]
pub struct PreparedSlice {
    pub subject: Subject,
    pub slice: usize,
    pub truth: PhantomTruth,
    pub recons: SliceRecons,
}

pub fn prepare_slices(
    cfg: &ExperimentConfig,
    plan: &SamplingPlan,
    subjects: &[Subject],
) -> Result<Vec<PreparedSlice>, PipelineError> {
    let jobs: Vec<(Subject, usize)> = subjects
        .iter()
        .flat_map(|s| (0..cfg.phantom.slices_per_subject).map(move |k| (s.clone(), k)))
        .collect();
    jobs.into_par_iter()
        .map(|(subject, slice)| {
            let sim = simulate_slice(cfg, &subject, slice)?;
            let recons = reconstruct_slice(cfg, plan, &sim.kspace)?;
            Ok(PreparedSlice {
                subject,
                slice,
                truth: sim.truth,
                recons,
            })
        })
        .collect()
}

/// Training pairs; `zreplace` selects the ablation whose ACS-only input
/// channels are zero.
pub fn training_pairs(slices: &[&SliceRecons], plan: &SamplingPlan, zreplace: bool) -> Vec<TrainingPair> {
    slices
        .iter()
        .map(|s| TrainingPair {
            input: network_input(if zreplace { &s.cr_zreplace } else { &s.cr_vr }),
            target: network_target(&s.reference, plan),
        })
        .collect()
}

/// Tissue pixels whose off-resonance gradient magnitude is at or above the
/// given quantile.
pub fn high_gradient_mask(truth: &PhantomTruth, quantile: f64) -> Vec<bool> {
    let f = &truth.off_resonance_khz;
    let (rows, cols) = f.dims();
    let grad = |r: usize, c: usize| {
        let d = |a: f64, b: f64, h: f64| (a - b) / h;
        let gy = match r {
            0 => d(f.get(1, c), f.get(0, c), 1.0),
            r if r == rows - 1 => d(f.get(r, c), f.get(r - 1, c), 1.0),
            r => d(f.get(r + 1, c), f.get(r - 1, c), 2.0),
        };
        let gx = match c {
            0 => d(f.get(r, 1), f.get(r, 0), 1.0),
            c if c == cols - 1 => d(f.get(r, c), f.get(r, c - 1), 1.0),
            c => d(f.get(r, c + 1), f.get(r, c - 1), 2.0),
        };
        gy.hypot(gx)
    };
    let tissue: Vec<bool> = truth.proton_density.data().iter().map(|&p| p > 0.0).collect();
    let g: Vec<f64> = (0..rows * cols).map(|i| grad(i / cols, i % cols)).collect();
    let values: Vec<f64> = g.iter().zip(&tissue).filter(|(_, &t)| t).map(|(&v, _)| v).collect();
    let Ok(thr) = crate::metrics::quantile(&values, quantile) else {
        return vec![false; rows * cols];
    };
    g.iter().zip(&tissue).map(|(&v, &t)| t && v >= thr).collect()
}

/// MSE over the ACS-only bins, optionally restricted to `region`.
pub fn acs_bin_mse(out: &ReconOutput, reference: &ReconOutput, plan: &SamplingPlan, region: Option<&[bool]>) -> f64 {
    let (mut acc, mut n) = (0.0, 0usize);
    for b in plan.bins_with(Scheme::AcsOnly) {
        let (x, y) = (out.bins[b].data(), reference.bins[b].data());
        for i in 0..x.len() {
            if region.is_none_or(|m| m[i]) {
                acc += (x[i] - y[i]).powi(2);
                n += 1;
            }
        }
    }
    if n == 0 { 0.0 } else { acc / n as f64 }
}

/// Image-quality records of every method for one slice. RESI is averaged over
/// the slice's edges and left empty when no edge can be measured.
pub fn evaluate_slice(
    subject: &str,
    slice: usize,
    outputs: &[&ReconOutput],
    reference: &ReconOutput,
    conventional: &RealImage,
    edges: &[EdgeSegment],
) -> Result<Vec<EvalRecord>, PipelineError> {
    let ref_img = reference.combined();
    let peak = ref_img.max();
    let params = SsimParams::default();
    outputs
        .iter()
        .map(|out| {
            let img = out.combined();
            let vals: Vec<f64> = edges.iter().filter_map(|e| resi(&img, conventional, e).ok()).collect();
            Ok(EvalRecord {
                subject: subject.to_string(),
                slice,
                method: out.method,
                ssim: ssim(&img, &ref_img, &params)?,
                psnr_db: psnr_with_peak(&img, &ref_img, peak)?,
                resi: (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64),
            })
        })
        .collect()
}

/// Per-slice ACS-only-bin errors used for the ablation comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceErrors {
    pub subject: String,
    pub slice: usize,
    pub cr_vr: f64,
    pub dl_vr: f64,
    pub dl_zreplace: f64,
    pub high_gradient_dl_vr: f64,
    pub high_gradient_dl_zreplace: f64,
}

pub struct TrainedModels {
    pub dl_vr: ModelState,
    pub dl_zreplace: ModelState,
    pub dl_vr_curve: Vec<EpochLoss>,
    pub dl_zreplace_curve: Vec<EpochLoss>,
}

pub fn train_models(
    cfg: &ExperimentConfig,
    plan: &SamplingPlan,
    train_slices: &[&SliceRecons],
    val_slices: &[&SliceRecons],
    mut log: impl FnMut(&str),
) -> Result<TrainedModels, PipelineError> {
    let tc = cfg.train_config();
    let fit = |zreplace: bool, log: &mut dyn FnMut(&str)| {
        let name = if zreplace { "DL_ZREPLACE" } else { "DL_VR" };
        train(
            cfg.model_config(),
            &training_pairs(train_slices, plan, zreplace),
            &training_pairs(val_slices, plan, zreplace),
            &tc,
            |e| {
                log(&format!(
                    "{name} epoch {:>3}: train {:.5} val {}",
                    e.epoch,
                    e.train_mse,
                    e.val_mse.map(|v| format!("{v:.5}")).unwrap_or_else(|| "-".into())
                ))
            },
        )
    };
    let (dl_vr, dl_vr_curve) = fit(false, &mut log)?;
    let (dl_zreplace, dl_zreplace_curve) = fit(true, &mut log)?;
    Ok(TrainedModels {
        dl_vr,
        dl_zreplace,
        dl_vr_curve,
        dl_zreplace_curve,
    })
}

/// All five reconstructions of one test slice.
pub fn all_methods(
    models: &TrainedModels,
    plan: &SamplingPlan,
    recons: &SliceRecons,
) -> Result<[ReconOutput; 5], PipelineError> {
    Ok([
        recons.reference.clone(),
        recons.cr_vr.clone(),
        recons.cr_zreplace.clone(),
        infer_full_stack(&models.dl_vr, &recons.cr_vr, plan)?,
        infer_zreplace(&models.dl_zreplace, &recons.cr_zreplace, plan)?,
    ])
}

pub struct EvaluationResult {
    pub report: EvalReport,
    pub errors: Vec<SliceErrors>,
}

pub fn evaluate(
    cfg: &ExperimentConfig,
    plan: &SamplingPlan,
    models: &TrainedModels,
    test_slices: &[PreparedSlice],
) -> Result<EvaluationResult, PipelineError> {
    let per_slice = test_slices
        .par_iter()
        .map(|s| {
            let outs = all_methods(models, plan, &s.recons)?;
            evaluate_outputs(cfg, plan, &s.subject.id, s.slice, &s.truth, &s.recons.conventional, &outs)
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    collect_evaluation(per_slice)
}

/// Metrics and ablation errors of one slice from its five reconstructions,
/// ordered as [`Method::ALL`](crate::recon::Method::ALL).
pub fn evaluate_outputs(
    cfg: &ExperimentConfig,
    plan: &SamplingPlan,
    subject: &str,
    slice: usize,
    truth: &PhantomTruth,
    conventional: &RealImage,
    outs: &[ReconOutput; 5],
) -> Result<(Vec<EvalRecord>, SliceErrors), PipelineError> {
    let refs: Vec<&ReconOutput> = outs.iter().collect();
    let edges: Vec<EdgeSegment> = truth.edge_segments.iter().map(EdgeSegment::from).collect();
    let edges = scale_edges(&edges, cfg, conventional);
    let records = evaluate_slice(subject, slice, &refs, &outs[0], conventional, &edges)?;
    let region = high_gradient_mask(truth, cfg.eval.high_gradient_quantile);
    let region = resample_mask(&region, cfg.acquisition.matrix, outs[0].dims());
    let errors = SliceErrors {
        subject: subject.to_string(),
        slice,
        cr_vr: acs_bin_mse(&outs[1], &outs[0], plan, None),
        dl_vr: acs_bin_mse(&outs[3], &outs[0], plan, None),
        dl_zreplace: acs_bin_mse(&outs[4], &outs[0], plan, None),
        high_gradient_dl_vr: acs_bin_mse(&outs[3], &outs[0], plan, Some(&region)),
        high_gradient_dl_zreplace: acs_bin_mse(&outs[4], &outs[0], plan, Some(&region)),
    };
    Ok((records, errors))
}

pub fn collect_evaluation(per_slice: Vec<(Vec<EvalRecord>, SliceErrors)>) -> Result<EvaluationResult, PipelineError> {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (r, e) in per_slice {
        records.extend(r);
        errors.push(e);
    }
    Ok(EvaluationResult {
        report: EvalReport::from_records(records)?,
        errors,
    })
}

/// Map edge segments from the acquisition matrix onto the output matrix.
fn scale_edges(edges: &[EdgeSegment], cfg: &ExperimentConfig, out: &RealImage) -> Vec<EdgeSegment> {
    let [r0, c0] = cfg.acquisition.matrix;
    let (r1, c1) = out.dims();
    if (r0, c0) == (r1, c1) {
        return edges.to_vec();
    }
    let (sr, sc) = (r1 as f64 / r0 as f64, c1 as f64 / c0 as f64);
    edges
        .iter()
        .map(|e| EdgeSegment {
            p0: [e.p0[0] * sr, e.p0[1] * sc],
            p1: [e.p1[0] * sr, e.p1[1] * sc],
            samples_per_unit: e.samples_per_unit / sr.min(sc),
            ..*e
        })
        .collect()
}

fn resample_mask(mask: &[bool], from: [usize; 2], to: (usize, usize)) -> Vec<bool> {
    if (from[0], from[1]) == to {
        return mask.to_vec();
    }
    (0..to.0 * to.1)
        .map(|i| {
            let (r, c) = (i / to.1 * from[0] / to.0, i % to.1 * from[1] / to.1);
            mask[r * from[1] + c]
        })
        .collect()
}

pub fn recons_of(slices: &[PreparedSlice]) -> Vec<&SliceRecons> {
    slices.iter().map(|s| &s.recons).collect()
}

pub struct ExperimentOutcome {
    pub report: EvalReport,
    pub errors: Vec<SliceErrors>,
    pub models: TrainedModels,
}

/// Simulate, reconstruct, train both networks and evaluate the test split.
pub fn run_experiment(cfg: &ExperimentConfig, mut log: impl FnMut(&str)) -> Result<ExperimentOutcome, PipelineError> {
    cfg.validate()?;
    let plan = cfg.plan()?;
    let all = subjects(cfg);
    let pick = |s: Split| all.iter().filter(|x| x.split == s).cloned().collect::<Vec<_>>();
    log("simulating and reconstructing subjects");
    let train_slices = prepare_slices(cfg, &plan, &pick(Split::Train))?;
    let val_slices = prepare_slices(cfg, &plan, &pick(Split::Val))?;
    let test_slices = prepare_slices(cfg, &plan, &pick(Split::Test))?;
    let models = train_models(cfg, &plan, &recons_of(&train_slices), &recons_of(&val_slices), &mut log)?;
    log("evaluating test subjects");
    let EvaluationResult { report, errors } = evaluate(cfg, &plan, &models, &test_slices)?;
    Ok(ExperimentOutcome { report, errors, models })
}
