//! Stage implementations and the on-disk run layout:
//!
//! ```text
//! phantom/manifest.json, phantom/<subject>/slice-NN.spec.json
//! acquire/plan.msplan,   acquire/<subject>/slice-NN.kspace.msstack
//! recon/<subject>/slice-NN.{reference,cr_vr,cr_zreplace,conventional}.msstack
//! train/{dl_vr,dl_zreplace}.msmodel, train/*_loss.csv
//! infer/<subject>/slice-NN.{dl_vr,dl_zreplace}.msstack   (test subjects)
//! eval/report.csv, eval/ablation.csv, eval/summary.json
//! report/{ssim,psnr_db,resi}.svg, report/summary.md
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vrmsi_core::learn::{infer_full_stack, infer_zreplace, load_model, loss_curve_csv, save_model, TrainMode};
use vrmsi_core::metrics::{EvalReport, Metric, MethodSummary};
use vrmsi_core::phantom::{generate_phantom, PhantomSpec};
use vrmsi_core::pipeline::{
    collect_evaluation, evaluate_outputs, reconstruct_slice, simulate_spec, slice_seeds, slice_spec,
    subjects, train_models, ExperimentConfig, SliceErrors, SliceRecons, Split, Subject,
};
use vrmsi_core::recon::{Method, ReconOutput};
use vrmsi_core::sampling::SamplingPlan;
use vrmsi_core::tensor::{
    load_stack, read_container, save_stack, write_container, Dtype, Payload, StackMetadata,
};
use vrmsi_core::{Domain, RealImage};

use crate::config::{sha256_hex, ConfigHashes, Settings};
use crate::provenance::{
    hash_files, is_current, now_unix, read_provenance, require, tool_version, write_provenance, Provenance,
};
use crate::{report, Cli, CliError, Command, Stage};

pub const MANIFEST: &str = "manifest.json";
pub const PLAN: &str = "plan.msplan";
pub const EVAL_CSV: &str = "report.csv";

/// Slices processed concurrently before their outputs are written.
const CHUNK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub phantom_config_hash: String,
    pub seed: u64,
    pub mode: TrainMode,
    pub subjects: Vec<ManifestSubject>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestSubject {
    #[serde(flatten)]
    pub subject: Subject,
    pub slices: Vec<ManifestSlice>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestSlice {
    pub slice: usize,
    /// Phantom geometry, relative to the phantom directory.
    pub spec: String,
    pub phantom_seed: u64,
    pub noise_seed: u64,
}

impl Manifest {
    pub fn load(run: &Path) -> Result<Self, CliError> {
        let path = run.join(Stage::Phantom.dir()).join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|_| CliError::Missing {
            stage: Stage::Phantom,
            path: path.clone(),
        })?;
        serde_json::from_str(&text).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
    }

    fn slices(&self, split: Option<Split>) -> Vec<(&Subject, &ManifestSlice)> {
        self.subjects
            .iter()
            .filter(|s| split.is_none_or(|x| s.subject.split == x))
            .flat_map(|s| s.slices.iter().map(move |k| (&s.subject, k)))
            .collect()
    }
}

fn stem(subject: &Subject, slice: usize) -> String {
    format!("{}/slice-{slice:02}", subject.id)
}

fn slice_file(run: &Path, stage: Stage, subject: &Subject, slice: usize, kind: &str) -> PathBuf {
    run.join(stage.dir()).join(format!("{}.{kind}", stem(subject, slice)))
}

fn recon_kinds() -> [&'static str; 4] {
    ["reference.msstack", "cr_vr.msstack", "cr_zreplace.msstack", "conventional.msstack"]
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Other(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p)?;
    }
    Ok(())
}

fn save_image(img: &RealImage, provenance: &str, path: &Path) -> Result<(), CliError> {
    let mut extra = serde_json::Map::new();
    extra.insert("image".into(), "conventional".into());
    let meta = StackMetadata {
        n_bins: 1,
        n_coils: 1,
        rows: img.rows(),
        cols: img.cols(),
        domain: Domain::Image,
        bin_centers_khz: vec![0.0],
        provenance: provenance.to_string(),
        dtype: Dtype::Float32,
        extra,
    };
    let mut bytes = Vec::new();
    write_container(&mut bytes, &meta, &Payload::Real(img.data().to_vec()))?;
    fs::write(path, bytes)?;
    Ok(())
}

fn load_image(path: &Path) -> Result<RealImage, CliError> {
    let (meta, payload) = read_container(&fs::read(path)?)?;
    match payload {
        Payload::Real(v) if meta.n_bins == 1 => Ok(RealImage::from_vec(meta.rows, meta.cols, v)?),
        _ => Err(CliError::Other(format!("{}: not a single real image", path.display()))),
    }
}

struct Ctx<'a> {
    run: PathBuf,
    cfg: ExperimentConfig,
    hashes: ConfigHashes,
    force: bool,
    allow_mixed: bool,
    log: &'a mut (dyn FnMut(&str) + Send),
}

impl Ctx<'_> {
    fn provenance_tag(&self, stage: Stage, hash: &str) -> String {
        format!("{} {stage} config {}", tool_version(), &hash[..16])
    }

    /// Skip when current, refuse to clobber without --force, otherwise run
    /// `body` in a fresh stage directory and record provenance.
    fn run_stage(
        &mut self,
        stage: Stage,
        config_hash: String,
        inputs: Vec<PathBuf>,
        body: impl FnOnce(&mut Self, &Path) -> Result<Vec<PathBuf>, CliError>,
    ) -> Result<StageStatus, CliError> {
        let input_hashes = hash_files(&self.run, &inputs)?;
        let dir = self.run.join(stage.dir());
        if !self.force {
            if let Some(prev) = read_provenance(&self.run, stage)? {
                if is_current(&self.run, &prev, &config_hash, &input_hashes) {
                    (self.log)(&format!("[{stage}] up to date, skipping"));
                    return Ok(StageStatus::Skipped);
                }
            }
            if dir.read_dir().is_ok_and(|mut d| d.next().is_some()) {
                return Err(CliError::OutputExists(dir));
            }
        }
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        let outputs = body(self, &dir)?;
        let prov = Provenance {
            stage,
            tool_version: tool_version(),
            config_hash,
            phantom_config_hash: self.hashes.phantom.clone(),
            inputs: input_hashes,
            outputs: hash_files(&self.run, &outputs)?,
            created_unix: now_unix(),
        };
        write_provenance(&self.run, &prov)?;
        (self.log)(&format!("[{stage}] wrote {} files", outputs.len()));
        Ok(StageStatus::Ran)
    }

    fn phantom(&mut self) -> Result<StageStatus, CliError> {
        let hash = self.hashes.phantom.clone();
        self.run_stage(Stage::Phantom, hash.clone(), vec![], |ctx, dir| {
            let cfg = &ctx.cfg;
            let mut outputs = Vec::new();
            let mut listed = Vec::new();
            for subject in subjects(cfg) {
                let mut slices = Vec::new();
                for k in 0..cfg.phantom.slices_per_subject {
                    let spec = slice_spec(cfg, &subject, k);
                    let (phantom_seed, noise_seed) = slice_seeds(cfg, &subject, k);
                    let rel = format!("{}.spec.json", stem(&subject, k));
                    let path = dir.join(&rel);
                    ensure_parent(&path)?;
                    write_json(&path, &spec)?;
                    outputs.push(path);
                    slices.push(ManifestSlice {
                        slice: k,
                        spec: rel,
                        phantom_seed,
                        noise_seed,
                    });
                }
                listed.push(ManifestSubject { subject, slices });
            }
            let manifest = Manifest {
                phantom_config_hash: hash,
                seed: cfg.seed,
                mode: cfg.mode,
                subjects: listed,
            };
            let path = dir.join(MANIFEST);
            write_json(&path, &manifest)?;
            outputs.push(path);
            (ctx.log)(&format!(
                "[phantom] {} subjects, {} slices",
                manifest.subjects.len(),
                manifest.slices(None).len()
            ));
            Ok(outputs)
        })
    }

    fn acquire(&mut self) -> Result<StageStatus, CliError> {
        require(&self.run, Stage::Phantom)?;
        let manifest = Manifest::load(&self.run)?;
        let pdir = self.run.join(Stage::Phantom.dir());
        let mut inputs = vec![pdir.join(MANIFEST)];
        inputs.extend(manifest.slices(None).iter().map(|(_, k)| pdir.join(&k.spec)));
        let hash = self.hashes.acquire.clone();
        let tag = self.provenance_tag(Stage::Acquire, &hash);
        self.run_stage(Stage::Acquire, hash, inputs, |ctx, dir| {
            let plan = ctx.cfg.plan()?;
            let plan_path = dir.join(PLAN);
            plan.save(&plan_path)?;
            let mut outputs = vec![plan_path];
            let jobs = manifest.slices(None);
            for chunk in jobs.chunks(CHUNK) {
                let stacks = chunk
                    .par_iter()
                    .map(|(_, k)| {
                        let text = fs::read_to_string(pdir.join(&k.spec))?;
                        let spec: PhantomSpec =
                            serde_json::from_str(&text).map_err(|e| CliError::Other(format!("{}: {e}", k.spec)))?;
                        let sim = simulate_spec(&ctx.cfg, spec, k.phantom_seed, k.noise_seed)?;
                        Ok(sim.kspace)
                    })
                    .collect::<Result<Vec<_>, CliError>>()?;
                for ((subject, k), stack) in chunk.iter().zip(stacks) {
                    let path = slice_file(&ctx.run, Stage::Acquire, subject, k.slice, "kspace.msstack");
                    ensure_parent(&path)?;
                    save_stack(&stack, &tag, &path)?;
                    outputs.push(path);
                }
            }
            (ctx.log)(&format!("[acquire] simulated {} slices", jobs.len()));
            Ok(outputs)
        })
    }

    fn plan(&self) -> Result<SamplingPlan, CliError> {
        let path = self.run.join(Stage::Acquire.dir()).join(PLAN);
        if !path.exists() {
            return Err(CliError::Missing {
                stage: Stage::Acquire,
                path,
            });
        }
        Ok(SamplingPlan::load(path)?)
    }

    fn recon(&mut self) -> Result<StageStatus, CliError> {
        require(&self.run, Stage::Acquire)?;
        let manifest = Manifest::load(&self.run)?;
        let jobs = manifest.slices(None);
        let mut inputs = vec![self.run.join(Stage::Acquire.dir()).join(PLAN)];
        inputs.extend(
            jobs.iter()
                .map(|(s, k)| slice_file(&self.run, Stage::Acquire, s, k.slice, "kspace.msstack")),
        );
        let hash = self.hashes.recon.clone();
        let tag = self.provenance_tag(Stage::Recon, &hash);
        self.run_stage(Stage::Recon, hash, inputs, |ctx, _| {
            let plan = ctx.plan()?;
            let mut outputs = Vec::new();
            for chunk in jobs.chunks(CHUNK) {
                let recons = chunk
                    .par_iter()
                    .map(|(s, k)| {
                        let ksp = load_stack(slice_file(&ctx.run, Stage::Acquire, s, k.slice, "kspace.msstack"))?;
                        Ok(reconstruct_slice(&ctx.cfg, &plan, &ksp)?)
                    })
                    .collect::<Result<Vec<SliceRecons>, CliError>>()?;
                for ((s, k), r) in chunk.iter().zip(recons) {
                    let [p_ref, p_vr, p_zr, p_conv] =
                        recon_kinds().map(|kind| slice_file(&ctx.run, Stage::Recon, s, k.slice, kind));
                    ensure_parent(&p_ref)?;
                    r.reference.save(&p_ref)?;
                    r.cr_vr.save(&p_vr)?;
                    r.cr_zreplace.save(&p_zr)?;
                    save_image(&r.conventional, &tag, &p_conv)?;
                    outputs.extend([p_ref, p_vr, p_zr, p_conv]);
                }
            }
            (ctx.log)(&format!("[recon] reconstructed {} slices", jobs.len()));
            Ok(outputs)
        })
    }

    fn recon_files(&self, manifest: &Manifest, split: Split) -> Vec<PathBuf> {
        manifest
            .slices(Some(split))
            .iter()
            .flat_map(|(s, k)| recon_kinds().map(|kind| slice_file(&self.run, Stage::Recon, s, k.slice, kind)))
            .collect()
    }

    fn load_recons(&self, manifest: &Manifest, split: Split) -> Result<Vec<SliceRecons>, CliError> {
        let run = &self.run;
        manifest
            .slices(Some(split))
            .par_iter()
            .map(|(s, k)| {
                let [p_ref, p_vr, p_zr, p_conv] =
                    recon_kinds().map(|kind| slice_file(run, Stage::Recon, s, k.slice, kind));
                Ok(SliceRecons {
                    reference: ReconOutput::load(p_ref)?,
                    cr_vr: ReconOutput::load(p_vr)?,
                    cr_zreplace: ReconOutput::load(p_zr)?,
                    conventional: load_image(&p_conv)?,
                })
            })
            .collect()
    }

    fn train(&mut self) -> Result<StageStatus, CliError> {
        require(&self.run, Stage::Recon)?;
        let manifest = Manifest::load(&self.run)?;
        let mut inputs = vec![self.run.join(Stage::Acquire.dir()).join(PLAN)];
        inputs.extend(self.recon_files(&manifest, Split::Train));
        inputs.extend(self.recon_files(&manifest, Split::Val));
        let hash = self.hashes.train.clone();
        let tag = self.provenance_tag(Stage::Train, &hash);
        self.run_stage(Stage::Train, hash, inputs, |ctx, dir| {
            let plan = ctx.plan()?;
            let train = ctx.load_recons(&manifest, Split::Train)?;
            let val = ctx.load_recons(&manifest, Split::Val)?;
            (ctx.log)(&format!("[train] {} training and {} validation slices", train.len(), val.len()));
            let cfg = ctx.cfg.clone();
            let log = &mut *ctx.log;
            let models = train_models(
                &cfg,
                &plan,
                &train.iter().collect::<Vec<_>>(),
                &val.iter().collect::<Vec<_>>(),
                |m| {
                    // every tenth epoch and the last
                    let epoch = m
                        .split_once("epoch")
                        .and_then(|(_, t)| t.split(':').next()?.trim().parse::<usize>().ok());
                    if epoch.is_none_or(|e| e % 10 == 0 || e == cfg.train.epochs) {
                        log(&format!("[train] {m}"))
                    }
                },
            )?;
            let files = [
                (dir.join("dl_vr.msmodel"), &models.dl_vr, &models.dl_vr_curve, dir.join("dl_vr_loss.csv")),
                (
                    dir.join("dl_zreplace.msmodel"),
                    &models.dl_zreplace,
                    &models.dl_zreplace_curve,
                    dir.join("dl_zreplace_loss.csv"),
                ),
            ];
            let mut outputs = Vec::new();
            for (model_path, state, curve, curve_path) in files {
                save_model(state, &tag, &model_path)?;
                fs::write(&curve_path, loss_curve_csv(curve))?;
                outputs.extend([model_path, curve_path]);
            }
            Ok(outputs)
        })
    }

    fn infer(&mut self) -> Result<StageStatus, CliError> {
        require(&self.run, Stage::Train)?;
        require(&self.run, Stage::Recon)?;
        let manifest = Manifest::load(&self.run)?;
        let tdir = self.run.join(Stage::Train.dir());
        let models = [tdir.join("dl_vr.msmodel"), tdir.join("dl_zreplace.msmodel")];
        let mut inputs = models.to_vec();
        inputs.push(self.run.join(Stage::Acquire.dir()).join(PLAN));
        let jobs = manifest.slices(Some(Split::Test));
        for (s, k) in &jobs {
            for kind in ["cr_vr.msstack", "cr_zreplace.msstack"] {
                inputs.push(slice_file(&self.run, Stage::Recon, s, k.slice, kind));
            }
        }
        let hash = self.hashes.train.clone();
        self.run_stage(Stage::Infer, hash, inputs, |ctx, _| {
            let plan = ctx.plan()?;
            let (dl_vr, _) = load_model(&models[0])?;
            let (dl_zr, _) = load_model(&models[1])?;
            let mut outputs = Vec::new();
            for chunk in jobs.chunks(CHUNK) {
                let outs = chunk
                    .par_iter()
                    .map(|(s, k)| {
                        let vr = ReconOutput::load(slice_file(&ctx.run, Stage::Recon, s, k.slice, "cr_vr.msstack"))?;
                        let zr =
                            ReconOutput::load(slice_file(&ctx.run, Stage::Recon, s, k.slice, "cr_zreplace.msstack"))?;
                        Ok((infer_full_stack(&dl_vr, &vr, &plan)?, infer_zreplace(&dl_zr, &zr, &plan)?))
                    })
                    .collect::<Result<Vec<_>, CliError>>()?;
                for ((s, k), (a, b)) in chunk.iter().zip(outs) {
                    let pa = slice_file(&ctx.run, Stage::Infer, s, k.slice, "dl_vr.msstack");
                    let pb = slice_file(&ctx.run, Stage::Infer, s, k.slice, "dl_zreplace.msstack");
                    ensure_parent(&pa)?;
                    a.save(&pa)?;
                    b.save(&pb)?;
                    outputs.extend([pa, pb]);
                }
            }
            (ctx.log)(&format!("[infer] {} test slices", jobs.len()));
            Ok(outputs)
        })
    }

    fn check_provenance_chain(&mut self) -> Result<(), CliError> {
        let mut seen: BTreeMap<String, Vec<Stage>> = BTreeMap::new();
        for stage in [Stage::Phantom, Stage::Acquire, Stage::Recon, Stage::Train, Stage::Infer] {
            let p = require(&self.run, stage)?;
            seen.entry(p.phantom_config_hash).or_default().push(stage);
        }
        let manifest = Manifest::load(&self.run)?;
        seen.entry(manifest.phantom_config_hash).or_default();
        if seen.len() > 1 || !seen.contains_key(&self.hashes.phantom) {
            let detail = seen
                .iter()
                .map(|(h, s)| format!("{} from {s:?}", &h[..12]))
                .collect::<Vec<_>>()
                .join(", ");
            let msg = format!("phantom config hashes differ ({detail}; current {})", &self.hashes.phantom[..12]);
            if !self.allow_mixed {
                return Err(CliError::MixedProvenance(msg));
            }
            (self.log)(&format!("[eval] warning: {msg}"));
        }
        Ok(())
    }

    fn eval(&mut self) -> Result<StageStatus, CliError> {
        require(&self.run, Stage::Infer)?;
        self.check_provenance_chain()?;
        let manifest = Manifest::load(&self.run)?;
        let pdir = self.run.join(Stage::Phantom.dir());
        let jobs = manifest.slices(Some(Split::Test));
        let mut inputs = vec![self.run.join(Stage::Acquire.dir()).join(PLAN)];
        for (s, k) in &jobs {
            inputs.push(pdir.join(&k.spec));
            inputs.extend(recon_kinds().map(|kind| slice_file(&self.run, Stage::Recon, s, k.slice, kind)));
            for kind in ["dl_vr.msstack", "dl_zreplace.msstack"] {
                inputs.push(slice_file(&self.run, Stage::Infer, s, k.slice, kind));
            }
        }
        let hash = self.hashes.eval.clone();
        self.run_stage(Stage::Eval, hash, inputs, |ctx, dir| {
            let plan = ctx.plan()?;
            let per_slice = jobs
                .par_iter()
                .map(|(s, k)| {
                    let spec: PhantomSpec = serde_json::from_str(&fs::read_to_string(pdir.join(&k.spec))?)
                        .map_err(|e| CliError::Other(format!("{}: {e}", k.spec)))?;
                    let truth = generate_phantom(&spec, k.phantom_seed)?;
                    let file = |stage, kind| slice_file(&ctx.run, stage, s, k.slice, kind);
                    let outs = [
                        ReconOutput::load(file(Stage::Recon, "reference.msstack"))?,
                        ReconOutput::load(file(Stage::Recon, "cr_vr.msstack"))?,
                        ReconOutput::load(file(Stage::Recon, "cr_zreplace.msstack"))?,
                        ReconOutput::load(file(Stage::Infer, "dl_vr.msstack"))?,
                        ReconOutput::load(file(Stage::Infer, "dl_zreplace.msstack"))?,
                    ];
                    let conventional = load_image(&file(Stage::Recon, "conventional.msstack"))?;
                    Ok(evaluate_outputs(&ctx.cfg, &plan, &s.id, k.slice, &truth, &conventional, &outs)?)
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            let result = collect_evaluation(per_slice)?;
            let csv = dir.join(EVAL_CSV);
            fs::write(&csv, result.report.to_csv())?;
            let ablation = dir.join("ablation.csv");
            fs::write(&ablation, ablation_csv(&result.errors))?;
            let summary = dir.join("summary.json");
            write_json(&summary, &EvalSummary::new(&result.report, &result.errors))?;
            (ctx.log)(&format!("[eval] {} records from {} test slices", result.report.records.len(), jobs.len()));
            Ok(vec![csv, ablation, summary])
        })
    }

    fn report(&mut self, csv: Option<PathBuf>) -> Result<StageStatus, CliError> {
        let csv = match csv {
            Some(p) => p,
            None => {
                require(&self.run, Stage::Eval)?;
                self.run.join(Stage::Eval.dir()).join(EVAL_CSV)
            }
        };
        if !csv.exists() {
            return Err(CliError::Missing {
                stage: Stage::Eval,
                path: csv,
            });
        }
        let hash = sha256_hex(tool_version().as_bytes());
        self.run_stage(Stage::Report, hash, vec![csv.clone()], |ctx, dir| {
            let text = fs::read_to_string(&csv)?;
            let report = EvalReport::from_csv(&text)?;
            let mut outputs = Vec::new();
            for metric in Metric::ALL {
                let path = dir.join(format!("{}.svg", metric.label()));
                fs::write(&path, report::box_plot_svg(&report, metric))?;
                outputs.push(path);
            }
            let md = dir.join("summary.md");
            fs::write(&md, report::summary_markdown(&report))?;
            outputs.push(md);
            (ctx.log)(&format!("[report] {} methods", report::methods_in(&report).len()));
            Ok(outputs)
        })
    }
}

pub fn ablation_csv(errors: &[SliceErrors]) -> String {
    let mut s = String::from("subject,slice,cr_vr,dl_vr,dl_zreplace,high_gradient_dl_vr,high_gradient_dl_zreplace\n");
    for e in errors {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.subject, e.slice, e.cr_vr, e.dl_vr, e.dl_zreplace, e.high_gradient_dl_vr, e.high_gradient_dl_zreplace
        ));
    }
    s
}

/// Medians of the even-bin (ACS-only) errors over test slices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub n_slices: usize,
    pub median_cr_vr: f64,
    pub median_dl_vr: f64,
    pub median_dl_zreplace: f64,
    pub median_high_gradient_dl_vr: f64,
    pub median_high_gradient_dl_zreplace: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub methods: Vec<Method>,
    pub summaries: Vec<MethodSummary>,
    pub comparisons: Vec<vrmsi_core::metrics::Comparison>,
    pub ablation: Option<AblationSummary>,
}

impl EvalSummary {
    pub fn new(report: &EvalReport, errors: &[SliceErrors]) -> Self {
        let med = |f: fn(&SliceErrors) -> f64| {
            let v: Vec<f64> = errors.iter().map(f).collect();
            vrmsi_core::metrics::quantile(&v, 0.5).unwrap_or(f64::NAN)
        };
        Self {
            methods: report::methods_in(report),
            summaries: report.summaries.clone(),
            comparisons: report.comparisons.clone(),
            ablation: (!errors.is_empty()).then(|| AblationSummary {
                n_slices: errors.len(),
                median_cr_vr: med(|e| e.cr_vr),
                median_dl_vr: med(|e| e.dl_vr),
                median_dl_zreplace: med(|e| e.dl_zreplace),
                median_high_gradient_dl_vr: med(|e| e.high_gradient_dl_vr),
                median_high_gradient_dl_zreplace: med(|e| e.high_gradient_dl_zreplace),
            }),
        }
    }
}

fn stages_for(command: &Command) -> Vec<Stage> {
    match command {
        Command::Phantom => vec![Stage::Phantom],
        Command::Acquire => vec![Stage::Acquire],
        Command::Recon => vec![Stage::Recon],
        Command::Train => vec![Stage::Train],
        Command::Infer => vec![Stage::Infer],
        Command::Eval => vec![Stage::Eval],
        Command::Report { .. } => vec![Stage::Report],
        Command::Run => Stage::ALL.to_vec(),
        Command::ShowConfig => vec![],
    }
}

/// Run the stages selected by `cli` with already resolved settings.
pub fn run_stages(
    cli: &Cli,
    settings: &Settings,
    log: &mut (dyn FnMut(&str) + Send),
) -> Result<Vec<(Stage, StageStatus)>, CliError> {
    let mut ctx = Ctx {
        run: settings.output_dir.clone(),
        hashes: ConfigHashes::of(&settings.experiment),
        cfg: settings.experiment.clone(),
        force: cli.force,
        allow_mixed: cli.allow_mixed,
        log,
    };
    fs::create_dir_all(&ctx.run)?;
    let mut done = Vec::new();
    for stage in stages_for(&cli.command) {
        let status = match stage {
            Stage::Phantom => ctx.phantom()?,
            Stage::Acquire => ctx.acquire()?,
            Stage::Recon => ctx.recon()?,
            Stage::Train => ctx.train()?,
            Stage::Infer => ctx.infer()?,
            Stage::Eval => ctx.eval()?,
            Stage::Report => match &cli.command {
                Command::Report { csv } => ctx.report(csv.clone())?,
                _ => ctx.report(None)?,
            },
        };
        done.push((stage, status));
    }
    Ok(done)
}

/// Resolve settings from `cli` and run its stages on a pool of `--jobs`
/// threads.
pub fn execute(cli: &Cli, log: &mut (dyn FnMut(&str) + Send)) -> Result<Vec<(Stage, StageStatus)>, CliError> {
    let settings = crate::load_settings(cli.config.as_deref(), &cli.overrides())?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::Config("--jobs must be >= 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Other(e.to_string()))?;
    pool.install(|| run_stages(cli, &settings, log))
}
