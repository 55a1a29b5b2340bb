//! End-to-end orchestration. Every stage reads its inputs from and writes its
//! outputs to a run directory, so running the stages one by one (the CLI) and
//! running them in sequence (`run_pipeline`) produce the same artifacts.
//!
//! Layout of one seed's directory (iteration `k >= 2` lives under `iter_k/`,
//! which mirrors the per-iteration part):
//!
//! ```text
//! config.json  splits/{train,val,ref,test}/  checkpoints/{baseline,encoder,vae,mixmatch}.{bin,json}
//! filter_report.json  filter_histogram.png  augmented/{rec,synth}/
//! history/*.jsonl  metrics/*.json  run_report.json  report.json
//! ```

mod config;
mod report;

pub use config::{
    AblationMode, BenchmarkDatasetConfig, BenchmarkSource, DatasetConfig, PipelineConfig,
    PretrainConfig, ToyDatasetConfig, CONFIG_SCHEMA_VERSION, TOY_CONFIG,
};
pub use report::{
    Aggregate, AblationReport, IterationReport, PipelineReport, RunReport, StageMetrics, Summary,
    REPORT_SCHEMA_VERSION,
};

use std::path::{Path, PathBuf};

use crate::confidence::{filter_reference, FilterReport};
use crate::datasets::{
    export_augmented, export_labeled, import_augmented, import_labeled, split_dataset, LabeledSet,
    UnlabeledSet,
};
use crate::error::{Error, Result};
use crate::imaging::write_confidence_histogram;
use crate::mixmatch::{trace_first_batch, train_mixmatch};
use crate::models::{checkpoint_digest, hex_digest, Classifier, Vae};
use crate::rng::derive_seed;
use crate::supervised::{evaluate, train_supervised};
use crate::training::TrainHistory;
use crate::vae_augment::{assemble_vae_train_set, augment, pretrain_encoder, train_vae};
use report::{read_json, write_json};

pub const SPLITS: [&str; 4] = ["train", "val", "ref", "test"];

/// One seed's run directory together with the configuration driving it.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub config: PipelineConfig,
    pub seed: u64,
    pub dir: PathBuf,
}

/// Where the pipeline stands after some number of refinement iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineState {
    /// Completed iterations; 0 means the reference is the supervised baseline.
    pub iteration: usize,
    pub reference: PathBuf,
    pub filter_report: Option<PathBuf>,
    pub augmented: Option<PathBuf>,
    pub iterations: Vec<IterationReport>,
}

fn missing(path: PathBuf, hint: &str) -> Error {
    Error::MissingArtifact {
        path,
        hint: hint.to_string(),
    }
}

fn require_checkpoint(stem: &Path, hint: &str) -> Result<()> {
    let json = stem.with_extension("json");
    if json.exists() {
        Ok(())
    } else {
        Err(missing(json, hint))
    }
}

fn write_lines<T: serde::Serialize>(path: &Path, records: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).map_err(|e| Error::json(path, e))?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Step of the first record with the best validation accuracy.
fn best_step(history: &TrainHistory) -> usize {
    let best = history.best_accuracy().unwrap_or(0.0);
    history
        .records
        .iter()
        .find(|r| r.val_accuracy == best)
        .map_or(0, |r| r.step)
}

impl RunContext {
    pub fn new(config: PipelineConfig, seed: u64, dir: impl Into<PathBuf>) -> Self {
        RunContext {
            config,
            seed,
            dir: dir.into(),
        }
    }

    /// Directory holding iteration `k`'s artifacts (`k >= 1`).
    pub fn iteration_dir(&self, k: usize) -> PathBuf {
        if k <= 1 {
            self.dir.clone()
        } else {
            self.dir.join(format!("iter_{k}"))
        }
    }

    pub fn split_dir(&self, name: &str) -> PathBuf {
        self.dir.join("splits").join(name)
    }

    pub fn baseline_stem(&self) -> PathBuf {
        self.dir.join("checkpoints").join("baseline")
    }

    pub fn encoder_stem(&self) -> PathBuf {
        self.dir.join("checkpoints").join("encoder")
    }

    pub fn vae_stem(&self, k: usize) -> PathBuf {
        self.iteration_dir(k).join("checkpoints").join("vae")
    }

    pub fn mixmatch_stem(&self, k: usize) -> PathBuf {
        self.iteration_dir(k).join("checkpoints").join("mixmatch")
    }

    pub fn raw_ref_stem(&self) -> PathBuf {
        self.dir.join("checkpoints").join("mixmatch_raw_ref")
    }

    /// The model iteration `k` filters with.
    pub fn reference_stem(&self, k: usize) -> PathBuf {
        if k <= 1 {
            self.baseline_stem()
        } else {
            self.mixmatch_stem(k - 1)
        }
    }

    pub fn filter_report_path(&self, k: usize) -> PathBuf {
        self.iteration_dir(k).join("filter_report.json")
    }

    pub fn augmented_dir(&self, k: usize) -> PathBuf {
        self.iteration_dir(k).join("augmented")
    }

    fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }

    pub fn load_split(&self, name: &str) -> Result<LabeledSet> {
        let dir = self.split_dir(name);
        if !dir.join("manifest.json").exists() {
            return Err(missing(dir.join("manifest.json"), "run `split` first"));
        }
        import_labeled(&dir)
    }

    /// SHA-256 over the split manifests, in `SPLITS` order.
    pub fn split_digest(&self) -> Result<String> {
        let mut bytes = Vec::new();
        for name in SPLITS {
            let p = self.split_dir(name).join("manifest.json");
            bytes.extend(std::fs::read(&p).map_err(|e| Error::io(&p, e))?);
        }
        Ok(hex_digest(&bytes))
    }

    /// Partition the training pool into D_L / D_V / D_REF and store them with
    /// the test set under `splits/`.
    pub fn split(&self) -> Result<()> {
        let pool = self.config.load_train_pool(self.seed)?;
        let mut spec = self.config.split.clone();
        spec.seed = self.stage_seed("split");
        let (d_l, d_v, d_ref) = split_dataset(&pool, &spec)?;
        let test = self.config.load_test(self.seed)?;
        for (name, set) in SPLITS.iter().zip([&d_l, &d_v, &d_ref, &test]) {
            export_labeled(set, &self.split_dir(name))?;
        }
        log::info!(
            "split: |D_L| = {}, |D_V| = {}, |D_REF| = {}, |test| = {}",
            d_l.len(),
            d_v.len(),
            d_ref.len(),
            test.len()
        );
        Ok(())
    }

    fn finish_classifier(
        &self,
        stage: &str,
        model: &Classifier,
        history: &TrainHistory,
        stem: &Path,
        base: &Path,
        counts: (usize, usize),
    ) -> Result<StageMetrics> {
        let test = self.load_split("test")?;
        let (test_accuracy, _) = evaluate(model, &test)?;
        model.save(stem, self.seed, best_step(history))?;
        history.write_jsonl(&base.join("history").join(format!("{stage}.jsonl")))?;
        let metrics = StageMetrics {
            schema_version: REPORT_SCHEMA_VERSION,
            stage: stage.to_string(),
            val_accuracy: history.best_accuracy().unwrap_or(0.0),
            test_accuracy,
            steps: history.records.last().map_or(0, |r| r.step),
            num_labeled: counts.0,
            num_unlabeled: counts.1,
        };
        write_json(&base.join("metrics").join(format!("{stage}.json")), &metrics)?;
        log::info!(
            "{stage}: val {:.2}%, test {:.2}%",
            100.0 * metrics.val_accuracy,
            100.0 * test_accuracy
        );
        Ok(metrics)
    }

    /// Train the supervised baseline on D_L with selection on D_V.
    pub fn train_supervised(&self) -> Result<StageMetrics> {
        let d_l = self.load_split("train")?;
        let d_v = self.load_split("val")?;
        let spec = self.config.classifier_spec()?;
        let mut cfg = self.config.train.clone();
        cfg.seed = self.stage_seed("supervised");
        let (model, history) = train_supervised(&d_l, &d_v, &spec, &cfg)?;
        self.finish_classifier(
            "supervised",
            &model,
            &history,
            &self.baseline_stem(),
            &self.dir,
            (d_l.len(), 0),
        )
    }

    /// Pretrain the VAE encoder trunk on auxiliary data. Returns `false` when
    /// pretraining is disabled or no auxiliary data is configured.
    pub fn pretrain(&self) -> Result<bool> {
        if !self.config.pretrain.enabled {
            return Ok(false);
        }
        let Some(aux) = self.config.load_aux(self.seed)? else {
            log::warn!("no auxiliary dataset configured; the VAE encoder starts from scratch");
            return Ok(false);
        };
        let mut cfg = self.config.pretrain.train.clone();
        cfg.seed = self.stage_seed("pretrain");
        pretrain_encoder(&aux, &self.config.classifier_spec()?, &cfg, &self.encoder_stem())?;
        Ok(true)
    }

    /// Score D_REF with iteration `k`'s reference model and threshold it.
    pub fn filter(&self, k: usize) -> Result<FilterReport> {
        let stem = self.reference_stem(k);
        require_checkpoint(
            &stem,
            if k <= 1 {
                "reference checkpoint missing; run `train-supervised` first"
            } else {
                "previous iteration's model missing; run `train-mixmatch` for it first"
            },
        )?;
        let (model, _) = Classifier::load(&stem)?;
        let d_ref = self.load_split("ref")?;
        let report = filter_reference(&model, &d_ref, self.config.confidence_mode)?;
        write_json(&self.filter_report_path(k), &report)?;
        write_confidence_histogram(
            &report.confidences(),
            report.gamma,
            40,
            &self.iteration_dir(k).join("filter_histogram.png"),
        )?;
        log::info!(
            "filter (iteration {k}): gamma = {:.4}, {} of {} reference samples selected",
            report.gamma,
            report.effective_ids().len(),
            d_ref.len()
        );
        Ok(report)
    }

    pub fn load_filter_report(&self, k: usize) -> Result<FilterReport> {
        read_json(&self.filter_report_path(k), "run `filter` first")
    }

    fn d_ref_low(&self, k: usize) -> Result<LabeledSet> {
        let report = self.load_filter_report(k)?;
        self.load_split("ref")?.select_ids(report.effective_ids())
    }

    /// Fine-tune the VAE on D_REF_LOW padded with D_L samples.
    pub fn train_vae(&self, k: usize) -> Result<()> {
        let low = self.d_ref_low(k)?;
        let d_l = self.load_split("train")?;
        let pad = match self.config.vae.pad_count {
            Some(p) => p,
            None => low.len().min(d_l.len()),
        };
        let seed = self.stage_seed(&format!("vae.{k}"));
        let train_set = assemble_vae_train_set(&low, &d_l, pad, seed)?;
        let mut cfg = self.config.vae.clone();
        cfg.seed = seed;
        if self.config.pretrain.enabled && cfg.pretrained_encoder.is_none() {
            if !self.encoder_stem().with_extension("json").exists() {
                self.pretrain()?;
            }
            if self.encoder_stem().with_extension("json").exists() {
                cfg.pretrained_encoder = Some(self.encoder_stem());
            }
        }
        let (vae, log) = train_vae(&train_set, &self.config.classifier_spec()?, &cfg)?;
        vae.save(&self.vae_stem(k), self.seed, log.len())?;
        write_lines(&self.iteration_dir(k).join("history").join("vae.jsonl"), &log)?;
        log::info!(
            "train-vae (iteration {k}): {} images, final loss {:.4}",
            train_set.len(),
            log.last().map_or(f64::NAN, |r| r.loss)
        );
        Ok(())
    }

    /// Emit D_Rec and D_Synth under `augmented/`.
    pub fn generate(&self, k: usize) -> Result<()> {
        let stem = self.vae_stem(k);
        require_checkpoint(&stem, "VAE checkpoint missing; run `train-vae` first")?;
        let (vae, _) = Vae::load(&stem)?;
        let low = self.d_ref_low(k)?;
        let sets = augment(&vae, &low, self.config.k_synth, self.stage_seed(&format!("generate.{k}")))?;
        let dir = self.augmented_dir(k);
        export_augmented(&dir.join("rec"), Some((&sets.d_rec, &sets.seed_ids)), None)?;
        export_augmented(&dir.join("synth"), None, Some(&sets.d_synth))?;
        Ok(())
    }

    /// Load D_Rec (labeled) and D_Synth from `augmented/`.
    pub fn load_augmented(&self, k: usize) -> Result<(LabeledSet, UnlabeledSet)> {
        let dir = self.augmented_dir(k);
        for part in ["rec", "synth"] {
            if !dir.join(part).join("manifest.json").exists() {
                return Err(missing(dir.join(part).join("manifest.json"), "run `generate` first"));
            }
        }
        let num_classes = self.config.num_classes();
        let (manifest, samples) = import_augmented(&dir.join("rec"))?;
        let labels = manifest
            .entries
            .iter()
            .map(|e| {
                e.label
                    .ok_or_else(|| Error::invalid(format!("reconstruction {} has no label", e.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let d_rec = LabeledSet::new(samples, labels, num_classes)?;
        let (_, synth) = import_augmented(&dir.join("synth"))?;
        Ok((d_rec, UnlabeledSet::new(synth)?))
    }

    fn ssl_data(&self, k: usize, mode: AblationMode) -> Result<(LabeledSet, UnlabeledSet)> {
        let d_l = self.load_split("train")?;
        match mode {
            AblationMode::Generated => {
                let (d_rec, d_synth) = self.load_augmented(k)?;
                Ok((d_l.union(&d_rec)?, d_synth))
            }
            AblationMode::RawRef => Ok((d_l, self.load_split("ref")?.unlabeled())),
        }
    }

    fn mixmatch_into(
        &self,
        k: usize,
        mode: AblationMode,
        stem: &Path,
        stage: &str,
        trace: Option<&Path>,
    ) -> Result<StageMetrics> {
        let reference = self.reference_stem(k);
        require_checkpoint(&reference, "reference checkpoint missing; run `train-supervised` first")?;
        let (init, _) = Classifier::load(&reference)?;
        let (labeled, unlabeled) = self.ssl_data(k, mode)?;
        let d_v = self.load_split("val")?;
        let spec = self.config.classifier_spec()?;
        let mut cfg = self.config.mixmatch.clone();
        cfg.seed = self.stage_seed(&format!("{stage}.{k}"));
        if let Some(path) = trace {
            let t = trace_first_batch(&labeled, &unlabeled, &spec, &cfg, Some(&init))?;
            write_json(path, &t)?;
        }
        let (model, history) = train_mixmatch(&labeled, &unlabeled, &d_v, &spec, &cfg, Some(&init))?;
        let base = if stage == "mixmatch" {
            self.iteration_dir(k)
        } else {
            self.dir.clone()
        };
        self.finish_classifier(stage, &model, &history, stem, &base, (labeled.len(), unlabeled.len()))
    }

    /// Semi-supervised training of iteration `k` on the data selected by the
    /// configured ablation mode. `trace` receives the first batch's worked trace.
    pub fn train_mixmatch(&self, k: usize, trace: Option<&Path>) -> Result<StageMetrics> {
        self.mixmatch_into(k, self.config.ablation_mode, &self.mixmatch_stem(k), "mixmatch", trace)
    }

    /// The raw-D_REF ablation arm: labeled D_L, unlabeled D_REF, from the baseline.
    pub fn train_mixmatch_raw_ref(&self) -> Result<StageMetrics> {
        self.mixmatch_into(1, AblationMode::RawRef, &self.raw_ref_stem(), "mixmatch_raw_ref", None)
    }

    pub fn initial_state(&self) -> Result<PipelineState> {
        require_checkpoint(&self.baseline_stem(), "run `train-supervised` first")?;
        Ok(PipelineState {
            iteration: 0,
            reference: self.baseline_stem(),
            filter_report: None,
            augmented: None,
            iterations: Vec::new(),
        })
    }

    /// Filter with the current reference, augment, train MixMatch and make the
    /// result the new reference.
    pub fn run_iteration(&self, state: PipelineState) -> Result<PipelineState> {
        let k = state.iteration + 1;
        let generated = self.config.ablation_mode == AblationMode::Generated;
        let report = if generated {
            Some(self.filter(k).map_err(|e| e.in_stage("filter"))?)
        } else {
            None
        };
        if generated {
            self.train_vae(k).map_err(|e| e.in_stage("train-vae"))?;
            self.generate(k).map_err(|e| e.in_stage("generate"))?;
        }
        let metrics = self
            .train_mixmatch(k, None)
            .map_err(|e| e.in_stage("train-mixmatch"))?;
        let mut iterations = state.iterations;
        iterations.push(iteration_report(k, report.as_ref(), metrics));
        Ok(PipelineState {
            iteration: k,
            reference: self.mixmatch_stem(k),
            filter_report: generated.then(|| self.filter_report_path(k)),
            augmented: generated.then(|| self.augmented_dir(k)),
            iterations,
        })
    }

    /// Split, baseline, optional encoder pretraining and all iterations.
    pub fn run(&self) -> Result<RunReport> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        self.split().map_err(|e| e.in_stage("split"))?;
        let baseline = self
            .train_supervised()
            .map_err(|e| e.in_stage("train-supervised"))?;
        if self.config.ablation_mode == AblationMode::Generated {
            self.pretrain().map_err(|e| e.in_stage("pretrain"))?;
        }
        let mut state = self.initial_state()?;
        while state.iteration < self.config.num_iterations {
            state = self.run_iteration(state)?;
        }
        let report = RunReport {
            schema_version: REPORT_SCHEMA_VERSION,
            seed: self.seed,
            baseline,
            iterations: state.iterations,
            ablation: None,
        };
        write_json(&self.dir.join("run_report.json"), &report)?;
        Ok(report)
    }

    /// Both ablation arms from the same baseline checkpoint and split.
    pub fn run_ablation(&self) -> Result<RunReport> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        self.split().map_err(|e| e.in_stage("split"))?;
        let baseline = self
            .train_supervised()
            .map_err(|e| e.in_stage("train-supervised"))?;
        let digests = || -> Result<(String, String)> {
            Ok((checkpoint_digest(&self.baseline_stem())?, self.split_digest()?))
        };
        let before = digests()?;
        let raw_ref = self
            .train_mixmatch_raw_ref()
            .map_err(|e| e.in_stage("train-mixmatch"))?;
        if digests()? != before {
            return Err(Error::invalid("baseline or split changed between ablation arms"));
        }
        let generated_ctx = RunContext {
            config: PipelineConfig {
                ablation_mode: AblationMode::Generated,
                ..self.config.clone()
            },
            ..self.clone()
        };
        generated_ctx.pretrain().map_err(|e| e.in_stage("pretrain"))?;
        let state = generated_ctx.run_iteration(generated_ctx.initial_state()?)?;
        if digests()? != before {
            return Err(Error::invalid("baseline or split changed between ablation arms"));
        }
        let generated = state.iterations[0].metrics.clone();
        let report = RunReport {
            schema_version: REPORT_SCHEMA_VERSION,
            seed: self.seed,
            baseline,
            iterations: state.iterations,
            ablation: Some(AblationReport {
                raw_ref,
                generated,
                baseline_digest: before.0,
                split_digest: before.1,
            }),
        };
        write_json(&self.dir.join("run_report.json"), &report)?;
        Ok(report)
    }

    /// Rebuild this seed's report from persisted metrics without recomputing.
    pub fn collect_report(&self) -> Result<RunReport> {
        let baseline: StageMetrics = read_json(
            &self.dir.join("metrics").join("supervised.json"),
            "run `train-supervised` first",
        )?;
        let mut iterations = Vec::new();
        for k in 1.. {
            let path = self.iteration_dir(k).join("metrics").join("mixmatch.json");
            if !path.exists() {
                break;
            }
            let metrics: StageMetrics = read_json(&path, "")?;
            let filter = self.load_filter_report(k).ok();
            iterations.push(iteration_report(k, filter.as_ref(), metrics));
        }
        let raw_path = self.dir.join("metrics").join("mixmatch_raw_ref.json");
        let ablation = match (raw_path.exists(), iterations.first()) {
            (true, Some(first)) => Some(AblationReport {
                raw_ref: read_json(&raw_path, "")?,
                generated: first.metrics.clone(),
                baseline_digest: checkpoint_digest(&self.baseline_stem())?,
                split_digest: self.split_digest()?,
            }),
            _ => None,
        };
        Ok(RunReport {
            schema_version: REPORT_SCHEMA_VERSION,
            seed: self.seed,
            baseline,
            iterations,
            ablation,
        })
    }
}

fn iteration_report(k: usize, filter: Option<&FilterReport>, metrics: StageMetrics) -> IterationReport {
    IterationReport {
        iteration: k,
        gamma: filter.map(|f| f.gamma),
        num_low_confidence: filter.map_or(0, |f| f.effective_ids().len()),
        fallback_used: filter.is_some_and(|f| f.fallback_used()),
        metrics,
    }
}

/// Per-seed contexts: a single seed uses `run_dir` itself, several seeds use
/// `run_dir/seed_<s>`.
pub fn seed_contexts(config: &PipelineConfig, run_dir: &Path) -> Vec<RunContext> {
    (0..config.num_seeds as u64)
        .map(|i| {
            let seed = config.seed + i;
            let dir = if config.num_seeds == 1 {
                run_dir.to_path_buf()
            } else {
                run_dir.join(format!("seed_{seed}"))
            };
            RunContext::new(config.clone(), seed, dir)
        })
        .collect()
}

fn run_all(
    config: &PipelineConfig,
    run_dir: &Path,
    per_seed: impl Fn(&RunContext) -> Result<RunReport>,
) -> Result<PipelineReport> {
    config.validate()?;
    config.save(&run_dir.join("config.json"))?;
    let runs = seed_contexts(config, run_dir)
        .iter()
        .map(|ctx| per_seed(ctx))
        .collect::<Result<Vec<_>>>()?;
    let report = PipelineReport::from_runs(runs)?;
    write_json(&run_dir.join("report.json"), &report)?;
    Ok(report)
}

/// Run the full pipeline for every configured seed and write `report.json`.
pub fn run_pipeline(config: &PipelineConfig, run_dir: &Path) -> Result<PipelineReport> {
    run_all(config, run_dir, RunContext::run)
}

/// Run both ablation arms for every configured seed and write `report.json`.
pub fn run_ablation(config: &PipelineConfig, run_dir: &Path) -> Result<PipelineReport> {
    run_all(config, run_dir, RunContext::run_ablation)
}

/// Read `report.json`, or rebuild the report in memory from per-seed metrics
/// when it is absent. Never writes.
pub fn load_report(run_dir: &Path) -> Result<PipelineReport> {
    let path = run_dir.join("report.json");
    if path.exists() {
        return read_json(&path, "");
    }
    let config = PipelineConfig::load(&run_dir.join("config.json"))?;
    let runs = seed_contexts(&config, run_dir)
        .iter()
        .map(RunContext::collect_report)
        .collect::<Result<Vec<_>>>()?;
    PipelineReport::from_runs(runs)
}
