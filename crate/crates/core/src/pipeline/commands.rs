//! Resumable commands over an output directory.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::stages::{
    encode_video, encoding_len, fit_vocabulary, pool_video, predict, resolve_windows, sample_labels,
    train_classifier, unit_masks, units_of, LabeledVideo, TrainingSet, Vocabulary,
};
use super::store::{
    descriptor_path, encoding_path, load_descriptors, load_encodings, save_descriptors, save_encodings,
    write_json, VideoEncodings,
};
use crate::data::{read_manifest, validate_manifest, DatasetManifest, Label, Task};
use crate::error::{Error, Result};
use crate::eval::{
    confusion, f1_segment, video_majority_rule, write_report, AggregateScore, EvalReport, Fold, FoldPlan,
    FoldScore,
};
use crate::models::{load_gmm, load_linear, load_pca, save_gmm, save_linear, save_pca};
use crate::trajectory::WindowSpec;
use crate::LinearSvm;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// What a stage produced.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StageSummary {
    pub command: String,
    pub written: usize,
    pub skipped: usize,
}

#[derive(Serialize, Deserialize)]
struct RunManifest {
    version: String,
    container_format: String,
    config_hash: String,
    command: String,
    config: RunConfig,
}

/// Everything a command needs: the validated config, its output directory
/// and whether to recompute existing outputs.
pub struct Pipeline {
    cfg: RunConfig,
    out: PathBuf,
    hash: String,
    force: bool,
    /// Previous outputs belong to another config; recompute everything.
    stale: bool,
    manifest: DatasetManifest,
    augment: DatasetManifest,
    windows: Option<WindowSpec>,
}

fn read_manifests(cfg: &RunConfig) -> Result<(DatasetManifest, DatasetManifest)> {
    let manifest = read_manifest(cfg.manifest_path()?)?;
    let mut augment = DatasetManifest::from_entries(Vec::new(), "");
    augment.task = manifest.task;
    for p in &cfg.augment_manifests {
        let extra = read_manifest(p)?;
        if !extra.entries.is_empty() && extra.task != manifest.task {
            return Err(Error::Config {
                field: "augment_manifests".into(),
                message: format!("{} has a different label kind than the main manifest", p.display()),
            });
        }
        augment.concat(&extra);
    }
    let mut combined = manifest.clone();
    combined.concat(&augment);
    combined.num_classes = manifest.num_classes.max(augment.num_classes);
    let violations = validate_manifest(&combined);
    if let Some(v) = violations.first() {
        return Err(Error::InvalidInput(format!(
            "manifest has {} problem(s), first: {v}",
            violations.len()
        )));
    }
    Ok((manifest, augment))
}

impl Pipeline {
    pub fn new(cfg: RunConfig, force: bool) -> Result<Self> {
        cfg.validate()?;
        let out = cfg.output_dir()?.to_path_buf();
        let hash = config_hash(&cfg);
        let previous = out.join("run.json");
        let stale = match fs::read_to_string(&previous) {
            Ok(text) => {
                let prev: RunManifest = serde_json::from_str(&text).map_err(|e| Error::json(&previous, e))?;
                prev.config_hash != hash
            }
            Err(_) => false,
        };
        if stale && !force {
            return Err(Error::Config {
                field: "output".into(),
                message: format!(
                    "{} holds results of a different configuration; pass --force to recompute",
                    out.display()
                ),
            });
        }
        let (manifest, augment) = read_manifests(&cfg)?;
        let windows = resolve_windows(&cfg, manifest.task)?;
        Ok(Pipeline {
            cfg,
            out,
            hash,
            force,
            stale,
            manifest,
            augment,
            windows,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn output(&self) -> &Path {
        &self.out
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    fn num_classes(&self) -> usize {
        self.manifest.num_classes.max(self.augment.num_classes)
    }

    fn units(&self) -> usize {
        units_of(self.manifest.task, self.num_classes())
    }

    fn redo(&self, target: bool) -> bool {
        self.stale || (target && self.force)
    }

    fn record(&self, command: &str) -> Result<()> {
        let mut config = self.cfg.clone();
        config.output = None;
        write_json(
            &self.out.join("run.json"),
            &RunManifest {
                version: VERSION.into(),
                container_format: "TPFV0001".into(),
                config_hash: self.hash.clone(),
                command: command.into(),
                config,
            },
        )
    }

    /// Descriptors for the main and augmentation manifests, pooled or read back.
    fn pooled(&self, target: bool) -> Result<(Vec<LabeledVideo>, Vec<LabeledVideo>, StageSummary)> {
        let redo = self.redo(target);
        let run = |m: &DatasetManifest| {
            m.entries
                .par_iter()
                .map(|e| {
                    let path = descriptor_path(&self.out, &e.video_id);
                    let (descriptors, wrote) = if path.is_file() && !redo {
                        (load_descriptors(&path)?, false)
                    } else {
                        let d = pool_video(m, e, &self.cfg, self.windows)?;
                        save_descriptors(&path, &d)?;
                        (d, true)
                    };
                    let labels = sample_labels(m, e, &descriptors)?;
                    Ok((
                        LabeledVideo {
                            video_id: e.video_id.clone(),
                            actor_id: e.actor_id.clone(),
                            video_label: e.label.clone(),
                            descriptors,
                            labels,
                        },
                        wrote,
                    ))
                })
                .collect::<Result<Vec<_>>>()
        };
        let main = run(&self.manifest)?;
        let extra = run(&self.augment)?;
        let written = main.iter().chain(&extra).filter(|(_, w)| *w).count();
        let total = main.len() + extra.len();
        if written < total {
            log::info!("pool: reusing {} existing descriptor files", total - written);
        }
        let strip = |v: Vec<(LabeledVideo, bool)>| v.into_iter().map(|(v, _)| v).collect();
        Ok((
            strip(main),
            strip(extra),
            StageSummary {
                command: "pool".into(),
                written,
                skipped: total - written,
            },
        ))
    }

    pub fn pool(&self) -> Result<StageSummary> {
        let (_, _, summary) = self.pooled(true)?;
        self.record("pool")?;
        Ok(summary)
    }

    fn gmm_count(&self) -> usize {
        if self.cfg.gmm.per_class {
            self.num_classes()
        } else {
            1
        }
    }

    fn vocabulary_files(dir: &Path, count: usize) -> (PathBuf, Vec<PathBuf>) {
        (
            dir.join("pca.tpfv"),
            (0..count).map(|i| dir.join(format!("gmm_{i:02}.tpfv"))).collect(),
        )
    }

    fn save_vocabulary(&self, dir: &Path, vocab: &Vocabulary) -> Result<()> {
        let (pca, gmms) = Self::vocabulary_files(dir, vocab.gmms.len());
        save_pca(pca, &vocab.pca)?;
        for (p, g) in gmms.iter().zip(&vocab.gmms) {
            save_gmm(p, g, self.cfg.gmm.em.variance_floor)?;
        }
        Ok(())
    }

    fn training_set<'a>(&self, main: impl IntoIterator<Item = &'a LabeledVideo>, extra: &'a [LabeledVideo]) -> TrainingSet<'a> {
        TrainingSet {
            videos: main.into_iter().chain(extra).collect(),
            task: self.manifest.task,
            num_classes: self.num_classes(),
        }
    }

    fn fitted(&self, target: bool) -> Result<(Vocabulary, StageSummary)> {
        let dir = self.out.join("models");
        let (pca_path, gmm_paths) = Self::vocabulary_files(&dir, self.gmm_count());
        let exists = pca_path.is_file() && gmm_paths.iter().all(|p| p.is_file());
        if exists && !self.redo(target) {
            log::info!("fit: reusing models in {}", dir.display());
            let vocab = Vocabulary {
                pca: load_pca(&pca_path)?,
                gmms: gmm_paths.iter().map(load_gmm).collect::<Result<_>>()?,
            };
            return Ok((vocab, summary("fit", 0, 1 + gmm_paths.len())));
        }
        let (main, extra, _) = self.pooled(false)?;
        let train = self.training_set(&main, &extra);
        let (vocab, logs) = fit_vocabulary(&train, &self.cfg)?;
        self.save_vocabulary(&dir, &vocab)?;
        write_json(&dir.join("gmm_log.json"), &logs)?;
        let written = 1 + vocab.gmms.len();
        Ok((vocab, summary("fit", written, 0)))
    }

    pub fn fit(&self) -> Result<StageSummary> {
        let (_, s) = self.fitted(true)?;
        self.record("fit")?;
        Ok(s)
    }

    fn masks(&self) -> Result<Option<Vec<Vec<usize>>>> {
        unit_masks(&self.cfg, self.manifest.task, self.units())
    }

    fn encoded(&self, target: bool) -> Result<(Vec<(VideoEncodings, Vec<Label>)>, StageSummary)> {
        let redo = self.redo(target);
        let entries: Vec<_> = self.manifest.entries.iter().chain(&self.augment.entries).collect();
        let cached = !redo && entries.iter().all(|e| encoding_path(&self.out, &e.video_id).is_file());
        let (main, extra, _) = self.pooled(false)?;
        let videos: Vec<&LabeledVideo> = main.iter().chain(&extra).collect();
        if cached {
            log::info!("encode: reusing {} existing encoding files", entries.len());
            let loaded = videos
                .iter()
                .map(|v| Ok((load_encodings(&encoding_path(&self.out, &v.video_id))?, v.labels.clone())))
                .collect::<Result<Vec<_>>>()?;
            return Ok((loaded, summary("encode", 0, entries.len())));
        }
        let (vocab, _) = self.fitted(false)?;
        let masks = self.masks()?;
        let units = self.units();
        let len = encoding_len(&vocab, &self.cfg);
        let out = videos
            .par_iter()
            .map(|v| {
                let enc = VideoEncodings {
                    video_id: v.video_id.clone(),
                    windows: v.descriptors.samples.iter().map(|s| (s.window_index, s.center_frame)).collect(),
                    values: encode_video(&vocab, &v.descriptors, masks.as_deref(), units, &self.cfg)?,
                };
                save_encodings(&encoding_path(&self.out, &v.video_id), &enc, units, len)?;
                Ok((enc, v.labels.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((out, summary("encode", entries.len(), 0)))
    }

    pub fn encode(&self) -> Result<StageSummary> {
        let (_, s) = self.encoded(true)?;
        self.record("encode")?;
        Ok(s)
    }

    pub fn train(&self) -> Result<StageSummary> {
        let path = self.out.join("models").join("linear.tpfv");
        let s = if path.is_file() && !self.redo(true) {
            log::info!("train: {} exists, skipping", path.display());
            load_linear::<f64>(&path)?;
            summary("train", 0, 1)
        } else {
            let (encoded, _) = self.encoded(false)?;
            let (xs, ys): (Vec<_>, Vec<_>) = encoded
                .iter()
                .flat_map(|(e, labels)| e.values.iter().zip(labels))
                .unzip();
            let model = train_classifier(&xs, &ys, self.manifest.task, self.num_classes(), self.masks()?, &self.cfg)?;
            save_linear(&path, &model)?;
            summary("train", 1, 0)
        };
        self.record("train")?;
        Ok(s)
    }

    /// Fit, train and test every fold, then write the report.
    pub fn evaluate(&self) -> Result<EvalReport> {
        let report_path = self.out.join("report").join("report.json");
        if report_path.is_file() && !self.redo(true) {
            log::info!("evaluate: {} exists, skipping", report_path.display());
            let text = fs::read_to_string(&report_path).map_err(|e| Error::io(&report_path, e))?;
            return serde_json::from_str(&text).map_err(|e| Error::json(&report_path, e));
        }
        let (main, extra, _) = self.pooled(false)?;
        let plan = FoldPlan::build(&self.manifest, self.cfg.protocol)?;
        write_json(&self.out.join("folds").join("plan.json"), &plan)?;
        let by_id: HashMap<&str, &LabeledVideo> = main.iter().map(|v| (v.video_id.as_str(), v)).collect();
        let masks = self.masks()?;
        let outcomes = plan
            .folds
            .par_iter()
            .enumerate()
            .map(|(i, fold)| self.run_fold(i, fold, &by_id, &extra, masks.clone()))
            .collect::<Result<Vec<_>>>()?;
        let report = self.report(&plan, &outcomes, &by_id)?;
        write_report(&self.out.join("report"), &report, self.cfg.heatmap)?;
        self.record("evaluate")?;
        Ok(report)
    }

    fn run_fold(
        &self,
        index: usize,
        fold: &Fold,
        by_id: &HashMap<&str, &LabeledVideo>,
        extra: &[LabeledVideo],
        masks: Option<Vec<Vec<usize>>>,
    ) -> Result<FoldOutcome> {
        let pick = |ids: &[String]| -> Vec<&LabeledVideo> { ids.iter().map(|id| by_id[id.as_str()]).collect() };
        let train = self.training_set(pick(&fold.train), extra);
        let (vocab, _) = fit_vocabulary(&train, &self.cfg)?;
        let units = self.units();
        let encode = |vs: &[&LabeledVideo]| {
            vs.iter()
                .map(|v| encode_video(&vocab, &v.descriptors, masks.as_deref(), units, &self.cfg))
                .collect::<Result<Vec<_>>>()
        };
        let train_enc = encode(&train.videos)?;
        let (xs, ys): (Vec<_>, Vec<_>) = train_enc
            .iter()
            .zip(&train.videos)
            .flat_map(|(e, v)| e.iter().zip(&v.labels))
            .unzip();
        let model = train_classifier(&xs, &ys, self.manifest.task, self.num_classes(), masks.clone(), &self.cfg)?;

        let dir = self.out.join("folds").join(format!("fold_{index:03}"));
        self.save_vocabulary(&dir, &vocab)?;
        save_linear(dir.join("linear.tpfv"), &model)?;

        let test_videos = pick(&fold.test);
        let test = score_videos(&model, &test_videos, &encode(&test_videos)?)?;
        if !fold.validation.is_empty() {
            let val_videos = pick(&fold.validation);
            let val = score_videos(&model, &val_videos, &encode(&val_videos)?)?;
            let correct = val.iter().filter(|p| p.predicted == p.truth).count();
            log::info!("fold {index}: validation exact-match {correct}/{}", val.len());
        }
        Ok(FoldOutcome {
            index,
            test_actors: fold.test_actors.clone(),
            predictions: test,
        })
    }

    fn report(&self, plan: &FoldPlan, outcomes: &[FoldOutcome], by_id: &HashMap<&str, &LabeledVideo>) -> Result<EvalReport> {
        let task = self.manifest.task;
        let n = self.num_classes();
        let folds = outcomes
            .iter()
            .map(|o| {
                let correct = o.predictions.iter().filter(|p| p.predicted == p.truth).count();
                Ok(FoldScore {
                    index: o.index,
                    test_actors: o.test_actors.clone(),
                    score: AggregateScore::new(correct, o.predictions.len()),
                    f1: match task {
                        Task::Multilabel if !o.predictions.is_empty() => Some(unit_f1(o.predictions.iter())?),
                        _ => None,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let all: Vec<&Prediction> = outcomes.iter().flat_map(|o| &o.predictions).collect();
        let (confusion, f1) = match task {
            Task::Categorical => {
                let (p, t): (Vec<usize>, Vec<usize>) = all.iter().map(|p| (class(&p.predicted), class(&p.truth))).unzip();
                (Some(confusion(&p, &t, n)?), None)
            }
            Task::Multilabel if !all.is_empty() => (None, Some(unit_f1(all.iter().copied())?)),
            Task::Multilabel => (None, None),
        };
        let video_majority = if self.cfg.frame_majority && task == Task::Categorical {
            let mut per_video: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for p in &all {
                per_video.entry(p.video_id.as_str()).or_default().push(class(&p.predicted));
            }
            let correct = per_video
                .iter()
                .filter(|(id, preds)| video_majority_rule(preds, class(&by_id[*id].video_label)))
                .count();
            Some(AggregateScore::new(correct, per_video.len()))
        } else {
            None
        };
        let mut metadata = BTreeMap::new();
        metadata.insert("config_hash".to_string(), self.hash.clone());
        metadata.insert("version".to_string(), VERSION.to_string());
        metadata.insert(
            "samples".to_string(),
            if self.windows.is_some() { "windows" } else { "whole" }.to_string(),
        );
        metadata.insert("unused_actors".to_string(), plan.unused_actors.join(","));
        Ok(EvalReport {
            protocol: plan.protocol,
            task,
            num_classes: n,
            aggregate: EvalReport::aggregate_of(&folds),
            folds,
            confusion,
            f1,
            video_majority,
            metadata,
        })
    }
}

fn summary(command: &str, written: usize, skipped: usize) -> StageSummary {
    StageSummary {
        command: command.into(),
        written,
        skipped,
    }
}

/// Hash of the config without its output location, so that identical runs
/// into different directories agree.
pub fn config_hash(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.output = None;
    c.hash()
}

struct Prediction {
    video_id: String,
    predicted: Label,
    truth: Label,
}

struct FoldOutcome {
    index: usize,
    test_actors: Vec<String>,
    predictions: Vec<Prediction>,
}

fn score_videos(model: &LinearSvm, videos: &[&LabeledVideo], encodings: &[Vec<Vec<Vec<f64>>>]) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (v, enc) in videos.iter().zip(encodings) {
        for (e, truth) in enc.iter().zip(&v.labels) {
            out.push(Prediction {
                video_id: v.video_id.clone(),
                predicted: predict(model, e)?,
                truth: truth.clone(),
            });
        }
    }
    Ok(out)
}

fn class(l: &Label) -> usize {
    match l {
        Label::Categorical(c) => *c,
        Label::MultiLabel(_) => usize::MAX,
    }
}

fn bits(l: &Label) -> Vec<bool> {
    match l {
        Label::MultiLabel(b) => b.clone(),
        Label::Categorical(_) => Vec::new(),
    }
}

fn unit_f1<'a>(preds: impl Iterator<Item = &'a Prediction>) -> Result<crate::eval::F1Report> {
    let (p, t): (Vec<_>, Vec<_>) = preds.map(|p| (bits(&p.predicted), bits(&p.truth))).unzip();
    f1_segment(&p, &t)
}

pub fn cmd_pool(cfg: RunConfig, force: bool) -> Result<StageSummary> {
    Pipeline::new(cfg, force)?.pool()
}

pub fn cmd_fit(cfg: RunConfig, force: bool) -> Result<StageSummary> {
    Pipeline::new(cfg, force)?.fit()
}

pub fn cmd_encode(cfg: RunConfig, force: bool) -> Result<StageSummary> {
    Pipeline::new(cfg, force)?.encode()
}

pub fn cmd_train(cfg: RunConfig, force: bool) -> Result<StageSummary> {
    Pipeline::new(cfg, force)?.train()
}

pub fn cmd_evaluate(cfg: RunConfig, force: bool) -> Result<EvalReport> {
    Pipeline::new(cfg, force)?.evaluate()
}
