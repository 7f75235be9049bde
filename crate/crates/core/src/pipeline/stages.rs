//! Pipeline stages as plain functions over in-memory data.

use rayon::prelude::*;
use serde::Serialize;

use super::config::{RunConfig, WindowMode};
use crate::data::{
    read_feature_sequence, read_frame_labels, read_landmarks, DatasetManifest, Label, ManifestEntry, Task,
};
use crate::error::{Error, Result};
use crate::fisher::{encode_with, encoded_len};
use crate::gmm::{fit_gmm, IterationRecord};
use crate::pca::fit_pca;
use crate::pooling::pool_bundle;
use crate::svm::{estimate_cooccurrence, sub_seed, train_multiclass_ovr, train_multilabel, RegionTable};
use crate::trajectory::{build_trajectories, split_windows, whole_sequence_bundle, WindowSpec};
use crate::{Gmm, LinearSvm, Pca};

/// Pooled descriptors of one bundle, one row per landmark.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub window_index: Option<usize>,
    pub center_frame: Option<usize>,
    pub rows: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoDescriptors {
    pub video_id: String,
    pub channels: usize,
    pub samples: Vec<Sample>,
}

/// `None` means one whole-sequence bundle per video.
pub fn resolve_windows(cfg: &RunConfig, task: Task) -> Result<Option<WindowSpec>> {
    let windowed = match cfg.window.mode {
        WindowMode::Whole => false,
        WindowMode::Windows => true,
        WindowMode::Auto => task == Task::Multilabel,
    };
    if windowed {
        cfg.window_spec().map(Some)
    } else {
        Ok(None)
    }
}

pub fn pool_video(
    manifest: &DatasetManifest,
    entry: &ManifestEntry,
    cfg: &RunConfig,
    windows: Option<WindowSpec>,
) -> Result<VideoDescriptors> {
    let features = read_feature_sequence(manifest.resolve(&entry.feature_path), &entry.video_id)?;
    let track = read_landmarks(manifest.resolve(&entry.landmark_path), Some(features.frame_count()))?;
    let trajectories = build_trajectories(&track);
    let bundles = match windows {
        Some(spec) => split_windows(&trajectories, spec),
        None => vec![whole_sequence_bundle(&trajectories)],
    };
    let samples = bundles
        .iter()
        .map(|b| {
            let rows = pool_bundle::<f64>(&features, b, &cfg.pooling)?;
            Ok(Sample {
                window_index: b.window_index,
                center_frame: b.center_frame,
                rows: rows.into_iter().map(|d| d.values).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if samples.is_empty() {
        log::warn!("video {} yields no samples", entry.video_id);
    }
    Ok(VideoDescriptors {
        video_id: entry.video_id.clone(),
        channels: features.channels(),
        samples,
    })
}

/// Label of every sample: the video label, or for windowed multilabel
/// videos with per-frame labels, the label of the centre frame.
pub fn sample_labels(manifest: &DatasetManifest, entry: &ManifestEntry, video: &VideoDescriptors) -> Result<Vec<Label>> {
    let frame_labels = match (&entry.label, &entry.frame_labels_path) {
        (Label::MultiLabel(_), Some(p)) if video.samples.iter().any(|s| s.center_frame.is_some()) => {
            Some(read_frame_labels(manifest.resolve(p))?)
        }
        _ => None,
    };
    video
        .samples
        .iter()
        .map(|s| match (&frame_labels, s.center_frame) {
            (Some(frames), Some(c)) => frames.get(c).cloned().map(Label::MultiLabel).ok_or_else(|| Error::Video {
                video_id: entry.video_id.clone(),
                message: format!("frame labels stop before centre frame {c}"),
            }),
            _ => Ok(entry.label.clone()),
        })
        .collect()
}

/// A video with its samples and their labels.
#[derive(Clone, Debug)]
pub struct LabeledVideo {
    pub video_id: String,
    pub actor_id: String,
    pub video_label: Label,
    pub descriptors: VideoDescriptors,
    pub labels: Vec<Label>,
}

/// The only input fitting stages accept: videos already restricted to a
/// training split.
pub struct TrainingSet<'a> {
    pub videos: Vec<&'a LabeledVideo>,
    pub task: Task,
    pub num_classes: usize,
}

impl TrainingSet<'_> {
    fn samples(&self) -> impl Iterator<Item = (&Sample, &Label)> {
        self.videos
            .iter()
            .flat_map(|v| v.descriptors.samples.iter().zip(&v.labels))
    }
}

/// PCA projection plus one mixture, or one per class.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    pub pca: Pca,
    pub gmms: Vec<Gmm>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MixtureLog {
    pub class: Option<usize>,
    pub converged: bool,
    pub iterations: Vec<IterationRecord>,
}

pub fn fit_vocabulary(train: &TrainingSet, cfg: &RunConfig) -> Result<(Vocabulary, Vec<MixtureLog>)> {
    let rows: Vec<Vec<f64>> = train.samples().flat_map(|(s, _)| s.rows.iter().cloned()).collect();
    if rows.is_empty() {
        return Err(Error::InsufficientData("training split has no descriptors".into()));
    }
    let pca = fit_pca(&rows, &cfg.pca)?;
    let projected = pca.project_all(&rows)?;
    drop(rows);

    let groups: Vec<(Option<usize>, Vec<Vec<f64>>)> = if cfg.gmm.per_class {
        if train.task != Task::Categorical {
            return Err(Error::Config {
                field: "gmm.per_class".into(),
                message: "per-class mixtures need categorical labels".into(),
            });
        }
        let mut by_class = vec![Vec::new(); train.num_classes];
        let mut offset = 0;
        for (s, l) in train.samples() {
            if let Label::Categorical(c) = l {
                by_class[*c].extend_from_slice(&projected[offset..offset + s.rows.len()]);
            }
            offset += s.rows.len();
        }
        by_class.into_iter().enumerate().map(|(c, x)| (Some(c), x)).collect()
    } else {
        vec![(None, projected)]
    };

    let fitted = groups
        .par_iter()
        .map(|(class, data)| {
            let mut em = cfg.gmm.em;
            if let Some(c) = class {
                em.seed = sub_seed(em.seed, *c);
            }
            fit_gmm(data, &em).map(|r| {
                (
                    r.model,
                    MixtureLog {
                        class: *class,
                        converged: r.converged,
                        iterations: r.log,
                    },
                )
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (gmms, logs) = fitted.into_iter().unzip();
    Ok((Vocabulary { pca, gmms }, logs))
}

/// Landmark subsets per unit for multilabel manifests with trajectory
/// selection; `None` encodes every unit from the whole face.
pub fn unit_masks(cfg: &RunConfig, task: Task, units: usize) -> Result<Option<Vec<Vec<usize>>>> {
    if task != Task::Multilabel || !cfg.svm.trajectory_selection {
        return Ok(None);
    }
    let table = match &cfg.svm.au_regions {
        Some(p) => RegionTable::read(p)?,
        None => RegionTable::standard(),
    };
    table.masks(units).map(Some).map_err(|e| Error::Config {
        field: "svm.au_regions".into(),
        message: e.to_string(),
    })
}

pub fn encoding_len(vocab: &Vocabulary, cfg: &RunConfig) -> usize {
    vocab.gmms.len() * encoded_len(vocab.gmms[0].components(), vocab.pca.output_dim(), cfg.fv)
}

fn encode_rows(vocab: &Vocabulary, rows: &[Vec<f64>], cfg: &RunConfig) -> Result<Vec<f64>> {
    let scale = 1.0 / (vocab.gmms.len() as f64).sqrt();
    let mut out = Vec::with_capacity(encoding_len(vocab, cfg));
    for g in &vocab.gmms {
        let fv = encode_with(g, rows, cfg.fv)?;
        if vocab.gmms.len() == 1 {
            out.extend(fv);
        } else {
            out.extend(fv.into_iter().map(|v| v * scale));
        }
    }
    Ok(out)
}

/// `[sample][unit]` encodings; a single unit without masks.
pub fn encode_video(
    vocab: &Vocabulary,
    video: &VideoDescriptors,
    masks: Option<&[Vec<usize>]>,
    units: usize,
    cfg: &RunConfig,
) -> Result<Vec<Vec<Vec<f64>>>> {
    video
        .samples
        .iter()
        .map(|s| {
            let projected = vocab.pca.project_all(&s.rows)?;
            match masks {
                Some(masks) => masks
                    .iter()
                    .map(|m| {
                        let picked: Vec<Vec<f64>> = m.iter().map(|&l| projected[l].clone()).collect();
                        encode_rows(vocab, &picked, cfg)
                    })
                    .collect(),
                None => {
                    let fv = encode_rows(vocab, &projected, cfg)?;
                    Ok(vec![fv; units])
                }
            }
        })
        .collect()
}

pub fn units_of(task: Task, num_classes: usize) -> usize {
    match task {
        Task::Categorical => 1,
        Task::Multilabel => num_classes,
    }
}

/// Train on `(encoding, label)` pairs from a training split.
pub fn train_classifier(
    encodings: &[&Vec<Vec<f64>>],
    labels: &[&Label],
    task: Task,
    num_classes: usize,
    masks: Option<Vec<Vec<usize>>>,
    cfg: &RunConfig,
) -> Result<LinearSvm> {
    let solver = cfg.svm.solver();
    match task {
        Task::Categorical => {
            let xs: Vec<Vec<f64>> = encodings.iter().map(|e| e[0].clone()).collect();
            let ys = labels
                .iter()
                .map(|l| match l {
                    Label::Categorical(c) => Ok(*c),
                    Label::MultiLabel(_) => Err(Error::InvalidInput("multilabel entry in a categorical manifest".into())),
                })
                .collect::<Result<Vec<_>>>()?;
            train_multiclass_ovr(&xs, &ys, num_classes, &solver)
        }
        Task::Multilabel => {
            let bits = labels
                .iter()
                .map(|l| match l {
                    Label::MultiLabel(b) => Ok(b.clone()),
                    Label::Categorical(_) => Err(Error::InvalidInput("categorical entry in a multilabel manifest".into())),
                })
                .collect::<Result<Vec<_>>>()?;
            let per_unit: Vec<Vec<Vec<f64>>> = (0..num_classes)
                .map(|u| encodings.iter().map(|e| e[u].clone()).collect())
                .collect();
            let co = if cfg.svm.cooccurrence {
                Some(estimate_cooccurrence(&bits)?)
            } else {
                None
            };
            train_multilabel(&per_unit, &bits, &solver, masks, co, cfg.svm.alpha)
        }
    }
}

pub fn predict(model: &LinearSvm, encoding: &[Vec<f64>]) -> Result<Label> {
    match model.task {
        crate::svm::LinearTask::Multiclass => Ok(Label::Categorical(model.predict_class(&encoding[0]))),
        crate::svm::LinearTask::Multilabel => model.predict_multilabel(encoding).map(Label::MultiLabel),
    }
}
