//! L2-regularized hinge-loss linear classifiers.
//!
//! Binary problems are solved in the dual by coordinate descent over a
//! seeded permutation of the examples each epoch. The bias is learned as
//! the weight of a constant extra feature (`SvmConfig::bias_feature`), so it
//! is regularized along with the other weights.

mod multilabel;

pub use multilabel::{
    apply_co_weighting, estimate_cooccurrence, train_multilabel, CoOccurrenceMatrix, RegionTable,
    UnitRegion,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, squared_norm, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub c: f64,
    pub max_epochs: usize,
    /// Stop once the spread of projected gradients falls below this.
    pub tolerance: f64,
    pub seed: u64,
    /// Value of the constant feature carrying the bias.
    pub bias_feature: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 100.0,
            max_epochs: 5000,
            tolerance: 1e-5,
            seed: 0,
            bias_feature: 1.0,
        }
    }
}

/// `score(x) = weights . x + bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryModel<T> {
    pub weights: Vec<T>,
    pub bias: T,
}

impl<T: Real> BinaryModel<T> {
    pub fn score(&self, x: &[T]) -> T {
        dot(&self.weights, x) + self.bias
    }

    /// `(1/2)(|w|^2 + b_w^2) + C sum max(0, 1 - y score)`, with `b_w` the
    /// weight on the bias feature.
    pub fn primal_objective(&self, xs: &[Vec<T>], ys: &[bool], cfg: &SvmConfig) -> f64 {
        let bias_weight = if cfg.bias_feature == 0.0 {
            0.0
        } else {
            self.bias.as_f64() / cfg.bias_feature
        };
        let reg = 0.5 * (squared_norm(&self.weights).as_f64() + bias_weight * bias_weight);
        let loss: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, &y)| {
                let s = self.score(x).as_f64();
                (1.0 - if y { s } else { -s }).max(0.0)
            })
            .sum();
        reg + cfg.c * loss
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: usize,
    /// Dual objective `(1/2)|w|^2 - sum alpha` after each epoch.
    pub dual_objective: Vec<f64>,
    pub converged: bool,
}

fn check_rows<T: Real>(xs: &[Vec<T>]) -> Result<usize> {
    let dim = xs.first().map_or(0, Vec::len);
    if let Some(bad) = xs.iter().find(|x| x.len() != dim) {
        return Err(Error::Dimension {
            context: "svm training data",
            expected: dim,
            found: bad.len(),
        });
    }
    Ok(dim)
}

/// Train on labelled rows (`true` = positive class).
pub fn train_labeled<T: Real>(
    xs: &[Vec<T>],
    ys: &[bool],
    cfg: &SvmConfig,
) -> Result<(BinaryModel<T>, TrainReport)> {
    if !(cfg.c > 0.0) {
        return Err(Error::InvalidInput(format!("regularization C must be positive, got {}", cfg.c)));
    }
    if xs.len() != ys.len() {
        return Err(Error::Dimension {
            context: "svm labels",
            expected: xs.len(),
            found: ys.len(),
        });
    }
    if !ys.iter().any(|&y| y) || ys.iter().all(|&y| y) {
        return Err(Error::InsufficientData("binary svm needs both classes".into()));
    }
    let dim = check_rows(xs)?;

    let c = T::of(cfg.c);
    let bias_feature = T::of(cfg.bias_feature);
    let sign = |y: bool| if y { T::one() } else { -T::one() };
    let diag: Vec<T> = xs
        .iter()
        .map(|x| squared_norm(x) + bias_feature * bias_feature)
        .collect();

    let mut alpha = vec![T::zero(); xs.len()];
    let mut w = vec![T::zero(); dim];
    let mut wb = T::zero();
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::new();
    let mut converged = false;

    let dual = |w: &[T], wb: T, alpha: &[T]| {
        0.5 * (squared_norm(w).as_f64() + (wb * wb).as_f64())
            - alpha.iter().map(|a| a.as_f64()).sum::<f64>()
    };

    let mut epochs = 0;
    while epochs < cfg.max_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        let mut pg_max = f64::NEG_INFINITY;
        let mut pg_min = f64::INFINITY;
        for &i in &order {
            let qii = diag[i];
            if qii <= T::zero() {
                continue;
            }
            let y = sign(ys[i]);
            let g = y * (dot(&w, &xs[i]) + wb * bias_feature) - T::one();
            let a = alpha[i];
            let pg = if a == T::zero() {
                g.min(T::zero())
            } else if a == c {
                g.max(T::zero())
            } else {
                g
            };
            pg_max = pg_max.max(pg.as_f64());
            pg_min = pg_min.min(pg.as_f64());
            if pg != T::zero() {
                let next = (a - g / qii).max(T::zero()).min(c);
                let step = (next - a) * y;
                if step != T::zero() {
                    w.iter_mut().zip(&xs[i]).for_each(|(wj, &xj)| *wj += step * xj);
                    wb += step * bias_feature;
                }
                alpha[i] = next;
            }
        }
        history.push(dual(&w, wb, &alpha));
        if pg_max - pg_min < cfg.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("svm stopped after {epochs} epochs without reaching tolerance {}", cfg.tolerance);
    }

    Ok((
        BinaryModel {
            weights: w,
            bias: wb * bias_feature,
        },
        TrainReport {
            epochs,
            dual_objective: history,
            converged,
        },
    ))
}

/// Train a binary separator of `positives` from `negatives`.
pub fn train_binary<T: Real>(
    positives: &[Vec<T>],
    negatives: &[Vec<T>],
    cfg: &SvmConfig,
) -> Result<BinaryModel<T>> {
    let xs: Vec<Vec<T>> = positives.iter().chain(negatives).cloned().collect();
    let ys: Vec<bool> = (0..xs.len()).map(|i| i < positives.len()).collect();
    Ok(train_labeled(&xs, &ys, cfg)?.0)
}

/// Seed for the `index`-th independent sub-problem of a run seeded with `seed`.
pub(crate) fn sub_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearTask {
    Multiclass,
    Multilabel,
}

/// One binary model per class (one-vs-rest) or per action unit.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel<T> {
    pub task: LinearTask,
    pub c: f64,
    pub models: Vec<BinaryModel<T>>,
    /// Per-unit landmark subsets the unit's encoding was built from.
    pub masks: Option<Vec<Vec<usize>>>,
    pub cooccurrence: Option<CoOccurrenceMatrix>,
    /// Strength of co-occurrence reweighting.
    pub alpha: f64,
}

impl<T: Real> LinearModel<T> {
    pub fn dim(&self) -> usize {
        self.models.first().map_or(0, |m| m.weights.len())
    }

    pub fn scores(&self, x: &[T]) -> Vec<T> {
        self.models.iter().map(|m| m.score(x)).collect()
    }

    /// Highest score wins; ties go to the lowest class id.
    pub fn predict_class(&self, x: &[T]) -> usize {
        argmax(&self.scores(x))
    }

    /// Per-unit scores from per-unit encodings, with co-occurrence
    /// reweighting applied when a matrix is attached.
    pub fn multilabel_scores(&self, per_unit: &[Vec<T>]) -> Result<Vec<f64>> {
        if per_unit.len() != self.models.len() {
            return Err(Error::Dimension {
                context: "multilabel encodings",
                expected: self.models.len(),
                found: per_unit.len(),
            });
        }
        let raw: Vec<f64> = self
            .models
            .iter()
            .zip(per_unit)
            .map(|(m, x)| m.score(x).as_f64())
            .collect();
        match &self.cooccurrence {
            Some(co) => apply_co_weighting(&raw, co, self.alpha),
            None => Ok(raw),
        }
    }

    pub fn predict_multilabel(&self, per_unit: &[Vec<T>]) -> Result<Vec<bool>> {
        Ok(self.multilabel_scores(per_unit)?.into_iter().map(|s| s > 0.0).collect())
    }
}

pub fn argmax<T: PartialOrd + Copy>(scores: &[T]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// One-vs-rest training over categorical labels `0..num_classes`.
pub fn train_multiclass_ovr<T: Real>(
    xs: &[Vec<T>],
    labels: &[usize],
    num_classes: usize,
    cfg: &SvmConfig,
) -> Result<LinearModel<T>> {
    if num_classes < 2 {
        return Err(Error::InvalidInput("one-vs-rest needs at least two classes".into()));
    }
    if xs.len() != labels.len() {
        return Err(Error::Dimension {
            context: "svm labels",
            expected: xs.len(),
            found: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::InvalidInput(format!("label {bad} outside 0..{num_classes}")));
    }
    for class in 0..num_classes {
        if !labels.contains(&class) {
            return Err(Error::InsufficientData(format!("class {class} has no training examples")));
        }
    }
    let models = (0..num_classes)
        .into_par_iter()
        .map(|class| {
            let ys: Vec<bool> = labels.iter().map(|&l| l == class).collect();
            let sub = SvmConfig {
                seed: sub_seed(cfg.seed, class),
                ..*cfg
            };
            train_labeled(xs, &ys, &sub).map(|(m, _)| m)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LinearModel {
        task: LinearTask::Multiclass,
        c: cfg.c,
        models,
        masks: None,
        cooccurrence: None,
        alpha: 0.0,
    })
}
