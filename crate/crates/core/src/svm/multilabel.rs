//! Per-action-unit classifiers: landmark-region selection and
//! co-occurrence reweighting of the unit scores.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sub_seed, train_labeled, BinaryModel, LinearModel, LinearTask, SvmConfig};
use crate::data::NUM_LANDMARKS;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitRegion {
    /// FACS action-unit number, e.g. 12 for lip corner puller.
    pub au: u32,
    pub name: String,
    pub landmarks: Vec<usize>,
}

/// Label position -> landmark subset, in label-bitset order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionTable {
    pub units: Vec<UnitRegion>,
}

const BROWS: std::ops::Range<usize> = 17..27;
const EYES: std::ops::Range<usize> = 36..48;
const LOWER_NOSE: std::ops::Range<usize> = 31..36;
const MOUTH: std::ops::Range<usize> = 48..68;
const CHIN: std::ops::Range<usize> = 5..12;

impl RegionTable {
    /// The twelve commonly annotated units, grouped by 68-point facial region.
    pub fn standard() -> Self {
        let unit = |au, name: &str, parts: &[std::ops::Range<usize>]| UnitRegion {
            au,
            name: name.to_string(),
            landmarks: parts.iter().cloned().flatten().collect(),
        };
        RegionTable {
            units: vec![
                unit(1, "inner brow raiser", &[BROWS]),
                unit(2, "outer brow raiser", &[BROWS]),
                unit(4, "brow lowerer", &[BROWS]),
                unit(6, "cheek raiser", &[EYES]),
                unit(7, "lid tightener", &[EYES]),
                unit(10, "upper lip raiser", &[LOWER_NOSE, MOUTH]),
                unit(12, "lip corner puller", &[MOUTH]),
                unit(14, "dimpler", &[MOUTH]),
                unit(15, "lip corner depressor", &[MOUTH]),
                unit(17, "chin raiser", &[CHIN, MOUTH]),
                unit(23, "lip tightener", &[MOUTH]),
                unit(24, "lip pressor", &[MOUTH]),
            ],
        }
    }

    /// Every unit uses all landmarks.
    pub fn full_face(units: usize) -> Self {
        RegionTable {
            units: (0..units)
                .map(|u| UnitRegion {
                    au: u as u32,
                    name: format!("unit {u}"),
                    landmarks: (0..NUM_LANDMARKS).collect(),
                })
                .collect(),
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: RegionTable = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        for u in &self.units {
            if u.landmarks.is_empty() || u.landmarks.iter().any(|&l| l >= NUM_LANDMARKS) {
                return Err(Error::InvalidInput(format!(
                    "AU{} region must list landmark indices in 0..{NUM_LANDMARKS}",
                    u.au
                )));
            }
        }
        Ok(())
    }

    /// Landmark mask for the unit at label position `unit`.
    pub fn mask(&self, unit: usize) -> Result<&[usize]> {
        self.units
            .get(unit)
            .map(|u| u.landmarks.as_slice())
            .ok_or_else(|| Error::InvalidInput(format!("unit {unit} missing from the region table")))
    }

    pub fn masks(&self, units: usize) -> Result<Vec<Vec<usize>>> {
        (0..units).map(|u| self.mask(u).map(<[usize]>::to_vec)).collect()
    }
}

/// `conditional[i][j]` = P(unit j active | unit i active); `priors[j]` = P(unit j active).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoOccurrenceMatrix {
    pub conditional: Vec<Vec<f64>>,
    pub priors: Vec<f64>,
}

impl CoOccurrenceMatrix {
    pub fn units(&self) -> usize {
        self.priors.len()
    }
}

/// Empirical co-occurrence from training bitsets; rows of never-active units are zero.
pub fn estimate_cooccurrence(labels: &[Vec<bool>]) -> Result<CoOccurrenceMatrix> {
    let units = labels
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::InsufficientData("co-occurrence of an empty label set".into()))?;
    if labels.iter().any(|l| l.len() != units) {
        return Err(Error::InvalidInput("label bitsets differ in width".into()));
    }
    let mut joint = vec![vec![0usize; units]; units];
    let mut counts = vec![0usize; units];
    for l in labels {
        for i in 0..units {
            if !l[i] {
                continue;
            }
            counts[i] += 1;
            for j in 0..units {
                if l[j] {
                    joint[i][j] += 1;
                }
            }
        }
    }
    let n = labels.len() as f64;
    Ok(CoOccurrenceMatrix {
        conditional: (0..units)
            .map(|i| {
                (0..units)
                    .map(|j| {
                        if counts[i] == 0 {
                            0.0
                        } else {
                            joint[i][j] as f64 / counts[i] as f64
                        }
                    })
                    .collect()
            })
            .collect(),
        priors: counts.iter().map(|&c| c as f64 / n).collect(),
    })
}

fn logistic(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

/// `s'_j = s_j + alpha * sum_{i != j} logistic(s_i) (P[i][j] - p_j)`.
pub fn apply_co_weighting(scores: &[f64], co: &CoOccurrenceMatrix, alpha: f64) -> Result<Vec<f64>> {
    if scores.len() != co.units() {
        return Err(Error::Dimension {
            context: "co-occurrence weighting",
            expected: co.units(),
            found: scores.len(),
        });
    }
    if !(alpha >= 0.0) {
        return Err(Error::InvalidInput(format!("co-occurrence alpha must be >= 0, got {alpha}")));
    }
    if alpha == 0.0 {
        return Ok(scores.to_vec());
    }
    let gates: Vec<f64> = scores.iter().map(|&s| logistic(s)).collect();
    Ok((0..scores.len())
        .map(|j| {
            let shift: f64 = (0..scores.len())
                .filter(|&i| i != j)
                .map(|i| gates[i] * (co.conditional[i][j] - co.priors[j]))
                .sum();
            scores[j] + alpha * shift
        })
        .collect())
}

/// Train one binary model per unit.
///
/// `per_unit[u][i]` is example `i` encoded for unit `u`. A unit whose
/// training labels are all equal gets a constant model voting that label.
pub fn train_multilabel<T: Real>(
    per_unit: &[Vec<Vec<T>>],
    labels: &[Vec<bool>],
    cfg: &SvmConfig,
    masks: Option<Vec<Vec<usize>>>,
    cooccurrence: Option<CoOccurrenceMatrix>,
    alpha: f64,
) -> Result<LinearModel<T>> {
    let units = per_unit.len();
    if units == 0 || labels.is_empty() {
        return Err(Error::InsufficientData("multilabel training needs units and examples".into()));
    }
    if labels.iter().any(|l| l.len() != units) {
        return Err(Error::InvalidInput(format!("label bitsets must have width {units}")));
    }
    if let Some(co) = &cooccurrence {
        if co.units() != units {
            return Err(Error::Dimension {
                context: "co-occurrence matrix",
                expected: units,
                found: co.units(),
            });
        }
    }
    let models = per_unit
        .par_iter()
        .enumerate()
        .map(|(u, xs)| {
            if xs.len() != labels.len() {
                return Err(Error::Dimension {
                    context: "multilabel encodings",
                    expected: labels.len(),
                    found: xs.len(),
                });
            }
            let ys: Vec<bool> = labels.iter().map(|l| l[u]).collect();
            let dim = xs[0].len();
            if ys.iter().all(|&y| y == ys[0]) {
                log::warn!("unit {u} has a single training label; using a constant classifier");
                return Ok(BinaryModel {
                    weights: vec![T::zero(); dim],
                    bias: if ys[0] { T::one() } else { -T::one() },
                });
            }
            let sub = SvmConfig {
                seed: sub_seed(cfg.seed, u),
                ..*cfg
            };
            train_labeled(xs, &ys, &sub).map(|(m, _)| m)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LinearModel {
        task: LinearTask::Multilabel,
        c: cfg.c,
        models,
        masks,
        cooccurrence,
        alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lip_corner_units_use_mouth_landmarks() {
        let t = RegionTable::standard();
        for au in [12, 15] {
            let pos = t.units.iter().position(|u| u.au == au).unwrap();
            assert!(t.mask(pos).unwrap().iter().all(|l| (48..68).contains(l)));
        }
    }

    #[test]
    fn brow_units_use_brow_landmarks() {
        let t = RegionTable::standard();
        for au in [1, 2, 4] {
            let pos = t.units.iter().position(|u| u.au == au).unwrap();
            assert!(t.mask(pos).unwrap().iter().all(|l| (17..27).contains(l)));
        }
    }

    #[test]
    fn full_face_and_missing_units() {
        let t = RegionTable::full_face(3);
        assert_eq!(t.mask(2).unwrap().len(), 68);
        assert!(t.mask(3).is_err());
        assert_eq!(RegionTable::standard().units.len(), 12);
        assert!(RegionTable::standard().validate().is_ok());
    }

    #[test]
    fn region_table_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("regions.json");
        let t = RegionTable::standard();
        std::fs::write(&path, serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(RegionTable::read(&path).unwrap(), t);
        std::fs::write(&path, r#"{"units":[{"au":1,"name":"x","landmarks":[70]}]}"#).unwrap();
        assert!(RegionTable::read(&path).is_err());
    }

    #[test]
    fn implication_gives_unit_conditional() {
        let labels = vec![
            vec![false, true, true, false],
            vec![false, true, true, false],
            vec![false, false, true, false],
            vec![false, false, false, false],
        ];
        let co = estimate_cooccurrence(&labels).unwrap();
        assert_eq!(co.conditional[1][2], 1.0);
        assert_eq!(co.conditional[2][1], 2.0 / 3.0);
        assert_eq!(co.conditional[1][1], 1.0);
        assert_eq!(co.conditional[0], vec![0.0; 4]);
        assert_eq!(co.priors, vec![0.0, 0.5, 0.75, 0.0]);
    }

    #[test]
    fn independent_labels_approach_priors() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = [0.2, 0.5, 0.7];
        let labels: Vec<Vec<bool>> = (0..40_000)
            .map(|_| p.iter().map(|&q| rng.gen_bool(q)).collect())
            .collect();
        let co = estimate_cooccurrence(&labels).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    // binomial standard error at n p_i >= 8000 is below 0.006
                    assert!((co.conditional[i][j] - p[j]).abs() < 0.03);
                }
            }
        }
    }

    #[test]
    fn zero_alpha_is_identity() {
        let co = estimate_cooccurrence(&[vec![true, false], vec![true, true]]).unwrap();
        let s = [0.37, -2.5];
        assert_eq!(apply_co_weighting(&s, &co, 0.0).unwrap(), s.to_vec());
        assert!(apply_co_weighting(&[1.0], &co, 0.5).is_err());
        assert!(apply_co_weighting(&s, &co, -1.0).is_err());
    }

    #[test]
    fn confident_implying_unit_raises_score() {
        let co = CoOccurrenceMatrix {
            conditional: vec![vec![1.0, 1.0], vec![0.5, 1.0]],
            priors: vec![0.2, 0.1],
        };
        let s = [8.0, -0.5];
        let out = apply_co_weighting(&s, &co, 0.5).unwrap();
        assert!(out[1] > s[1]);
    }

    #[test]
    fn three_unit_hand_computation() {
        let co = CoOccurrenceMatrix {
            conditional: vec![
                vec![1.0, 0.5, 0.25],
                vec![0.8, 1.0, 0.0],
                vec![0.1, 0.6, 1.0],
            ],
            priors: vec![0.4, 0.3, 0.2],
        };
        let s = [0.0, 1.0, -2.0];
        let g = |x: f64| 1.0 / (1.0 + (-x).exp());
        let alpha = 0.7;
        let want = [
            0.0 + alpha * (g(1.0) * (0.8 - 0.4) + g(-2.0) * (0.1 - 0.4)),
            1.0 + alpha * (g(0.0) * (0.5 - 0.3) + g(-2.0) * (0.6 - 0.3)),
            -2.0 + alpha * (g(0.0) * (0.25 - 0.2) + g(1.0) * (0.0 - 0.2)),
        ];
        let got = apply_co_weighting(&s, &co, alpha).unwrap();
        for (a, b) in got.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn multilabel_training_handles_constant_units() {
        let xs: Vec<Vec<f64>> = vec![vec![1.0], vec![-1.0], vec![2.0], vec![-2.0]];
        let labels = vec![
            vec![true, false],
            vec![false, false],
            vec![true, false],
            vec![false, false],
        ];
        let m = train_multilabel(&[xs.clone(), xs.clone()], &labels, &SvmConfig::default(), None, None, 0.0).unwrap();
        let preds: Vec<Vec<bool>> = xs
            .iter()
            .map(|x| m.predict_multilabel(&[x.clone(), x.clone()]).unwrap())
            .collect();
        assert_eq!(preds, labels);
    }
}
