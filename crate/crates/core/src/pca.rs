//! Principal component projection of trajectory descriptors.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PcaConfig {
    /// Output dimension.
    pub d: usize,
    /// Divide each projected coordinate by the square root of its eigenvalue.
    #[serde(default)]
    pub whiten: bool,
    /// Larger training sets are fitted on a seeded uniform subsample.
    #[serde(default = "default_max_samples")]
    pub max_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_max_samples() -> usize {
    1_000_000
}

impl Default for PcaConfig {
    fn default() -> Self {
        PcaConfig {
            d: 32,
            whiten: false,
            max_samples: default_max_samples(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel<T> {
    pub mean: Vec<T>,
    /// `d` orthonormal rows of length `input_dim`, by descending eigenvalue.
    pub basis: Vec<Vec<T>>,
    pub eigenvalues: Vec<T>,
    pub whiten: bool,
}

impl<T: Real> PcaModel<T> {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.basis.len()
    }

    /// `basis * (x - mean)`, optionally whitened.
    pub fn project(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                context: "pca projection",
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        let centred: Vec<T> = x.iter().zip(&self.mean).map(|(&a, &m)| a - m).collect();
        Ok(self
            .basis
            .iter()
            .zip(&self.eigenvalues)
            .map(|(row, &lambda)| {
                let p = crate::scalar::dot(row, &centred);
                if self.whiten {
                    p / lambda.sqrt()
                } else {
                    p
                }
            })
            .collect())
    }

    pub fn project_all(&self, xs: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
        xs.iter().map(|x| self.project(x)).collect()
    }
}

/// Fit the top-`d` principal directions of `samples`.
///
/// Each basis row is signed so that its largest-magnitude entry is positive.
pub fn fit_pca<T: Real>(samples: &[Vec<T>], cfg: &PcaConfig) -> Result<PcaModel<T>> {
    let d = cfg.d;
    let dim = samples.first().map_or(0, Vec::len);
    if d == 0 || d > dim {
        return Err(Error::InvalidInput(format!(
            "pca output dimension {d} must lie in 1..={dim}"
        )));
    }
    if samples.len() <= d {
        return Err(Error::InsufficientData(format!(
            "{} samples cannot support {d} principal components",
            samples.len()
        )));
    }
    if let Some(bad) = samples.iter().position(|s| s.len() != dim) {
        return Err(Error::Dimension {
            context: "pca samples",
            expected: dim,
            found: samples[bad].len(),
        });
    }

    let picked: Vec<&Vec<T>> = if samples.len() > cfg.max_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut idx = index::sample(&mut rng, samples.len(), cfg.max_samples).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| &samples[i]).collect()
    } else {
        samples.iter().collect()
    };
    let n = picked.len() as f64;

    let mut mean = vec![0.0f64; dim];
    for s in &picked {
        for (m, &v) in mean.iter_mut().zip(s.iter()) {
            *m += v.as_f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    let mut centred = vec![0.0f64; dim];
    for s in &picked {
        for ((c, &v), &m) in centred.iter_mut().zip(s.iter()).zip(&mean) {
            *c = v.as_f64() - m;
        }
        for i in 0..dim {
            let ci = centred[i];
            for j in i..dim {
                cov[(i, j)] += ci * centred[j];
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = cov[(i, j)] / n;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    // stable: equal eigenvalues keep solver order
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let top = eig.eigenvalues[order[0]].max(0.0);
    let threshold = top * dim as f64 * f64::EPSILON * 16.0;
    let rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > threshold && eig.eigenvalues[i] > 0.0)
        .count();
    if rank < d {
        return Err(Error::RankDeficient {
            achievable: rank,
            requested: d,
        });
    }

    let mut basis = Vec::with_capacity(d);
    let mut eigenvalues = Vec::with_capacity(d);
    for &i in order.iter().take(d) {
        let col = eig.eigenvectors.column(i);
        let mut row: Vec<f64> = col.iter().copied().collect();
        let lead = row
            .iter()
            .enumerate()
            .fold((0usize, 0.0f64), |best, (k, &v)| {
                if v.abs() > best.1 {
                    (k, v.abs())
                } else {
                    best
                }
            })
            .0;
        if row[lead] < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        basis.push(row.into_iter().map(T::of).collect());
        eigenvalues.push(T::of(eig.eigenvalues[i]));
    }

    Ok(PcaModel {
        mean: mean.into_iter().map(T::of).collect(),
        basis,
        eigenvalues,
        whiten: cfg.whiten,
    })
}
