//! Diagonal-covariance Gaussian mixtures fitted by Expectation-Maximization.
//!
//! The E-step runs over fixed-size chunks of observations in parallel; the
//! per-chunk sufficient statistics are combined with a midpoint pairwise
//! reduction, so a fit is bitwise identical for any thread count.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, Real};

/// Observations per E-step work unit.
const CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    /// k-means++ seeding, then one hard-assignment M-step.
    #[default]
    Kmeans,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop when the relative change of mean log-likelihood drops below this.
    pub rel_tol: f64,
    pub variance_floor: f64,
    pub seed: u64,
    #[serde(default)]
    pub init: Init,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            k: 16,
            max_iters: 100,
            rel_tol: 1e-5,
            variance_floor: 1e-6,
            seed: 0,
            init: Init::Kmeans,
        }
    }
}

/// `K` diagonal Gaussians over `d` dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmModel<T> {
    pub weights: Vec<T>,
    pub means: Vec<Vec<T>>,
    pub variances: Vec<Vec<T>>,
}

impl<T: Real> GmmModel<T> {
    /// Validates the mixture invariants.
    pub fn new(weights: Vec<T>, means: Vec<Vec<T>>, variances: Vec<Vec<T>>, floor: T) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(Error::InvalidInput(format!(
                "mixture needs matching non-empty parameter lists, got {k} weights, {} means, {} variances",
                means.len(),
                variances.len()
            )));
        }
        let d = means[0].len();
        if d == 0 || means.iter().chain(&variances).any(|v| v.len() != d) {
            return Err(Error::InvalidInput("mixture parameters disagree on dimension".into()));
        }
        let total: f64 = weights.iter().map(|w| w.as_f64()).sum();
        if (total - 1.0).abs() > 1e-9 || weights.iter().any(|&w| !(w > T::zero())) {
            return Err(Error::InvalidInput(format!(
                "mixture weights must be positive and sum to 1, sum is {total}"
            )));
        }
        if variances.iter().flatten().any(|&v| !(v >= floor)) {
            return Err(Error::InvalidInput("variance below floor".into()));
        }
        Ok(GmmModel {
            weights,
            means,
            variances,
        })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn check_dim(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                context: "gmm observation",
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Per-component `log w_k + log N(x; mu_k, sigma_k^2)`.
    pub fn weighted_log_densities(&self, x: &[T]) -> Vec<T> {
        let log_2pi = T::of((2.0 * PI).ln());
        let half = T::of(0.5);
        (0..self.components())
            .map(|k| {
                let mut acc = T::zero();
                for ((&xi, &m), &v) in x.iter().zip(&self.means[k]).zip(&self.variances[k]) {
                    let diff = xi - m;
                    acc += log_2pi + v.ln() + diff * diff / v;
                }
                self.weights[k].ln() - half * acc
            })
            .collect()
    }

    /// Posterior component probabilities for one observation.
    pub fn responsibilities(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_dim(x)?;
        Ok(self.responsibilities_unchecked(x).0)
    }

    /// `(gamma, log p(x))`.
    pub(crate) fn responsibilities_unchecked(&self, x: &[T]) -> (Vec<T>, T) {
        let logs = self.weighted_log_densities(x);
        let norm = log_sum_exp(&logs);
        (logs.into_iter().map(|l| (l - norm).exp()).collect(), norm)
    }

    /// Total log-likelihood `sum_m log sum_k w_k N(x_m)`.
    pub fn log_likelihood(&self, data: &[Vec<T>]) -> Result<T> {
        if data.is_empty() {
            return Err(Error::InsufficientData("log-likelihood of an empty set".into()));
        }
        let mut total = T::zero();
        for x in data {
            self.check_dim(x)?;
            total += log_sum_exp(&self.weighted_log_densities(x));
        }
        Ok(total)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Mean per-observation log-likelihood of the parameters entering this iteration.
    pub mean_log_likelihood: f64,
    /// Components re-seeded by the M-step that followed.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub reseeded: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct FitResult<T> {
    pub model: GmmModel<T>,
    pub log: Vec<IterationRecord>,
    pub converged: bool,
}

/// Responsibility-weighted sums, taken about a fixed shift per component.
#[derive(Clone)]
struct Stats<T> {
    mass: Vec<T>,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    log_likelihood: T,
}

impl<T: Real> Stats<T> {
    fn zero(k: usize, d: usize) -> Self {
        Stats {
            mass: vec![T::zero(); k],
            first: vec![vec![T::zero(); d]; k],
            second: vec![vec![T::zero(); d]; k],
            log_likelihood: T::zero(),
        }
    }

    fn accumulate(&mut self, x: &[T], gamma: &[T], shift: &[Vec<T>]) {
        for (k, &g) in gamma.iter().enumerate() {
            self.mass[k] += g;
            for ((f, s), (&xi, &c)) in self.first[k]
                .iter_mut()
                .zip(self.second[k].iter_mut())
                .zip(x.iter().zip(&shift[k]))
            {
                let diff = xi - c;
                *f += g * diff;
                *s += g * diff * diff;
            }
        }
    }

    fn merge(mut self, other: &Stats<T>) -> Self {
        for k in 0..self.mass.len() {
            self.mass[k] += other.mass[k];
            for j in 0..self.first[k].len() {
                self.first[k][j] += other.first[k][j];
                self.second[k][j] += other.second[k][j];
            }
        }
        self.log_likelihood += other.log_likelihood;
        self
    }
}

fn reduce_pairwise<T: Real>(parts: &[Stats<T>]) -> Stats<T> {
    match parts {
        [only] => only.clone(),
        _ => {
            let (lo, hi) = parts.split_at(parts.len() / 2);
            reduce_pairwise(lo).merge(&reduce_pairwise(hi))
        }
    }
}

fn e_step<T: Real>(model: &GmmModel<T>, data: &[Vec<T>]) -> Stats<T> {
    let (k, d) = (model.components(), model.dim());
    let parts: Vec<Stats<T>> = data
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut s = Stats::zero(k, d);
            for x in chunk {
                let (gamma, ll) = model.responsibilities_unchecked(x);
                s.accumulate(x, &gamma, &model.means);
                s.log_likelihood += ll;
            }
            s
        })
        .collect();
    reduce_pairwise(&parts)
}

fn global_variance<T: Real>(data: &[Vec<T>], floor: T) -> Vec<T> {
    let d = data[0].len();
    let n = T::of_usize(data.len());
    let mut mean = vec![T::zero(); d];
    for x in data {
        mean.iter_mut().zip(x).for_each(|(m, &v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut variance = vec![T::zero(); d];
    for x in data {
        for ((v, &xi), &m) in variance.iter_mut().zip(x).zip(&mean) {
            *v += (xi - m) * (xi - m);
        }
    }
    variance.iter_mut().for_each(|v| *v = (*v / n).max(floor));
    variance
}

/// Maximum-likelihood update from sufficient statistics; components with no
/// mass are re-seeded at a random observation with the global variance.
fn m_step<T: Real>(
    stats: &Stats<T>,
    shift: &[Vec<T>],
    data: &[Vec<T>],
    floor: T,
    rng: &mut ChaCha8Rng,
) -> (GmmModel<T>, Vec<usize>) {
    let k = stats.mass.len();
    let n = T::of_usize(data.len());
    let tiny = T::of_usize(data.len()) * T::epsilon();
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    let mut reseeded = Vec::new();
    let mut global: Option<Vec<T>> = None;

    for c in 0..k {
        let mass = stats.mass[c];
        if !(mass > tiny) {
            let g = global.get_or_insert_with(|| global_variance(data, floor));
            let pick = rng.gen_range(0..data.len());
            log::info!("gmm component {c} lost all mass; re-seeding at observation {pick}");
            reseeded.push(c);
            weights.push(T::one() / n);
            means.push(data[pick].clone());
            variances.push(g.clone());
            continue;
        }
        let offset: Vec<T> = stats.first[c].iter().map(|&f| f / mass).collect();
        let mean: Vec<T> = shift[c].iter().zip(&offset).map(|(&s, &o)| s + o).collect();
        let var: Vec<T> = stats.second[c]
            .iter()
            .zip(&offset)
            .map(|(&s, &o)| (s / mass - o * o).max(floor))
            .collect();
        weights.push(mass / n);
        means.push(mean);
        variances.push(var);
    }

    let total = weights.iter().fold(T::zero(), |a, &b| a + b);
    weights.iter_mut().for_each(|w| *w /= total);
    (
        GmmModel {
            weights,
            means,
            variances,
        },
        reseeded,
    )
}

fn squared_distance<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
}

fn kmeans_pp_centres<T: Real>(data: &[Vec<T>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
    let mut centres = vec![data[rng.gen_range(0..data.len())].clone()];
    let mut best: Vec<f64> = data
        .iter()
        .map(|x| squared_distance(x, &centres[0]).as_f64())
        .collect();
    while centres.len() < k {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = data.len() - 1;
            for (i, &w) in best.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.gen_range(0..data.len())
        };
        let c = data[pick].clone();
        for (b, x) in best.iter_mut().zip(data) {
            *b = b.min(squared_distance(x, &c).as_f64());
        }
        centres.push(c);
    }
    centres
}

/// Hard assignment to the nearest centre (lowest index on ties), expressed
/// as 0/1 sufficient statistics.
fn hard_assignment_stats<T: Real>(data: &[Vec<T>], centres: &[Vec<T>]) -> Stats<T> {
    let (k, d) = (centres.len(), centres[0].len());
    let mut s = Stats::zero(k, d);
    let mut gamma = vec![T::zero(); k];
    for x in data {
        let nearest = centres
            .iter()
            .enumerate()
            .map(|(c, m)| (c, squared_distance(x, m)))
            .fold((0, T::infinity()), |best, cur| if cur.1 < best.1 { cur } else { best })
            .0;
        gamma.iter_mut().for_each(|g| *g = T::zero());
        gamma[nearest] = T::one();
        s.accumulate(x, &gamma, centres);
    }
    s
}

/// Fit a `cfg.k`-component diagonal mixture to `data`.
pub fn fit_gmm<T: Real>(data: &[Vec<T>], cfg: &EmConfig) -> Result<FitResult<T>> {
    if cfg.k == 0 {
        return Err(Error::InvalidInput("mixture needs at least one component".into()));
    }
    if !(cfg.rel_tol > 0.0) || !(cfg.variance_floor > 0.0) {
        return Err(Error::InvalidInput("tolerance and variance floor must be positive".into()));
    }
    if data.len() < cfg.k {
        return Err(Error::InsufficientData(format!(
            "{} observations for {} components",
            data.len(),
            cfg.k
        )));
    }
    let d = data[0].len();
    if d == 0 {
        return Err(Error::InvalidInput("zero-dimensional observations".into()));
    }
    for x in data {
        if x.len() != d {
            return Err(Error::Dimension {
                context: "gmm training data",
                expected: d,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite observation".into()));
        }
    }

    let floor = T::of(cfg.variance_floor);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centres = kmeans_pp_centres(data, cfg.k, &mut rng);
    let (mut model, reseeded) =
        m_step(&hard_assignment_stats(data, &centres), &centres, data, floor, &mut rng);
    if !reseeded.is_empty() {
        log::info!("initial assignment left components {reseeded:?} empty");
    }

    let n = data.len() as f64;
    let mut log: Vec<IterationRecord> = Vec::new();
    let mut converged = false;
    for iteration in 0..=cfg.max_iters {
        let stats = e_step(&model, data);
        let mean_ll = stats.log_likelihood.as_f64() / n;
        if let Some(prev) = log.last() {
            let change = (mean_ll - prev.mean_log_likelihood) / prev.mean_log_likelihood.abs().max(1e-300);
            if change.abs() < cfg.rel_tol {
                converged = true;
            }
        }
        log.push(IterationRecord {
            iteration,
            mean_log_likelihood: mean_ll,
            reseeded: Vec::new(),
        });
        if converged || iteration == cfg.max_iters {
            break;
        }
        let (next, reseeded) = m_step(&stats, &model.means, data, floor, &mut rng);
        log.last_mut().expect("just pushed").reseeded = reseeded;
        model = next;
    }

    Ok(FitResult {
        model,
        log,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn one_d(weights: &[f64], means: &[f64], vars: &[f64]) -> GmmModel<f64> {
        GmmModel::new(
            weights.to_vec(),
            means.iter().map(|&m| vec![m]).collect(),
            vars.iter().map(|&v| vec![v]).collect(),
            1e-6,
        )
        .unwrap()
    }

    #[test]
    fn single_component_has_unit_responsibility() {
        let m = one_d(&[1.0], &[0.0], &[1.0]);
        assert_eq!(m.responsibilities(&[3.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn separated_components_claim_their_means() {
        let m = one_d(&[0.5, 0.5], &[0.0, 20.0], &[1.0, 1.0]);
        let g = m.responsibilities(&[0.0]).unwrap();
        // odds = exp(-200)
        assert!(g[0] > 0.999);
        assert!((g[1] - (-200.0f64).exp()).abs() < 1e-95);
    }

    #[test]
    fn midpoint_of_symmetric_mixture_is_even() {
        let m = one_d(&[0.5, 0.5], &[-3.0, 3.0], &[2.0, 2.0]);
        let g = m.responsibilities(&[0.0]).unwrap();
        assert!(g.iter().all(|v| (v - 0.5).abs() < 1e-15), "{g:?}");
    }

    #[test]
    fn responsibilities_survive_extreme_distances() {
        let m = one_d(&[0.5, 0.5], &[0.0, 1.0], &[1e-6, 1e-6]);
        let g = m.responsibilities(&[1e6]).unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unit_density_point_has_zero_log_likelihood() {
        let v = 1.0 / (2.0 * PI);
        let m = GmmModel::new(vec![1.0], vec![vec![0.5, -1.0]], vec![vec![v, v]], 1e-6).unwrap();
        let ll = m.log_likelihood(&[vec![0.5, -1.0]]).unwrap();
        assert!(ll.abs() < 1e-12, "{ll}");
    }

    #[test]
    fn duplicating_data_doubles_log_likelihood() {
        let m = one_d(&[0.3, 0.7], &[-1.0, 2.0], &[0.5, 1.5]);
        let data: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64 * 0.7 - 2.0]).collect();
        let twice: Vec<Vec<f64>> = data.iter().chain(&data).cloned().collect();
        let a = m.log_likelihood(&data).unwrap();
        let b = m.log_likelihood(&twice).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12 * a.abs());
        assert!(a.is_finite());
    }

    #[test]
    fn rejects_bad_models() {
        assert!(GmmModel::new(vec![0.5, 0.4], vec![vec![0.0]; 2], vec![vec![1.0]; 2], 1e-6).is_err());
        assert!(GmmModel::new(vec![1.0], vec![vec![0.0]], vec![vec![1e-9]], 1e-6).is_err());
        assert!(GmmModel::<f64>::new(vec![], vec![], vec![], 1e-6).is_err());
    }

    #[test]
    fn fewer_samples_than_components_is_an_error() {
        let data = vec![vec![0.0f64]; 3];
        let cfg = EmConfig { k: 4, ..EmConfig::default() };
        assert!(matches!(fit_gmm(&data, &cfg), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn default_component_count_is_16() {
        assert_eq!(EmConfig::default().k, 16);
    }

    #[test]
    fn identical_points_stay_at_the_floor() {
        let data = vec![vec![2.0f64, 2.0]; 40];
        let cfg = EmConfig { k: 2, ..EmConfig::default() };
        let fit = fit_gmm(&data, &cfg).unwrap();
        assert!(fit.model.variances.iter().flatten().all(|&v| v >= 1e-6));
        assert!((fit.model.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_for_a_seed_and_thread_count_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<Vec<f64>> = (0..1500)
            .map(|_| (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let cfg = EmConfig { k: 3, max_iters: 20, ..EmConfig::default() };
        let a = fit_gmm(&data, &cfg).unwrap().model;
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = single.install(|| fit_gmm(&data, &cfg).unwrap().model);
        assert_eq!(a, b);
    }

    #[test]
    fn fits_in_single_precision() {
        let data: Vec<Vec<f32>> = (0..200).map(|i| vec![if i % 2 == 0 { -5.0 } else { 5.0 } + (i % 7) as f32 * 0.1]).collect();
        let cfg = EmConfig { k: 2, ..EmConfig::default() };
        let fit = fit_gmm(&data, &cfg).unwrap();
        let mut means: Vec<f32> = fit.model.means.iter().map(|m| m[0]).collect();
        means.sort_by(f32::total_cmp);
        assert!((means[0] + 4.7).abs() < 0.05 && (means[1] - 5.3).abs() < 0.05);
    }
}
