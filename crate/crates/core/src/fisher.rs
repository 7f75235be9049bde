//! Fisher Vector encoding over a diagonal mixture.
//!
//! Layout of the default encoding (length `2Kd`): the `K` mean-gradient
//! blocks, component-major, followed by the `K` variance-gradient blocks.
//! With `include_weight_block` the `K` weight gradients are appended.
//!
//! Every per-coordinate sum over observations is computed exactly and
//! rounded once, so the encoding is invariant to the order of the
//! observations and to duplicating the whole set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::scalar::{exact_sum, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct FvOptions {
    #[serde(default)]
    pub include_weight_block: bool,
}

/// A normalized encoding of one video or window.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherVector<T> {
    pub values: Vec<T>,
    pub video_id: String,
    pub window_index: Option<usize>,
}

pub fn encoded_len(k: usize, d: usize, opts: FvOptions) -> usize {
    2 * k * d + if opts.include_weight_block { k } else { 0 }
}

fn check<T: Real>(model: &GmmModel<T>, xs: &[Vec<T>]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::InsufficientData("fisher encoding of an empty set".into()));
    }
    if let Some(bad) = xs.iter().find(|x| x.len() != model.dim()) {
        return Err(Error::Dimension {
            context: "fisher encoding",
            expected: model.dim(),
            found: bad.len(),
        });
    }
    Ok(())
}

/// Responsibilities for every observation, `[m][k]`.
fn posteriors<T: Real>(model: &GmmModel<T>, xs: &[Vec<T>]) -> Vec<Vec<T>> {
    xs.iter().map(|x| model.responsibilities_unchecked(x).0).collect()
}

/// Gather `term(m)` for every observation and return the exact sum.
fn summed<T: Real>(buf: &mut Vec<f64>, m: usize, term: impl Fn(usize) -> T) -> T {
    buf.clear();
    buf.extend((0..m).map(|i| term(i).as_f64()));
    T::of(exact_sum(buf))
}

/// Un-normalized mean and variance gradient blocks, length `2Kd`.
pub fn encode_raw<T: Real>(model: &GmmModel<T>, xs: &[Vec<T>]) -> Result<Vec<T>> {
    check(model, xs)?;
    let gamma = posteriors(model, xs);
    Ok(raw_blocks(model, xs, &gamma))
}

fn raw_blocks<T: Real>(model: &GmmModel<T>, xs: &[Vec<T>], gamma: &[Vec<T>]) -> Vec<T> {
    let (k, d, m) = (model.components(), model.dim(), xs.len());
    let count = T::of_usize(m);
    let two = T::of(2.0);
    let mut out = vec![T::zero(); 2 * k * d];
    let mut buf = Vec::with_capacity(m);
    for c in 0..k {
        let w = model.weights[c];
        let mean_scale = w.sqrt();
        let var_scale = (two * w).sqrt();
        for j in 0..d {
            let mu = model.means[c][j];
            let var = model.variances[c][j];
            let s_mean = summed(&mut buf, m, |i| gamma[i][c] * ((xs[i][j] - mu) / var));
            let s_var = summed(&mut buf, m, |i| {
                let diff = xs[i][j] - mu;
                gamma[i][c] * (diff * diff / var - T::one())
            });
            out[c * d + j] = s_mean / count / mean_scale;
            out[(k + c) * d + j] = s_var / count / var_scale;
        }
    }
    out
}

/// Weight gradients `(1 / (M sqrt w_k)) sum_m (gamma_k(m) - w_k)`.
pub fn weight_gradient<T: Real>(model: &GmmModel<T>, xs: &[Vec<T>]) -> Result<Vec<T>> {
    check(model, xs)?;
    let gamma = posteriors(model, xs);
    Ok(weight_block(model, &gamma))
}

fn weight_block<T: Real>(model: &GmmModel<T>, gamma: &[Vec<T>]) -> Vec<T> {
    let m = gamma.len();
    let count = T::of_usize(m);
    let mut buf = Vec::with_capacity(m);
    (0..model.components())
        .map(|c| {
            let w = model.weights[c];
            summed(&mut buf, m, |i| gamma[i][c] - w) / count / w.sqrt()
        })
        .collect()
}

/// Signed square root followed by L2 normalization. Zero stays zero.
pub fn normalize<T: Real>(raw: &[T]) -> Vec<T> {
    let rooted: Vec<T> = raw.iter().map(|&v| v.signum() * v.abs().sqrt()).collect();
    let rooted: Vec<T> = rooted
        .into_iter()
        .map(|v| if v == T::zero() { T::zero() } else { v })
        .collect();
    let mut buf: Vec<f64> = rooted.iter().map(|&v| v.as_f64() * v.as_f64()).collect();
    let norm = exact_sum(&mut buf).sqrt();
    if norm == 0.0 {
        return rooted;
    }
    let norm = T::of(norm);
    rooted.into_iter().map(|v| v / norm).collect()
}

/// Normalized encoding with default options.
pub fn encode<T: Real>(model: &GmmModel<T>, xs: &[Vec<T>]) -> Result<Vec<T>> {
    encode_with(model, xs, FvOptions::default())
}

pub fn encode_with<T: Real>(model: &GmmModel<T>, xs: &[Vec<T>], opts: FvOptions) -> Result<Vec<T>> {
    check(model, xs)?;
    let gamma = posteriors(model, xs);
    let mut raw = raw_blocks(model, xs, &gamma);
    if opts.include_weight_block {
        raw.extend(weight_block(model, &gamma));
    }
    Ok(normalize(&raw))
}
