//! Model files: the tensor container with an `f64` payload and a JSON
//! `metadata` block identifying the model kind.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::pca::PcaModel;
use crate::scalar::Real;
use crate::svm::{BinaryModel, CoOccurrenceMatrix, LinearModel, LinearTask};
use crate::tensor::{read_tensor_file, write_tensor_file, Tensor};

fn flat<T: Real>(rows: impl IntoIterator<Item = impl IntoIterator<Item = T>>) -> Vec<f64> {
    rows.into_iter().flatten().map(Real::as_f64).collect()
}

fn container(shape: Vec<usize>, data: Vec<f64>, metadata: serde_json::Value) -> Tensor {
    let mut t = Tensor::from_f64(shape, data).expect("model shape matches payload");
    t.header.metadata = Some(metadata);
    t
}

fn metadata<M: for<'de> Deserialize<'de>>(t: &Tensor, kind: &str, path: &Path) -> Result<M> {
    let meta = t
        .header
        .metadata
        .clone()
        .ok_or_else(|| Error::format(path, 12, "model file lacks metadata"))?;
    if meta.get("kind").and_then(|k| k.as_str()) != Some(kind) {
        return Err(Error::format(path, 12, format!("expected a {kind} model")));
    }
    serde_json::from_value(meta).map_err(|e| Error::json(path, e))
}

fn rows(t: &Tensor, path: &Path, cols: usize) -> Result<Vec<Vec<f64>>> {
    let shape = t.shape();
    if shape.len() != 2 || shape[1] != cols {
        return Err(Error::format(path, 12, format!("model payload shape {shape:?}, expected [_, {cols}]")));
    }
    Ok(t.to_f64_vec().chunks(cols).map(<[f64]>::to_vec).collect())
}

fn cast<T: Real>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::of(x)).collect()
}

#[derive(Serialize, Deserialize)]
struct PcaMeta {
    kind: String,
    input_dim: usize,
    d: usize,
    whiten: bool,
    eigenvalues: Vec<f64>,
}

pub fn pca_to_tensor<T: Real>(m: &PcaModel<T>) -> Tensor {
    let data = flat(std::iter::once(m.mean.clone()).chain(m.basis.iter().cloned()));
    container(
        vec![m.output_dim() + 1, m.input_dim()],
        data,
        json!({
            "kind": "pca",
            "input_dim": m.input_dim(),
            "d": m.output_dim(),
            "whiten": m.whiten,
            "eigenvalues": m.eigenvalues.iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
        }),
    )
}

pub fn pca_from_tensor<T: Real>(t: &Tensor, path: &Path) -> Result<PcaModel<T>> {
    let meta: PcaMeta = metadata(t, "pca", path)?;
    let r = rows(t, path, meta.input_dim)?;
    if r.len() != meta.d + 1 || meta.eigenvalues.len() != meta.d {
        return Err(Error::format(path, 12, "pca payload does not match its metadata"));
    }
    let basis = &r[1..];
    for (i, a) in basis.iter().enumerate() {
        for (j, b) in basis.iter().enumerate() {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            if (dot - want).abs() > 1e-6 {
                return Err(Error::format(path, 12, "pca basis is not orthonormal"));
            }
        }
    }
    Ok(PcaModel {
        mean: cast(&r[0]),
        basis: basis.iter().map(|row| cast(row)).collect(),
        eigenvalues: cast(&meta.eigenvalues),
        whiten: meta.whiten,
    })
}

#[derive(Serialize, Deserialize)]
struct GmmMeta {
    kind: String,
    k: usize,
    d: usize,
    variance_floor: f64,
}

pub fn gmm_to_tensor<T: Real>(m: &GmmModel<T>, variance_floor: f64) -> Tensor {
    let d = m.dim();
    let data = flat((0..m.components()).map(|k| {
        std::iter::once(m.weights[k])
            .chain(m.means[k].iter().copied())
            .chain(m.variances[k].iter().copied())
            .collect::<Vec<_>>()
    }));
    container(
        vec![m.components(), 1 + 2 * d],
        data,
        json!({ "kind": "gmm", "k": m.components(), "d": d, "variance_floor": variance_floor }),
    )
}

pub fn gmm_from_tensor<T: Real>(t: &Tensor, path: &Path) -> Result<GmmModel<T>> {
    let meta: GmmMeta = metadata(t, "gmm", path)?;
    let r = rows(t, path, 1 + 2 * meta.d)?;
    if r.len() != meta.k {
        return Err(Error::format(path, 12, "gmm payload does not match its metadata"));
    }
    GmmModel::new(
        r.iter().map(|row| T::of(row[0])).collect(),
        r.iter().map(|row| cast(&row[1..1 + meta.d])).collect(),
        r.iter().map(|row| cast(&row[1 + meta.d..])).collect(),
        T::of(meta.variance_floor),
    )
    .map_err(|e| Error::format(path, 12, e.to_string()))
}

#[derive(Serialize, Deserialize)]
struct LinearMeta {
    kind: String,
    task: LinearTask,
    c: f64,
    alpha: f64,
    dim: usize,
    #[serde(default)]
    masks: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    cooccurrence: Option<CoOccurrenceMatrix>,
}

pub fn linear_to_tensor<T: Real>(m: &LinearModel<T>) -> Tensor {
    let dim = m.dim();
    let data = flat(m.models.iter().map(|b| {
        b.weights.iter().copied().chain(std::iter::once(b.bias)).collect::<Vec<_>>()
    }));
    let meta = LinearMeta {
        kind: "linear".into(),
        task: m.task,
        c: m.c,
        alpha: m.alpha,
        dim,
        masks: m.masks.clone(),
        cooccurrence: m.cooccurrence.clone(),
    };
    container(
        vec![m.models.len(), dim + 1],
        data,
        serde_json::to_value(meta).expect("metadata serializes"),
    )
}

pub fn linear_from_tensor<T: Real>(t: &Tensor, path: &Path) -> Result<LinearModel<T>> {
    let meta: LinearMeta = metadata(t, "linear", path)?;
    let r = rows(t, path, meta.dim + 1)?;
    Ok(LinearModel {
        task: meta.task,
        c: meta.c,
        models: r
            .iter()
            .map(|row| BinaryModel {
                weights: cast(&row[..meta.dim]),
                bias: T::of(row[meta.dim]),
            })
            .collect(),
        masks: meta.masks,
        cooccurrence: meta.cooccurrence,
        alpha: meta.alpha,
    })
}

pub fn save_pca<T: Real>(path: impl AsRef<Path>, m: &PcaModel<T>) -> Result<()> {
    write_tensor_file(path, &pca_to_tensor(m))
}

pub fn load_pca<T: Real>(path: impl AsRef<Path>) -> Result<PcaModel<T>> {
    let path = path.as_ref();
    pca_from_tensor(&read_tensor_file(path)?, path)
}

pub fn save_gmm<T: Real>(path: impl AsRef<Path>, m: &GmmModel<T>, variance_floor: f64) -> Result<()> {
    write_tensor_file(path, &gmm_to_tensor(m, variance_floor))
}

pub fn load_gmm<T: Real>(path: impl AsRef<Path>) -> Result<GmmModel<T>> {
    let path = path.as_ref();
    gmm_from_tensor(&read_tensor_file(path)?, path)
}

pub fn save_linear<T: Real>(path: impl AsRef<Path>, m: &LinearModel<T>) -> Result<()> {
    write_tensor_file(path, &linear_to_tensor(m))
}

pub fn load_linear<T: Real>(path: impl AsRef<Path>) -> Result<LinearModel<T>> {
    let path = path.as_ref();
    linear_from_tensor(&read_tensor_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svm::estimate_cooccurrence;

    #[test]
    fn models_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let pca = PcaModel {
            mean: vec![0.5, -1.0],
            basis: vec![vec![0.6, 0.8], vec![-0.8, 0.6]],
            eigenvalues: vec![2.0, 0.1],
            whiten: false,
        };
        save_pca(dir.path().join("pca.tpfv"), &pca).unwrap();
        assert_eq!(load_pca::<f64>(dir.path().join("pca.tpfv")).unwrap(), pca);

        let gmm = GmmModel::new(vec![0.25, 0.75], vec![vec![1.0, 2.0], vec![-1.0, 0.0]], vec![vec![0.5, 1.0], vec![2.0, 3.0]], 1e-6).unwrap();
        save_gmm(dir.path().join("gmm.tpfv"), &gmm, 1e-6).unwrap();
        assert_eq!(load_gmm::<f64>(dir.path().join("gmm.tpfv")).unwrap(), gmm);

        let lin = LinearModel {
            task: LinearTask::Multilabel,
            c: 100.0,
            models: vec![
                BinaryModel { weights: vec![1.0, -2.0, 0.5], bias: 0.25 },
                BinaryModel { weights: vec![0.0, 3.0, 1.0], bias: -1.0 },
            ],
            masks: Some(vec![(48..68).collect(), (17..27).collect()]),
            cooccurrence: Some(estimate_cooccurrence(&[vec![true, false], vec![true, true]]).unwrap()),
            alpha: 0.5,
        };
        save_linear(dir.path().join("lin.tpfv"), &lin).unwrap();
        assert_eq!(load_linear::<f64>(dir.path().join("lin.tpfv")).unwrap(), lin);
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let gmm = GmmModel::new(vec![1.0], vec![vec![0.0]], vec![vec![1.0]], 1e-6).unwrap();
        save_gmm(dir.path().join("gmm.tpfv"), &gmm, 1e-6).unwrap();
        assert!(load_pca::<f64>(dir.path().join("gmm.tpfv")).is_err());
    }

    #[test]
    fn non_orthonormal_basis_is_rejected() {
        let pca = PcaModel {
            mean: vec![0.0, 0.0],
            basis: vec![vec![1.0, 1.0]],
            eigenvalues: vec![1.0],
            whiten: false,
        };
        let t = pca_to_tensor(&pca);
        assert!(pca_from_tensor::<f64>(&t, Path::new("m")).is_err());
    }
}
