//! Small invariant checks that run in well under a second.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{Label, ManifestEntry, DatasetManifest};
use crate::eval::{make_kfold, make_loao_folds, video_majority_rule};
use crate::fisher::{encode, encode_raw};
use crate::gmm::{fit_gmm, EmConfig, GmmModel};
use crate::pca::{fit_pca, PcaConfig};
use crate::pooling::{scale_region, PoolingSpec};
use crate::svm::{apply_co_weighting, estimate_cooccurrence, train_labeled, SvmConfig};
use crate::tensor::Tensor;
use crate::trajectory::WindowSpec;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(), String>) -> Check {
    match f() {
        Ok(()) => Check {
            name,
            passed: true,
            detail: String::new(),
        },
        Err(detail) => Check {
            name,
            passed: false,
            detail,
        },
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_gmm(rng: &mut ChaCha8Rng, k: usize, d: usize) -> GmmModel<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    GmmModel::new(
        raw.iter().map(|w| w / total).collect(),
        (0..k).map(|_| (0..d).map(|_| normal(rng)).collect()).collect(),
        (0..k).map(|_| (0..d).map(|_| rng.gen_range(0.5..2.0)).collect()).collect(),
        1e-6,
    )
    .expect("valid model")
}

fn tensor_round_trip() -> Result<(), String> {
    let t = Tensor::from_f32(vec![2, 3], vec![0.0, 1.5, -2.0, 3.25, 4.0, 5.5]).map_err(|e| e.to_string())?;
    let bytes = t.encode();
    let back = Tensor::decode(&bytes, Path::new("selftest")).map_err(|e| e.to_string())?;
    ensure(back.encode() == bytes && back == t, || "tensor bytes changed on round trip".into())
}

fn window_rule() -> Result<(), String> {
    let c = WindowSpec::default().centers(100);
    ensure(c.len() == 84 && c[0] == 8 && c[83] == 91, || format!("{} windows", c.len()))?;
    ensure(WindowSpec::default().centers(16).is_empty(), || "N = W produced windows".into())
}

fn region_clip() -> Result<(), String> {
    let spec = PoolingSpec::default();
    let b = scale_region(0.0, 0.0, &spec, (224, 224), (14, 14));
    ensure(b.row0 == 0 && b.col0 == 0 && b.height() >= 1 && b.width() >= 1, || format!("{b:?}"))?;
    let b = scale_region(112.0, 112.0, &spec, (224, 224), (14, 14));
    ensure((b.row0, b.row1, b.col0, b.col1) == (5, 9, 5, 9), || format!("{b:?}"))
}

/// Mean and variance blocks against central differences of the mean log-likelihood.
fn fisher_gradients() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for &(k, d, m) in &[(1, 2, 5), (2, 3, 1), (4, 2, 20)] {
        let g = random_gmm(&mut rng, k, d);
        let xs: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| 1.5 * normal(&mut rng)).collect()).collect();
        let raw = encode_raw(&g, &xs).map_err(|e| e.to_string())?;
        let f = |g: &GmmModel<f64>| g.log_likelihood(&xs).unwrap() / m as f64;
        let h = 1e-5;
        for c in 0..k {
            for j in 0..d {
                let perturb = |delta: f64, var: bool| {
                    let mut p = g.clone();
                    if var {
                        p.variances[c][j] += delta;
                    } else {
                        p.means[c][j] += delta;
                    }
                    f(&p)
                };
                let dmu = (perturb(h, false) - perturb(-h, false)) / (2.0 * h);
                let dvar = (perturb(h, true) - perturb(-h, true)) / (2.0 * h);
                let w = g.weights[c];
                let want_mu = dmu / w.sqrt();
                let want_var = dvar * 2f64.sqrt() * g.variances[c][j] / w.sqrt();
                let got_mu = raw[c * d + j];
                let got_var = raw[k * d + c * d + j];
                for (got, want) in [(got_mu, want_mu), (got_var, want_var)] {
                    let rel = (got - want).abs() / want.abs().max(1e-2);
                    ensure(rel < 1e-5, || format!("K={k} d={d} M={m}: {got} vs {want}"))?;
                }
            }
        }
    }
    Ok(())
}

fn fisher_structure() -> Result<(), String> {
    let g = GmmModel::new(vec![1.0], vec![vec![0.5, -1.0]], vec![vec![2.0, 0.5]], 1e-6).map_err(|e| e.to_string())?;
    let raw = encode_raw(&g, &[vec![0.5, -1.0]]).map_err(|e| e.to_string())?;
    let expect = [0.0, 0.0, -1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt()];
    ensure(raw.iter().zip(expect).all(|(a, b)| (a - b).abs() < 1e-12), || format!("{raw:?}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = random_gmm(&mut rng, 3, 4);
    let xs: Vec<Vec<f64>> = (0..7).map(|_| (0..4).map(|_| normal(&mut rng)).collect()).collect();
    let fv = encode(&g, &xs).map_err(|e| e.to_string())?;
    let norm: f64 = fv.iter().map(|v| v * v).sum::<f64>().sqrt();
    ensure(fv.len() == 24 && (norm - 1.0).abs() < 1e-12, || format!("len {} norm {norm}", fv.len()))?;
    let mut rev = xs.clone();
    rev.reverse();
    ensure(encode(&g, &rev).map_err(|e| e.to_string())? == fv, || "order changed the encoding".into())
}

fn em_monotone() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data: Vec<Vec<f64>> = (0..300)
        .map(|i| {
            let c = if i % 3 == 0 { 4.0 } else { -2.0 };
            vec![c + normal(&mut rng), normal(&mut rng)]
        })
        .collect();
    let fit = fit_gmm(&data, &EmConfig { k: 3, ..EmConfig::default() }).map_err(|e| e.to_string())?;
    for w in fit.log.windows(2) {
        ensure(w[1].mean_log_likelihood >= w[0].mean_log_likelihood - 1e-10, || {
            format!("log-likelihood fell at iteration {}", w[1].iteration)
        })?;
    }
    Ok(())
}

fn pca_orthonormal() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let xs: Vec<Vec<f64>> = (0..200).map(|_| (0..6).map(|j| (j + 1) as f64 * normal(&mut rng)).collect()).collect();
    let m = fit_pca(&xs, &PcaConfig { d: 4, ..PcaConfig::default() }).map_err(|e| e.to_string())?;
    for (i, a) in m.basis.iter().enumerate() {
        for (j, b) in m.basis.iter().enumerate() {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            ensure((dot - want).abs() < 1e-6, || format!("basis rows {i},{j}: {dot}"))?;
        }
    }
    Ok(())
}

fn svm_separable() -> Result<(), String> {
    let xs = vec![vec![2.0, 1.0], vec![3.0, -1.0], vec![-2.0, 0.5], vec![-2.5, -1.0]];
    let ys = [true, true, false, false];
    let (m, _) = train_labeled(&xs, &ys, &SvmConfig::default()).map_err(|e| e.to_string())?;
    ensure(xs.iter().zip(ys).all(|(x, y)| (m.score(x) > 0.0) == y), || "training point misclassified".into())
}

fn cooccurrence_identity() -> Result<(), String> {
    let co = estimate_cooccurrence(&[vec![true, false, true], vec![false, true, true]]).map_err(|e| e.to_string())?;
    let s = [0.3, -1.2, 2.5];
    let out = apply_co_weighting(&s, &co, 0.0).map_err(|e| e.to_string())?;
    ensure(out == s, || format!("{out:?}"))
}

fn folds_partition() -> Result<(), String> {
    let entries = (0..10)
        .map(|i| ManifestEntry {
            video_id: format!("v{i}"),
            actor_id: format!("a{}", i % 5),
            label: Label::Categorical(i % 2),
            feature_path: "f".into(),
            landmark_path: "l".into(),
            frame_labels_path: None,
        })
        .collect();
    let m = DatasetManifest::from_entries(entries, "");
    let loao = make_loao_folds(&m).map_err(|e| e.to_string())?;
    let mut tested: Vec<String> = loao.folds.iter().flat_map(|f| f.test.clone()).collect();
    tested.sort();
    let mut all: Vec<String> = m.entries.iter().map(|e| e.video_id.clone()).collect();
    all.sort();
    ensure(loao.folds.len() == 5 && tested == all, || "LOAO test sets do not partition the videos".into())?;
    let kfold = make_kfold(&m, 5, 1).map_err(|e| e.to_string())?;
    ensure(kfold.folds == loao.folds, || "k = actors differs from LOAO".into())
}

fn majority_rule() -> Result<(), String> {
    let half: Vec<usize> = (0..100).map(|i| usize::from(i < 50)).collect();
    ensure(!video_majority_rule(&half, 1), || "50 of 100 counted as a majority".into())?;
    let more: Vec<usize> = (0..100).map(|i| usize::from(i < 51)).collect();
    ensure(video_majority_rule(&more, 1), || "51 of 100 not a majority".into())
}

/// Run every check; callers decide how to report them.
pub fn run() -> Vec<Check> {
    vec![
        check("tensor container round trip", tensor_round_trip),
        check("window centres", window_rule),
        check("pooling region clip", region_clip),
        check("fisher gradients vs finite differences", fisher_gradients),
        check("fisher vector structure", fisher_structure),
        check("em log-likelihood monotone", em_monotone),
        check("pca basis orthonormal", pca_orthonormal),
        check("svm separable toy", svm_separable),
        check("co-occurrence alpha=0 identity", cooccurrence_identity),
        check("fold partition", folds_partition),
        check("strict frame majority", majority_rule),
    ]
}
