//! Acceptance criteria, one line each. Exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tpfv::eval::Protocol;
use tpfv::fisher::{encode, encode_raw, encoded_len, FvOptions};
use tpfv::gmm::{fit_gmm, EmConfig, GmmModel};
use tpfv::pca::{fit_pca, PcaConfig};
use tpfv::pipeline::{cmd_evaluate, RunConfig};
use tpfv::svm::{apply_co_weighting, estimate_cooccurrence, train_labeled, SvmConfig};
use tpfv::synthetic::{write_fixture, FixtureSpec};
use tpfv::trajectory::WindowSpec;

type Outcome = Result<String, String>;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_gmm(rng: &mut ChaCha8Rng, k: usize, d: usize) -> GmmModel<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    GmmModel::new(
        raw.iter().map(|w| w / total).collect(),
        (0..k).map(|_| (0..d).map(|_| 1.5 * normal(rng)).collect()).collect(),
        (0..k).map(|_| (0..d).map(|_| rng.gen_range(0.3..3.0)).collect()).collect(),
        1e-6,
    )
    .unwrap()
}

/// Mean log-likelihood per observation, written out independently of the crate.
fn mean_log_likelihood(w: &[f64], mu: &[Vec<f64>], var: &[Vec<f64>], xs: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for x in xs {
        let logs: Vec<f64> = (0..w.len())
            .map(|k| {
                let mut l = w[k].ln();
                for j in 0..x.len() {
                    let z = x[j] - mu[k][j];
                    l -= 0.5 * ((2.0 * std::f64::consts::PI * var[k][j]).ln() + z * z / var[k][j]);
                }
                l
            })
            .collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        total += top + logs.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
    }
    total / xs.len() as f64
}

/// Richardson-extrapolated central difference.
fn derivative(f: impl Fn(f64) -> f64) -> f64 {
    let central = |h: f64| (f(h) - f(-h)) / (2.0 * h);
    let h = 1e-3;
    (4.0 * central(h / 2.0) - central(h)) / 3.0
}

fn fv_gradient_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut instances = 0;
    let mut worst = 0.0f64;
    for &k in &[1, 2, 4] {
        for &d in &[2, 3, 5] {
            for &m in &[1, 5, 20] {
                let g = random_gmm(&mut rng, k, d);
                let xs: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| 2.0 * normal(&mut rng)).collect()).collect();
                let raw = encode_raw(&g, &xs).map_err(|e| e.to_string())?;
                for c in 0..k {
                    for j in 0..d {
                        let dmu = derivative(|h| {
                            let mut mu = g.means.clone();
                            mu[c][j] += h;
                            mean_log_likelihood(&g.weights, &mu, &g.variances, &xs)
                        });
                        let dvar = derivative(|h| {
                            let mut var = g.variances.clone();
                            var[c][j] += h;
                            mean_log_likelihood(&g.weights, &g.means, &var, &xs)
                        });
                        let sw = g.weights[c].sqrt();
                        let pairs = [
                            (raw[c * d + j], dmu / sw),
                            (raw[k * d + c * d + j], dvar * 2f64.sqrt() * g.variances[c][j] / sw),
                        ];
                        for (got, want) in pairs {
                            let rel = (got - want).abs() / want.abs().max(1e-3);
                            worst = worst.max(rel);
                            if rel > 1e-5 {
                                return Err(format!("K={k} d={d} M={m} component {c} coord {j}: {got} vs {want}"));
                            }
                        }
                    }
                }
                instances += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 10.0 {
        return Err(format!("took {secs:.1} s"));
    }
    Ok(format!("{instances} instances, worst relative error {worst:.1e}, {secs:.2} s"))
}

fn fv_structure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let big = random_gmm(&mut rng, 16, 32);
    let xs: Vec<Vec<f64>> = (0..50).map(|_| (0..32).map(|_| normal(&mut rng)).collect()).collect();
    let fv = encode(&big, &xs).map_err(|e| e.to_string())?;
    if fv.len() != 1024 || encoded_len(16, 32, FvOptions::default()) != 1024 {
        return Err(format!("length {} for K=16 d=32", fv.len()));
    }
    let norm = fv.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(format!("norm {norm}"));
    }
    for trial in 0..20 {
        let g = random_gmm(&mut rng, 1 + trial % 4, 1 + trial % 5);
        let d = g.dim();
        let xs: Vec<Vec<f64>> = (0..1 + trial * 3).map(|_| (0..d).map(|_| 2.0 * normal(&mut rng)).collect()).collect();
        let base = encode(&g, &xs).map_err(|e| e.to_string())?;
        let mut shuffled = xs.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut rng);
        let doubled: Vec<Vec<f64>> = xs.iter().chain(&xs).cloned().collect();
        if encode(&g, &shuffled).unwrap() != base {
            return Err(format!("trial {trial}: permutation changed the encoding"));
        }
        if encode(&g, &doubled).unwrap() != base {
            return Err(format!("trial {trial}: duplication changed the encoding"));
        }
    }
    for d in [1, 3, 6] {
        let mu: Vec<f64> = (0..d).map(|j| j as f64 - 1.5).collect();
        let g = GmmModel::new(vec![1.0], vec![mu.clone()], vec![(0..d).map(|j| 0.5 + j as f64).collect()], 1e-6).unwrap();
        let raw = encode_raw(&g, &[mu]).unwrap();
        let target = -1.0 / 2f64.sqrt();
        if raw[..d].iter().any(|&v| v != 0.0) || raw[d..].iter().any(|&v| (v - target).abs() > 1e-15) {
            return Err(format!("x = mu case gave {raw:?}"));
        }
    }
    Ok("length 1024, unit norm, exact permutation/duplication invariance, x=mu blocks".into())
}

fn em_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut steps = 0;
    for set in 0..50 {
        let k = 1 + set % 5;
        let d = 1 + set % 4;
        let n = rng.gen_range(100..400);
        let centres: Vec<Vec<f64>> = (0..k).map(|_| (0..d).map(|_| 4.0 * normal(&mut rng)).collect()).collect();
        let data: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let c = &centres[rng.gen_range(0..k)];
                c.iter().map(|m| m + rng.gen_range(0.3..2.0) * normal(&mut rng)).collect()
            })
            .collect();
        let fit = fit_gmm(&data, &EmConfig { k, seed: set as u64, ..EmConfig::default() }).map_err(|e| e.to_string())?;
        for w in fit.log.windows(2) {
            steps += 1;
            if w[1].mean_log_likelihood < w[0].mean_log_likelihood - 1e-10 {
                return Err(format!(
                    "dataset {set}: mean log-likelihood fell {:.3e} at iteration {}",
                    w[0].mean_log_likelihood - w[1].mean_log_likelihood,
                    w[1].iteration
                ));
            }
        }
    }

    let mut data = Vec::new();
    for centre in [-10.0, 10.0] {
        for _ in 0..500 {
            data.push(vec![centre + normal(&mut rng), normal(&mut rng)]);
        }
    }
    let fit = fit_gmm(&data, &EmConfig { k: 2, seed: 1, ..EmConfig::default() }).map_err(|e| e.to_string())?;
    let mut order: Vec<usize> = vec![0, 1];
    order.sort_by(|&a, &b| fit.model.means[a][0].partial_cmp(&fit.model.means[b][0]).unwrap());
    for (slot, &c) in order.iter().enumerate() {
        let want = [-10.0, 10.0][slot];
        let m = &fit.model.means[c];
        let err = ((m[0] - want).powi(2) + m[1].powi(2)).sqrt();
        if err > 0.2 || (fit.model.weights[c] - 0.5).abs() > 0.05 {
            return Err(format!("two-cluster recovery: mean {m:?} weight {}", fit.model.weights[c]));
        }
    }

    let data: Vec<Vec<f64>> = (0..333).map(|_| (0..3).map(|j| j as f64 + (j + 1) as f64 * normal(&mut rng)).collect()).collect();
    let fit = fit_gmm(&data, &EmConfig { k: 1, ..EmConfig::default() }).map_err(|e| e.to_string())?;
    let n = data.len() as f64;
    for j in 0..3 {
        let mean = data.iter().map(|x| x[j]).sum::<f64>() / n;
        let var = data.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / n;
        let (gm, gv) = (fit.model.means[0][j], fit.model.variances[0][j]);
        if (gm - mean).abs() > 1e-12 * mean.abs().max(1.0) || (gv - var).abs() > 1e-12 * var || fit.model.weights[0] != 1.0 {
            return Err(format!("K=1 coordinate {j}: ({gm}, {gv}) vs ({mean}, {var})"));
        }
    }
    Ok(format!("50 datasets ({steps} steps) monotone, two clusters recovered, K=1 closed form"))
}

fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    (0..d)
        .map(|a| (0..d).map(|b| rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / n).collect())
        .collect()
}

fn pca_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mix: Vec<Vec<f64>> = (0..8).map(|_| (0..8).map(|_| normal(&mut rng)).collect()).collect();
    let xs: Vec<Vec<f64>> = (0..2000)
        .map(|_| {
            let z: Vec<f64> = (0..8).map(|_| normal(&mut rng)).collect();
            (0..8).map(|i| (0..8).map(|j| mix[i][j] * z[j]).sum::<f64>() + 3.0).collect()
        })
        .collect();
    let m = fit_pca(&xs, &PcaConfig { d: 5, ..PcaConfig::default() }).map_err(|e| e.to_string())?;
    for (i, a) in m.basis.iter().enumerate() {
        for (j, b) in m.basis.iter().enumerate() {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            if (dot - if i == j { 1.0 } else { 0.0 }).abs() > 1e-6 {
                return Err(format!("basis rows {i},{j} dot {dot}"));
            }
        }
    }
    let cov = covariance(&m.project_all(&xs).unwrap());
    let mut worst = 0.0f64;
    for i in 0..5 {
        for j in 0..5 {
            if i != j {
                worst = worst.max(cov[i][j].abs() / (cov[i][i] * cov[j][j]).sqrt());
            }
        }
    }
    if worst > 1e-6 {
        return Err(format!("off-diagonal projected covariance {worst:.1e}"));
    }

    let theta: f64 = 0.7;
    let (c, s) = (theta.cos(), theta.sin());
    let xs: Vec<Vec<f64>> = (0..10_000)
        .map(|_| {
            let (a, b) = (2.0 * normal(&mut rng), normal(&mut rng));
            vec![c * a - s * b, s * a + c * b]
        })
        .collect();
    let m = fit_pca(&xs, &PcaConfig { d: 2, ..PcaConfig::default() }).map_err(|e| e.to_string())?;
    let (e0, e1) = (m.eigenvalues[0], m.eigenvalues[1]);
    if (e0 / 4.0 - 1.0).abs() > 0.05 || (e1 - 1.0).abs() > 0.05 {
        return Err(format!("eigenvalues {e0}, {e1} for diag(4, 1)"));
    }
    Ok(format!("orthonormal, off-diagonal {worst:.1e}, eigenvalues {e0:.3}/{e1:.3}"))
}

/// Accelerated projected gradient on the box-constrained dual, then the primal value.
fn reference_primal(xs: &[Vec<f64>], ys: &[bool], c: f64, bias: f64) -> f64 {
    let aug: Vec<Vec<f64>> = xs.iter().map(|x| x.iter().copied().chain([bias]).collect()).collect();
    let n = aug.len();
    let sign = |i: usize| if ys[i] { 1.0 } else { -1.0 };
    let q: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| sign(i) * sign(j) * aug[i].iter().zip(&aug[j]).map(|(a, b)| a * b).sum::<f64>()).collect())
        .collect();
    // Lipschitz bound: row-sum norm of Q
    let lip = q.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let step = 1.0 / lip;
    let mut alpha = vec![0.0; n];
    let mut y = alpha.clone();
    let mut t = 1.0f64;
    for _ in 0..200_000 {
        let grad: Vec<f64> = (0..n).map(|i| q[i].iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() - 1.0).collect();
        let next: Vec<f64> = (0..n).map(|i| (y[i] - step * grad[i]).clamp(0.0, c)).collect();
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = (0..n).map(|i| next[i] + (t - 1.0) / t_next * (next[i] - alpha[i])).collect();
        alpha = next;
        t = t_next;
    }
    let dim = aug[0].len();
    let w: Vec<f64> = (0..dim).map(|j| (0..n).map(|i| alpha[i] * sign(i) * aug[i][j]).sum()).collect();
    let reg = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    let loss: f64 = (0..n)
        .map(|i| (1.0 - sign(i) * w.iter().zip(&aug[i]).map(|(a, b)| a * b).sum::<f64>()).max(0.0))
        .sum();
    reg + c * loss
}

fn svm_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let xs: Vec<Vec<f64>> = (0..40)
        .map(|i| {
            let side = if i % 2 == 0 { 3.0 } else { -3.0 };
            vec![side + 0.5 * normal(&mut rng), normal(&mut rng), normal(&mut rng)]
        })
        .collect();
    let ys: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
    let (m, _) = train_labeled(&xs, &ys, &SvmConfig::default()).map_err(|e| e.to_string())?;
    let hits = xs.iter().zip(&ys).filter(|(x, &y)| (m.score(x) > 0.0) == y).count();
    if hits != 40 {
        return Err(format!("separable toy: {hits}/40 training points correct"));
    }

    let mut worst = 0.0f64;
    for inst in 0..10 {
        let n = 10 + 4 * inst;
        let d = 2 + inst % 6;
        let c = [0.1, 1.0, 10.0, 100.0][inst % 4];
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| normal(&mut rng)).collect()).collect();
        let ys: Vec<bool> = xs.iter().map(|x| x[0] + 0.7 * normal(&mut rng) > 0.0).collect();
        if ys.iter().all(|&y| y) || ys.iter().all(|&y| !y) {
            continue;
        }
        let cfg = SvmConfig { c, seed: inst as u64, ..SvmConfig::default() };
        let (m, _) = train_labeled(&xs, &ys, &cfg).map_err(|e| e.to_string())?;
        let ours = m.primal_objective(&xs, &ys, &cfg);
        let reference = reference_primal(&xs, &ys, c, cfg.bias_feature);
        let rel = (ours - reference).abs() / reference.abs();
        worst = worst.max(rel);
        if rel > 1e-4 {
            return Err(format!("instance {inst} (n={n}, C={c}): objective {ours} vs reference {reference}"));
        }
    }

    let labels: Vec<Vec<bool>> = (0..30).map(|_| (0..4).map(|_| rng.gen_bool(0.4)).collect()).collect();
    let co = estimate_cooccurrence(&labels).map_err(|e| e.to_string())?;
    let scores: Vec<f64> = (0..4).map(|_| 3.0 * normal(&mut rng)).collect();
    if apply_co_weighting(&scores, &co, 0.0).map_err(|e| e.to_string())? != scores {
        return Err("co-occurrence weighting with alpha = 0 changed the scores".into());
    }
    Ok(format!("separable toy 40/40, objective gap {worst:.1e}, alpha=0 identity"))
}

fn window_rule() -> Outcome {
    let spec = WindowSpec::new(16, 1).map_err(|e| e.to_string())?;
    let c = spec.centers(100);
    let expected: Vec<usize> = (8..=91).collect();
    if c != expected {
        return Err(format!("{} windows, first {:?}, last {:?}", c.len(), c.first(), c.last()));
    }
    for n in [0, 1, 15, 16] {
        if !spec.centers(n).is_empty() {
            return Err(format!("N={n} produced windows"));
        }
    }
    Ok("N=100 W=16: 84 windows, centres 8..91; N<=W: none".into())
}

fn fixture_config(root: &Path, out: &str) -> RunConfig {
    let data = root.join("data");
    if !data.join("config.json").is_file() {
        write_fixture(&data, &FixtureSpec::default()).unwrap();
    }
    let mut cfg = RunConfig::load(data.join("config.json")).unwrap();
    cfg.output = Some(root.join(out));
    cfg
}

fn end_to_end(root: &Path) -> Outcome {
    let start = Instant::now();
    let cfg = fixture_config(root, "e2e");
    if cfg.protocol != Protocol::Loao {
        return Err("fixture config is not leave-one-actor-out".into());
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let report = pool.install(|| cmd_evaluate(cfg, false)).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let acc = report.aggregate.accuracy;
    let line = format!(
        "{}/{} correct over {} folds ({:.1}%), {secs:.1} s single-threaded",
        report.aggregate.correct,
        report.aggregate.total,
        report.folds.len(),
        100.0 * acc
    );
    if acc < 0.95 || secs >= 120.0 {
        Err(line)
    } else {
        Ok(line)
    }
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism(root: &Path) -> Outcome {
    let a = fixture_config(root, "run_a");
    let b = fixture_config(root, "run_b");
    cmd_evaluate(a, false).map_err(|e| e.to_string())?;
    cmd_evaluate(b, false).map_err(|e| e.to_string())?;
    let (ta, tb) = (tree(&root.join("run_a")), tree(&root.join("run_b")));
    if ta.keys().ne(tb.keys()) {
        return Err("runs wrote different file sets".into());
    }
    for (p, bytes) in &ta {
        if &tb[p] != bytes {
            return Err(format!("{} differs between runs", p.display()));
        }
    }
    let models = ta.keys().filter(|p| p.extension().is_some_and(|e| e == "tpfv")).count();
    Ok(format!("{} files identical, {models} of them model or descriptor files", ta.len()))
}

fn main() {
    let root = tempfile::tempdir().unwrap();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("fv gradient oracle", Box::new(fv_gradient_oracle)),
        ("fv structural suite", Box::new(fv_structure)),
        ("em suite", Box::new(em_suite)),
        ("pca suite", Box::new(pca_suite)),
        ("svm suite", Box::new(svm_suite)),
        ("window rule", Box::new(window_rule)),
        ("end-to-end synthetic loao", Box::new(|| end_to_end(root.path()))),
        ("determinism", Box::new(|| determinism(root.path()))),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
