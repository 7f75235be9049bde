//! Synthetic datasets: moving 68-point faces over feature maps whose
//! activations near each facial region come from class-specific mixtures.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, FeatureMapSequence, Label, LandmarkTrack, ManifestEntry, Point, NUM_LANDMARKS};
use crate::error::{Error, Result};
use crate::pipeline::RunConfig;
use crate::svm::{RegionTable, UnitRegion};
use crate::tensor::write_tensor_file;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureSpec {
    pub actors: usize,
    /// Classes, or action units when `multilabel` is set (at most 5).
    pub classes: usize,
    pub videos_per_class: usize,
    pub frames: usize,
    pub channels: usize,
    pub map: (usize, usize),
    pub source: (usize, usize),
    /// Mixture components per class and region.
    pub components: usize,
    pub noise: f64,
    /// Scale of the class (or unit) offset added to the shared region prototypes.
    pub class_shift: f64,
    /// Per-actor additive activation bias.
    pub actor_variation: f64,
    pub multilabel: bool,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            actors: 3,
            classes: 2,
            videos_per_class: 3,
            frames: 12,
            channels: 32,
            map: (14, 14),
            source: (224, 224),
            components: 2,
            noise: 0.5,
            class_shift: 0.4,
            actor_variation: 0.0,
            multilabel: false,
            seed: 7,
        }
    }
}

impl FixtureSpec {
    pub fn multilabel() -> Self {
        FixtureSpec {
            classes: 3,
            videos_per_class: 2,
            frames: 24,
            multilabel: true,
            ..FixtureSpec::default()
        }
    }
}

/// Paths of a generated fixture.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub dir: PathBuf,
    pub manifest: PathBuf,
    pub config: PathBuf,
    pub au_regions: Option<PathBuf>,
}

/// Region id per landmark: jaw, brows, nose, eyes, mouth.
fn region_of(landmark: usize) -> usize {
    match landmark {
        0..=16 => 0,
        17..=26 => 1,
        27..=35 => 2,
        36..=47 => 3,
        _ => 4,
    }
}

const REGIONS: usize = 5;

/// Neutral face in a 224-pixel frame.
fn template() -> Vec<(f64, f64)> {
    let mut p = Vec::with_capacity(NUM_LANDMARKS);
    for i in 0..17 {
        let t = PI * i as f64 / 16.0;
        p.push((112.0 - 70.0 * t.cos(), 100.0 + 75.0 * t.sin()));
    }
    for side in [60.0, 124.0] {
        for i in 0..5 {
            p.push((side + 10.0 * i as f64, 70.0 - 4.0 * (2.0 - (i as f64 - 2.0).abs())));
        }
    }
    for i in 0..4 {
        p.push((112.0, 85.0 + 11.0 * i as f64));
    }
    for i in 0..5 {
        p.push((98.0 + 7.0 * i as f64, 128.0));
    }
    for cx in [80.0, 144.0] {
        for i in 0..6 {
            let t = 2.0 * PI * i as f64 / 6.0;
            p.push((cx + 12.0 * t.cos(), 92.0 + 5.0 * t.sin()));
        }
    }
    for i in 0..12 {
        let t = 2.0 * PI * i as f64 / 12.0;
        p.push((112.0 + 28.0 * t.cos(), 155.0 + 12.0 * t.sin()));
    }
    for i in 0..8 {
        let t = 2.0 * PI * i as f64 / 8.0;
        p.push((112.0 + 16.0 * t.cos(), 155.0 + 6.0 * t.sin()));
    }
    p
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn fixture_regions() -> RegionTable {
    let names = [("jaw", 0..17), ("brows", 17..27), ("nose", 27..36), ("eyes", 36..48), ("mouth", 48..68)];
    RegionTable {
        units: names
            .iter()
            .enumerate()
            .map(|(i, (name, r))| UnitRegion {
                au: i as u32 + 1,
                name: name.to_string(),
                landmarks: r.clone().collect(),
            })
            .collect(),
    }
}

struct Generator<'a> {
    spec: &'a FixtureSpec,
    /// `[region][component]` activations shared by every class.
    prototypes: Vec<Vec<Vec<f64>>>,
    /// `[class][region]` offsets.
    shifts: Vec<Vec<Vec<f64>>>,
    template: Vec<(f64, f64)>,
}

impl Generator<'_> {
    /// Landmarks and flat `[T, C, H, W]` maps for one video. `active[t][u]`
    /// switches unit `u`'s prototype on at frame `t` (multilabel only).
    fn video(&self, rng: &mut ChaCha8Rng, class: usize, actor_bias: &[f64], offset: (f64, f64), active: &[Vec<bool>]) -> (Vec<Vec<Point>>, Vec<f32>) {
        let s = self.spec;
        let (h, w) = s.map;
        let (sh, sw) = s.source;
        let scale = (sw as f64 / 224.0, sh as f64 / 224.0);
        let phase = rng.gen::<f64>() * 2.0 * PI;
        let mut frames = Vec::with_capacity(s.frames);
        let mut values = Vec::with_capacity(s.frames * s.channels * h * w);
        for t in 0..s.frames {
            let sway = (2.0 * PI * t as f64 / 8.0 + phase).sin();
            let pts: Vec<Point> = self
                .template
                .iter()
                .map(|&(x, y)| Point::new((x + offset.0 + 3.0 * sway) * scale.0, (y + offset.1 + 2.0 * sway) * scale.1))
                .collect();
            let pick: Vec<usize> = (0..REGIONS).map(|_| rng.gen_range(0..s.components)).collect();
            let mut frame = vec![0.0f32; s.channels * h * w];
            for r in 0..h {
                for c in 0..w {
                    let cy = (r as f64 + 0.5) * sh as f64 / h as f64;
                    let cx = (c as f64 + 0.5) * sw as f64 / w as f64;
                    let (nearest, dist) = pts
                        .iter()
                        .enumerate()
                        .map(|(j, p)| (j, ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt()))
                        .fold((0, f64::INFINITY), |b, x| if x.1 < b.1 { x } else { b });
                    let near = dist < sw as f64 / w as f64 * 1.5;
                    let region = region_of(nearest);
                    for ch in 0..s.channels {
                        let mut v = actor_bias[ch] + s.noise * rng.sample::<f64, _>(StandardNormal);
                        if near {
                            v += self.prototypes[region][pick[region]][ch];
                            if s.multilabel {
                                if active[t].get(region).copied().unwrap_or(false) {
                                    v += self.shifts[region][region][ch];
                                }
                            } else {
                                v += self.shifts[class][region][ch];
                            }
                        }
                        frame[ch * h * w + r * w + c] = v as f32;
                    }
                }
            }
            frames.push(pts);
            values.extend(frame);
        }
        (frames, values)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Per-frame unit activity: each unit switches on for one random run of frames.
fn unit_activity(rng: &mut ChaCha8Rng, frames: usize, units: usize, focus: usize) -> Vec<Vec<bool>> {
    let runs: Vec<(usize, usize)> = (0..units)
        .map(|u| {
            let len = if u == focus { frames * 2 / 3 } else { frames / 4 };
            let start = rng.gen_range(0..=frames - len);
            (start, start + len)
        })
        .collect();
    (0..frames)
        .map(|t| runs.iter().map(|&(a, b)| (a..b).contains(&t)).collect())
        .collect()
}

/// Write features, landmarks, a manifest and a ready-to-run config to `dir`.
pub fn write_fixture(dir: &Path, spec: &FixtureSpec) -> Result<Fixture> {
    if spec.actors < 2 || spec.classes < 1 || spec.videos_per_class == 0 || spec.frames == 0 || spec.components == 0 {
        return Err(Error::InvalidInput("fixture needs >= 2 actors and non-empty classes, videos and frames".into()));
    }
    if spec.multilabel && spec.classes > REGIONS {
        return Err(Error::InvalidInput(format!("at most {REGIONS} synthetic units")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let prototypes = (0..REGIONS)
        .map(|_| (0..spec.components).map(|_| gaussian_vec(&mut rng, spec.channels, 1.0)).collect())
        .collect();
    let shifts = (0..spec.classes)
        .map(|_| (0..REGIONS).map(|_| gaussian_vec(&mut rng, spec.channels, spec.class_shift)).collect())
        .collect();
    let gen = Generator {
        spec,
        prototypes,
        shifts,
        template: template(),
    };

    let mut entries = Vec::new();
    for a in 0..spec.actors {
        let actor = format!("actor{a:02}");
        let bias = gaussian_vec(&mut rng, spec.channels, spec.actor_variation);
        let offset = (rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0));
        for class in 0..spec.classes {
            for v in 0..spec.videos_per_class {
                let video_id = format!("{actor}_c{class}_v{v}");
                let active = if spec.multilabel {
                    unit_activity(&mut rng, spec.frames, spec.classes, class)
                } else {
                    Vec::new()
                };
                let (points, values) = gen.video(&mut rng, class, &bias, offset, &active);
                let features = FeatureMapSequence::new(
                    video_id.clone(),
                    "conv5",
                    spec.source,
                    (spec.channels, spec.map.0, spec.map.1),
                    spec.frames,
                    values,
                )?;
                let feature_path = format!("features/{video_id}.tpfv");
                write_tensor_file(dir.join(&feature_path), &features.to_tensor())?;
                let landmark_path = format!("landmarks/{video_id}.json");
                write_text(&dir.join(&landmark_path), &LandmarkTrack::new(video_id.clone(), points)?.to_json())?;
                let (label, frame_labels_path) = if spec.multilabel {
                    let any = (0..spec.classes).map(|u| active.iter().any(|f| f[u])).collect();
                    let p = format!("frame_labels/{video_id}.json");
                    write_text(&dir.join(&p), &serde_json::to_string(&active).expect("labels serialize"))?;
                    (Label::MultiLabel(any), Some(p))
                } else {
                    (Label::Categorical(class), None)
                };
                entries.push(ManifestEntry {
                    video_id,
                    actor_id: actor.clone(),
                    label,
                    feature_path,
                    landmark_path,
                    frame_labels_path,
                });
            }
        }
    }
    let manifest = dir.join("manifest.jsonl");
    write_text(&manifest, &DatasetManifest::from_entries(entries, dir).to_jsonl())?;

    let au_regions = if spec.multilabel {
        let mut table = fixture_regions();
        table.units.truncate(spec.classes);
        let p = dir.join("au_regions.json");
        write_text(&p, &serde_json::to_string_pretty(&table).expect("table serializes"))?;
        Some(p)
    } else {
        None
    };
    let mut cfg = fixture_config(spec.multilabel);
    cfg.manifest = Some("manifest.jsonl".into());
    cfg.output = Some("out".into());
    cfg.svm.au_regions = au_regions.as_ref().map(|_| "au_regions.json".into());
    let config = dir.join("config.json");
    write_text(&config, &serde_json::to_string_pretty(&cfg).expect("config serializes"))?;
    Ok(Fixture {
        dir: dir.to_path_buf(),
        manifest,
        config,
        au_regions,
    })
}

/// Pipeline settings sized for the fixture: 16 PCA dimensions, 4 components.
pub fn fixture_config(multilabel: bool) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.pca.d = 16;
    cfg.gmm.em.k = 4;
    cfg.heatmap = true;
    if multilabel {
        cfg.window.length = 8;
        cfg.window.stride = 2;
    }
    cfg
}
