use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{ConfusionMatrix, F1Report, Protocol};
use crate::data::Task;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateScore {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

impl AggregateScore {
    pub fn new(correct: usize, total: usize) -> Self {
        AggregateScore {
            correct,
            total,
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub index: usize,
    pub test_actors: Vec<String>,
    pub score: AggregateScore,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<F1Report>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub task: Task,
    pub num_classes: usize,
    pub folds: Vec<FoldScore>,
    /// Pooled over folds; equals the fold-size weighted mean of fold accuracies.
    pub aggregate: AggregateScore,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<F1Report>,
    /// Frame-majority video accuracy, when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_majority: Option<AggregateScore>,
    pub metadata: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn aggregate_of(folds: &[FoldScore]) -> AggregateScore {
        AggregateScore::new(
            folds.iter().map(|f| f.score.correct).sum(),
            folds.iter().map(|f| f.score.total).sum(),
        )
    }
}

fn confusion_csv(c: &ConfusionMatrix) -> String {
    let n = c.rates.len();
    let mut out = String::from("true\\predicted");
    for j in 0..n {
        let _ = write!(out, ",{j}");
    }
    out.push('\n');
    for (i, row) in c.rates.iter().enumerate() {
        let _ = write!(out, "{i}");
        for v in row {
            let _ = write!(out, ",{v:.6}");
        }
        out.push('\n');
    }
    out
}

const CELL: u32 = 32;

/// White-to-blue heat map of the row-normalized rates.
fn confusion_heatmap(c: &ConfusionMatrix) -> RgbImage {
    let n = c.rates.len().max(1) as u32;
    RgbImage::from_fn(n * CELL, n * CELL, |x, y| {
        let (i, j) = ((y / CELL) as usize, (x / CELL) as usize);
        if x % CELL == 0 || y % CELL == 0 {
            return Rgb([200, 200, 200]);
        }
        let v = c.rates.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0.0).clamp(0.0, 1.0);
        let fade = |full: f64| (255.0 - v * (255.0 - full)).round() as u8;
        Rgb([fade(8.0), fade(48.0), fade(107.0)])
    })
}

/// Write `report.json`, plus `confusion.csv` and `confusion.png` when a
/// confusion matrix is present.
pub fn write_report(dir: &Path, report: &EvalReport, heatmap: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    let path = dir.join("report.json");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    if let Some(c) = &report.confusion {
        let path = dir.join("confusion.csv");
        fs::write(&path, confusion_csv(c)).map_err(|e| Error::io(&path, e))?;
        if heatmap {
            let path = dir.join("confusion.png");
            confusion_heatmap(c)
                .save(&path)
                .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        }
    }
    Ok(())
}
