//! Error tables in the layout used for reconstruction and pose-accuracy reports.

use std::fmt::Write as _;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::model::{FEATURES, FINGERS, FINGER_NAMES, FINGERTIP_FEATURES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spread {
    Std(f64),
    Range { min: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub group: String,
    pub label: String,
    pub unit: String,
    pub mean: f64,
    pub spread: Spread,
    pub samples: usize,
}

impl ErrorRow {
    pub fn cell(&self) -> String {
        match self.spread {
            Spread::Std(s) => format!("{:.4} ± {:.4} ({})", self.mean, s, self.unit),
            Spread::Range { min, max } => {
                format!("{:.3} [{:.3}, {:.3}] ({})", self.mean, min, max, self.unit)
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorTable {
    pub title: String,
    pub rows: Vec<ErrorRow>,
}

impl ErrorTable {
    pub fn row(&self, label: &str) -> Option<&ErrorRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Plain-text rendering, one row per line, grouped under headings.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0);
        let mut out = String::new();
        if !self.title.is_empty() {
            let _ = writeln!(out, "{}", self.title);
        }
        let mut group = None;
        for r in &self.rows {
            if group != Some(&r.group) {
                let _ = writeln!(out, "[{}]", r.group);
                group = Some(&r.group);
            }
            let _ = writeln!(out, "{:<width$}  {}", r.label, r.cell());
        }
        out
    }
}

/// Running mean / standard deviation / range.
#[derive(Debug, Clone, Copy, Default)]
pub struct Stats {
    n: usize,
    sum: f64,
    sum_sq: f64,
    min: f64,
    max: f64,
}

impl Stats {
    pub fn push(&mut self, x: f64) {
        if self.n == 0 {
            self.min = x;
            self.max = x;
        } else {
            self.min = self.min.min(x);
            self.max = self.max.max(x);
        }
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let m = self.mean();
        (self.sum_sq / self.n as f64 - m * m).max(0.0).sqrt()
    }

    pub fn range(&self) -> (f64, f64) {
        (self.min, self.max)
    }

    pub fn row_std(&self, group: &str, label: &str, unit: &str) -> ErrorRow {
        ErrorRow {
            group: group.into(),
            label: label.into(),
            unit: unit.into(),
            mean: self.mean(),
            spread: Spread::Std(self.std()),
            samples: self.n,
        }
    }

    pub fn row_range(&self, group: &str, label: &str, unit: &str) -> ErrorRow {
        let (min, max) = self.range();
        ErrorRow {
            group: group.into(),
            label: label.into(),
            unit: unit.into(),
            mean: self.mean(),
            spread: Spread::Range { min, max },
            samples: self.n,
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map(|f| f.to_uppercase().collect::<String>() + c.as_str())
        .unwrap_or_default()
}

/// Accumulates per-frame differences between recreated and original
/// trajectories: Euclidean fingertip and object-translation errors in mm,
/// signed orientation differences in rad.
#[derive(Debug, Clone, Default)]
pub struct ReconstructionErrors {
    fingers: [Stats; FINGERS],
    translation: Stats,
    orientation: [Stats; 3],
}

impl ReconstructionErrors {
    /// Both vectors are flattened trajectories in the same representation.
    pub fn push(&mut self, recreated: &DVector<f64>, original: &DVector<f64>) {
        assert_eq!(recreated.len(), original.len());
        for (a, b) in recreated
            .as_slice()
            .chunks_exact(FEATURES)
            .zip(original.as_slice().chunks_exact(FEATURES))
        {
            let dist = |o: usize| {
                ((a[o] - b[o]).powi(2) + (a[o + 1] - b[o + 1]).powi(2) + (a[o + 2] - b[o + 2]).powi(2)).sqrt()
            };
            for (f, s) in self.fingers.iter_mut().enumerate() {
                s.push(1e3 * dist(3 * f));
            }
            self.translation.push(1e3 * dist(FINGERTIP_FEATURES));
            for (k, s) in self.orientation.iter_mut().enumerate() {
                s.push(a[18 + k] - b[18 + k]);
            }
        }
    }

    pub fn mean_fingertip_error_mm(&self) -> f64 {
        let n: usize = self.fingers.iter().map(|s| s.count()).sum();
        if n == 0 {
            return 0.0;
        }
        self.fingers.iter().map(|s| s.mean() * s.count() as f64).sum::<f64>() / n as f64
    }

    pub fn table(&self, title: &str) -> ErrorTable {
        let mut rows: Vec<ErrorRow> = self
            .fingers
            .iter()
            .zip(FINGER_NAMES)
            .map(|(s, name)| s.row_std("Fingers", &capitalize(name), "mm"))
            .collect();
        rows.push(self.translation.row_std("Object", "Translation", "mm"));
        for (s, name) in self.orientation.iter().zip(["Roll", "Pitch", "Yaw"]) {
            rows.push(s.row_std("Object", name, "rad"));
        }
        ErrorTable {
            title: title.into(),
            rows,
        }
    }
}
