//! From raw recordings to the non-negative demonstration matrix.
//!
//! The steps run in this order: [`split_long_gaps`], [`fill_gaps`],
//! [`to_palm_frame`], [`lowpass`], [`segment`]. [`preprocess`] chains them.

mod filter;
mod spline;

pub use filter::Biquad;
pub use spline::NaturalSpline;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry;
use crate::model::{
    apply_offset, check_non_negative, Frame, OffsetSpec, Representation, Trajectory, DEFAULT_STEPS,
    FEATURES, FINGERS,
};

/// Frame features followed by the palm pose (x, y, z, roll, pitch, yaw).
pub const RECORDING_CHANNELS: usize = FEATURES + 6;
pub const PALM_CHANNEL: usize = FEATURES;

/// Knots taken on each side of a gap for the interpolating spline.
const SPLINE_KNOTS_PER_SIDE: usize = 8;

pub type Sample = [f64; RECORDING_CHANNELS];

/// A uniformly sampled recording in which `NaN` marks a missing value.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub name: String,
    times: Vec<f64>,
    samples: Vec<Sample>,
    missing: Option<Vec<[bool; RECORDING_CHANNELS]>>,
}

impl Recording {
    pub fn new(name: impl Into<String>, times: Vec<f64>, samples: Vec<Sample>) -> Result<Self> {
        if times.len() != samples.len() {
            return Err(Error::DimensionMismatch {
                expected: times.len(),
                actual: samples.len(),
                context: "recording timestamps vs. samples",
            });
        }
        if times.len() < 2 {
            return Err(Error::InvalidInput("a recording needs at least 2 samples".into()));
        }
        let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
        if !(dt > 0.0) {
            return Err(Error::InvalidInput("timestamps must be strictly increasing".into()));
        }
        for (i, w) in times.windows(2).enumerate() {
            let step = w[1] - w[0];
            if !(step > 0.0) || (step - dt).abs() > 0.01 * dt {
                return Err(Error::InvalidInput(format!(
                    "non-uniform timestamps at sample {i}: step {step} vs mean {dt}"
                )));
            }
        }
        let any_missing = samples.iter().flatten().any(|v| v.is_nan());
        let missing = any_missing.then(|| {
            samples
                .iter()
                .map(|s| std::array::from_fn(|c| s[c].is_nan()))
                .collect()
        });
        if samples.iter().flatten().any(|v| v.is_infinite()) {
            return Err(Error::InvalidInput("recording contains infinite values".into()));
        }
        Ok(Recording {
            name: name.into(),
            times,
            samples,
            missing,
        })
    }

    /// Recording whose palm pose is the identity at every sample.
    pub fn from_frames(name: impl Into<String>, t0: f64, dt: f64, frames: &[Frame]) -> Result<Self> {
        let times = (0..frames.len()).map(|i| t0 + i as f64 * dt).collect();
        let samples = frames
            .iter()
            .map(|f| {
                let mut s = [0.0; RECORDING_CHANNELS];
                s[..FEATURES].copy_from_slice(&f.features);
                s
            })
            .collect();
        Recording::new(name, times, samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn dt(&self) -> f64 {
        (self.times[self.len() - 1] - self.times[0]) / (self.len() - 1) as f64
    }

    pub fn missing_mask(&self) -> Option<&[[bool; RECORDING_CHANNELS]]> {
        self.missing.as_deref()
    }

    pub fn frame(&self, i: usize) -> Frame {
        Frame::new(self.samples[i][..FEATURES].try_into().expect("21 features"))
    }

    pub fn frames(&self) -> impl Iterator<Item = Frame> + '_ {
        (0..self.len()).map(|i| self.frame(i))
    }

    pub fn palm(&self, i: usize) -> (Vector3<f64>, Vector3<f64>) {
        let s = &self.samples[i];
        (
            Vector3::new(s[PALM_CHANNEL], s[PALM_CHANNEL + 1], s[PALM_CHANNEL + 2]),
            Vector3::new(s[PALM_CHANNEL + 3], s[PALM_CHANNEL + 4], s[PALM_CHANNEL + 5]),
        )
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[c]).collect()
    }

    fn with_samples(&self, samples: Vec<Sample>) -> Recording {
        Recording {
            name: self.name.clone(),
            times: self.times.clone(),
            samples,
            missing: None,
        }
    }

    fn slice(&self, start: usize, end: usize, name: String) -> Recording {
        let samples = self.samples[start..end].to_vec();
        let missing = self
            .missing
            .as_ref()
            .map(|m| m[start..end].to_vec())
            .filter(|m| m.iter().flatten().any(|b| *b));
        Recording {
            name,
            times: self.times[start..end].to_vec(),
            samples,
            missing,
        }
    }
}

/// Runs of missing samples in one channel as `(start, len)`.
fn missing_runs(r: &Recording, c: usize) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, s) in r.samples.iter().enumerate() {
        match (s[c].is_nan(), start) {
            (true, None) => start = Some(i),
            (false, Some(s0)) => {
                runs.push((s0, i - s0));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s0) = start {
        runs.push((s0, r.len() - s0));
    }
    runs
}

fn max_gap_samples(r: &Recording, max_gap_s: f64) -> usize {
    (max_gap_s / r.dt() + 1e-9).floor() as usize
}

/// Cuts a recording wherever some channel has a gap longer than `max_gap_s`.
/// The gap samples are dropped; pieces shorter than two samples are discarded.
pub fn split_long_gaps(r: &Recording, max_gap_s: f64) -> Vec<Recording> {
    let max = max_gap_samples(r, max_gap_s);
    let mut cut = vec![false; r.len()];
    for c in 0..RECORDING_CHANNELS {
        for (start, len) in missing_runs(r, c) {
            if len > max {
                cut[start..start + len].iter_mut().for_each(|x| *x = true);
            }
        }
    }
    if !cut.iter().any(|x| *x) {
        return vec![r.clone()];
    }
    let mut pieces = Vec::new();
    let mut i = 0;
    while i < r.len() {
        if cut[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < r.len() && !cut[i] {
            i += 1;
        }
        if i - start >= 2 {
            let name = format!("{}#{}", r.name, pieces.len());
            pieces.push(r.slice(start, i, name));
        }
    }
    pieces
}

/// Replaces missing samples by a natural cubic spline through the nearest
/// valid neighbours on each side. Gaps touching either end of the recording
/// hold the nearest valid value.
pub fn fill_gaps(r: &Recording, max_gap_s: f64) -> Result<Recording> {
    if r.missing.is_none() {
        return Ok(r.clone());
    }
    let max = max_gap_samples(r, max_gap_s);
    let mut samples = r.samples.clone();
    for c in 0..RECORDING_CHANNELS {
        let runs = missing_runs(r, c);
        if runs.is_empty() {
            continue;
        }
        if let Some(&(start, len)) = runs.iter().find(|(_, len)| *len > max) {
            return Err(Error::GapTooLong {
                channel: c,
                start,
                len,
                max,
            });
        }
        let valid = |i: usize| !r.samples[i][c].is_nan();
        for (start, len) in runs {
            let end = start + len;
            let before: Vec<usize> = (0..start).rev().filter(|&i| valid(i)).take(SPLINE_KNOTS_PER_SIDE).collect();
            let after: Vec<usize> = (end..r.len()).filter(|&i| valid(i)).take(SPLINE_KNOTS_PER_SIDE).collect();
            match (before.is_empty(), after.is_empty()) {
                (true, true) => {
                    return Err(Error::InvalidInput(format!("channel {c} has no valid samples")));
                }
                (true, false) | (false, true) => {
                    let hold = r.samples[before.first().or(after.first()).copied().expect("non-empty")][c];
                    (start..end).for_each(|i| samples[i][c] = hold);
                }
                (false, false) => {
                    let knots: Vec<usize> = before.into_iter().rev().chain(after).collect();
                    let spline = NaturalSpline::new(
                        knots.iter().map(|&i| r.times[i]).collect(),
                        knots.iter().map(|&i| r.samples[i][c]).collect(),
                    );
                    (start..end).for_each(|i| samples[i][c] = spline.eval(r.times[i]));
                }
            }
        }
    }
    Ok(r.with_samples(samples))
}

/// Expresses fingertips and object pose relative to the palm pose of the
/// same sample. The palm channels become the identity pose.
pub fn to_palm_frame(r: &Recording) -> Result<Recording> {
    let mut samples = r.samples.clone();
    for (i, s) in samples.iter_mut().enumerate() {
        let (palm_p, palm_rpy) = r.palm(i);
        if !(palm_p.iter().chain(palm_rpy.iter()).all(|v| v.is_finite())) {
            return Err(Error::DegeneratePalmPose { sample: i });
        }
        let palm = geometry::pose(&palm_p, &palm_rpy);
        let frame = r.frame(i);
        let mut out = Frame::default();
        for f in 0..FINGERS {
            out.set_fingertip(f, geometry::inverse_transform_point(&palm, &frame.fingertip(f)));
        }
        out.set_object_position(geometry::inverse_transform_point(&palm, &frame.object_position()));
        let relative = geometry::rotation(&palm_rpy).transpose() * geometry::rotation(&frame.object_orientation());
        out.set_object_orientation(geometry::rpy(&relative));
        s[..FEATURES].copy_from_slice(&out.features);
        s[PALM_CHANNEL..].iter_mut().for_each(|v| *v = 0.0);
    }
    let mut out = r.with_samples(samples);
    out.missing = r.missing.clone();
    Ok(out)
}

/// Zero-phase second-order low-pass on every channel.
pub fn lowpass(r: &Recording, cutoff_hz: f64) -> Result<Recording> {
    let filter = Biquad::butterworth_lowpass(cutoff_hz, 1.0 / r.dt())?;
    if r.missing.is_some() {
        return Err(Error::InvalidInput("fill gaps before filtering".into()));
    }
    let mut samples = r.samples.clone();
    for c in 0..RECORDING_CHANNELS {
        for (s, y) in samples.iter_mut().zip(filter.filtfilt(&r.channel(c))) {
            s[c] = y;
        }
    }
    Ok(r.with_samples(samples))
}

/// Where a demonstration column came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSource {
    pub recording: String,
    pub start_sample: usize,
}

/// Training matrix: one offset, flattened window per column.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoMatrix {
    v: DMatrix<f64>,
    n_steps: usize,
    dt: f64,
    pub offsets: OffsetSpec,
    pub segment_sources: Vec<SegmentSource>,
}

impl DemoMatrix {
    pub fn new(
        v: DMatrix<f64>,
        n_steps: usize,
        dt: f64,
        offsets: OffsetSpec,
        segment_sources: Vec<SegmentSource>,
    ) -> Result<Self> {
        if v.nrows() != FEATURES * n_steps {
            return Err(Error::DimensionMismatch {
                expected: FEATURES * n_steps,
                actual: v.nrows(),
                context: "demo matrix rows must equal 21 * n_steps",
            });
        }
        if segment_sources.len() != v.ncols() {
            return Err(Error::DimensionMismatch {
                expected: v.ncols(),
                actual: segment_sources.len(),
                context: "one segment source per column",
            });
        }
        check_non_negative(&v)?;
        Ok(DemoMatrix {
            v,
            n_steps,
            dt,
            offsets,
            segment_sources,
        })
    }

    /// Concatenates the columns of several matrices with matching layout.
    pub fn hstack(parts: &[DemoMatrix]) -> Result<DemoMatrix> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidInput("no demonstration segments".into()))?;
        if parts
            .iter()
            .any(|p| p.n_steps != first.n_steps || p.offsets != first.offsets || (p.dt - first.dt).abs() > 1e-3 * first.dt)
        {
            return Err(Error::InvalidInput("cannot stack demo matrices with different layouts".into()));
        }
        let cols: usize = parts.iter().map(|p| p.v.ncols()).sum();
        let mut v = DMatrix::zeros(first.v.nrows(), cols);
        let mut at = 0;
        for p in parts {
            v.columns_mut(at, p.v.ncols()).copy_from(&p.v);
            at += p.v.ncols();
        }
        Ok(DemoMatrix {
            v,
            n_steps: first.n_steps,
            dt: first.dt,
            offsets: first.offsets,
            segment_sources: parts.iter().flat_map(|p| p.segment_sources.clone()).collect(),
        })
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_columns(&self) -> usize {
        self.v.ncols()
    }

    /// Column `j` as an offset trajectory.
    pub fn column_trajectory(&self, j: usize) -> Trajectory {
        Trajectory::unflatten(&self.v.column(j).into_owned(), self.dt, Representation::Offset)
            .expect("rows are a multiple of 21")
    }
}

/// Splits a palm-frame, filtered recording into non-overlapping windows of
/// `n_steps` samples. The trailing remainder is dropped.
pub fn segment(r: &Recording, s: &OffsetSpec, n_steps: usize) -> Result<DemoMatrix> {
    if n_steps < 2 {
        return Err(Error::InvalidInput("segments need at least 2 steps".into()));
    }
    if r.missing.is_some() {
        return Err(Error::InvalidInput("fill gaps before segmenting".into()));
    }
    if let Some(i) = (0..r.len()).find(|&i| r.samples[i][PALM_CHANNEL..].iter().any(|v| v.abs() > 1e-9)) {
        return Err(Error::InvalidInput(format!(
            "recording `{}` is not in the palm frame (sample {i})",
            r.name
        )));
    }
    let m = r.len() / n_steps;
    let mut v = DMatrix::zeros(FEATURES * n_steps, m);
    let mut sources = Vec::with_capacity(m);
    let dt = r.dt();
    for j in 0..m {
        let start = j * n_steps;
        let frames = (start..start + n_steps).map(|i| r.frame(i)).collect();
        let window = Trajectory::new(frames, dt, Representation::Physical)?;
        let column: DVector<f64> = apply_offset(&window, s)
            .map_err(|e| match e {
                Error::OffsetInsufficient { frame, feature, value } => Error::OffsetInsufficient {
                    frame: start + frame,
                    feature,
                    value,
                },
                e => e,
            })?
            .flatten();
        v.set_column(j, &column);
        sources.push(SegmentSource {
            recording: r.name.clone(),
            start_sample: start,
        });
    }
    DemoMatrix::new(v, n_steps, dt, *s, sources)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub cutoff_hz: f64,
    pub max_gap_s: f64,
    pub position_offset: f64,
    pub orientation_offset: f64,
    pub n_steps: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        let offsets = OffsetSpec::default();
        PreprocessConfig {
            cutoff_hz: 20.0,
            max_gap_s: 0.2,
            position_offset: offsets.position_offset,
            orientation_offset: offsets.orientation_offset,
            n_steps: DEFAULT_STEPS,
        }
    }
}

impl PreprocessConfig {
    pub fn offsets(&self) -> OffsetSpec {
        OffsetSpec {
            position_offset: self.position_offset,
            orientation_offset: self.orientation_offset,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff_hz > 0.0) {
            return Err(Error::Config(format!("cutoff_hz must be positive, got {}", self.cutoff_hz)));
        }
        if !(self.max_gap_s >= 0.0) {
            return Err(Error::Config("max_gap_s must be non-negative".into()));
        }
        if !(self.position_offset > 0.0 && self.orientation_offset > 0.0) {
            return Err(Error::Config("offsets must be positive".into()));
        }
        if self.n_steps < 2 {
            return Err(Error::Config("n_steps must be at least 2".into()));
        }
        Ok(())
    }
}

/// Palm-frame, filtered recording ready for segmentation.
pub fn clean(r: &Recording, cfg: &PreprocessConfig) -> Result<Vec<Recording>> {
    split_long_gaps(r, cfg.max_gap_s)
        .iter()
        .map(|piece| {
            let filled = fill_gaps(piece, cfg.max_gap_s)?;
            lowpass(&to_palm_frame(&filled)?, cfg.cutoff_hz)
        })
        .collect()
}

/// Full chain from raw recordings to the demonstration matrix.
pub fn preprocess(recordings: &[Recording], cfg: &PreprocessConfig) -> Result<DemoMatrix> {
    cfg.validate()?;
    let mut parts = Vec::new();
    for r in recordings {
        for piece in clean(r, cfg)? {
            let part = segment(&piece, &cfg.offsets(), cfg.n_steps)?;
            if part.n_columns() > 0 {
                parts.push(part);
            }
        }
    }
    DemoMatrix::hstack(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI, TAU};

    fn recording_with(n: usize, f: impl Fn(usize, f64) -> Sample) -> Recording {
        let times: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
        let samples = times.iter().enumerate().map(|(i, t)| f(i, *t)).collect();
        Recording::new("test", times, samples).unwrap()
    }

    #[test]
    fn rejects_non_uniform_timestamps() {
        let times = vec![0.0, 0.01, 0.025, 0.03];
        assert!(Recording::new("r", times, vec![[0.0; RECORDING_CHANNELS]; 4]).is_err());
        let times = vec![0.0, 0.01, 0.01, 0.03];
        assert!(Recording::new("r", times, vec![[0.0; RECORDING_CHANNELS]; 4]).is_err());
    }

    #[test]
    fn fill_without_gaps_is_identity() {
        let r = recording_with(50, |i, t| {
            let mut s = [0.1; RECORDING_CHANNELS];
            s[3] = t.sin() + i as f64;
            s
        });
        assert_eq!(fill_gaps(&r, 0.2).unwrap(), r);
    }

    #[test]
    fn single_missing_sample_on_ramp_is_restored() {
        let r = recording_with(40, |i, t| {
            let mut s = [0.0; RECORDING_CHANNELS];
            s[2] = if i == 17 { f64::NAN } else { 2.0 * t - 0.3 };
            s
        });
        assert!(r.missing_mask().is_some());
        let filled = fill_gaps(&r, 0.2).unwrap();
        assert!(filled.missing_mask().is_none());
        assert_relative_eq!(filled.samples()[17][2], 2.0 * 0.17 - 0.3, epsilon = 1e-12);
    }

    #[test]
    fn thirty_sample_gap_on_sine_is_accurate() {
        let amplitude = 0.04;
        let freq = 0.25;
        let truth = |t: f64| amplitude * (TAU * freq * t).sin();
        let r = recording_with(400, |i, t| {
            let mut s = [0.0; RECORDING_CHANNELS];
            s[7] = if (180..210).contains(&i) { f64::NAN } else { truth(t) };
            s
        });
        assert!(matches!(fill_gaps(&r, 0.2), Err(Error::GapTooLong { channel: 7, start: 180, len: 30, max: 20 })));
        let filled = fill_gaps(&r, 0.3).unwrap();
        let worst = (180..210)
            .map(|i| (filled.samples()[i][7] - truth(r.times()[i])).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-3 * amplitude, "max error {worst}");
    }

    #[test]
    fn edge_gaps_hold_nearest_value() {
        let r = recording_with(20, |i, _| {
            let mut s = [0.0; RECORDING_CHANNELS];
            s[0] = if i < 3 { f64::NAN } else { i as f64 };
            s
        });
        let filled = fill_gaps(&r, 0.2).unwrap();
        assert_eq!(filled.samples()[0][0], 3.0);
    }

    #[test]
    fn long_gaps_split_the_recording() {
        let r = recording_with(100, |i, _| {
            let mut s = [0.0; RECORDING_CHANNELS];
            if (40..70).contains(&i) {
                s[5] = f64::NAN;
            }
            if i == 80 {
                s[6] = f64::NAN;
            }
            s
        });
        let pieces = split_long_gaps(&r, 0.2);
        assert_eq!(pieces.len(), 2);
        assert_eq!(pieces[0].len(), 40);
        assert_eq!(pieces[1].len(), 30);
        assert!(pieces[0].missing_mask().is_none());
        assert!(pieces[1].missing_mask().is_some());
        assert_relative_eq!(pieces[1].times()[0], 0.7, epsilon = 1e-12);
    }

    fn with_palm(mut s: Sample, p: [f64; 3], rpy: [f64; 3]) -> Sample {
        s[PALM_CHANNEL..PALM_CHANNEL + 3].copy_from_slice(&p);
        s[PALM_CHANNEL + 3..].copy_from_slice(&rpy);
        s
    }

    #[test]
    fn identity_palm_leaves_data_unchanged() {
        let r = recording_with(5, |i, _| {
            let mut s = [0.0; RECORDING_CHANNELS];
            for (f, v) in s.iter_mut().take(FEATURES).enumerate() {
                *v = 0.01 * (f + i) as f64;
            }
            s
        });
        let p = to_palm_frame(&r).unwrap();
        for (a, b) in p.samples().iter().zip(r.samples()) {
            for f in 0..FEATURES {
                assert_relative_eq!(a[f], b[f], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn translated_palm_shifts_object() {
        let r = recording_with(3, |_, _| {
            let mut s = [0.0; RECORDING_CHANNELS];
            s[17] = 0.3;
            with_palm(s, [0.0, 0.0, 0.1], [0.0; 3])
        });
        let p = to_palm_frame(&r).unwrap();
        assert_relative_eq!(p.samples()[1][17], 0.2, epsilon = 1e-15);
        assert!(p.samples()[1][PALM_CHANNEL..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn yawed_palm_rotates_points_into_palm_frame() {
        let r = recording_with(2, |_, _| {
            let mut s = [0.0; RECORDING_CHANNELS];
            s[3] = 0.025 + 0.5;
            s[4] = 0.2;
            s[20] = 0.3;
            with_palm(s, [0.5, 0.2, 0.0], [0.0, 0.0, FRAC_PI_2])
        });
        let p = to_palm_frame(&r).unwrap();
        // Independent check: R_z(pi/2)^T = [[0, 1, 0], [-1, 0, 0], [0, 0, 1]].
        let rel = [0.025, 0.0, 0.0];
        let expected = [rel[1], -rel[0], rel[2]];
        for a in 0..3 {
            assert_relative_eq!(p.samples()[0][3 + a], expected[a], epsilon = 1e-15);
        }
        assert_relative_eq!(p.samples()[0][20], 0.3 - FRAC_PI_2, epsilon = 1e-14);
    }

    #[test]
    fn non_finite_palm_is_degenerate() {
        let mut r = recording_with(3, |_, _| [0.0; RECORDING_CHANNELS]);
        r.samples[1][PALM_CHANNEL + 4] = f64::INFINITY;
        assert!(matches!(to_palm_frame(&r), Err(Error::DegeneratePalmPose { sample: 1 })));
    }

    fn fitted_amplitude(y: &[f64], t: &[f64], freq: f64) -> f64 {
        // Least-squares fit of a*sin + b*cos at a known frequency.
        let (mut ss, mut cc, mut sc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (yi, ti) in y.iter().zip(t) {
            let (s, c) = (TAU * freq * ti).sin_cos();
            ss += s * s;
            cc += c * c;
            sc += s * c;
            ys += yi * s;
            yc += yi * c;
        }
        let det = ss * cc - sc * sc;
        let a = (ys * cc - yc * sc) / det;
        let b = (yc * ss - ys * sc) / det;
        a.hypot(b)
    }

    fn sine_response(freq: f64) -> (f64, f64) {
        let r = recording_with(1000, |_, t| {
            let mut s = [0.0; RECORDING_CHANNELS];
            s[0] = (TAU * freq * t + 0.3).sin();
            s
        });
        let out = lowpass(&r, 20.0).unwrap();
        let y = out.channel(0);
        let measured = fitted_amplitude(&y[100..900], &r.times()[100..900], freq);
        let analytic = Biquad::butterworth_lowpass(20.0, 100.0).unwrap().magnitude(freq, 100.0).powi(2);
        (measured, analytic)
    }

    #[test]
    fn lowpass_attenuates_40hz_by_12db() {
        let (measured, analytic) = sine_response(40.0);
        assert!(20.0 * measured.log10() <= -12.0, "gain {measured}");
        assert!((measured - analytic).abs() < 1e-3);
    }

    #[test]
    fn lowpass_passes_1hz() {
        let (measured, analytic) = sine_response(1.0);
        assert!((measured - 1.0).abs() < 0.01, "gain {measured}");
        assert!((measured - analytic).abs() < 1e-3);
    }

    #[test]
    fn lowpass_keeps_constants_and_rejects_bad_cutoff() {
        let r = recording_with(64, |_, _| [0.42; RECORDING_CHANNELS]);
        let out = lowpass(&r, 20.0).unwrap();
        assert!(out.samples().iter().flatten().all(|v| (v - 0.42).abs() < 1e-14));
        assert!(matches!(lowpass(&r, 60.0), Err(Error::InvalidCutoff { .. })));
    }

    #[test]
    fn lowpass_is_nearly_idempotent_on_band_limited_signals() {
        let r = recording_with(800, |_, t| {
            let mut s = [0.0; RECORDING_CHANNELS];
            s[1] = (TAU * 0.7 * t).sin() + 0.3 * (TAU * 2.3 * t).cos();
            s
        });
        let once = lowpass(&r, 20.0).unwrap();
        let twice = lowpass(&once, 20.0).unwrap();
        let energy = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let (e1, e2) = (energy(&once.channel(1)), energy(&twice.channel(1)));
        assert!(((e2 - e1) / e1).abs() < 0.01);
    }

    fn static_recording(n: usize) -> Recording {
        recording_with(n, |i, _| {
            let mut s = [0.0; RECORDING_CHANNELS];
            for (f, v) in s.iter_mut().take(FEATURES).enumerate() {
                *v = 0.001 * (f as f64) - 0.01 + 1e-5 * i as f64;
            }
            s[18] = -PI / 4.0;
            s
        })
    }

    #[test]
    fn segment_windows_and_drops_remainder() {
        let r = static_recording(150);
        let d = segment(&r, &OffsetSpec::default(), 100).unwrap();
        assert_eq!(d.n_columns(), 1);
        assert_eq!(d.v().nrows(), 2100);
        let window = Trajectory::new((0..100).map(|i| r.frame(i)).collect(), 0.01, Representation::Physical).unwrap();
        let expected = apply_offset(&window, &OffsetSpec::default()).unwrap().flatten();
        assert_eq!(d.v().column(0).into_owned(), expected);
        assert_eq!(d.segment_sources[0], SegmentSource { recording: "test".into(), start_sample: 0 });
    }

    #[test]
    fn segment_count_is_floor_of_samples() {
        for n in [99, 100, 250, 1000] {
            let d = segment(&static_recording(n), &OffsetSpec::default(), 100).unwrap();
            assert_eq!(d.n_columns(), n / 100);
            assert!(d.v().iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn thirty_minutes_give_1800_columns() {
        let r = recording_with(180_000, |_, _| [0.0; RECORDING_CHANNELS]);
        assert_eq!(segment(&r, &OffsetSpec::default(), 100).unwrap().n_columns(), 1800);
    }

    #[test]
    fn segment_propagates_offset_errors_with_sample_index() {
        let mut r = static_recording(300);
        r.samples[250][2] = -1.0;
        match segment(&r, &OffsetSpec::default(), 100) {
            Err(Error::OffsetInsufficient { frame, feature, .. }) => assert_eq!((frame, feature), (250, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn segment_requires_palm_frame() {
        let mut r = static_recording(200);
        r.samples[10][PALM_CHANNEL] = 0.1;
        assert!(segment(&r, &OffsetSpec::default(), 100).is_err());
    }

    #[test]
    fn preprocess_chains_all_steps() {
        let r = recording_with(520, |i, t| {
            let mut s = [0.0; RECORDING_CHANNELS];
            for (f, v) in s.iter_mut().take(FEATURES).enumerate() {
                *v = 0.02 * ((f as f64) * 0.3 + t).sin();
            }
            if i == 260 {
                s[4] = f64::NAN;
            }
            with_palm(s, [0.0, 0.0, 0.05], [0.0; 3])
        });
        let d = preprocess(&[r.clone(), r], &PreprocessConfig::default()).unwrap();
        assert_eq!(d.n_columns(), 10);
        assert!(d.v().iter().all(|v| *v >= 0.0));
    }
}
