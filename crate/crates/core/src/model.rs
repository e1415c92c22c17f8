//! Trajectory and dictionary data model.
//!
//! A [`Frame`] packs the five fingertip positions and the object pose into 21
//! scalars. A [`Trajectory`] flattens frame-major into a vector of length
//! `21 * N`; dictionary columns use the same layout, so rows
//! `[21 k, 21 (k + 1))` of the dictionary hold every primitive at step `k`.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DMatrixView, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar features per time step.
pub const FEATURES: usize = 21;
pub const FINGERS: usize = 5;
/// Leading features of a frame that hold fingertip coordinates.
pub const FINGERTIP_FEATURES: usize = 3 * FINGERS;
/// Steps per primitive: one second at 100 Hz.
pub const DEFAULT_STEPS: usize = 100;
pub const DEFAULT_DT: f64 = 0.01;

pub const FINGER_NAMES: [&str; FINGERS] = ["thumb", "index", "middle", "ring", "little"];

/// Column names of one frame, in storage order.
pub fn feature_names() -> [String; FEATURES] {
    const AXES: [&str; 3] = ["x", "y", "z"];
    const OBJECT: [&str; 6] = ["obj_x", "obj_y", "obj_z", "obj_roll", "obj_pitch", "obj_yaw"];
    std::array::from_fn(|f| {
        if f < FINGERTIP_FEATURES {
            format!("{}_{}", FINGER_NAMES[f / 3], AXES[f % 3])
        } else {
            OBJECT[f - FINGERTIP_FEATURES].to_string()
        }
    })
}

/// Whether a feature index holds an angle (the last three of a frame).
pub fn is_orientation_feature(f: usize) -> bool {
    f % FEATURES >= FEATURES - 3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub features: [f64; FEATURES],
}

impl Default for Frame {
    fn default() -> Self {
        Frame {
            features: [0.0; FEATURES],
        }
    }
}

impl Frame {
    pub fn new(features: [f64; FEATURES]) -> Self {
        Frame { features }
    }

    pub fn from_parts(
        fingertips: &[Vector3<f64>; FINGERS],
        object_position: Vector3<f64>,
        object_orientation: Vector3<f64>,
    ) -> Self {
        let mut frame = Frame::default();
        for (i, tip) in fingertips.iter().enumerate() {
            frame.set_fingertip(i, *tip);
        }
        frame.set_object_position(object_position);
        frame.set_object_orientation(object_orientation);
        frame
    }

    pub fn fingertip(&self, finger: usize) -> Vector3<f64> {
        let o = 3 * finger;
        Vector3::new(self.features[o], self.features[o + 1], self.features[o + 2])
    }

    pub fn fingertips(&self) -> [Vector3<f64>; FINGERS] {
        std::array::from_fn(|i| self.fingertip(i))
    }

    pub fn set_fingertip(&mut self, finger: usize, p: Vector3<f64>) {
        self.features[3 * finger..3 * finger + 3].copy_from_slice(p.as_slice());
    }

    pub fn object_position(&self) -> Vector3<f64> {
        Vector3::from_column_slice(&self.features[15..18])
    }

    pub fn set_object_position(&mut self, p: Vector3<f64>) {
        self.features[15..18].copy_from_slice(p.as_slice());
    }

    /// Roll, pitch, yaw in radians.
    pub fn object_orientation(&self) -> Vector3<f64> {
        Vector3::from_column_slice(&self.features[18..21])
    }

    pub fn set_object_orientation(&mut self, rpy: Vector3<f64>) {
        self.features[18..21].copy_from_slice(rpy.as_slice());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Physical,
    Offset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    frames: Vec<Frame>,
    dt: f64,
    representation: Representation,
}

impl Trajectory {
    pub fn new(frames: Vec<Frame>, dt: f64, representation: Representation) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "a trajectory needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
        }
        Ok(Trajectory {
            frames,
            dt,
            representation,
        })
    }

    /// Inverse of [`Trajectory::flatten`].
    pub fn unflatten(v: &DVector<f64>, dt: f64, representation: Representation) -> Result<Self> {
        if v.len() % FEATURES != 0 {
            return Err(Error::DimensionMismatch {
                expected: FEATURES * (v.len() / FEATURES + 1),
                actual: v.len(),
                context: "flattened trajectory length must be a multiple of 21",
            });
        }
        let frames = v
            .as_slice()
            .chunks_exact(FEATURES)
            .map(|c| Frame::new(c.try_into().expect("chunk of 21")))
            .collect();
        Trajectory::new(frames, dt, representation)
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn n_steps(&self) -> usize {
        self.frames.len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn representation(&self) -> Representation {
        self.representation
    }

    pub fn first(&self) -> &Frame {
        &self.frames[0]
    }

    pub fn last(&self) -> &Frame {
        self.frames.last().expect("non-empty")
    }

    pub fn flatten(&self) -> DVector<f64> {
        DVector::from_iterator(
            FEATURES * self.frames.len(),
            self.frames.iter().flat_map(|f| f.features),
        )
    }

    /// Largest per-axis fingertip speed over all forward differences, in units per second.
    pub fn max_fingertip_speed(&self) -> f64 {
        self.frames
            .windows(2)
            .flat_map(|w| (0..FINGERTIP_FEATURES).map(move |r| (w[1].features[r] - w[0].features[r]).abs()))
            .fold(0.0, f64::max)
            / self.dt
    }
}

/// Shift applied to make every feature non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetSpec {
    /// Meters.
    pub position_offset: f64,
    /// Radians.
    pub orientation_offset: f64,
}

impl Default for OffsetSpec {
    fn default() -> Self {
        OffsetSpec {
            position_offset: 0.8,
            orientation_offset: TAU,
        }
    }
}

impl OffsetSpec {
    pub fn for_feature(&self, f: usize) -> f64 {
        if is_orientation_feature(f) {
            self.orientation_offset
        } else {
            self.position_offset
        }
    }

    /// Offset of every entry of a flattened trajectory with `n_steps` frames.
    pub fn pattern(&self, n_steps: usize) -> DVector<f64> {
        DVector::from_fn(FEATURES * n_steps, |i, _| self.for_feature(i))
    }

    /// Offsets one frame, failing if any feature stays negative.
    pub fn apply_frame(&self, frame: &Frame, index: usize) -> Result<Frame> {
        let mut out = *frame;
        for (f, x) in out.features.iter_mut().enumerate() {
            *x += self.for_feature(f);
            if *x < 0.0 || x.is_nan() {
                return Err(Error::OffsetInsufficient {
                    frame: index,
                    feature: f,
                    value: *x,
                });
            }
        }
        Ok(out)
    }

    pub fn remove_frame(&self, frame: &Frame) -> Frame {
        let mut out = *frame;
        for (f, x) in out.features.iter_mut().enumerate() {
            *x -= self.for_feature(f);
        }
        out
    }
}

pub fn apply_offset(t: &Trajectory, s: &OffsetSpec) -> Result<Trajectory> {
    if t.representation != Representation::Physical {
        return Err(Error::InvalidInput("trajectory is already offset".into()));
    }
    let frames = t
        .frames
        .iter()
        .enumerate()
        .map(|(k, f)| s.apply_frame(f, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory {
        frames,
        dt: t.dt,
        representation: Representation::Offset,
    })
}

pub fn remove_offset(t: &Trajectory, s: &OffsetSpec) -> Result<Trajectory> {
    if t.representation != Representation::Offset {
        return Err(Error::InvalidInput("trajectory is not offset".into()));
    }
    Ok(Trajectory {
        frames: t.frames.iter().map(|f| s.remove_frame(f)).collect(),
        dt: t.dt,
        representation: Representation::Physical,
    })
}

/// Training metadata carried by a dictionary.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub object: String,
    pub seed: u64,
    pub iterations: usize,
    pub final_residual: f64,
}

/// Gaussian fit of the training activations. Generation uses it to choose
/// among activations that reach the endpoints equally well.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationPrior {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
}

impl ActivationPrior {
    /// Fits the columns of `h` (one activation vector per column). The
    /// covariance is ridged by `1e-6` of its mean variance before inversion.
    pub fn fit(h: &DMatrix<f64>) -> Result<Self> {
        let (l, m) = h.shape();
        if l == 0 || m < 2 {
            return Err(Error::InvalidInput("need at least two activation vectors".into()));
        }
        let mean = h.column_mean();
        let mut centered = h.clone();
        for mut c in centered.column_iter_mut() {
            c -= &mean;
        }
        let mut cov = &centered * centered.transpose() / m as f64;
        let ridge = 1e-6 * (cov.trace() / l as f64).max(f64::MIN_POSITIVE);
        for i in 0..l {
            cov[(i, i)] += ridge;
        }
        let precision = cov
            .cholesky()
            .ok_or_else(|| Error::Solver("activation covariance is not positive definite".into()))?
            .inverse();
        Ok(ActivationPrior { mean, precision })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Matrix of motion primitives, one per column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    w: DMatrix<f64>,
    n_steps: usize,
    dt: f64,
    pub offsets: OffsetSpec,
    pub provenance: Provenance,
    prior: Option<ActivationPrior>,
}

impl Dictionary {
    pub fn new(
        w: DMatrix<f64>,
        n_steps: usize,
        dt: f64,
        offsets: OffsetSpec,
        provenance: Provenance,
    ) -> Result<Self> {
        if n_steps < 2 || w.nrows() != FEATURES * n_steps {
            return Err(Error::DimensionMismatch {
                expected: FEATURES * n_steps,
                actual: w.nrows(),
                context: "dictionary rows must equal 21 * n_steps",
            });
        }
        if w.ncols() == 0 {
            return Err(Error::InvalidInput("dictionary has no primitives".into()));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
        }
        check_non_negative(&w)?;
        Ok(Dictionary {
            w,
            n_steps,
            dt,
            offsets,
            provenance,
            prior: None,
        })
    }

    pub fn with_prior(mut self, prior: ActivationPrior) -> Result<Self> {
        let l = self.n_primitives();
        if prior.mean.len() != l || prior.precision.shape() != (l, l) {
            return Err(Error::DimensionMismatch {
                expected: l,
                actual: prior.mean.len(),
                context: "activation prior size must equal the number of primitives",
            });
        }
        self.prior = Some(prior);
        Ok(self)
    }

    pub fn prior(&self) -> Option<&ActivationPrior> {
        self.prior.as_ref()
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_primitives(&self) -> usize {
        self.w.ncols()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// The `21 x l` block of all primitives at step `k` (zero-based).
    pub fn step_block(&self, k: usize) -> DMatrixView<'_, f64> {
        self.w.rows(FEATURES * k, FEATURES)
    }

    pub fn primitive(&self, j: usize) -> DVector<f64> {
        self.w.column(j).into_owned()
    }
}

pub(crate) fn check_non_negative(m: &DMatrix<f64>) -> Result<()> {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            let v = m[(r, c)];
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::NonNegativityViolated {
                    row: r,
                    col: c,
                    value: v,
                });
            }
        }
    }
    Ok(())
}

/// Non-negative primitive weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ActivationVector(DVector<f64>);

impl ActivationVector {
    pub fn new(h: DVector<f64>) -> Result<Self> {
        if let Some((i, v)) = h.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::NonNegativityViolated {
                row: i,
                col: 0,
                value: *v,
            });
        }
        Ok(ActivationVector(h))
    }

    pub fn zeros(len: usize) -> Self {
        ActivationVector(DVector::zeros(len))
    }

    pub fn one_hot(len: usize, j: usize) -> Self {
        let mut h = DVector::zeros(len);
        h[j] = 1.0;
        ActivationVector(h)
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for ActivationVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ActivationVector::new(DVector::from_vec(v))
    }
}

impl From<ActivationVector> for Vec<f64> {
    fn from(h: ActivationVector) -> Self {
        h.0.as_slice().to_vec()
    }
}

/// `W h`, checking that the activation length matches the column count.
pub fn weighted_sum(w: &DMatrix<f64>, h: &DVector<f64>) -> Result<DVector<f64>> {
    if w.ncols() != h.len() {
        return Err(Error::DimensionMismatch {
            expected: w.ncols(),
            actual: h.len(),
            context: "activation length vs. primitive count",
        });
    }
    Ok(w * h)
}

/// Trajectory encoded by `h`, in offset representation.
pub fn reconstruct(d: &Dictionary, h: &ActivationVector) -> Result<Trajectory> {
    let v = weighted_sum(&d.w, h.as_vector())?;
    Trajectory::unflatten(&v, d.dt, Representation::Offset)
}
