//! Synthetic demonstrations: an object moved through scripted rotations and
//! translations with the fingertips riding fixed surface points, plus
//! scripted finger gaiting (lift, move to a nearby point, replace).

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pose, transform_point};
use crate::model::{Frame, FINGERS};
use crate::preprocess::{Recording, Sample, RECORDING_CHANNELS};
use crate::verify::{ObjectModel, Shape};

/// Object position at rest, palm frame.
pub const HOME_POSITION: [f64; 3] = [0.0, 0.0, 0.07];
pub const MAX_ROTATION_DEG: f64 = 25.0;
pub const MAX_TRANSLATION: f64 = 0.12;
/// Smallest distance between two assigned contact points.
pub const MIN_CONTACT_SPACING: f64 = 0.015;
/// Contact points stay this far from face borders.
const BORDER: f64 = 0.004;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    /// Changes the roll (x) or pitch (y) angle of the object.
    Rotate { axis: Axis, degrees: f64, duration: f64 },
    /// Moves the object along the palm y axis.
    Translate { meters: f64, duration: f64 },
    Pause { duration: f64 },
}

impl Action {
    pub fn duration(&self) -> f64 {
        match *self {
            Action::Rotate { duration, .. } | Action::Translate { duration, .. } | Action::Pause { duration } => duration,
        }
    }
}

/// One finger lifts off, moves by `slide` along the surface and is put back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitEvent {
    pub time: f64,
    pub finger: usize,
    pub lift_height: f64,
    pub duration: f64,
    /// In-surface displacement of the contact point, meters: along the two
    /// face axes on a cube, along the circumference and the axis on a cylinder.
    #[serde(default)]
    pub slide: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulationScript {
    pub name: String,
    pub object: ObjectModel,
    pub actions: Vec<Action>,
    #[serde(default)]
    pub gait_events: Vec<GaitEvent>,
    pub seed: u64,
    /// Fingertip measurement noise, meters.
    pub noise_sigma: f64,
    /// Uniform jitter of the initial contact points, meters.
    pub contact_jitter: f64,
    pub dt: f64,
}

impl ManipulationScript {
    pub fn new(object: ObjectModel, actions: Vec<Action>, seed: u64) -> Self {
        ManipulationScript {
            name: "trial".into(),
            object,
            actions,
            gait_events: Vec::new(),
            seed,
            noise_sigma: 0.0005,
            contact_jitter: 0.002,
            dt: 0.01,
        }
    }

    pub fn duration(&self) -> f64 {
        let motion: f64 = self.actions.iter().map(|a| a.duration()).sum();
        let gait = self.gait_events.iter().map(|e| e.time + e.duration).fold(0.0, f64::max);
        motion.max(gait)
    }

    pub fn n_samples(&self) -> usize {
        ((self.duration() / self.dt).round() as usize + 1).max(2)
    }

    /// Object pose after every action: position and roll/pitch/yaw.
    pub fn final_pose(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut p = Vector3::from(HOME_POSITION);
        let mut r = Vector3::zeros();
        for a in &self.actions {
            apply(a, 1.0, &mut p, &mut r);
        }
        (p, r)
    }
}

fn apply(a: &Action, s: f64, p: &mut Vector3<f64>, r: &mut Vector3<f64>) {
    match *a {
        Action::Rotate { axis, degrees, .. } => {
            let k = if axis == Axis::X { 0 } else { 1 };
            r[k] += s * degrees.to_radians();
        }
        Action::Translate { meters, .. } => p.y += s * meters,
        Action::Pause { .. } => {}
    }
}

/// Minimum-jerk progress for `u` in `[0, 1]`.
pub fn min_jerk(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
}

/// A point on the object surface in surface coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SurfacePoint {
    /// Face with outward normal `sign * e_axis`; `u`, `v` run along the axes
    /// `(axis + 1) % 3` and `(axis + 2) % 3`.
    CubeFace { axis: usize, sign: f64, u: f64, v: f64 },
    CylinderSide { angle: f64, z: f64 },
}

impl SurfacePoint {
    /// Point and outward unit normal in the object frame.
    pub fn local(&self, m: &ObjectModel) -> (Vector3<f64>, Vector3<f64>) {
        match (*self, m.shape) {
            (SurfacePoint::CubeFace { axis, sign, u, v }, Shape::Cube { edge }) => {
                let mut p = Vector3::zeros();
                p[axis] = sign * 0.5 * edge;
                p[(axis + 1) % 3] = u;
                p[(axis + 2) % 3] = v;
                let mut n = Vector3::zeros();
                n[axis] = sign;
                (p, n)
            }
            (SurfacePoint::CylinderSide { angle, z }, Shape::Cylinder { diameter, .. }) => {
                let n = Vector3::new(angle.cos(), angle.sin(), 0.0);
                (n * 0.5 * diameter + Vector3::new(0.0, 0.0, z), n)
            }
            _ => panic!("surface point does not belong to a {}", m.name()),
        }
    }

    /// Moves the point within its face, staying clear of the borders.
    pub fn slid(&self, m: &ObjectModel, slide: [f64; 2]) -> SurfacePoint {
        match (*self, m.shape) {
            (SurfacePoint::CubeFace { axis, sign, u, v }, Shape::Cube { edge }) => {
                let lim = 0.5 * edge - BORDER;
                SurfacePoint::CubeFace {
                    axis,
                    sign,
                    u: (u + slide[0]).clamp(-lim, lim),
                    v: (v + slide[1]).clamp(-lim, lim),
                }
            }
            (SurfacePoint::CylinderSide { angle, z }, Shape::Cylinder { diameter, height }) => {
                let lim = 0.5 * height - BORDER;
                SurfacePoint::CylinderSide {
                    angle: angle + slide[0] / (0.5 * diameter),
                    z: (z + slide[1]).clamp(-lim, lim),
                }
            }
            _ => panic!("surface point does not belong to a {}", m.name()),
        }
    }

    fn lerp(&self, other: &SurfacePoint, s: f64) -> SurfacePoint {
        match (*self, *other) {
            (SurfacePoint::CubeFace { axis, sign, u, v }, SurfacePoint::CubeFace { u: u2, v: v2, .. }) => {
                SurfacePoint::CubeFace {
                    axis,
                    sign,
                    u: u + s * (u2 - u),
                    v: v + s * (v2 - v),
                }
            }
            (SurfacePoint::CylinderSide { angle, z }, SurfacePoint::CylinderSide { angle: a2, z: z2 }) => {
                SurfacePoint::CylinderSide {
                    angle: angle + s * (a2 - angle),
                    z: z + s * (z2 - z),
                }
            }
            _ => *self,
        }
    }
}

/// Default contact points: thumb opposing index and middle on a cube, five
/// points around the circumference on a cylinder.
pub fn canonical_contacts(m: &ObjectModel) -> [SurfacePoint; FINGERS] {
    match m.shape {
        Shape::Cube { .. } => {
            let face = |axis, sign, u, v| SurfacePoint::CubeFace { axis, sign, u, v };
            [
                face(0, -1.0, 0.0, 0.005),
                face(0, 1.0, -0.015, 0.008),
                face(0, 1.0, 0.01, 0.008),
                face(1, 1.0, -0.005, 0.005),
                face(1, -1.0, -0.005, -0.005),
            ]
        }
        Shape::Cylinder { .. } => {
            let side = |deg: f64, z| SurfacePoint::CylinderSide {
                angle: deg.to_radians(),
                z,
            };
            [
                side(180.0, 0.005),
                side(50.0, 0.008),
                side(0.0, 0.008),
                side(-50.0, -0.005),
                side(-110.0, -0.005),
            ]
        }
    }
}

/// Frame with the fingertips on `contacts` of the object at the given pose.
pub fn grasp_frame(m: &ObjectModel, contacts: &[SurfacePoint; FINGERS], position: &Vector3<f64>, rpy: &Vector3<f64>) -> Frame {
    let iso = pose(position, rpy);
    let mut f = Frame::default();
    for (i, c) in contacts.iter().enumerate() {
        f.set_fingertip(i, transform_point(&iso, &c.local(m).0));
    }
    f.set_object_position(*position);
    f.set_object_orientation(*rpy);
    f
}

fn spacing_ok(m: &ObjectModel, points: &[SurfacePoint; FINGERS]) -> bool {
    let p: Vec<Vector3<f64>> = points.iter().map(|c| c.local(m).0).collect();
    (0..FINGERS).all(|i| (i + 1..FINGERS).all(|j| (p[i] - p[j]).norm() >= MIN_CONTACT_SPACING))
}

/// A resolved gait event with its contact points before and after.
#[derive(Debug, Clone, Copy)]
struct Lift {
    event: GaitEvent,
    from: SurfacePoint,
    to: SurfacePoint,
}

impl Lift {
    fn window(&self, t: f64) -> Option<f64> {
        let u = (t - self.event.time) / self.event.duration;
        (0.0..=1.0).contains(&u).then_some(u)
    }

    /// Height above the surface and the surface point below the fingertip:
    /// rise, move in the air, descend, each a third of the event.
    fn at(&self, u: f64) -> (f64, SurfacePoint) {
        let h = self.event.lift_height;
        if u < 1.0 / 3.0 {
            (h * min_jerk(3.0 * u), self.from)
        } else if u < 2.0 / 3.0 {
            (h, self.from.lerp(&self.to, min_jerk(3.0 * u - 1.0)))
        } else {
            (h * (1.0 - min_jerk(3.0 * u - 2.0)), self.to)
        }
    }
}

/// Everything needed to render a script, validated.
struct Plan {
    initial: [SurfacePoint; FINGERS],
    lifts: Vec<Lift>,
    starts: Vec<(f64, Vector3<f64>, Vector3<f64>)>,
}

fn plan(s: &ManipulationScript, rng: &mut ChaCha8Rng) -> Result<Plan> {
    s.object.validate()?;
    if !(s.dt > 0.0) || !(s.noise_sigma >= 0.0) || !(s.contact_jitter >= 0.0) {
        return Err(Error::InvalidInput("dt must be positive, noise and jitter non-negative".into()));
    }
    let infeasible = |msg: String| Err(Error::ScriptInfeasible(msg));

    let mut p = Vector3::from(HOME_POSITION);
    let mut r = Vector3::zeros();
    let mut t = 0.0;
    let mut starts = Vec::with_capacity(s.actions.len());
    for (i, a) in s.actions.iter().enumerate() {
        if !(a.duration() > 0.0) {
            return infeasible(format!("action {i} has a non-positive duration"));
        }
        starts.push((t, p, r));
        apply(a, 1.0, &mut p, &mut r);
        t += a.duration();
        let max_rot = MAX_ROTATION_DEG.to_radians() + 1e-12;
        if r.x.abs() > max_rot || r.y.abs() > max_rot || (p.y - HOME_POSITION[1]).abs() > MAX_TRANSLATION + 1e-12 {
            return infeasible(format!("action {i} leaves the allowed rotation/translation range"));
        }
    }

    let mut contacts = canonical_contacts(&s.object);
    for c in contacts.iter_mut() {
        let j = s.contact_jitter;
        *c = c.slid(&s.object, [rng.random_range(-j..=j), rng.random_range(-j..=j)]);
    }
    if !spacing_ok(&s.object, &contacts) {
        return infeasible("jittered contact points are too close".into());
    }
    let initial = contacts;

    let mut events = s.gait_events.clone();
    events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.finger.cmp(&b.finger)));
    let mut lifts: Vec<Lift> = Vec::with_capacity(events.len());
    for e in events {
        if e.finger >= FINGERS || !(e.duration > 0.0) || !(e.lift_height > 0.0) || !(e.time >= 0.0) {
            return infeasible(format!("invalid gait event {e:?}"));
        }
        if lifts
            .iter()
            .any(|l| l.event.finger == e.finger && l.event.time + l.event.duration >= e.time)
        {
            return infeasible(format!("overlapping gait events for finger {}", e.finger));
        }
        let from = contacts[e.finger];
        let mut to = from;
        for slide in [e.slide, [-e.slide[0], -e.slide[1]]] {
            let mut trial = contacts;
            trial[e.finger] = from.slid(&s.object, slide);
            if spacing_ok(&s.object, &trial) {
                to = trial[e.finger];
                break;
            }
        }
        contacts[e.finger] = to;
        lifts.push(Lift { event: e, from, to });
    }

    let n = s.n_samples();
    for k in 0..n {
        let t = k as f64 * s.dt;
        let lifted = lifts.iter().filter(|l| l.window(t).is_some()).count();
        if FINGERS - lifted < 2 {
            return infeasible(format!("fewer than 2 grounded fingers at t = {t:.2} s"));
        }
    }
    Ok(Plan { initial, lifts, starts })
}

fn object_pose(s: &ManipulationScript, plan: &Plan, t: f64) -> (Vector3<f64>, Vector3<f64>) {
    if s.actions.is_empty() {
        return (Vector3::from(HOME_POSITION), Vector3::zeros());
    }
    let i = plan.starts.partition_point(|(t0, _, _)| *t0 <= t).saturating_sub(1);
    let (t0, mut p, mut r) = plan.starts[i];
    let a = &s.actions[i];
    apply(a, min_jerk((t - t0) / a.duration()), &mut p, &mut r);
    (p, r)
}

/// Height above the surface and surface point of one finger at time `t`.
fn finger_state(plan: &Plan, finger: usize, t: f64) -> (f64, SurfacePoint) {
    let mut point = plan.initial[finger];
    for l in plan.lifts.iter().filter(|l| l.event.finger == finger) {
        if let Some(u) = l.window(t) {
            return l.at(u);
        }
        if t > l.event.time + l.event.duration {
            point = l.to;
        }
    }
    (0.0, point)
}

/// Renders a script at its sampling rate with an identity palm pose.
pub fn synthesize(s: &ManipulationScript) -> Result<Recording> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let plan = plan(s, &mut rng)?;
    let noise = Normal::new(0.0, s.noise_sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let n = s.n_samples();
    let mut times = Vec::with_capacity(n);
    let mut samples: Vec<Sample> = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 * s.dt;
        let (p, r) = object_pose(s, &plan, t);
        let iso = pose(&p, &r);
        let mut sample = [0.0; RECORDING_CHANNELS];
        for i in 0..FINGERS {
            let (h, point) = finger_state(&plan, i, t);
            let (c, normal) = point.local(&s.object);
            let world = transform_point(&iso, &(c + normal * h));
            for a in 0..3 {
                sample[3 * i + a] = world[a] + if s.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            }
        }
        sample[15..18].copy_from_slice(p.as_slice());
        sample[18..21].copy_from_slice(r.as_slice());
        times.push(t);
        samples.push(sample);
    }
    Recording::new(s.name.clone(), times, samples)
}

/// Ground-truth number of fingers within `tau` of the surface at every sample.
pub fn expected_contacts(s: &ManipulationScript, tau: f64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let plan = plan(s, &mut rng)?;
    Ok((0..s.n_samples())
        .map(|k| {
            let t = k as f64 * s.dt;
            (0..FINGERS).filter(|&i| finger_state(&plan, i, t).0 <= tau).count()
        })
        .collect())
}

/// Ranges used by [`random_script`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScriptRanges {
    pub action_duration: (f64, f64),
    pub pause_duration: (f64, f64),
    pub pause_probability: f64,
    pub max_rotation_deg: f64,
    pub max_translation: f64,
    pub gait_interval: (f64, f64),
    pub gait_duration: (f64, f64),
    pub lift_height: (f64, f64),
    pub slide: (f64, f64),
}

impl Default for ScriptRanges {
    fn default() -> Self {
        ScriptRanges {
            action_duration: (1.8, 3.6),
            pause_duration: (0.1, 0.6),
            pause_probability: 0.5,
            max_rotation_deg: 20.0,
            max_translation: 0.1,
            gait_interval: (1.6, 5.0),
            gait_duration: (0.45, 0.9),
            lift_height: (0.008, 0.015),
            slide: (0.003, 0.008),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Random sequence of x/y rotations, y translations and pauses lasting
/// exactly `duration_s`, with one finger at a time gaiting.
pub fn random_script(object: ObjectModel, duration_s: f64, seed: u64, ranges: &ScriptRanges) -> ManipulationScript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5c41_97);
    let mut actions = Vec::new();
    let (mut roll, mut pitch, mut y) = (0.0f64, 0.0f64, 0.0f64);
    let mut t = 0.0;
    let max_rot = ranges.max_rotation_deg.min(MAX_ROTATION_DEG);
    let max_tr = ranges.max_translation.min(MAX_TRANSLATION);
    while t < duration_s - 1e-9 {
        let remaining = duration_s - t;
        if remaining < ranges.action_duration.0 {
            actions.push(Action::Pause { duration: remaining });
            t = duration_s;
            break;
        }
        let duration = uniform(&mut rng, ranges.action_duration).min(remaining);
        let kind = rng.random_range(0..3);
        let action = loop {
            match kind {
                0 | 1 => {
                    let current = if kind == 0 { &mut roll } else { &mut pitch };
                    let target = rng.random_range(-max_rot..=max_rot);
                    if (target - *current).abs() < 3.0 {
                        continue;
                    }
                    let degrees = target - *current;
                    *current = target;
                    let axis = if kind == 0 { Axis::X } else { Axis::Y };
                    break Action::Rotate { axis, degrees, duration };
                }
                _ => {
                    let target = rng.random_range(-max_tr..=max_tr);
                    if (target - y).abs() < 0.01 {
                        continue;
                    }
                    let meters = target - y;
                    y = target;
                    break Action::Translate { meters, duration };
                }
            }
        };
        actions.push(action);
        t += duration;
        if rng.random::<f64>() < ranges.pause_probability {
            let duration = uniform(&mut rng, ranges.pause_duration).min(duration_s - t);
            if duration <= 0.0 {
                break;
            }
            actions.push(Action::Pause { duration });
            t += duration;
        }
    }

    let mut gait_events = Vec::new();
    let mut tg = uniform(&mut rng, ranges.gait_interval);
    loop {
        let duration = uniform(&mut rng, ranges.gait_duration);
        if tg + duration > t {
            break;
        }
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let mag = uniform(&mut rng, ranges.slide);
        gait_events.push(GaitEvent {
            time: (tg * 100.0).round() / 100.0,
            finger: rng.random_range(0..FINGERS),
            lift_height: uniform(&mut rng, ranges.lift_height),
            duration,
            slide: [mag * angle.cos(), mag * angle.sin()],
        });
        tg += duration + uniform(&mut rng, ranges.gait_interval);
    }
    ManipulationScript {
        gait_events,
        ..ManipulationScript::new(object, actions, seed)
    }
}

/// Renders the scripts and splits the recordings `train : test` with a
/// seeded shuffle. A single recording goes to the training side.
pub fn make_dataset(
    scripts: &[ManipulationScript],
    train: usize,
    test: usize,
    seed: u64,
) -> Result<(Vec<Recording>, Vec<Recording>)> {
    if scripts.is_empty() {
        return Err(Error::InvalidInput("no scripts to render".into()));
    }
    let recordings = scripts.iter().map(synthesize).collect::<Result<Vec<_>>>()?;
    split_recordings(recordings, train, test, seed)
}

/// Seeded `train : test` split at the recording level. At least one
/// recording stays on the training side.
pub fn split_recordings(
    recordings: Vec<Recording>,
    train: usize,
    test: usize,
    seed: u64,
) -> Result<(Vec<Recording>, Vec<Recording>)> {
    if recordings.is_empty() || train == 0 {
        return Err(Error::InvalidInput("need recordings and a positive training share".into()));
    }
    let n = recordings.len();
    let n_test = (((n * test) as f64 / (train + test) as f64).round() as usize).min(n - 1);
    if n_test == 0 && test > 0 {
        log::warn!("{n} recording(s) leave nothing for the test split");
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test_idx = &order[..n_test];
    let mut tr = Vec::new();
    let mut te = Vec::new();
    for (i, r) in recordings.into_iter().enumerate() {
        if test_idx.contains(&i) {
            te.push(r);
        } else {
            tr.push(r);
        }
    }
    Ok((tr, te))
}
