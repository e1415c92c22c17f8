//! Post-hoc checks of generated trajectories: fingertip reachability,
//! fingertip clearance, contact cardinality and finger gaiting.

mod object;

pub use object::{sample_surface, ObjectModel, Shape};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{inverse_transform_point, pose};
use crate::model::{Frame, Representation, Trajectory, FINGERS};
use crate::preprocess::DemoMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl AxisBox {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::from_fn(|a, _| 0.5 * (self.min[a] + self.max[a]))
    }
}

/// Reachable region of every fingertip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub fingers: [AxisBox; FINGERS],
}

pub const DEFAULT_WORKSPACE_MARGIN: f64 = 0.005;

impl Workspace {
    pub fn new(fingers: [AxisBox; FINGERS]) -> Result<Self> {
        let w = Workspace { fingers };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, b) in self.fingers.iter().enumerate() {
            if (0..3).any(|a| !(b.min[a] < b.max[a])) {
                return Err(Error::InvalidInput(format!("workspace box of finger {i} is empty")));
            }
        }
        Ok(())
    }

    /// Bounding boxes of the given physical frames, grown by `margin`.
    pub fn fit<'a>(frames: impl IntoIterator<Item = &'a Frame>, margin: f64) -> Result<Self> {
        let mut lo = [[f64::INFINITY; 3]; FINGERS];
        let mut hi = [[f64::NEG_INFINITY; 3]; FINGERS];
        for f in frames {
            for i in 0..FINGERS {
                let p = f.fingertip(i);
                for a in 0..3 {
                    lo[i][a] = lo[i][a].min(p[a]);
                    hi[i][a] = hi[i][a].max(p[a]);
                }
            }
        }
        if !lo[0][0].is_finite() {
            return Err(Error::InvalidInput("cannot fit a workspace to no frames".into()));
        }
        let fingers = std::array::from_fn(|i| AxisBox {
            min: std::array::from_fn(|a| lo[i][a] - margin),
            max: std::array::from_fn(|a| hi[i][a] + margin),
        });
        Workspace::new(fingers)
    }

    /// Fits the workspace to every frame of a demonstration matrix.
    pub fn fit_demos(v: &DemoMatrix, margin: f64) -> Result<Self> {
        let frames: Vec<Frame> = (0..v.n_columns())
            .flat_map(|j| {
                v.column_trajectory(j)
                    .frames()
                    .iter()
                    .map(|f| v.offsets.remove_frame(f))
                    .collect::<Vec<_>>()
            })
            .collect();
        Workspace::fit(frames.iter(), margin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Contact threshold, meters.
    pub tau: f64,
    /// Minimum fingertip clearance, meters.
    pub d_min: f64,
    pub min_contacts: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            tau: 0.01,
            d_min: 0.005,
            min_contacts: 2,
        }
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0) || !(self.d_min > 0.0) {
            return Err(Error::Config("tau must be non-negative and d_min positive".into()));
        }
        Ok(())
    }
}

fn require_physical(t: &Trajectory) -> Result<()> {
    if t.representation() != Representation::Physical {
        return Err(Error::InvalidInput("verification needs a physical trajectory".into()));
    }
    Ok(())
}

/// Per step and finger: is the fingertip inside its box (inclusive)?
pub fn check_reachability(t: &Trajectory, w: &Workspace) -> Vec<[bool; FINGERS]> {
    t.frames()
        .iter()
        .map(|f| std::array::from_fn(|i| w.fingers[i].contains(&f.fingertip(i))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionCheck {
    pub min_distance: Vec<f64>,
    pub closest_pair: Vec<(usize, usize)>,
    pub flagged: Vec<bool>,
}

/// Per step, the smallest distance between two fingertips, flagged when below `d_min`.
pub fn check_collisions(t: &Trajectory, d_min: f64) -> CollisionCheck {
    let mut out = CollisionCheck {
        min_distance: Vec::new(),
        closest_pair: Vec::new(),
        flagged: Vec::new(),
    };
    for f in t.frames() {
        let tips = f.fingertips();
        let mut best = (f64::INFINITY, (0, 1));
        for i in 0..FINGERS {
            for j in i + 1..FINGERS {
                let d = (tips[i] - tips[j]).norm();
                if d < best.0 {
                    best = (d, (i, j));
                }
            }
        }
        out.min_distance.push(best.0);
        out.closest_pair.push(best.1);
        out.flagged.push(best.0 < d_min);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactCheck {
    /// Per step, distance of every fingertip to the nearest surface point.
    pub distances: Vec<[f64; FINGERS]>,
    pub sets: Vec<Vec<usize>>,
}

impl ContactCheck {
    pub fn counts(&self) -> Vec<usize> {
        self.sets.iter().map(|s| s.len()).collect()
    }
}

/// Nearest-surface distances of the fingertips of one frame, by brute force
/// over the object's cloud.
pub fn fingertip_distances(f: &Frame, cloud: &[Vector3<f64>]) -> [f64; FINGERS] {
    let iso = pose(&f.object_position(), &f.object_orientation());
    std::array::from_fn(|i| {
        let p = inverse_transform_point(&iso, &f.fingertip(i));
        cloud
            .iter()
            .map(|c| (c - p).norm_squared())
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    })
}

/// Fingers within `tau` of the object surface at every step.
pub fn check_contacts(t: &Trajectory, m: &ObjectModel, tau: f64) -> ContactCheck {
    let cloud = m.local_cloud();
    let distances: Vec<[f64; FINGERS]> = t.frames().iter().map(|f| fingertip_distances(f, &cloud)).collect();
    let sets = distances
        .iter()
        .map(|d| (0..FINGERS).filter(|&i| d[i] <= tau).collect())
        .collect();
    ContactCheck { distances, sets }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub step: usize,
    pub old: usize,
    pub new: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gaiting {
    pub detected: bool,
    pub transitions: Vec<Transition>,
}

/// Changes of the contact count; `step` is the first step with the new count.
pub fn gaiting_from_counts(counts: &[usize]) -> Gaiting {
    let transitions: Vec<Transition> = counts
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] != w[1])
        .map(|(k, w)| Transition {
            step: k + 1,
            old: w[0],
            new: w[1],
        })
        .collect();
    Gaiting {
        detected: !transitions.is_empty(),
        transitions,
    }
}

pub fn detect_gaiting(report: &ConstraintReport) -> Gaiting {
    gaiting_from_counts(&report.contact_count)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Unreachable { step: usize, finger: usize },
    Collision { step: usize, fingers: (usize, usize), distance: f64 },
    TooFewContacts { step: usize, count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub object: String,
    pub config: VerifyConfig,
    pub reachability_ok: Vec<[bool; FINGERS]>,
    pub min_pairwise_distance: Vec<f64>,
    pub contact_distance: Vec<[f64; FINGERS]>,
    pub contact_count: Vec<usize>,
    pub contact_set: Vec<Vec<usize>>,
    pub violations: Vec<Violation>,
    pub gaiting_detected: bool,
    pub transitions: Vec<Transition>,
}

impl ConstraintReport {
    pub fn n_steps(&self) -> usize {
        self.contact_count.len()
    }

    pub fn has_violations(&self) -> bool {
        !self.violations.is_empty()
    }

    /// Steps at which every fingertip is inside its box.
    pub fn reachable_steps(&self) -> usize {
        self.reachability_ok.iter().filter(|r| r.iter().all(|ok| *ok)).count()
    }

    pub fn contact_steps(&self) -> usize {
        self.contact_count.iter().filter(|c| **c >= self.config.min_contacts).count()
    }

    pub fn collision_steps(&self) -> usize {
        self.min_pairwise_distance.iter().filter(|d| **d < self.config.d_min).count()
    }
}

/// Runs all checks on a physical trajectory.
pub fn verify(t: &Trajectory, w: &Workspace, m: &ObjectModel, cfg: &VerifyConfig) -> Result<ConstraintReport> {
    require_physical(t)?;
    cfg.validate()?;
    m.validate()?;
    let reach = check_reachability(t, w);
    let coll = check_collisions(t, cfg.d_min);
    let contacts = check_contacts(t, m, cfg.tau);

    let mut violations = Vec::new();
    for k in 0..t.n_steps() {
        for (finger, ok) in reach[k].iter().enumerate() {
            if !ok {
                violations.push(Violation::Unreachable { step: k, finger });
            }
        }
        if coll.flagged[k] {
            violations.push(Violation::Collision {
                step: k,
                fingers: coll.closest_pair[k],
                distance: coll.min_distance[k],
            });
        }
        let count = contacts.sets[k].len();
        if count < cfg.min_contacts {
            violations.push(Violation::TooFewContacts { step: k, count });
        }
    }
    let contact_count = contacts.counts();
    let gait = gaiting_from_counts(&contact_count);
    Ok(ConstraintReport {
        object: m.name().into(),
        config: *cfg,
        reachability_ok: reach,
        min_pairwise_distance: coll.min_distance,
        contact_distance: contacts.distances,
        contact_count,
        contact_set: contacts.sets,
        violations,
        gaiting_detected: gait.detected,
        transitions: gait.transitions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(frames: Vec<Frame>) -> Trajectory {
        Trajectory::new(frames, 0.01, Representation::Physical).unwrap()
    }

    fn spread_frame() -> Frame {
        let mut f = Frame::default();
        for i in 0..FINGERS {
            f.set_fingertip(i, Vector3::new(0.03 * i as f64, 0.0, 0.0));
        }
        f
    }

    fn unit_workspace() -> Workspace {
        let b = AxisBox {
            min: [-0.1; 3],
            max: [0.2; 3],
        };
        Workspace::new([b; FINGERS]).unwrap()
    }

    #[test]
    fn reachability_boundary() {
        let w = unit_workspace();
        let mut f = Frame::default();
        for i in 0..FINGERS {
            f.set_fingertip(i, w.fingers[i].center());
        }
        let mut out = f;
        out.set_fingertip(2, Vector3::new(0.201, 0.05, 0.05));
        let r = check_reachability(&traj(vec![f, out]), &w);
        assert!(r[0].iter().all(|b| *b));
        assert_eq!(r[1], [true, true, false, true, true]);
    }

    #[test]
    fn fitted_workspace_contains_training_samples() {
        let frames: Vec<Frame> = (0..50)
            .map(|k| {
                let mut f = spread_frame();
                f.set_fingertip(1, Vector3::new(0.01 * (k as f64).sin(), 0.002 * k as f64, -0.01));
                f
            })
            .collect();
        let w = Workspace::fit(frames.iter(), DEFAULT_WORKSPACE_MARGIN).unwrap();
        let r = check_reachability(&traj(frames), &w);
        assert!(r.iter().flatten().all(|b| *b));
    }

    #[test]
    fn collisions() {
        let mut coincident = spread_frame();
        coincident.set_fingertip(3, coincident.fingertip(4));
        let c = check_collisions(&traj(vec![spread_frame(), coincident, spread_frame()]), 0.005);
        assert_eq!(c.flagged, vec![false, true, false]);
        assert_eq!(c.min_distance[1], 0.0);
        assert_eq!(c.closest_pair[1], (3, 4));
        assert!((c.min_distance[0] - 0.03).abs() < 1e-12);
    }

    /// Cube at a non-trivial pose, three fingertips on the surface and two
    /// lifted 5 cm along the face normals.
    fn grasp_fixture() -> Frame {
        let mut f = Frame::default();
        let pos = Vector3::new(0.01, -0.02, 0.07);
        let rpy = Vector3::new(0.2, -0.1, 0.6);
        f.set_object_position(pos);
        f.set_object_orientation(rpy);
        let iso = pose(&pos, &rpy);
        let local = [
            Vector3::new(-0.025, 0.004, 0.0),
            Vector3::new(0.025, -0.01, 0.006),
            Vector3::new(0.025, 0.012, 0.006),
            Vector3::new(0.003, 0.025 + 0.05, -0.004),
            Vector3::new(-0.004, -0.025 - 0.05, -0.004),
        ];
        for (i, p) in local.iter().enumerate() {
            f.set_fingertip(i, crate::geometry::transform_point(&iso, p));
        }
        f
    }

    #[test]
    fn contacts_match_brute_force_over_world_cloud() {
        let f = grasp_fixture();
        let m = ObjectModel::cube();
        let c = check_contacts(&traj(vec![f, f]), &m, 0.01);
        assert_eq!(c.sets[0], vec![0, 1, 2]);
        let world = sample_surface(&m, &f.object_position(), &f.object_orientation());
        for i in 0..FINGERS {
            let d = world.iter().map(|p| (p - f.fingertip(i)).norm()).fold(f64::INFINITY, f64::min);
            assert!((d - c.distances[0][i]).abs() < 1e-12);
        }
        assert!((c.distances[0][3] - 0.05).abs() < 1e-4);
    }

    #[test]
    fn far_fingertips_and_threshold_extremes() {
        let mut f = grasp_fixture();
        let m = ObjectModel::cube();
        let t = traj(vec![f, f]);
        assert!(check_contacts(&t, &m, f64::INFINITY).counts().iter().all(|c| *c == 5));
        f.set_fingertip(0, f.object_position() + Vector3::new(0.0, 0.0, 0.125));
        let generic = traj(vec![f, f]);
        assert!(!check_contacts(&generic, &m, 0.01).sets[0].contains(&0));
        let mut off = f;
        for i in 0..FINGERS {
            off.set_fingertip(i, f.fingertip(i) + Vector3::new(0.0, 0.0, 0.2));
        }
        assert!(check_contacts(&traj(vec![off, off]), &m, 0.0).counts().iter().all(|c| *c == 0));
    }

    #[test]
    fn gaiting_definition() {
        assert!(!gaiting_from_counts(&[5, 5, 5]).detected);
        let g = gaiting_from_counts(&[3, 3, 2, 3]);
        assert!(g.detected);
        assert_eq!(
            g.transitions,
            vec![Transition { step: 2, old: 3, new: 2 }, Transition { step: 3, old: 2, new: 3 }]
        );
    }

    #[test]
    fn report_is_consistent() {
        let f = grasp_fixture();
        let mut lifted = f;
        lifted.set_fingertip(2, f.fingertip(2) + Vector3::new(0.0, 0.0, 0.1));
        let t = traj(vec![f, lifted, f]);
        let w = Workspace::fit(t.frames(), 0.005).unwrap();
        let r = verify(&t, &w, &ObjectModel::cube(), &VerifyConfig::default()).unwrap();
        assert_eq!(r.contact_count, vec![3, 2, 3]);
        for (s, c) in r.contact_set.iter().zip(&r.contact_count) {
            assert_eq!(s.len(), *c);
        }
        assert!(r.gaiting_detected);
        assert_eq!(r.transitions.len(), 2);
        assert!(!r.has_violations());
        assert_eq!(detect_gaiting(&r).transitions, r.transitions);
    }
}
