//! Object shapes and their surface point clouds.

use std::f64::consts::TAU;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pose, transform_point};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    /// Centered at the object origin.
    Cube { edge: f64 },
    /// Axis along the object z axis, centered at the origin.
    Cylinder { diameter: f64, height: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectModel {
    pub shape: Shape,
    /// Largest spacing between neighbouring cloud points, meters.
    pub surface_resolution: f64,
}

impl ObjectModel {
    pub fn new(shape: Shape, surface_resolution: f64) -> Result<Self> {
        let m = ObjectModel {
            shape,
            surface_resolution,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn cube() -> Self {
        ObjectModel {
            shape: Shape::Cube { edge: 0.05 },
            surface_resolution: 0.002,
        }
    }

    pub fn cylinder() -> Self {
        ObjectModel {
            shape: Shape::Cylinder {
                diameter: 0.05,
                height: 0.05,
            },
            surface_resolution: 0.002,
        }
    }

    /// `cube` or `cylinder` with default dimensions.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "cube" => Ok(Self::cube()),
            "cylinder" => Ok(Self::cylinder()),
            other => Err(Error::InvalidInput(format!("unknown object `{other}` (expected cube or cylinder)"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.shape {
            Shape::Cube { .. } => "cube",
            Shape::Cylinder { .. } => "cylinder",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims_ok = match self.shape {
            Shape::Cube { edge } => edge > 0.0,
            Shape::Cylinder { diameter, height } => diameter > 0.0 && height > 0.0,
        };
        if !dims_ok || !(self.surface_resolution > 0.0) {
            return Err(Error::InvalidInput("object dimensions and resolution must be positive".into()));
        }
        Ok(())
    }

    /// Surface points in the object frame.
    pub fn local_cloud(&self) -> Vec<Vector3<f64>> {
        let res = self.surface_resolution;
        let ticks = |len: f64| -> Vec<f64> {
            let n = (len / res).ceil().max(1.0) as usize;
            (0..=n).map(|i| -0.5 * len + len * i as f64 / n as f64).collect()
        };
        let mut pts = Vec::new();
        match self.shape {
            Shape::Cube { edge } => {
                let a = 0.5 * edge;
                let t = ticks(edge);
                for axis in 0..3 {
                    for side in [-a, a] {
                        for &u in &t {
                            for &v in &t {
                                let mut p = Vector3::zeros();
                                p[axis] = side;
                                p[(axis + 1) % 3] = u;
                                p[(axis + 2) % 3] = v;
                                pts.push(p);
                            }
                        }
                    }
                }
            }
            Shape::Cylinder { diameter, height } => {
                let r = 0.5 * diameter;
                let n_theta = (TAU * r / res).ceil() as usize;
                for &z in &ticks(height) {
                    for i in 0..n_theta {
                        let th = TAU * i as f64 / n_theta as f64;
                        pts.push(Vector3::new(r * th.cos(), r * th.sin(), z));
                    }
                }
                let n_rings = (r / res).ceil() as usize;
                for z in [-0.5 * height, 0.5 * height] {
                    pts.push(Vector3::new(0.0, 0.0, z));
                    for k in 1..=n_rings {
                        let rk = r * k as f64 / n_rings as f64;
                        let n = (TAU * rk / res).ceil() as usize;
                        for i in 0..n {
                            let th = TAU * i as f64 / n as f64;
                            pts.push(Vector3::new(rk * th.cos(), rk * th.sin(), z));
                        }
                    }
                }
            }
        }
        pts
    }
}

/// Surface cloud of `m` placed at `position` with roll/pitch/yaw `rpy`.
pub fn sample_surface(m: &ObjectModel, position: &Vector3<f64>, rpy: &Vector3<f64>) -> Vec<Vector3<f64>> {
    let iso = pose(position, rpy);
    m.local_cloud().iter().map(|p| transform_point(&iso, p)).collect()
}
