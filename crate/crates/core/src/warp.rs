//! Parametric point-trajectory warps, their coordinate Jacobians, and the
//! depth + ego-motion flow-field constructor.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::{EventSlice, SensorGeometry};

/// Warp family selector, used where only the kind matters (CLI, configs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarpKind {
    #[serde(rename = "translation2d")]
    Translation2D,
    #[serde(rename = "rotation3d")]
    Rotation3D,
    #[serde(rename = "denseflow")]
    DenseFlow,
}

impl WarpKind {
    /// Degrees of freedom of the optimizable parameter vector.
    pub fn dof(&self) -> usize {
        match self {
            WarpKind::Translation2D => 2,
            WarpKind::Rotation3D => 3,
            WarpKind::DenseFlow => 0,
        }
    }
}

/// Per-pixel velocity field (px/s), row-major over the sensor grid.
/// Fixed input, never optimized.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: u32,
    pub height: u32,
    /// (vx, vy) per pixel.
    pub v: Vec<[f64; 2]>,
}

impl FlowField {
    pub fn at(&self, ix: u32, iy: u32) -> [f64; 2] {
        self.v[iy as usize * self.width as usize + ix as usize]
    }
}

/// A warp family plus its parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub enum MotionModel {
    /// x' = x - (t - t_ref) * v, theta = (vx, vy) in px/s.
    Translation2D { v: [f64; 2] },
    /// Lift to a calibrated ray, rotate by the exact exponential of
    /// -(t - t_ref) * omega, reproject. theta = (wx, wy, wz) in rad/s.
    Rotation3D { omega: [f64; 3] },
    /// x' = x - (t - t_ref) * v(round(x)), nearest-pixel flow sampling.
    DenseFlow { flow: FlowField },
}

impl MotionModel {
    pub fn kind(&self) -> WarpKind {
        match self {
            MotionModel::Translation2D { .. } => WarpKind::Translation2D,
            MotionModel::Rotation3D { .. } => WarpKind::Rotation3D,
            MotionModel::DenseFlow { .. } => WarpKind::DenseFlow,
        }
    }

    /// Optimizable parameters; empty for DenseFlow.
    pub fn params(&self) -> Vec<f64> {
        match self {
            MotionModel::Translation2D { v } => v.to_vec(),
            MotionModel::Rotation3D { omega } => omega.to_vec(),
            MotionModel::DenseFlow { .. } => Vec::new(),
        }
    }

    /// Build a model of the given kind from a parameter vector.
    pub fn from_params(kind: WarpKind, theta: &[f64]) -> Result<MotionModel> {
        match kind {
            WarpKind::Translation2D => {
                if theta.len() != 2 {
                    return Err(Error::Model(format!(
                        "translation2d expects 2 parameters, got {}",
                        theta.len()
                    )));
                }
                Ok(MotionModel::Translation2D {
                    v: [theta[0], theta[1]],
                })
            }
            WarpKind::Rotation3D => {
                if theta.len() != 3 {
                    return Err(Error::Model(format!(
                        "rotation3d expects 3 parameters, got {}",
                        theta.len()
                    )));
                }
                Ok(MotionModel::Rotation3D {
                    omega: [theta[0], theta[1], theta[2]],
                })
            }
            WarpKind::DenseFlow => Err(Error::Model(
                "denseflow has no parameter-vector constructor".into(),
            )),
        }
    }

    pub fn zero(kind: WarpKind) -> Result<MotionModel> {
        Self::from_params(kind, &vec![0.0; kind.dof()])
    }

    fn validate(&self, geometry: &SensorGeometry) -> Result<()> {
        match self {
            MotionModel::Translation2D { v } => {
                if !v.iter().all(|c| c.is_finite()) {
                    return Err(Error::Model("non-finite translation velocity".into()));
                }
            }
            MotionModel::Rotation3D { omega } => {
                if !omega.iter().all(|c| c.is_finite()) {
                    return Err(Error::Model("non-finite angular velocity".into()));
                }
            }
            MotionModel::DenseFlow { flow } => {
                if flow.width != geometry.width || flow.height != geometry.height {
                    return Err(Error::Model(format!(
                        "flow field {}x{} does not match sensor {}x{}",
                        flow.width, flow.height, geometry.width, geometry.height
                    )));
                }
                if flow.v.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
                    return Err(Error::Model("non-finite flow field".into()));
                }
            }
        }
        Ok(())
    }
}

/// Warped event coordinates at the reference time. Out-of-frame coordinates
/// are retained, one entry per source event.
#[derive(Debug, Clone)]
pub struct WarpedEvents {
    pub coords: Vec<[f64; 2]>,
    /// Polarity copied from the source events.
    pub polarities: Vec<i8>,
    pub geometry: SensorGeometry,
}

impl WarpedEvents {
    /// Assemble warped events directly from coordinates; used by tests and
    /// renderers that bypass a motion model.
    pub fn from_coords(
        coords: Vec<[f64; 2]>,
        polarities: Vec<i8>,
        geometry: SensorGeometry,
    ) -> Self {
        assert_eq!(coords.len(), polarities.len());
        WarpedEvents {
            coords,
            polarities,
            geometry,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

fn rotate_ray(
    geometry: &SensorGeometry,
    x: f64,
    y: f64,
    rot: &Rotation3<f64>,
) -> Result<[f64; 2]> {
    let ray = Vector3::new((x - geometry.cx) / geometry.fx, (y - geometry.cy) / geometry.fy, 1.0);
    let r = rot * ray;
    if r.z <= 0.0 {
        return Err(Error::Geometry(format!(
            "rotated ray points behind the camera (z' = {})",
            r.z
        )));
    }
    Ok([
        geometry.fx * r.x / r.z + geometry.cx,
        geometry.fy * r.y / r.z + geometry.cy,
    ])
}

fn warp_one(
    model: &MotionModel,
    geometry: &SensorGeometry,
    x: f64,
    y: f64,
    dt: f64,
) -> Result<[f64; 2]> {
    match model {
        MotionModel::Translation2D { v } => Ok([x - dt * v[0], y - dt * v[1]]),
        MotionModel::Rotation3D { omega } => {
            let scaled = Vector3::new(-dt * omega[0], -dt * omega[1], -dt * omega[2]);
            if scaled == Vector3::zeros() {
                // Zero rotation is the identity exactly; skipping the
                // lift-project round trip keeps the coordinates bit-equal.
                return Ok([x, y]);
            }
            let rot = Rotation3::from_scaled_axis(scaled);
            rotate_ray(geometry, x, y, &rot)
        }
        MotionModel::DenseFlow { flow } => {
            let ix = (x.round() as i64).clamp(0, flow.width as i64 - 1) as u32;
            let iy = (y.round() as i64).clamp(0, flow.height as i64 - 1) as u32;
            let v = flow.at(ix, iy);
            Ok([x - dt * v[0], y - dt * v[1]])
        }
    }
}

/// Transport each event along its point trajectory to the slice's t_ref.
pub fn warp(slice: &EventSlice, model: &MotionModel) -> Result<WarpedEvents> {
    model.validate(slice.geometry())?;
    let t_ref = slice.t_ref();
    let geometry = *slice.geometry();
    let mut coords = Vec::with_capacity(slice.len());
    let mut polarities = Vec::with_capacity(slice.len());

    // Rotation matrices depend only on dt; constant per model for
    // Translation2D/DenseFlow, so nothing to hoist there.
    for e in slice.events() {
        let c = warp_one(model, &geometry, e.x, e.y, e.t - t_ref)?;
        coords.push(c);
        polarities.push(e.p);
    }
    Ok(WarpedEvents {
        coords,
        polarities,
        geometry,
    })
}

/// 2x2 Jacobian of the warped coordinates w.r.t. the event's own pixel
/// coordinates, the chain-rule factor that maps IWE-space gradients back to
/// event space.
pub fn coord_jacobian(slice: &EventSlice, model: &MotionModel, k: usize) -> Result<[[f64; 2]; 2]> {
    let e = slice
        .events()
        .get(k)
        .ok_or_else(|| Error::Shape(format!("event index {k} out of range")))?;
    match model {
        // Per-event translations: the shift does not depend on x.
        MotionModel::Translation2D { .. } | MotionModel::DenseFlow { .. } => {
            Ok([[1.0, 0.0], [0.0, 1.0]])
        }
        MotionModel::Rotation3D { omega } => {
            let g = slice.geometry();
            let dt = e.t - slice.t_ref();
            let scaled = Vector3::new(-dt * omega[0], -dt * omega[1], -dt * omega[2]);
            if scaled == Vector3::zeros() {
                return Ok([[1.0, 0.0], [0.0, 1.0]]);
            }
            let rot = Rotation3::from_scaled_axis(scaled);
            let r_mat: &Matrix3<f64> = rot.matrix();

            let ray = Vector3::new((e.x - g.cx) / g.fx, (e.y - g.cy) / g.fy, 1.0);
            let r = rot * ray;
            if r.z <= 0.0 {
                return Err(Error::Geometry(
                    "rotated ray points behind the camera".into(),
                ));
            }
            // d(project)/dr' composed with R and d(lift)/dx.
            let dproj = [
                [g.fx / r.z, 0.0, -g.fx * r.x / (r.z * r.z)],
                [0.0, g.fy / r.z, -g.fy * r.y / (r.z * r.z)],
            ];
            let mut jac = [[0.0; 2]; 2];
            for (row, dp) in dproj.iter().enumerate() {
                for col in 0..2 {
                    let dlift = match col {
                        0 => Vector3::new(1.0 / g.fx, 0.0, 0.0),
                        _ => Vector3::new(0.0, 1.0 / g.fy, 0.0),
                    };
                    let dr = r_mat * dlift;
                    jac[row][col] = dp[0] * dr.x + dp[1] * dr.y + dp[2] * dr.z;
                }
            }
            Ok(jac)
        }
    }
}

/// Per-event Jacobian of the warped coordinates w.r.t. the model parameters
/// (2 x DOF), by central differences over theta. Used by the parameter
/// gradient; DenseFlow is not optimizable.
pub fn param_jacobian(
    slice: &EventSlice,
    model: &MotionModel,
    k: usize,
    step: f64,
) -> Result<Vec<[f64; 2]>> {
    let e = slice
        .events()
        .get(k)
        .ok_or_else(|| Error::Shape(format!("event index {k} out of range")))?;
    let dt = e.t - slice.t_ref();
    match model {
        MotionModel::Translation2D { .. } => Ok(vec![[-dt, 0.0], [0.0, -dt]]),
        MotionModel::Rotation3D { .. } => {
            let theta = model.params();
            let g = slice.geometry();
            let mut cols = Vec::with_capacity(3);
            for j in 0..3 {
                let mut plus = theta.clone();
                let mut minus = theta.clone();
                plus[j] += step;
                minus[j] -= step;
                let mp = MotionModel::from_params(WarpKind::Rotation3D, &plus)?;
                let mm = MotionModel::from_params(WarpKind::Rotation3D, &minus)?;
                let cp = warp_one(&mp, g, e.x, e.y, dt)?;
                let cm = warp_one(&mm, g, e.x, e.y, dt)?;
                cols.push([(cp[0] - cm[0]) / (2.0 * step), (cp[1] - cm[1]) / (2.0 * step)]);
            }
            Ok(cols)
        }
        MotionModel::DenseFlow { .. } => Err(Error::Model(
            "denseflow parameters are fixed inputs, not optimizable".into(),
        )),
    }
}

/// Build a dense flow field from per-pixel depth and camera ego-motion.
///
/// In normalized coordinates u = (x-cx)/fx, v = (y-cy)/fy the flow of the
/// static scene is (1/Z) * A(u,v) * nu + B(u,v) * omega with
/// A = [[-1, 0, u], [0, -1, v]] and
/// B = [[u*v, -(1+u^2), v], [1+v^2, -u*v, -u]];
/// rows are scaled by fx, fy to give px/s.
pub fn build_motion_field(
    depth: &[f64],
    lin_vel: [f64; 3],
    ang_vel: [f64; 3],
    geometry: &SensorGeometry,
) -> Result<MotionModel> {
    if depth.len() != geometry.n_pixels() {
        return Err(Error::Depth(format!(
            "depth map has {} values, expected {}",
            depth.len(),
            geometry.n_pixels()
        )));
    }
    let mut v = Vec::with_capacity(depth.len());
    for iy in 0..geometry.height {
        for ix in 0..geometry.width {
            let z = depth[iy as usize * geometry.width as usize + ix as usize];
            if !(z > 0.0) {
                return Err(Error::Depth(format!(
                    "nonpositive depth {z} at pixel ({ix}, {iy})"
                )));
            }
            let u = (ix as f64 - geometry.cx) / geometry.fx;
            let w = (iy as f64 - geometry.cy) / geometry.fy;
            let trans_u = (-lin_vel[0] + u * lin_vel[2]) / z;
            let trans_v = (-lin_vel[1] + w * lin_vel[2]) / z;
            let rot_u = u * w * ang_vel[0] - (1.0 + u * u) * ang_vel[1] + w * ang_vel[2];
            let rot_v = (1.0 + w * w) * ang_vel[0] - u * w * ang_vel[1] - u * ang_vel[2];
            v.push([
                geometry.fx * (trans_u + rot_u),
                geometry.fy * (trans_v + rot_v),
            ]);
        }
    }
    Ok(MotionModel::DenseFlow {
        flow: FlowField {
            width: geometry.width,
            height: geometry.height,
            v,
        },
    })
}
