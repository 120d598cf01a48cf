//! Pinhole cameras and ray generation.
//!
//! Cameras follow the OpenCV convention: `x_cam = R x_world + t`, with
//! camera x to the right, y down and z forward. Pixel `(u, v)` is shot
//! through its center `(u + 0.5, v + 0.5)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::pointcloud::SceneBounds;
use crate::tensor::Scalar;
use crate::{Error, Result};

pub type Vec3 = [Scalar; 3];
pub type Mat3 = [[Scalar; 3]; 3];

/// Near depth for rays that start inside the unit cube.
pub const INSIDE_NEAR: Scalar = 1e-4;

pub(crate) fn dot(a: Vec3, b: Vec3) -> Scalar {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: Vec3) -> Scalar {
    dot(a, a).sqrt()
}

pub(crate) fn normalized(a: Vec3) -> Vec3 {
    let n = norm(a);
    a.map(|v| v / n)
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn axpy(a: Scalar, x: Vec3, y: Vec3) -> Vec3 {
    [a * x[0] + y[0], a * x[1] + y[1], a * x[2] + y[2]]
}

fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

fn mat_t_vec(m: &Mat3, v: Vec3) -> Vec3 {
    std::array::from_fn(|j| m[0][j] * v[0] + m[1][j] * v[1] + m[2][j] * v[2])
}

fn det(m: &Mat3) -> Scalar {
    dot(m[0], cross(m[1], m[2]))
}

fn inverse(m: &Mat3) -> Option<Mat3> {
    let d = det(m);
    if !d.is_finite() || d.abs() < 1e-300 {
        return None;
    }
    // rows of the inverse are the columns of the adjugate
    let c0 = cross(m[1], m[2]);
    let c1 = cross(m[2], m[0]);
    let c2 = cross(m[0], m[1]);
    Some(std::array::from_fn(|i| [c0[i] / d, c1[i] / d, c2[i] / d]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: Mat3,
    pub rotation: Mat3,
    pub translation: Vec3,
    pub width: usize,
    pub height: usize,
}

#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
struct CameraRecord {
    K: Vec<Scalar>,
    R: Vec<Scalar>,
    t: Vec<Scalar>,
    width: usize,
    height: usize,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CameraFile {
    Many(Vec<CameraRecord>),
    One(CameraRecord),
}

fn mat_from(v: &[Scalar], what: &str) -> Result<Mat3> {
    if v.len() != 9 {
        return Err(Error::Config(format!("{what} needs 9 values, got {}", v.len())));
    }
    Ok(std::array::from_fn(|i| [v[3 * i], v[3 * i + 1], v[3 * i + 2]]))
}

impl Camera {
    /// Validated camera: `R` orthonormal with det +1, `fx, fy > 0`.
    pub fn new(intrinsics: Mat3, rotation: Mat3, translation: Vec3, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config("camera image size must be positive".into()));
        }
        if !(intrinsics[0][0] > 0.0 && intrinsics[1][1] > 0.0) {
            return Err(Error::Config(format!(
                "focal lengths must be positive, got fx={} fy={}",
                intrinsics[0][0], intrinsics[1][1]
            )));
        }
        for i in 0..3 {
            for j in 0..3 {
                let rtr: Scalar = (0..3).map(|k| rotation[k][i] * rotation[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (rtr - expect).abs() > 1e-9 {
                    return Err(Error::Config("rotation is not orthonormal".into()));
                }
            }
        }
        if (det(&rotation) - 1.0).abs() > 1e-9 {
            return Err(Error::Config("rotation has determinant -1".into()));
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("translation is not finite".into()));
        }
        Ok(Self {
            intrinsics,
            rotation,
            translation,
            width,
            height,
        })
    }

    /// Camera at `eye` looking at `target`, `up` pointing up on screen,
    /// principal point at the image center.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fov_y_degrees: Scalar, width: usize, height: usize) -> Result<Self> {
        let forward = normalized(sub(target, eye));
        let right = cross(forward, up);
        if norm(right) < 1e-12 {
            return Err(Error::Config("look_at: up is parallel to the view direction".into()));
        }
        let right = normalized(right);
        let down = cross(forward, right);
        let rotation = [right, down, forward];
        let translation = mat_vec(&rotation, eye).map(|v| -v);
        let f = 0.5 * height as Scalar / (0.5 * fov_y_degrees.to_radians()).tan();
        let intrinsics = [
            [f, 0.0, 0.5 * width as Scalar],
            [0.0, f, 0.5 * height as Scalar],
            [0.0, 0.0, 1.0],
        ];
        Self::new(intrinsics, rotation, translation, width, height)
    }

    pub fn center(&self) -> Vec3 {
        mat_t_vec(&self.rotation, self.translation).map(|v| -v)
    }

    pub fn forward(&self) -> Vec3 {
        self.rotation[2]
    }

    /// World-space unit direction through the center of pixel `(px, py)`.
    pub fn pixel_direction(&self, px: usize, py: usize) -> Result<Vec3> {
        let kinv = inverse(&self.intrinsics)
            .ok_or_else(|| Error::Config("camera intrinsics are singular".into()))?;
        let d_cam = mat_vec(&kinv, [px as Scalar + 0.5, py as Scalar + 0.5, 1.0]);
        Ok(normalized(mat_t_vec(&self.rotation, d_cam)))
    }

    /// Projects a world point to continuous pixel coordinates; `None`
    /// behind the camera.
    pub fn project(&self, p: Vec3) -> Option<[Scalar; 2]> {
        let c = axpy(1.0, mat_vec(&self.rotation, p), self.translation);
        if c[2] <= 0.0 {
            return None;
        }
        let h = mat_vec(&self.intrinsics, c);
        Some([h[0] / h[2], h[1] / h[2]])
    }

    fn to_record(&self) -> CameraRecord {
        CameraRecord {
            K: self.intrinsics.iter().flatten().copied().collect(),
            R: self.rotation.iter().flatten().copied().collect(),
            t: self.translation.to_vec(),
            width: self.width,
            height: self.height,
        }
    }

    fn from_record(r: CameraRecord) -> Result<Self> {
        let t: Vec3 = r
            .t
            .as_slice()
            .try_into()
            .map_err(|_| Error::Config(format!("t needs 3 values, got {}", r.t.len())))?;
        Self::new(mat_from(&r.K, "K")?, mat_from(&r.R, "R")?, t, r.width, r.height)
    }

    /// Reads a JSON camera object or array of objects.
    pub fn load_all(path: impl AsRef<Path>) -> Result<Vec<Camera>> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: CameraFile =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        let records = match file {
            CameraFile::Many(v) => v,
            CameraFile::One(r) => vec![r],
        };
        records.into_iter().map(Self::from_record).collect()
    }

    pub fn save_all(cameras: &[Camera], path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let records: Vec<CameraRecord> = cameras.iter().map(Camera::to_record).collect();
        let text = serde_json::to_string_pretty(&records).expect("cameras serialize");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// A ray in normalized scene space, restricted to `[near, far]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub near: Scalar,
    pub far: Scalar,
}

impl Ray {
    pub fn at(&self, z: Scalar) -> Vec3 {
        axpy(z, self.direction, self.origin)
    }
}

/// Entry and exit depths of the line `origin + z * direction` through
/// the unit cube, if it crosses it.
pub fn unit_cube_span(origin: Vec3, direction: Vec3) -> Option<(Scalar, Scalar)> {
    let mut t0 = Scalar::NEG_INFINITY;
    let mut t1 = Scalar::INFINITY;
    for a in 0..3 {
        if direction[a] == 0.0 {
            if !(0.0..=1.0).contains(&origin[a]) {
                return None;
            }
            continue;
        }
        let lo = (0.0 - origin[a]) / direction[a];
        let hi = (1.0 - origin[a]) / direction[a];
        t0 = t0.max(lo.min(hi));
        t1 = t1.min(lo.max(hi));
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Ray through pixel `(px, py)`, expressed in the normalized frame of
/// `bounds`; `None` when it misses the unit cube.
pub fn generate_ray(cam: &Camera, px: usize, py: usize, bounds: &SceneBounds) -> Result<Option<Ray>> {
    if px >= cam.width || py >= cam.height {
        return Err(Error::Contract(format!(
            "pixel ({px}, {py}) outside {}x{} image",
            cam.width, cam.height
        )));
    }
    let dir_world = cam.pixel_direction(px, py)?;
    let origin = bounds.to_unit(cam.center());
    let direction = normalized(std::array::from_fn(|a| dir_world[a] * bounds.scale(a)));
    let Some((t0, t1)) = unit_cube_span(origin, direction) else {
        return Ok(None);
    };
    let near = t0.max(INSIDE_NEAR);
    if t1 <= near {
        return Ok(None);
    }
    Ok(Some(Ray {
        origin,
        direction,
        near,
        far: t1,
    }))
}
