//! Synthetic benchmark scenes: analytic primitives, surface point
//! sampling and an albedo-only ray-traced ground truth.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::Image;
use crate::pointcloud::PointCloud;
use crate::render::camera::{axpy, dot, sub, unit_cube_span, Vec3};
use crate::render::{Camera, WHITE};
use crate::tensor::Scalar;
use crate::{Error, Result};

pub const BENCHMARKS: [&str; 3] = ["sphere", "checker-cube", "two-object"];

/// Ring cameras: elevation and field of view in degrees, distance from
/// the scene center.
pub const RING_ELEVATION: Scalar = 30.0;
pub const RING_DISTANCE: Scalar = 2.0;
pub const RING_FOV: Scalar = 35.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Albedo {
    Solid { color: [Scalar; 3] },
    /// Alternates between `a` and `b` on a lattice of `cells` per unit.
    Checker { a: [Scalar; 3], b: [Scalar; 3], cells: Scalar },
}

impl Albedo {
    pub fn at(&self, p: Vec3) -> [Scalar; 3] {
        match *self {
            Albedo::Solid { color } => color,
            Albedo::Checker { a, b, cells } => {
                let parity: i64 = p.iter().map(|v| (v * cells).floor() as i64).sum();
                if parity.rem_euclid(2) == 0 {
                    a
                } else {
                    b
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "shape")]
pub enum Primitive {
    Sphere { center: Vec3, radius: Scalar, albedo: Albedo },
    Cuboid { min: Vec3, max: Vec3, albedo: Albedo },
}

impl Primitive {
    pub fn albedo(&self) -> &Albedo {
        match self {
            Primitive::Sphere { albedo, .. } | Primitive::Cuboid { albedo, .. } => albedo,
        }
    }

    pub fn area(&self) -> Scalar {
        match *self {
            Primitive::Sphere { radius, .. } => 4.0 * std::f64::consts::PI * radius * radius,
            Primitive::Cuboid { min, max, .. } => {
                let e = sub(max, min);
                2.0 * (e[0] * e[1] + e[1] * e[2] + e[2] * e[0])
            }
        }
    }

    fn aabb(&self) -> (Vec3, Vec3) {
        match *self {
            Primitive::Sphere { center, radius, .. } => (center.map(|c| c - radius), center.map(|c| c + radius)),
            Primitive::Cuboid { min, max, .. } => (min, max),
        }
    }

    /// Smallest positive ray parameter where `o + t d` meets the surface.
    pub fn intersect(&self, o: Vec3, d: Vec3) -> Option<Scalar> {
        match *self {
            Primitive::Sphere { center, radius, .. } => {
                let oc = sub(o, center);
                let a = dot(d, d);
                let b = dot(oc, d);
                let c = dot(oc, oc) - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                [(-b - s) / a, (-b + s) / a].into_iter().find(|&t| t > 1e-12)
            }
            Primitive::Cuboid { min, max, .. } => {
                let e = sub(max, min);
                // reuse the unit-cube slab test in the box's own frame
                let lo = std::array::from_fn(|a| (o[a] - min[a]) / e[a]);
                let dir = std::array::from_fn(|a| d[a] / e[a]);
                let (t0, t1) = unit_cube_span(lo, dir)?;
                [t0, t1].into_iter().find(|&t| t > 1e-12)
            }
        }
    }

    fn sample_surface<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        match *self {
            Primitive::Sphere { center, radius, .. } => {
                let z: Scalar = rng.gen_range(-1.0..=1.0);
                let phi: Scalar = rng.gen_range(0.0..std::f64::consts::TAU);
                let r = (1.0 - z * z).max(0.0).sqrt();
                [
                    center[0] + radius * r * phi.cos(),
                    center[1] + radius * r * phi.sin(),
                    center[2] + radius * z,
                ]
            }
            Primitive::Cuboid { min, max, .. } => {
                let e = sub(max, min);
                let faces = [e[1] * e[2], e[0] * e[2], e[0] * e[1]];
                let mut u = rng.gen_range(0.0..faces.iter().sum::<Scalar>());
                let mut axis = 2;
                for (a, f) in faces.iter().enumerate() {
                    if u < *f {
                        axis = a;
                        break;
                    }
                    u -= f;
                }
                let mut p: Vec3 = std::array::from_fn(|a| rng.gen_range(min[a]..=max[a]));
                p[axis] = if rng.gen_bool(0.5) { min[axis] } else { max[axis] };
                p
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScene {
    pub primitives: Vec<Primitive>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: Scalar,
    pub point: Vec3,
    pub color: [Scalar; 3],
    pub primitive: usize,
}

impl AnalyticScene {
    pub fn new(primitives: Vec<Primitive>) -> Result<Self> {
        for p in &primitives {
            let (lo, hi) = p.aabb();
            if lo.iter().chain(&hi).any(|v| !(0.1 - 1e-12..=0.9 + 1e-12).contains(v)) {
                return Err(Error::Validation(format!("primitive {p:?} leaves [0.1, 0.9]^3")));
            }
            if !(p.area() > 0.0) {
                return Err(Error::Validation(format!("primitive {p:?} has no surface")));
            }
        }
        Ok(Self { primitives })
    }

    pub fn trace(&self, o: Vec3, d: Vec3) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some(t) = p.intersect(o, d) {
                if best.map_or(true, |b| t < b.t) {
                    let point = axpy(t, d, o);
                    best = Some(Hit {
                        t,
                        point,
                        color: p.albedo().at(point),
                        primitive: i,
                    });
                }
            }
        }
        best
    }

    /// `n` points uniform over the total surface area.
    pub fn sample_points<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<PointCloud> {
        if self.primitives.is_empty() || n == 0 {
            return Err(Error::Validation("sampling needs primitives and n >= 1".into()));
        }
        let areas: Vec<Scalar> = self.primitives.iter().map(Primitive::area).collect();
        let total: Scalar = areas.iter().sum();
        let mut positions = Vec::with_capacity(n);
        let mut colors = Vec::with_capacity(n);
        for _ in 0..n {
            let mut u = rng.gen_range(0.0..total);
            let mut k = areas.len() - 1;
            for (i, a) in areas.iter().enumerate() {
                if u < *a {
                    k = i;
                    break;
                }
                u -= a;
            }
            let prim = &self.primitives[k];
            let p = prim.sample_surface(rng);
            positions.push(p);
            colors.push(prim.albedo().at(p));
        }
        PointCloud::new(positions, colors)
    }

    /// Albedo of the nearest surface through each pixel center.
    pub fn render_ground_truth(&self, cam: &Camera, background: [Scalar; 3]) -> Result<Image> {
        let o = cam.center();
        let mut data = Vec::with_capacity(cam.width * cam.height * 3);
        for py in 0..cam.height {
            for px in 0..cam.width {
                let d = cam.pixel_direction(px, py)?;
                let c = self.trace(o, d).map_or(background, |h| h.color);
                data.extend_from_slice(&c);
            }
        }
        Image::new(cam.width, cam.height, data)
    }
}

pub fn benchmark_scene(name: &str) -> Result<AnalyticScene> {
    let prims = match name {
        "sphere" => vec![Primitive::Sphere {
            center: [0.5; 3],
            radius: 0.3,
            albedo: Albedo::Solid {
                color: [0.85, 0.3, 0.2],
            },
        }],
        "checker-cube" => vec![Primitive::Cuboid {
            min: [0.25; 3],
            max: [0.75; 3],
            albedo: Albedo::Checker {
                a: [0.9, 0.8, 0.2],
                b: [0.2, 0.3, 0.7],
                cells: 5.0,
            },
        }],
        "two-object" => vec![
            Primitive::Sphere {
                center: [0.35, 0.5, 0.5],
                radius: 0.2,
                albedo: Albedo::Solid {
                    color: [0.2, 0.7, 0.3],
                },
            },
            Primitive::Cuboid {
                min: [0.55, 0.3, 0.35],
                max: [0.85, 0.6, 0.65],
                albedo: Albedo::Solid {
                    color: [0.6, 0.2, 0.6],
                },
            },
        ],
        other => {
            return Err(Error::Config(format!(
                "unknown benchmark {other:?}; expected one of {BENCHMARKS:?}"
            )))
        }
    };
    AnalyticScene::new(prims)
}

/// `views` cameras evenly spaced in azimuth on a ring at
/// [`RING_ELEVATION`], all looking at the scene center.
pub fn ring_cameras(views: usize, width: usize, height: usize) -> Result<Vec<Camera>> {
    let center = [0.5; 3];
    let el = RING_ELEVATION.to_radians();
    (0..views)
        .map(|i| {
            let az = std::f64::consts::TAU * i as Scalar / views as Scalar;
            let eye = [
                center[0] + RING_DISTANCE * el.cos() * az.sin(),
                center[1] + RING_DISTANCE * el.sin(),
                center[2] + RING_DISTANCE * el.cos() * az.cos(),
            ];
            Camera::look_at(eye, center, [0.0, 1.0, 0.0], RING_FOV, width, height)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub name: String,
    pub seed: u64,
    pub points: usize,
    pub width: usize,
    pub height: usize,
    pub background: [Scalar; 3],
    pub scene: AnalyticScene,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchmarkSpec {
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub points: usize,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            views: 9,
            width: 64,
            height: 64,
            points: 10_000,
            seed: 0,
        }
    }
}

pub fn view_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("gt").join(format!("view_{i:03}.ppm"))
}

/// Writes `points.txt`, `cameras.json`, `gt/view_NNN.ppm` and `meta.json`.
pub fn make_benchmark(name: &str, spec: &BenchmarkSpec, dir: &Path) -> Result<()> {
    let scene = benchmark_scene(name)?;
    if spec.views == 0 {
        return Err(Error::Config("a benchmark needs at least one view".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pc = scene.sample_points(spec.points, &mut rng)?;
    let cams = ring_cameras(spec.views, spec.width, spec.height)?;
    std::fs::create_dir_all(dir.join("gt")).map_err(|e| Error::io(dir, e))?;
    pc.save(dir.join("points.txt"))?;
    Camera::save_all(&cams, dir.join("cameras.json"))?;
    for (i, cam) in cams.iter().enumerate() {
        scene.render_ground_truth(cam, WHITE)?.save_ppm(view_path(dir, i))?;
    }
    let meta = SceneMeta {
        name: name.to_string(),
        seed: spec.seed,
        points: spec.points,
        width: spec.width,
        height: spec.height,
        background: WHITE,
        scene,
    };
    let path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// A scene directory loaded back from disk.
#[derive(Clone, Debug)]
pub struct SceneData {
    pub points: PointCloud,
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
}

impl SceneData {
    pub fn load(dir: &Path) -> Result<Self> {
        let points = PointCloud::load(dir.join("points.txt"))?;
        let cameras = Camera::load_all(dir.join("cameras.json"))?;
        let images = (0..cameras.len())
            .map(|i| Image::load_ppm(view_path(dir, i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { points, cameras, images })
    }
}
