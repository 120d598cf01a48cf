//! Coarse-to-fine rendering of ray batches, pixels and images.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::camera::{generate_ray, Camera, Ray};
use super::composite::{composite, composite_var, WHITE};
use super::field::{encode_direction, query_features, RadianceHead, DIRECTION_DIM};
use super::sampling::{importance_sample, stratified_sample, RaySampleBatch};
use crate::decoder::FeatureTriVol;
use crate::metrics::Image;
use crate::params::{BoundParams, ParamStore};
use crate::pointcloud::SceneBounds;
use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

/// Rays per tape when rendering whole images.
const IMAGE_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderSettings {
    pub coarse_samples: usize,
    /// Zero disables the fine pass.
    pub fine_samples: usize,
    pub background: [Scalar; 3],
    /// Uniform jitter inside coarse bins.
    pub jitter: bool,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            coarse_samples: 64,
            fine_samples: 64,
            background: WHITE,
            jitter: false,
        }
    }
}

/// Independent random stream for ray `index` under `seed`.
pub fn ray_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Densities `[R, M]` and colors `[R, M, 3]` at every sample.
fn evaluate(
    params: &BoundParams,
    head: &RadianceHead,
    tri: &FeatureTriVol,
    rays: &[Ray],
    batches: &[RaySampleBatch],
) -> Result<(Var, Var)> {
    let tape = tri.vx.tape();
    let m = batches[0].len();
    let n = rays.len() * m;
    let mut points = Vec::with_capacity(n * 3);
    let mut dirs = Vec::with_capacity(n * DIRECTION_DIM);
    for (ray, batch) in rays.iter().zip(batches) {
        let enc = encode_direction(ray.direction);
        for p in batch.positions(ray) {
            points.extend_from_slice(&p);
            dirs.extend_from_slice(&enc);
        }
    }
    let points = tape.constant(Tensor::new(vec![n, 3], points)?);
    let dirs = tape.constant(Tensor::new(vec![n, DIRECTION_DIM], dirs)?);
    let features = query_features(tri, &points)?;
    let (sigma, rgb) = head.forward(params, &features, &dirs)?;
    Ok((sigma.reshape(&[rays.len(), m])?, rgb.reshape(&[rays.len(), m, 3])?))
}

/// Renders rays that hit the scene; returns colors `[R, 3]` on the tape
/// of `tri`. The coarse pass runs on a separate tape, so only the final
/// pass carries gradients. `rngs` holds one stream per ray.
pub fn render_rays(
    params: &BoundParams,
    head: &RadianceHead,
    tri: &FeatureTriVol,
    rays: &[Ray],
    rngs: &mut [ChaCha8Rng],
    settings: &RenderSettings,
) -> Result<Var> {
    if rays.is_empty() || rays.len() != rngs.len() {
        return Err(Error::Contract(format!(
            "render_rays needs one rng per ray and at least one ray ({} rays, {} rngs)",
            rays.len(),
            rngs.len()
        )));
    }
    let mut batches = rays
        .iter()
        .zip(rngs.iter_mut())
        .map(|(ray, rng)| stratified_sample(ray, settings.coarse_samples, settings.jitter, rng))
        .collect::<Result<Vec<_>>>()?;
    if settings.fine_samples > 0 {
        let coarse_tape = Tape::new();
        let (sigma, rgb) = evaluate(
            &params.frozen_on(&coarse_tape),
            head,
            &tri.frozen_on(&coarse_tape),
            rays,
            &batches,
        )?;
        let m = settings.coarse_samples;
        let s = sigma.value().data();
        let c = rgb.value().data();
        for (r, ray) in rays.iter().enumerate() {
            let colors: Vec<[Scalar; 3]> = (0..m)
                .map(|k| std::array::from_fn(|ch| c[(r * m + k) * 3 + ch]))
                .collect();
            let coarse = composite(&s[r * m..(r + 1) * m], &colors, &batches[r].deltas, settings.background)?;
            batches[r] = importance_sample(ray, &batches[r], &coarse.weights, settings.fine_samples, &mut rngs[r])?;
        }
    }
    let (sigma, rgb) = evaluate(params, head, tri, rays, &batches)?;
    let deltas: Vec<Scalar> = batches.iter().flat_map(|b| b.deltas.iter().copied()).collect();
    composite_var(&sigma, &rgb, &deltas, settings.background)
}

/// Color of pixel `(px, py)`; rays missing the unit cube show the
/// background.
#[allow(clippy::too_many_arguments)]
pub fn render_pixel(
    params: &BoundParams,
    head: &RadianceHead,
    tri: &FeatureTriVol,
    cam: &Camera,
    px: usize,
    py: usize,
    bounds: &SceneBounds,
    settings: &RenderSettings,
    rng: &mut ChaCha8Rng,
) -> Result<[Scalar; 3]> {
    let Some(ray) = generate_ray(cam, px, py, bounds)? else {
        return Ok(settings.background);
    };
    let out = render_rays(params, head, tri, &[ray], std::slice::from_mut(rng), settings)?;
    let c = out.value().data();
    Ok([c[0], c[1], c[2]])
}

/// Renders a full view from decoded volumes. Pixel `i` (row-major) uses
/// `ray_rng(seed, i)`, so the result does not depend on chunking or
/// thread count.
pub fn render_view(
    store: &ParamStore,
    head: &RadianceHead,
    volumes: &[Tensor; 3],
    cam: &Camera,
    bounds: &SceneBounds,
    settings: &RenderSettings,
    seed: u64,
) -> Result<Image> {
    let (w, h) = (cam.width, cam.height);
    let mut hits = Vec::new();
    let mut data = Vec::with_capacity(w * h * 3);
    for py in 0..h {
        for px in 0..w {
            if let Some(ray) = generate_ray(cam, px, py, bounds)? {
                hits.push((py * w + px, ray));
            }
            data.extend_from_slice(&settings.background);
        }
    }
    let colors: Vec<Vec<Scalar>> = hits
        .par_chunks(IMAGE_CHUNK)
        .map(|chunk| -> Result<Vec<Scalar>> {
            let tape = Tape::new();
            let params = store.bind_frozen(&tape);
            let tri = FeatureTriVol {
                vx: tape.constant(volumes[0].clone()),
                vy: tape.constant(volumes[1].clone()),
                vz: tape.constant(volumes[2].clone()),
            };
            let rays: Vec<Ray> = chunk.iter().map(|(_, r)| *r).collect();
            let mut rngs: Vec<ChaCha8Rng> = chunk.iter().map(|(i, _)| ray_rng(seed, *i as u64)).collect();
            let out = render_rays(&params, head, &tri, &rays, &mut rngs, settings)?;
            Ok(out.value().data().to_vec())
        })
        .collect::<Result<_>>()?;
    for (chunk, c) in hits.chunks(IMAGE_CHUNK).zip(colors) {
        for (k, (i, _)) in chunk.iter().enumerate() {
            data[i * 3..i * 3 + 3].copy_from_slice(&c[k * 3..k * 3 + 3]);
        }
    }
    Image::new(w, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::field::{query_feature, RadianceHeadConfig};
    use rand::Rng;

    struct Fixture {
        store: ParamStore,
        head: RadianceHead,
        volumes: [Tensor; 3],
    }

    fn fixture(seed: u64) -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let head = RadianceHead::new(RadianceHeadConfig::for_features(2), &mut store, &mut rng).unwrap();
        let volumes = [
            Tensor::uniform(&[2, 2, 8, 8], 1.0, &mut rng),
            Tensor::uniform(&[2, 8, 2, 8], 1.0, &mut rng),
            Tensor::uniform(&[2, 8, 8, 2], 1.0, &mut rng),
        ];
        Fixture { store, head, volumes }
    }

    fn tri_on(tape: &Tape, v: &[Tensor; 3]) -> FeatureTriVol {
        FeatureTriVol {
            vx: tape.constant(v[0].clone()),
            vy: tape.constant(v[1].clone()),
            vz: tape.constant(v[2].clone()),
        }
    }

    fn camera() -> Camera {
        Camera::look_at([1.8, 1.2, -1.0], [0.5; 3], [0.0, 1.0, 0.0], 50.0, 8, 6).unwrap()
    }

    #[test]
    fn pixel_matches_single_pass_reference() {
        let fx = fixture(1);
        let settings = RenderSettings {
            coarse_samples: 8,
            fine_samples: 8,
            background: [0.1, 0.2, 0.3],
            jitter: true,
        };
        let cam = camera();
        let bounds = SceneBounds::unit();
        let tape = Tape::new();
        let params = fx.store.bind_frozen(&tape);
        let tri = tri_on(&tape, &fx.volumes);
        let (px, py) = (4, 3);
        let got = render_pixel(&params, &fx.head, &tri, &cam, px, py, &bounds, &settings, &mut ray_rng(7, 3)).unwrap();

        // replay with per-sample scalar evaluation
        let ray = generate_ray(&cam, px, py, &bounds).unwrap().unwrap();
        let mut rng = ray_rng(7, 3);
        let shade = |batch: &RaySampleBatch| {
            let samples: Vec<_> = batch
                .positions(&ray)
                .into_iter()
                .map(|p| fx.head.eval(&fx.store, &query_feature(&tri, p).unwrap(), ray.direction).unwrap())
                .collect();
            let sigma: Vec<Scalar> = samples.iter().map(|s| s.sigma).collect();
            let colors: Vec<[Scalar; 3]> = samples.iter().map(|s| s.color).collect();
            composite(&sigma, &colors, &batch.deltas, settings.background).unwrap()
        };
        let coarse = stratified_sample(&ray, 8, true, &mut rng).unwrap();
        let weights = shade(&coarse).weights;
        let merged = importance_sample(&ray, &coarse, &weights, 8, &mut rng).unwrap();
        let expect = shade(&merged).color;
        for ch in 0..3 {
            assert!((got[ch] - expect[ch]).abs() < 1e-12, "{got:?} vs {expect:?}");
        }
    }

    #[test]
    fn opaque_first_sample_shows_its_color() {
        let mut fx = fixture(2);
        for id in fx.store.ids().collect::<Vec<_>>() {
            let name = fx.store.name(id).to_string();
            let t = fx.store.get_mut(id);
            match name.as_str() {
                "g.sigma.bias" => t.data_mut().fill(5000.0),
                "g.color1.bias" => t.data_mut().copy_from_slice(&[-30.0, 30.0, -30.0]),
                _ => t.data_mut().fill(0.0),
            }
        }
        let settings = RenderSettings {
            fine_samples: 0,
            ..RenderSettings::default()
        };
        let img = render_view(&fx.store, &fx.head, &fx.volumes, &camera(), &SceneBounds::unit(), &settings, 0).unwrap();
        let cam = camera();
        let ray = generate_ray(&cam, 4, 3, &SceneBounds::unit()).unwrap().unwrap();
        // sigma * delta of the first sample
        assert!(5000.0 * (ray.far - ray.near) / 64.0 >= 20.0);
        let c = img.pixel(4, 3);
        assert!((c[0]).abs() < 1e-3 && (c[1] - 1.0).abs() < 1e-3 && c[2].abs() < 1e-3, "{c:?}");
    }

    #[test]
    fn missed_rays_show_background() {
        let fx = fixture(3);
        let cam = Camera::look_at([0.5, 0.5, -1.0], [0.5, 0.5, -2.0], [0.0, 1.0, 0.0], 40.0, 4, 4).unwrap();
        let settings = RenderSettings {
            background: [0.2, 0.4, 0.6],
            ..RenderSettings::default()
        };
        let img = render_view(&fx.store, &fx.head, &fx.volumes, &cam, &SceneBounds::unit(), &settings, 0).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(img.pixel(x, y), [0.2, 0.4, 0.6]);
            }
        }
    }

    #[test]
    fn view_is_deterministic_and_chunk_independent() {
        let fx = fixture(4);
        let cam = Camera::look_at([1.6, 0.9, -1.2], [0.5; 3], [0.0, 1.0, 0.0], 60.0, 24, 20).unwrap();
        let settings = RenderSettings {
            coarse_samples: 6,
            fine_samples: 6,
            jitter: true,
            ..RenderSettings::default()
        };
        let a = render_view(&fx.store, &fx.head, &fx.volumes, &cam, &SceneBounds::unit(), &settings, 11).unwrap();
        let b = render_view(&fx.store, &fx.head, &fx.volumes, &cam, &SceneBounds::unit(), &settings, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| v.is_finite()));
        // one pixel alone reproduces its value in the full image
        let tape = Tape::new();
        let params = fx.store.bind_frozen(&tape);
        let tri = tri_on(&tape, &fx.volumes);
        let (px, py) = (13, 9);
        let c = render_pixel(&params, &fx.head, &tri, &cam, px, py, &SceneBounds::unit(), &settings, &mut ray_rng(11, (py * 24 + px) as u64)).unwrap();
        assert_eq!(a.pixel(px, py), c);
    }

    #[test]
    fn radiance_depends_only_on_point_and_direction() {
        let fx = fixture(5);
        let tape = Tape::new();
        let tri = tri_on(&tape, &fx.volumes);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x: [Scalar; 3] = std::array::from_fn(|_| rng.gen_range(0.1..0.9));
        let d = [0.0, 0.6, 0.8];
        // two different rays through x with direction d
        let f1 = query_feature(&tri, x).unwrap();
        let origin2 = [x[0] - 0.3 * d[0], x[1] - 0.3 * d[1], x[2] - 0.3 * d[2]];
        let ray2 = Ray {
            origin: origin2,
            direction: d,
            near: 0.0,
            far: 1.0,
        };
        let f2 = query_feature(&tri, ray2.at(0.3)).unwrap();
        for (a, b) in f1.iter().zip(&f2) {
            assert!((a - b).abs() < 1e-12);
        }
        let s1 = fx.head.eval(&fx.store, &f1, d).unwrap();
        let s2 = fx.head.eval(&fx.store, &f2, d).unwrap();
        assert!((s1.sigma - s2.sigma).abs() < 1e-12);
    }
}
