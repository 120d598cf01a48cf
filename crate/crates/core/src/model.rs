//! The full renderer: voxelize, group, decode, query and composite.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decoder::TriVolDecoder;
use crate::encoder::{encode_trivol, Axis, InitialTriVol};
use crate::metrics::Image;
use crate::params::ParamStore;
use crate::pointcloud::{fit_bounds, voxelize, PointCloud, SceneBounds, GRID_CHANNELS};
use crate::params::BoundParams;
use crate::render::{generate_ray, ray_rng, render_rays, render_view, Camera, RadianceHead, RadianceHeadConfig, RenderSettings};
use crate::tensor::checkpoint::NamedTensors;
use crate::tensor::gradcheck::{check_gradients_at, GradCheckConfig, GradCheckReport};
use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    /// Voxel grid resolution `S`.
    pub resolution: usize,
    /// Slabs per grouped axis `G`.
    pub groups: usize,
    /// Feature channels per decoded volume `F`.
    pub features: usize,
    pub base_width: usize,
    pub depth: usize,
    pub mlp_width: usize,
    pub color_width: usize,
    /// Empty border kept around the normalized cloud.
    pub margin: Scalar,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            resolution: 32,
            groups: 4,
            features: 8,
            base_width: 16,
            depth: 2,
            mlp_width: 64,
            color_width: 32,
            margin: 0.05,
        }
    }
}

const META_KEYS: [&str; 8] = [
    "meta.resolution",
    "meta.groups",
    "meta.features",
    "meta.base_width",
    "meta.depth",
    "meta.mlp_width",
    "meta.color_width",
    "meta.margin",
];

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 4 || self.groups == 0 || self.resolution % self.groups != 0 {
            return Err(Error::Config(format!(
                "resolution {} must be >= 4 and divisible by groups {}",
                self.resolution, self.groups
            )));
        }
        let step = 1usize << self.depth;
        if self.depth == 0 || self.resolution % step != 0 {
            return Err(Error::Config(format!(
                "UNet depth {} needs resolution divisible by {step}",
                self.depth
            )));
        }
        if self.features == 0 || self.base_width == 0 || self.mlp_width == 0 || self.color_width == 0 {
            return Err(Error::Config("network widths must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.margin) {
            return Err(Error::Config(format!("margin must lie in [0, 0.5), got {}", self.margin)));
        }
        Ok(())
    }

    /// Normalizes, voxelizes and groups `pc`.
    pub fn prepare(&self, pc: &PointCloud) -> Result<PreparedScene> {
        self.prepare_in(pc, fit_bounds(pc, self.margin)?)
    }

    /// Like [`prepare`](Self::prepare) but inside fixed `bounds`, so a
    /// resampled cloud lands on the same grid. Points outside are clamped.
    pub fn prepare_in(&self, pc: &PointCloud, bounds: SceneBounds) -> Result<PreparedScene> {
        let positions = pc
            .positions()
            .iter()
            .map(|&p| bounds.to_unit(p).map(|v| v.clamp(0.0, 1.0)))
            .collect();
        let unit = PointCloud::new(positions, pc.colors().to_vec())?;
        let grid = voxelize(&unit, self.resolution)?;
        Ok(PreparedScene {
            bounds,
            initial: encode_trivol(&grid, self.groups)?,
        })
    }

    /// Grouped input channels `C * S / G`.
    pub fn in_channels(&self) -> usize {
        GRID_CHANNELS * self.resolution / self.groups
    }

    fn values(&self) -> [Scalar; 8] {
        [
            self.resolution as Scalar,
            self.groups as Scalar,
            self.features as Scalar,
            self.base_width as Scalar,
            self.depth as Scalar,
            self.mlp_width as Scalar,
            self.color_width as Scalar,
            self.margin,
        ]
    }

    pub fn to_named(&self, out: &mut NamedTensors) {
        for (k, v) in META_KEYS.iter().zip(self.values()) {
            out.push(*k, Tensor::scalar(v));
        }
    }

    pub fn from_named(named: &NamedTensors) -> Result<Self> {
        let mut v = [0.0; 8];
        for (slot, key) in v.iter_mut().zip(META_KEYS) {
            *slot = named
                .get(key)
                .ok_or_else(|| Error::Config(format!("checkpoint lacks {key}")))?
                .item()?;
        }
        let cfg = Self {
            resolution: v[0] as usize,
            groups: v[1] as usize,
            features: v[2] as usize,
            base_width: v[3] as usize,
            depth: v[4] as usize,
            mlp_width: v[5] as usize,
            color_width: v[6] as usize,
            margin: v[7],
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Encoder output for one point cloud, reusable across steps.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedScene {
    pub bounds: SceneBounds,
    pub initial: InitialTriVol,
}

#[derive(Clone, Debug)]
pub struct TriVolModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub decoder: TriVolDecoder,
    pub head: RadianceHead,
}

impl TriVolModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let decoder = TriVolDecoder::new(
            config.in_channels(),
            config.features,
            config.base_width,
            config.depth,
            &mut store,
            &mut rng,
        )?;
        let head_cfg = RadianceHeadConfig {
            width: config.mlp_width,
            color_width: config.color_width,
            ..RadianceHeadConfig::for_features(config.features)
        };
        let head = RadianceHead::new(head_cfg, &mut store, &mut rng)?;
        Ok(Self {
            config,
            store,
            decoder,
            head,
        })
    }

    pub fn prepare(&self, pc: &PointCloud) -> Result<PreparedScene> {
        self.config.prepare(pc)
    }

    /// Decoded feature volumes (no gradients).
    pub fn decode_volumes(&self, scene: &PreparedScene) -> Result<[Tensor; 3]> {
        let tape = Tape::new();
        let params = self.store.bind_frozen(&tape);
        let tri = self.decoder.decode(&params, &scene.initial, &tape)?;
        Ok(Axis::ALL.map(|a| tri.volume(a).value().clone()))
    }

    pub fn render(&self, scene: &PreparedScene, cam: &Camera, settings: &RenderSettings, seed: u64) -> Result<Image> {
        let volumes = self.decode_volumes(scene)?;
        render_view(&self.store, &self.head, &volumes, cam, &scene.bounds, settings, seed)
    }

    /// Full pipeline from a raw point cloud.
    pub fn render_point_cloud(&self, pc: &PointCloud, cam: &Camera, settings: &RenderSettings, seed: u64) -> Result<Image> {
        self.render(&self.prepare(pc)?, cam, settings, seed)
    }

    /// Configuration scalars followed by every parameter.
    pub fn to_named(&self) -> NamedTensors {
        let mut out = NamedTensors::new();
        self.config.to_named(&mut out);
        out.entries.extend(self.store.to_named().entries);
        out
    }

    pub fn from_named(named: &NamedTensors) -> Result<Self> {
        let mut model = Self::new(ModelConfig::from_named(named)?, 0)?;
        model.store.load_from(named)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_named().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_named(&NamedTensors::load(path)?)
    }
}

/// Configuration of the end-to-end gradient check.
pub fn gradcheck_model_config() -> ModelConfig {
    ModelConfig {
        resolution: 8,
        groups: 2,
        features: 4,
        base_width: 4,
        depth: 1,
        mlp_width: 16,
        color_width: 8,
        margin: 0.05,
    }
}

/// Checks the gradient of one rendered pixel (a fixed mix of its three
/// channels) with respect to `samples` random parameters, spread evenly
/// over `Dx`, `Dy`, `Dz` and `g`.
pub fn pixel_gradcheck(seed: u64, samples: usize, check: &GradCheckConfig) -> Result<GradCheckReport> {
    let model = TriVolModel::new(gradcheck_model_config(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let n = 400;
    let pc = PointCloud::new(
        (0..n).map(|_| std::array::from_fn(|_| rng.gen_range(0.2..0.8))).collect(),
        (0..n).map(|_| std::array::from_fn(|_| rng.gen())).collect(),
    )?;
    let scene = model.prepare(&pc)?;
    let cam = Camera::look_at([1.6, 1.4, -0.9], [0.5, 0.5, 0.5], [0.0, 1.0, 0.0], 40.0, 9, 9)?;
    let ray = generate_ray(&cam, 4, 4, &scene.bounds)?
        .ok_or_else(|| Error::Contract("gradient-check ray misses the scene".into()))?;
    let settings = RenderSettings {
        coarse_samples: 8,
        fine_samples: 0,
        ..RenderSettings::default()
    };

    let inputs = model.store.values().to_vec();
    let mut coords = Vec::with_capacity(samples);
    let groups = ["Dx.", "Dy.", "Dz.", "g."];
    for (gi, prefix) in groups.iter().enumerate() {
        let members: Vec<usize> = model.store.ids().filter(|&id| model.store.name(id).starts_with(prefix)).map(|id| id.index()).collect();
        let want = samples / groups.len() + usize::from(gi < samples % groups.len());
        let total: usize = members.iter().map(|&i| inputs[i].numel()).sum();
        for k in rand::seq::index::sample(&mut rng, total, want.min(total)) {
            let mut k = k;
            for &i in &members {
                if k < inputs[i].numel() {
                    coords.push((i, k));
                    break;
                }
                k -= inputs[i].numel();
            }
        }
    }
    let mix = [0.5, 0.3, 0.2];
    let f = |tape: &Tape, vars: &[Var]| -> Result<Var> {
        let params = BoundParams::from_vars(vars.to_vec());
        let tri = model.decoder.decode(&params, &scene.initial, tape)?;
        let mut rngs = [ray_rng(seed, 0)];
        let color = render_rays(&params, &model.head, &tri, std::slice::from_ref(&ray), &mut rngs, &settings)?;
        color.mul(&tape.constant(Tensor::new(vec![1, 3], mix.to_vec())?))?.sum()
    };
    check_gradients_at(&inputs, &coords, f, check)
}
