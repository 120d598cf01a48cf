//! Feature queries on the slim volumes and the radiance MLP.

use rand::Rng;

use crate::decoder::FeatureTriVol;
use crate::encoder::Axis;
use crate::params::{BoundParams, ParamId, ParamStore};
use crate::tensor::{concat, trilinear_point, Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

pub const DIRECTION_BANDS: usize = 4;
/// Length of the encoded view direction.
pub const DIRECTION_DIM: usize = 6 * DIRECTION_BANDS;

/// `sin(2^k pi d)` for every axis, then `cos(2^k pi d)`, for k = 0..4.
pub fn encode_direction(d: [Scalar; 3]) -> [Scalar; DIRECTION_DIM] {
    let mut out = [0.0; DIRECTION_DIM];
    for k in 0..DIRECTION_BANDS {
        let f = (1u32 << k) as Scalar * std::f64::consts::PI;
        for a in 0..3 {
            out[6 * k + a] = (f * d[a]).sin();
            out[6 * k + 3 + a] = (f * d[a]).cos();
        }
    }
    out
}

/// Concatenated `[vx(x), vy(x), vz(x)]` features for one point.
pub fn query_feature(tri: &FeatureTriVol, x: [Scalar; 3]) -> Result<Vec<Scalar>> {
    let mut out = Vec::with_capacity(3 * tri.features());
    for axis in Axis::ALL {
        out.extend(trilinear_point(tri.volume(axis).value(), x)?);
    }
    Ok(out)
}

/// Differentiable batched query: `points [P, 3]` to `[P, 3F]`.
pub fn query_features(tri: &FeatureTriVol, points: &Var) -> Result<Var> {
    let parts = [
        tri.vx.trilinear(points)?,
        tri.vy.trilinear(points)?,
        tri.vz.trilinear(points)?,
    ];
    concat(&[&parts[0], &parts[1], &parts[2]], 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RadianceHeadConfig {
    /// Input feature length (`3F`).
    pub feature_dim: usize,
    pub width: usize,
    pub color_width: usize,
    pub trunk_layers: usize,
}

impl RadianceHeadConfig {
    pub fn for_features(features: usize) -> Self {
        Self {
            feature_dim: 3 * features,
            width: 64,
            color_width: 32,
            trunk_layers: 3,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
}

impl Dense {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, din: usize, dout: usize, rng: &mut R) -> Self {
        Self {
            weight: store.add_uniform(format!("{name}.weight"), &[dout, din], din, rng),
            bias: store.add_uniform(format!("{name}.bias"), &[dout], din, rng),
        }
    }

    fn apply(&self, p: &BoundParams, x: &Var) -> Result<Var> {
        x.linear(&p[self.weight], &p[self.bias])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadianceSample {
    pub sigma: Scalar,
    pub color: [Scalar; 3],
}

/// Density and color from a queried feature and a view direction.
/// Density reads only the trunk, so it cannot depend on direction.
#[derive(Clone, Debug)]
pub struct RadianceHead {
    config: RadianceHeadConfig,
    trunk: Vec<Dense>,
    sigma: Dense,
    color_hidden: Dense,
    color_out: Dense,
}

impl RadianceHead {
    /// Registers parameters as `g.*`.
    pub fn new<R: Rng + ?Sized>(config: RadianceHeadConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        if config.feature_dim == 0 || config.width == 0 || config.color_width == 0 || config.trunk_layers == 0 {
            return Err(Error::Config(format!("invalid radiance head {config:?}")));
        }
        let mut trunk = Vec::with_capacity(config.trunk_layers);
        let mut din = config.feature_dim;
        for i in 0..config.trunk_layers {
            trunk.push(Dense::new(store, &format!("g.trunk{i}"), din, config.width, rng));
            din = config.width;
        }
        let sigma = Dense::new(store, "g.sigma", config.width, 1, rng);
        let color_hidden = Dense::new(store, "g.color0", config.width + DIRECTION_DIM, config.color_width, rng);
        let color_out = Dense::new(store, "g.color1", config.color_width, 3, rng);
        Ok(Self {
            config,
            trunk,
            sigma,
            color_hidden,
            color_out,
        })
    }

    pub fn config(&self) -> &RadianceHeadConfig {
        &self.config
    }

    /// `features [P, 3F]`, `directions [P, DIRECTION_DIM]` (encoded) to
    /// `(sigma [P, 1], rgb [P, 3])`.
    pub fn forward(&self, p: &BoundParams, features: &Var, directions: &Var) -> Result<(Var, Var)> {
        let fs = features.shape();
        if fs.len() != 2 || fs[1] != self.config.feature_dim {
            return Err(Error::Config(format!(
                "radiance head expects [P, {}] features, got {fs:?}",
                self.config.feature_dim
            )));
        }
        if directions.shape() != [fs[0], DIRECTION_DIM] {
            return Err(Error::Config(format!(
                "radiance head expects [{}, {DIRECTION_DIM}] directions, got {:?}",
                fs[0],
                directions.shape()
            )));
        }
        let mut h = features.clone();
        for layer in &self.trunk {
            h = layer.apply(p, &h)?.relu()?;
        }
        let sigma = self.sigma.apply(p, &h)?.softplus()?;
        let joined = concat(&[&h, directions], 1)?;
        let hidden = self.color_hidden.apply(p, &joined)?.relu()?;
        let rgb = self.color_out.apply(p, &hidden)?.sigmoid()?;
        Ok((sigma, rgb))
    }

    /// Single-point evaluation with the values in `store`.
    pub fn eval(&self, store: &ParamStore, feature: &[Scalar], direction: [Scalar; 3]) -> Result<RadianceSample> {
        let n = (0..3).map(|a| direction[a] * direction[a]).sum::<Scalar>().sqrt();
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!("view direction must be unit length, got norm {n}")));
        }
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let f = tape.constant(Tensor::new(vec![1, feature.len()], feature.to_vec())?);
        let d = tape.constant(Tensor::new(vec![1, DIRECTION_DIM], encode_direction(direction).to_vec())?);
        let (sigma, rgb) = self.forward(&p, &f, &d)?;
        let c = rgb.value().data();
        Ok(RadianceSample {
            sigma: sigma.value().data()[0],
            color: [c[0], c[1], c[2]],
        })
    }
}
