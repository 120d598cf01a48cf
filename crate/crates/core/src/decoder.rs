//! 3D UNets that decode the grouped volumes into feature volumes.

use rand::Rng;

use crate::encoder::{Axis, InitialTriVol};
use crate::params::{BoundParams, ParamId, ParamStore};
use crate::tensor::{concat, Tape, Var};
use crate::{Error, Result};

const KERNEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UNet3DConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    /// Number of down/up levels.
    pub depth: usize,
    /// Spatial axis (0..3) that is never pooled; `None` pools all three.
    pub fixed_axis: Option<usize>,
}

impl UNet3DConfig {
    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    fn pool_factors(&self) -> [usize; 3] {
        let mut f = [2; 3];
        if let Some(a) = self.fixed_axis {
            f[a] = 1;
        }
        f
    }

    fn validate(&self) -> Result<()> {
        if self.depth < 1 || self.base_width == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config(format!("invalid UNet configuration {self:?}")));
        }
        if self.fixed_axis.is_some_and(|a| a > 2) {
            return Err(Error::Config("fixed axis must be 0, 1 or 2".into()));
        }
        Ok(())
    }

    /// Checks that `shape` (`[C, D, H, W]`) fits this network.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let [c, d, h, w] = shape else {
            return Err(Error::Config(format!("UNet input must be [C, D, H, W], got {shape:?}")));
        };
        if *c != self.in_channels {
            return Err(Error::Config(format!(
                "UNet expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let step = 1usize << self.depth;
        for (a, (&n, f)) in [d, h, w].into_iter().zip(self.pool_factors()).enumerate() {
            if f == 2 && n % step != 0 {
                return Err(Error::Config(format!(
                    "UNet depth {} needs spatial axis {a} divisible by {step}, got {n}",
                    self.depth
                )));
            }
            if n == 0 {
                return Err(Error::Config("UNet input has an empty axis".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvParams {
    weight: ParamId,
    bias: ParamId,
}

impl ConvParams {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = cin * k * k * k;
        Self {
            weight: store.add_uniform(format!("{name}.weight"), &[cout, cin, k, k, k], fan_in, rng),
            bias: store.add_uniform(format!("{name}.bias"), &[cout], fan_in, rng),
        }
    }

    fn apply(&self, p: &BoundParams, x: &Var, padding: usize) -> Result<Var> {
        x.conv3d(&p[self.weight], &p[self.bias], 1, padding)
    }
}

#[derive(Clone, Copy, Debug)]
struct Block {
    first: ConvParams,
    second: ConvParams,
}

impl Block {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, cin: usize, cout: usize, rng: &mut R) -> Self {
        Self {
            first: ConvParams::new(store, &format!("{name}.conv0"), cin, cout, KERNEL, rng),
            second: ConvParams::new(store, &format!("{name}.conv1"), cout, cout, KERNEL, rng),
        }
    }

    fn apply(&self, p: &BoundParams, x: &Var) -> Result<Var> {
        let h = self.first.apply(p, x, 1)?.relu()?;
        self.second.apply(p, &h, 1)?.relu()
    }
}

/// Encoder/decoder with skip connections, kernel 3, ReLU, average-pool
/// downsampling and nearest upsampling.
#[derive(Clone, Debug)]
pub struct UNet3D {
    config: UNet3DConfig,
    down: Vec<Block>,
    bottleneck: Block,
    up: Vec<Block>,
    head: ConvParams,
}

impl UNet3D {
    /// Adds the network's parameters to `store` under `prefix`.
    pub fn new<R: Rng + ?Sized>(
        config: UNet3DConfig,
        prefix: &str,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut down = Vec::with_capacity(config.depth);
        let mut cin = config.in_channels;
        for level in 0..config.depth {
            let w = config.width(level);
            down.push(Block::new(store, &format!("{prefix}.down{level}"), cin, w, rng));
            cin = w;
        }
        let bottleneck = Block::new(
            store,
            &format!("{prefix}.bottleneck"),
            cin,
            config.width(config.depth),
            rng,
        );
        // stored from the finest level up
        let mut up = Vec::with_capacity(config.depth);
        for level in 0..config.depth {
            let w = config.width(level);
            up.push(Block::new(
                store,
                &format!("{prefix}.up{level}"),
                config.width(level + 1) + w,
                w,
                rng,
            ));
        }
        let head = ConvParams::new(store, &format!("{prefix}.head"), config.width(0), config.out_channels, 1, rng);
        Ok(Self {
            config,
            down,
            bottleneck,
            up,
            head,
        })
    }

    pub fn config(&self) -> &UNet3DConfig {
        &self.config
    }

    pub fn forward(&self, params: &BoundParams, input: &Var) -> Result<Var> {
        self.config.check_input(input.shape())?;
        // the unpooled axis runs outermost, which keeps inner rows long
        let outer = self.config.fixed_axis.filter(|&a| a != 0);
        let factors = match outer {
            Some(_) => [1, 2, 2],
            None => self.config.pool_factors(),
        };
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut x = match outer {
            Some(a) => input.swap_spatial(0, a)?,
            None => input.clone(),
        };
        for block in &self.down {
            let h = block.apply(params, &x)?;
            x = h.avg_pool3d(factors)?;
            skips.push(h);
        }
        x = self.bottleneck.apply(params, &x)?;
        for (block, skip) in self.up.iter().zip(&skips).rev() {
            let up = x.upsample_nearest3d_axes(factors)?;
            x = block.apply(params, &concat(&[&up, skip], 0)?)?;
        }
        let out = self.head.apply(params, &x, 0)?;
        match outer {
            Some(a) => out.swap_spatial(0, a),
            None => Ok(out),
        }
    }
}

/// Decoded feature volumes: `vx [F, G, S, S]`, `vy [F, S, G, S]`,
/// `vz [F, S, S, G]`.
#[derive(Clone, Debug)]
pub struct FeatureTriVol {
    pub vx: Var,
    pub vy: Var,
    pub vz: Var,
}

impl FeatureTriVol {
    pub fn volume(&self, axis: Axis) -> &Var {
        match axis {
            Axis::X => &self.vx,
            Axis::Y => &self.vy,
            Axis::Z => &self.vz,
        }
    }

    pub fn features(&self) -> usize {
        self.vx.shape()[0]
    }

    /// The current values as constants on `tape`.
    pub fn frozen_on(&self, tape: &Tape) -> FeatureTriVol {
        FeatureTriVol {
            vx: self.vx.constant_on(tape),
            vy: self.vy.constant_on(tape),
            vz: self.vz.constant_on(tape),
        }
    }
}

/// Three independent UNets, one per grouped axis.
#[derive(Clone, Debug)]
pub struct TriVolDecoder {
    nets: [UNet3D; 3],
}

impl TriVolDecoder {
    /// Parameters are registered as `Dx.*`, `Dy.*`, `Dz.*`.
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        features: usize,
        base_width: usize,
        depth: usize,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        let make = |axis: Axis, store: &mut ParamStore, rng: &mut R| {
            UNet3D::new(
                UNet3DConfig {
                    in_channels,
                    out_channels: features,
                    base_width,
                    depth,
                    fixed_axis: Some(axis.index()),
                },
                &format!("D{}", axis.label()),
                store,
                rng,
            )
        };
        let x = make(Axis::X, store, rng)?;
        let y = make(Axis::Y, store, rng)?;
        let z = make(Axis::Z, store, rng)?;
        Ok(Self { nets: [x, y, z] })
    }

    pub fn net(&self, axis: Axis) -> &UNet3D {
        &self.nets[axis.index()]
    }

    pub fn decode(&self, params: &BoundParams, initial: &InitialTriVol, tape: &Tape) -> Result<FeatureTriVol> {
        let run = |axis: Axis| {
            let input = tape.constant(initial.volume(axis).clone());
            self.net(axis).forward(params, &input)
        };
        Ok(FeatureTriVol {
            vx: run(Axis::X)?,
            vy: run(Axis::Y)?,
            vz: run(Axis::Z)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::encode_tensor;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(21)
    }

    #[test]
    fn zero_network_outputs_head_bias() {
        let mut store = ParamStore::new();
        let cfg = UNet3DConfig {
            in_channels: 3,
            out_channels: 2,
            base_width: 4,
            depth: 1,
            fixed_axis: Some(0),
        };
        let net = UNet3D::new(cfg, "D", &mut store, &mut rng()).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            let name = store.name(id).to_string();
            let t = store.get_mut(id);
            let value = if name == "D.head.bias" { 0.75 } else { 0.0 };
            t.data_mut().fill(value);
        }
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let x = tape.constant(Tensor::uniform(&[3, 2, 4, 4], 1.0, &mut rng()));
        let y = net.forward(&p, &x).unwrap();
        assert_eq!(y.shape(), &[2, 2, 4, 4]);
        assert!(y.value().data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut store = ParamStore::new();
        let cfg = UNet3DConfig {
            in_channels: 2,
            out_channels: 1,
            base_width: 2,
            depth: 2,
            fixed_axis: Some(1),
        };
        let net = UNet3D::new(cfg, "D", &mut store, &mut rng()).unwrap();
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let odd = tape.constant(Tensor::zeros(&[2, 6, 3, 8]));
        assert!(matches!(net.forward(&p, &odd), Err(Error::Config(_))));
        let wrong_c = tape.constant(Tensor::zeros(&[3, 8, 3, 8]));
        assert!(matches!(net.forward(&p, &wrong_c), Err(Error::Config(_))));
        let ok = tape.constant(Tensor::zeros(&[2, 8, 3, 8]));
        assert_eq!(net.forward(&p, &ok).unwrap().shape(), &[1, 8, 3, 8]);
    }

    #[test]
    fn decode_shapes_at_desk_scale() {
        let mut store = ParamStore::new();
        let dec = TriVolDecoder::new(32, 8, 4, 2, &mut store, &mut rng()).unwrap();
        let init = encode_tensor(&Tensor::zeros(&[4, 32, 32, 32]), 4).unwrap();
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let f = dec.decode(&p, &init, &tape).unwrap();
        assert_eq!(f.vx.shape(), &[8, 4, 32, 32]);
        assert_eq!(f.vy.shape(), &[8, 32, 4, 32]);
        assert_eq!(f.vz.shape(), &[8, 32, 32, 4]);
    }

    #[test]
    fn zero_weights_give_constant_volumes() {
        let mut store = ParamStore::new();
        let dec = TriVolDecoder::new(8, 3, 2, 1, &mut store, &mut rng()).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            if store.name(id).ends_with(".weight") {
                store.get_mut(id).data_mut().fill(0.0);
            }
        }
        let init = encode_tensor(&Tensor::zeros(&[2, 8, 8, 8]), 2).unwrap();
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let f = dec.decode(&p, &init, &tape).unwrap();
        for axis in Axis::ALL {
            let bias = store.get(store.find(&format!("D{}.head.bias", axis.label())).unwrap());
            let d = f.volume(axis).value().data();
            let cells = d.len() / 3;
            for ch in 0..3 {
                assert!(d[ch * cells..(ch + 1) * cells].iter().all(|&v| v == bias.data()[ch]));
            }
        }
    }

    #[test]
    fn decoders_do_not_share_weights() {
        let mut store = ParamStore::new();
        let dec = TriVolDecoder::new(4, 2, 2, 1, &mut store, &mut rng()).unwrap();
        assert!(store.find("Dx.down0.conv0.weight").is_some());
        assert!(store.find("Dy.down0.conv0.weight").is_some());
        assert!(store.find("Dz.down0.conv0.weight").is_some());
        let x = Tensor::uniform(&[4, 4, 4, 4], 1.0, &mut rng());
        let tape = Tape::new();
        let p = store.bind_frozen(&tape);
        let input = tape.constant(x);
        let a = dec.net(Axis::X).forward(&p, &input).unwrap();
        let b = dec.net(Axis::Y).forward(&p, &input).unwrap();
        assert!(a.value().max_abs_diff(b.value()) > 1e-6);
    }

    fn small_unet(store: &mut ParamStore) -> UNet3D {
        let cfg = UNet3DConfig {
            in_channels: 8,
            out_channels: 3,
            base_width: 4,
            depth: 1,
            fixed_axis: Some(0),
        };
        UNet3D::new(cfg, "Dx", store, &mut rng()).unwrap()
    }

    #[test]
    fn whole_slab_feeds_every_output_channel() {
        // positive weights, biases and inputs keep every ReLU active, so
        // Jacobian entries inside the receptive cone are strictly positive
        let mut store = ParamStore::new();
        let net = small_unet(&mut store);
        for id in store.ids().collect::<Vec<_>>() {
            let t = store.get_mut(id);
            *t = t.map(|v| v.abs() + 0.01);
        }
        let input = Tensor::uniform(&[8, 2, 8, 8], 1.0, &mut rng()).map(|v| v.abs() + 0.1);
        let (slab, y0, z0) = (1usize, 3usize, 4usize);
        for out_ch in 0..3 {
            let tape = Tape::new();
            let p = store.bind_frozen(&tape);
            let x = tape.leaf(input.clone());
            let y = net.forward(&p, &x).unwrap();
            let mut mask = Tensor::zeros(y.shape());
            mask.data_mut()[((out_ch * 2 + slab) * 8 + y0) * 8 + z0] = 1.0;
            let loss = y.mul(&tape.constant(mask)).unwrap().sum().unwrap();
            let g = tape.backward(&loss).unwrap();
            let gx = g.get(&x).unwrap().data();
            let at = |c: usize, j: usize, yy: usize, zz: usize| gx[((c * 2 + j) * 8 + yy) * 8 + zz];
            // every folded fine position of the slab, both slabs, and
            // neighbours two cells away in y and z
            for c in 0..8 {
                for j in 0..2 {
                    assert!(at(c, j, y0, z0) > 0.0, "channel {c} slab {j}");
                    assert!(at(c, slab, y0 + 2, z0) > 0.0);
                    assert!(at(c, slab, y0, z0 - 2) > 0.0);
                }
            }
        }
    }

    #[test]
    fn unet_gradients_match_finite_differences() {
        use crate::tensor::gradcheck::{check_gradients, GradCheckConfig};
        let mut store = ParamStore::new();
        let net = small_unet(&mut store);
        let mut r = rng();
        let mut inputs: Vec<Tensor> = store.values().to_vec();
        inputs.push(Tensor::uniform(&[8, 2, 8, 8], 1.0, &mut r));
        let ids: Vec<ParamId> = store.ids().collect();
        let weights = Tensor::uniform(&[3, 2, 8, 8], 1.0, &mut r);
        let report = check_gradients(
            &inputs,
            |tape, vars| {
                let mut p = store.bind_frozen(tape);
                for (k, _) in ids.iter().enumerate() {
                    p.replace(k, vars[k].clone());
                }
                let y = net.forward(&p, &vars[vars.len() - 1])?;
                y.mul(&tape.constant(weights.clone()))?.sum()
            },
            // 1e-3 steps occasionally straddle a ReLU kink
            &GradCheckConfig {
                step: 1e-4,
                samples: 60,
                ..GradCheckConfig::default()
            },
            &mut r,
        )
        .unwrap();
        assert!(report.passed(), "max error {}", report.max_error());
    }
}
