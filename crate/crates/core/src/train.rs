//! End-to-end training of the three UNets and the radiance head.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::metrics::{psnr_from_mse, Image};
use crate::model::{ModelConfig, PreparedScene, TriVolModel};
use crate::params::ParamStore;
use crate::render::{generate_ray, ray_rng, render_rays, Camera, RenderSettings, WHITE};
use crate::tensor::checkpoint::NamedTensors;
use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

pub const LOG_HEADER: &str = "step,epoch,lr,loss,psnr";

/// Mean over rays and channels of `(rendered - target)^2`.
pub fn mse_loss(rendered: &Var, target: &Tensor) -> Result<Var> {
    if rendered.shape() != target.shape() {
        return Err(Error::Contract(format!(
            "mse_loss: rendered {:?} vs target {:?}",
            rendered.shape(),
            target.shape()
        )));
    }
    let t = rendered.tape().constant(target.clone());
    rendered.sub(&t)?.square()?.mean()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: Scalar,
    pub beta2: Scalar,
    pub eps: Scalar,
    pub weight_decay: Scalar,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Adaptive moments with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &ParamStore) -> Self {
        let zeros = || params.values().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update; nothing changes if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: Scalar) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer got {} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (id, g) in params.ids().zip(grads) {
            if g.shape() != params.get(id).shape() {
                return Err(Error::Contract(format!("gradient shape mismatch for {}", params.name(id))));
            }
            if !g.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for {}; step aborted",
                    params.name(id)
                )));
            }
        }
        let c = self.config;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let decay = 1.0 - lr * c.weight_decay;
        for (k, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = params.get_mut(id).data_mut();
            let g = grads[k].data();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] = p[i] * decay - lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub rays_per_step: usize,
    pub coarse_samples: usize,
    pub fine_samples: usize,
    pub lr_initial: Scalar,
    pub lr_after: Scalar,
    pub lr_switch_epoch: u64,
    pub steps_per_epoch: u64,
    pub max_epochs: u64,
    /// Overrides `max_epochs * steps_per_epoch` when set.
    pub max_steps: Option<u64>,
    pub adamw: AdamWConfig,
    pub seed: u64,
    pub background: [Scalar; 3],
    pub jitter: bool,
    /// Steps between checkpoints; 0 only writes the final one.
    pub checkpoint_every: u64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            rays_per_step: 1024,
            coarse_samples: 64,
            fine_samples: 64,
            lr_initial: 1e-3,
            lr_after: 1e-4,
            lr_switch_epoch: 100,
            steps_per_epoch: 100,
            max_epochs: 200,
            max_steps: None,
            adamw: AdamWConfig::default(),
            seed: 0,
            background: WHITE,
            jitter: true,
            checkpoint_every: 0,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.rays_per_step == 0 || self.coarse_samples == 0 || self.steps_per_epoch == 0 {
            return Err(Error::Config(
                "rays_per_step, coarse_samples and steps_per_epoch must be >= 1".into(),
            ));
        }
        if !(self.lr_initial >= 0.0 && self.lr_after >= 0.0) {
            return Err(Error::Config("learning rates must be non-negative".into()));
        }
        let a = self.adamw;
        if !(a.eps > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.weight_decay >= 0.0) {
            return Err(Error::Config(format!("invalid optimizer settings {a:?}")));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be >= 1".into()));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        self.max_steps.unwrap_or(self.max_epochs * self.steps_per_epoch)
    }

    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings {
            coarse_samples: self.coarse_samples,
            fine_samples: self.fine_samples,
            background: self.background,
            jitter: self.jitter,
        }
    }

    /// Step schedule: `lr_initial` before `lr_switch_epoch`, then `lr_after`.
    pub fn lr_schedule(&self, epoch: u64) -> Scalar {
        if epoch < self.lr_switch_epoch {
            self.lr_initial
        } else {
            self.lr_after
        }
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("bad value {v:?} for {key}"))
        }
        let m = &mut self.model;
        match key {
            "resolution" => m.resolution = num(key, value)?,
            "groups" => m.groups = num(key, value)?,
            "features" => m.features = num(key, value)?,
            "base_width" => m.base_width = num(key, value)?,
            "depth" => m.depth = num(key, value)?,
            "mlp_width" => m.mlp_width = num(key, value)?,
            "color_width" => m.color_width = num(key, value)?,
            "margin" => m.margin = num(key, value)?,
            "rays_per_step" => self.rays_per_step = num(key, value)?,
            "coarse_samples" => self.coarse_samples = num(key, value)?,
            "fine_samples" => self.fine_samples = num(key, value)?,
            "lr_initial" => self.lr_initial = num(key, value)?,
            "lr_after" => self.lr_after = num(key, value)?,
            "lr_switch_epoch" => self.lr_switch_epoch = num(key, value)?,
            "steps_per_epoch" => self.steps_per_epoch = num(key, value)?,
            "max_epochs" => self.max_epochs = num(key, value)?,
            "max_steps" => self.max_steps = Some(num(key, value)?),
            "weight_decay" => self.adamw.weight_decay = num(key, value)?,
            "beta1" => self.adamw.beta1 = num(key, value)?,
            "beta2" => self.adamw.beta2 = num(key, value)?,
            "eps" => self.adamw.eps = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "jitter" => self.jitter = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            "log_every" => self.log_every = num(key, value)?,
            "background" => {
                let parts: Vec<Scalar> = value
                    .split(',')
                    .map(|p| num(key, p.trim()))
                    .collect::<std::result::Result<_, _>>()?;
                self.background = parts
                    .try_into()
                    .map_err(|_| "background needs three comma-separated values".to_string())?;
            }
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let m = &self.model;
        let a = &self.adamw;
        let mut s = format!(
            "resolution = {}\ngroups = {}\nfeatures = {}\nbase_width = {}\ndepth = {}\nmlp_width = {}\ncolor_width = {}\nmargin = {}\n",
            m.resolution, m.groups, m.features, m.base_width, m.depth, m.mlp_width, m.color_width, m.margin
        );
        s += &format!(
            "rays_per_step = {}\ncoarse_samples = {}\nfine_samples = {}\nlr_initial = {}\nlr_after = {}\nlr_switch_epoch = {}\nsteps_per_epoch = {}\nmax_epochs = {}\n",
            self.rays_per_step, self.coarse_samples, self.fine_samples, self.lr_initial, self.lr_after,
            self.lr_switch_epoch, self.steps_per_epoch, self.max_epochs
        );
        if let Some(n) = self.max_steps {
            s += &format!("max_steps = {n}\n");
        }
        s += &format!(
            "weight_decay = {}\nbeta1 = {}\nbeta2 = {}\neps = {}\nseed = {}\njitter = {}\ncheckpoint_every = {}\nlog_every = {}\nbackground = {},{},{}\n",
            a.weight_decay, a.beta1, a.beta2, a.eps, self.seed, self.jitter, self.checkpoint_every,
            self.log_every, self.background[0], self.background[1], self.background[2]
        );
        s
    }
}

/// A prepared scene with its supervising views.
#[derive(Clone, Debug)]
pub struct TrainScene {
    pub prepared: PreparedScene,
    pub views: Vec<(Camera, Image)>,
}

impl TrainScene {
    pub fn new(prepared: PreparedScene, views: Vec<(Camera, Image)>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::Config("a training scene needs at least one view".into()));
        }
        for (cam, img) in &views {
            if (cam.width, cam.height) != (img.width(), img.height()) {
                return Err(Error::Config(format!(
                    "camera is {}x{} but its image is {}x{}",
                    cam.width,
                    cam.height,
                    img.width(),
                    img.height()
                )));
            }
        }
        Ok(Self { prepared, views })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub lr: Scalar,
    pub loss: Scalar,
    pub psnr: Scalar,
}

impl StepRecord {
    pub fn csv_line(&self) -> String {
        format!("{},{},{},{},{}", self.step, self.epoch, self.lr, self.loss, self.psnr)
    }
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: TriVolModel,
    pub optimizer: AdamW,
    scenes: Vec<TrainScene>,
}

/// Seed of the random stream used by step `step`.
fn step_seed(seed: u64, step: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng.gen()
}

impl Trainer {
    pub fn new(config: TrainConfig, scenes: Vec<TrainScene>) -> Result<Self> {
        config.validate()?;
        if scenes.is_empty() {
            return Err(Error::Config("training needs at least one scene".into()));
        }
        let model = TriVolModel::new(config.model, config.seed)?;
        let optimizer = AdamW::new(config.adamw, &model.store);
        Ok(Self {
            config,
            model,
            optimizer,
            scenes,
        })
    }

    pub fn scenes(&self) -> &[TrainScene] {
        &self.scenes
    }

    pub fn step_count(&self) -> u64 {
        self.optimizer.step
    }

    /// Runs one optimizer step and reports the loss measured before it.
    pub fn step(&mut self) -> Result<StepRecord> {
        let step = self.optimizer.step;
        let epoch = step / self.config.steps_per_epoch;
        let lr = self.config.lr_schedule(epoch);
        let seed = step_seed(self.config.seed, step);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = &self.scenes[rng.gen_range(0..self.scenes.len())];
        let (cam, image) = &scene.views[rng.gen_range(0..scene.views.len())];
        let n = self.config.rays_per_step;
        let bg = self.config.background;

        let mut rays = Vec::with_capacity(n);
        let mut rngs = Vec::with_capacity(n);
        let mut hit_target = Vec::with_capacity(n * 3);
        let mut miss_sq = 0.0;
        for k in 0..n {
            let px = rng.gen_range(0..cam.width);
            let py = rng.gen_range(0..cam.height);
            let target = image.pixel(px, py);
            match generate_ray(cam, px, py, &scene.prepared.bounds)? {
                Some(ray) => {
                    rays.push(ray);
                    rngs.push(ray_rng(seed, k as u64));
                    hit_target.extend_from_slice(&target);
                }
                None => miss_sq += (0..3).map(|c| (bg[c] - target[c]).powi(2)).sum::<Scalar>(),
            }
        }
        let count = (n * 3) as Scalar;
        let tape = Tape::new();
        let params = self.model.store.bind(&tape);
        let (loss, grads): (Scalar, Vec<Tensor>) = if rays.is_empty() {
            let zeros = self.model.store.values().iter().map(|t| Tensor::zeros(t.shape())).collect();
            (miss_sq / count, zeros)
        } else {
            let tri = self.model.decoder.decode(&params, &scene.prepared.initial, &tape)?;
            let colors = render_rays(&params, &self.model.head, &tri, &rays, &mut rngs, &self.config.render_settings())?;
            let hits = rays.len();
            // sum over hit rays, rescaled to the mean over the whole batch
            let sq = mse_loss(&colors, &Tensor::new(vec![hits, 3], hit_target)?)?;
            let loss = sq.scale((hits * 3) as Scalar / count)?;
            let value = loss.value().item()? + miss_sq / count;
            let mut g = tape.backward(&loss)?;
            let grads = params
                .vars()
                .iter()
                .map(|v| g.take(v).unwrap_or_else(|| Tensor::zeros(v.shape())))
                .collect();
            (value, grads)
        };
        self.optimizer.step(&mut self.model.store, &grads, lr)?;
        Ok(StepRecord {
            step,
            epoch,
            lr,
            loss,
            psnr: psnr_from_mse(loss),
        })
    }

    /// Trains until `total_steps`, writing CSV rows to `log` and
    /// checkpoints to `checkpoint` when given.
    pub fn run(&mut self, log: &mut dyn Write, checkpoint: Option<&Path>) -> Result<Vec<StepRecord>> {
        let total = self.config.total_steps();
        let mut records = Vec::new();
        let io = |e: std::io::Error| Error::Io {
            path: "<training log>".into(),
            source: e,
        };
        if self.optimizer.step == 0 {
            writeln!(log, "{LOG_HEADER}").map_err(io)?;
        }
        while self.optimizer.step < total {
            let rec = self.step()?;
            if rec.step % self.config.log_every == 0 || self.optimizer.step == total {
                writeln!(log, "{}", rec.csv_line()).map_err(io)?;
            }
            records.push(rec);
            let every = self.config.checkpoint_every;
            if let Some(path) = checkpoint {
                if every > 0 && self.optimizer.step % every == 0 && self.optimizer.step < total {
                    self.save_checkpoint(path)?;
                }
            }
        }
        if let Some(path) = checkpoint {
            self.save_checkpoint(path)?;
        }
        Ok(records)
    }

    /// Model, moments and step counter.
    pub fn to_named(&self) -> NamedTensors {
        let mut out = self.model.to_named();
        out.push("train.step", Tensor::scalar(self.optimizer.step as Scalar));
        for (id, (m, v)) in self.model.store.ids().zip(self.optimizer.m.iter().zip(&self.optimizer.v)) {
            let name = self.model.store.name(id);
            out.push(format!("adamw.m.{name}"), m.clone());
            out.push(format!("adamw.v.{name}"), v.clone());
        }
        out
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        self.to_named().save(path)
    }

    /// Restores weights, moments and step from a training checkpoint.
    pub fn resume(config: TrainConfig, scenes: Vec<TrainScene>, path: &Path) -> Result<Self> {
        let named = NamedTensors::load(path)?;
        let stored = ModelConfig::from_named(&named)?;
        if stored != config.model {
            return Err(Error::Config(format!(
                "checkpoint {} was trained with {stored:?}, config asks for {:?}",
                path.display(),
                config.model
            )));
        }
        let mut trainer = Self::new(config, scenes)?;
        trainer.model.store.load_from(&named)?;
        let missing = |k: &str| Error::Config(format!("checkpoint {} lacks {k}", path.display()));
        trainer.optimizer.step = named.get("train.step").ok_or_else(|| missing("train.step"))?.item()? as u64;
        for (k, id) in trainer.model.store.ids().enumerate() {
            let name = trainer.model.store.name(id).to_string();
            for (prefix, slot) in [("adamw.m.", &mut trainer.optimizer.m[k]), ("adamw.v.", &mut trainer.optimizer.v[k])] {
                let key = format!("{prefix}{name}");
                let t = named.get(&key).ok_or_else(|| missing(&key))?;
                if t.shape() != slot.shape() {
                    return Err(Error::Config(format!("{key} has shape {:?}", t.shape())));
                }
                *slot = t.clone();
            }
        }
        Ok(trainer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_gradients, GradCheckConfig};

    #[test]
    fn mse_values_and_gradient() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::ones(&[1, 3]));
        let l = mse_loss(&a, &Tensor::zeros(&[1, 3])).unwrap();
        assert_eq!(l.value().item().unwrap(), 1.0);
        let same = mse_loss(&tape.constant(Tensor::full(&[2, 3], 0.3)), &Tensor::full(&[2, 3], 0.3)).unwrap();
        assert_eq!(same.value().item().unwrap(), 0.0);
        assert!(matches!(mse_loss(&a, &Tensor::zeros(&[2, 3])), Err(Error::Contract(_))));

        let rendered = Tensor::new(vec![2, 3], vec![0.1, 0.5, 0.9, 0.3, 0.2, 0.7]).unwrap();
        let target = Tensor::new(vec![2, 3], vec![0.0, 1.0, 0.5, 0.5, 0.5, 0.5]).unwrap();
        let tape = Tape::new();
        let r = tape.leaf(rendered.clone());
        let g = tape.backward(&mse_loss(&r, &target).unwrap()).unwrap();
        let got = g.get(&r).unwrap().data();
        for i in 0..6 {
            let expect = 2.0 * (rendered.data()[i] - target.data()[i]) / 6.0;
            assert!((got[i] - expect).abs() < 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let report = check_gradients(&[rendered], |_, v| mse_loss(&v[0], &target), &GradCheckConfig::default(), &mut rng).unwrap();
        assert!(report.passed());
    }

    fn scalar_store(value: Scalar) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(value));
        s
    }

    #[test]
    fn adamw_two_steps_by_hand() {
        let cfg = AdamWConfig {
            weight_decay: 0.1,
            ..AdamWConfig::default()
        };
        let mut store = scalar_store(1.0);
        let mut opt = AdamW::new(cfg, &store);
        let lr = 0.01;
        opt.step(&mut store, &[Tensor::scalar(0.5)], lr).unwrap();
        opt.step(&mut store, &[Tensor::scalar(-0.2)], lr).unwrap();

        let (b1, b2, eps): (Scalar, Scalar, Scalar) = (0.9, 0.999, 1e-8);
        let mut p: Scalar = 1.0;
        // step 1
        let (m1, v1) = (0.1 * 0.5, 0.001 * 0.25);
        p = p * (1.0 - lr * 0.1) - lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
        // step 2
        let m2 = b1 * m1 + 0.1 * -0.2;
        let v2 = b2 * v1 + 0.001 * 0.04;
        p = p * (1.0 - lr * 0.1) - lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);
        let got = store.get(store.ids().next().unwrap()).item().unwrap();
        assert!((got - p).abs() < 1e-12, "{got} vs {p}");
    }

    #[test]
    fn adamw_null_and_decay_only_updates() {
        let no_wd = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut store = scalar_store(2.0);
        let mut opt = AdamW::new(no_wd, &store);
        for _ in 0..3 {
            opt.step(&mut store, &[Tensor::scalar(0.0)], 0.1).unwrap();
        }
        assert_eq!(store.values()[0].item().unwrap(), 2.0);

        let wd = AdamWConfig {
            weight_decay: 0.5,
            ..AdamWConfig::default()
        };
        let mut store = scalar_store(2.0);
        let mut opt = AdamW::new(wd, &store);
        for k in 1..=3 {
            opt.step(&mut store, &[Tensor::scalar(0.0)], 0.1).unwrap();
            let expect = 2.0 * (1.0 - 0.05 as Scalar).powi(k);
            assert!((store.values()[0].item().unwrap() - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn adamw_rejects_non_finite_gradients_untouched() {
        let mut store = scalar_store(1.0);
        let mut opt = AdamW::new(AdamWConfig::default(), &store);
        let before = (store.clone(), opt.clone());
        assert!(matches!(
            opt.step(&mut store, &[Tensor::scalar(Scalar::NAN)], 0.1),
            Err(Error::Numeric(_))
        ));
        assert_eq!((store, opt), before);
    }

    #[test]
    fn lr_schedule_boundaries() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_schedule(0), 1e-3);
        assert_eq!(cfg.lr_schedule(99), 1e-3);
        assert_eq!(cfg.lr_schedule(100), 1e-4);
    }

    #[test]
    fn config_parse_roundtrip_and_errors() {
        let p = Path::new("t.cfg");
        let text = "# toy\nresolution = 16\ngroups=4 # inline\nrays_per_step = 64\nmax_steps = 10\nbackground = 0,0.5,1\njitter = false\n";
        let cfg = TrainConfig::parse(text, p).unwrap();
        assert_eq!(cfg.model.resolution, 16);
        assert_eq!(cfg.max_steps, Some(10));
        assert_eq!(cfg.background, [0.0, 0.5, 1.0]);
        assert!(!cfg.jitter);
        assert_eq!(TrainConfig::parse(&cfg.to_text(), p).unwrap(), cfg);
        match TrainConfig::parse("a = 1\nbogus = 3", p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
        assert!(matches!(TrainConfig::parse("groups = three", p), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(TrainConfig::parse("groups = 3", p), Err(Error::Config(_))));
        assert!(matches!(TrainConfig::parse("rays_per_step = 0", p), Err(Error::Config(_))));
    }
}
