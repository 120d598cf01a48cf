//! Cost comparison between the three slim-volume decoders and a dense
//! voxel UNet of the same width.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::alloc_track::measure_peak;
use crate::decoder::{TriVolDecoder, UNet3D, UNet3DConfig};
use crate::encoder::encode_tensor;
use crate::params::ParamStore;
use crate::pointcloud::GRID_CHANNELS;
use crate::tensor::{Scalar, Tape, Tensor};
use crate::{Error, Result};

pub const CSV_HEADER: &str =
    "resolution,groups,trivol_cells,dense_cells,trivol_peak_bytes,dense_peak_bytes,trivol_seconds,dense_seconds";

/// Cells in the three slim volumes, `3 G S^2`.
pub fn trivol_cells(resolution: usize, groups: usize) -> usize {
    3 * groups * resolution * resolution
}

pub fn dense_cells(resolution: usize) -> usize {
    resolution.pow(3)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchConfig {
    pub features: usize,
    pub base_width: usize,
    pub depth: usize,
    /// Timed repetitions; the fastest is reported.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            features: 8,
            base_width: 16,
            depth: 2,
            repeats: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cost {
    /// Peak heap growth during the forward pass.
    pub peak_bytes: usize,
    pub seconds: Scalar,
}

fn timed(repeats: usize, mut run: impl FnMut() -> Result<()>) -> Result<Cost> {
    let mut best = Scalar::INFINITY;
    let mut peak = 0;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let (res, bytes) = measure_peak(&mut run);
        res?;
        best = best.min(start.elapsed().as_secs_f64());
        peak = peak.max(bytes);
    }
    Ok(Cost {
        peak_bytes: peak,
        seconds: best,
    })
}

fn random_grid(resolution: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::uniform(&[GRID_CHANNELS, resolution, resolution, resolution], 1.0, &mut rng).map(Scalar::abs)
}

/// Forward pass of the three decoders on a grouped random grid.
pub fn measure_trivol(resolution: usize, groups: usize, cfg: &BenchConfig) -> Result<Cost> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let in_channels = GRID_CHANNELS * resolution / groups.max(1);
    let dec = TriVolDecoder::new(in_channels, cfg.features, cfg.base_width, cfg.depth, &mut store, &mut rng)?;
    let initial = encode_tensor(&random_grid(resolution, cfg.seed), groups)?;
    timed(cfg.repeats, || {
        let tape = Tape::new();
        let params = store.bind_frozen(&tape);
        dec.decode(&params, &initial, &tape).map(|_| ())
    })
}

/// Forward pass of one dense UNet on the ungrouped grid.
pub fn measure_dense(resolution: usize, cfg: &BenchConfig) -> Result<Cost> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let net = UNet3D::new(
        UNet3DConfig {
            in_channels: GRID_CHANNELS,
            out_channels: cfg.features,
            base_width: cfg.base_width,
            depth: cfg.depth,
            fixed_axis: None,
        },
        "dense",
        &mut store,
        &mut rng,
    )?;
    let grid = random_grid(resolution, cfg.seed);
    timed(cfg.repeats, || {
        let tape = Tape::new();
        let params = store.bind_frozen(&tape);
        let input = tape.constant(grid.clone());
        net.forward(&params, &input).map(|_| ())
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchRow {
    pub resolution: usize,
    pub groups: usize,
    pub trivol_cells: usize,
    pub dense_cells: usize,
    pub trivol: Option<Cost>,
    pub dense: Option<Cost>,
}

impl BenchRow {
    pub fn csv_line(&self) -> String {
        let f = |c: Option<Cost>| match c {
            Some(c) => (c.peak_bytes.to_string(), format!("{:.6}", c.seconds)),
            None => (String::new(), String::new()),
        };
        let (tp, ts) = f(self.trivol);
        let (dp, ds) = f(self.dense);
        format!(
            "{},{},{},{},{tp},{dp},{ts},{ds}",
            self.resolution, self.groups, self.trivol_cells, self.dense_cells
        )
    }
}

/// Checks that `(S, G)` is a configuration the decoders accept.
pub fn check_config(resolution: usize, groups: usize, depth: usize) -> Result<()> {
    if groups == 0 || resolution % groups != 0 {
        return Err(Error::Config(format!("S={resolution} is not divisible by G={groups}")));
    }
    if resolution % (1 << depth) != 0 {
        return Err(Error::Config(format!("S={resolution} is not divisible by 2^{depth}")));
    }
    Ok(())
}

/// Every valid `(S, G)` pair, ordered by S then G. Costs are measured
/// only when `measure` is set.
pub fn sweep(resolutions: &[usize], groups: &[usize], cfg: &BenchConfig, measure: bool) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &s in resolutions {
        let dense = if measure { Some(measure_dense(s, cfg)?) } else { None };
        for &g in groups {
            if check_config(s, g, cfg.depth).is_err() {
                continue;
            }
            rows.push(BenchRow {
                resolution: s,
                groups: g,
                trivol_cells: trivol_cells(s, g),
                dense_cells: dense_cells(s),
                trivol: if measure { Some(measure_trivol(s, g, cfg)?) } else { None },
                dense,
            });
        }
    }
    Ok(rows)
}
