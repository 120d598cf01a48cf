//! Central finite-difference checks for tape gradients.
//!
//! The numeric side only evaluates forward passes, so it stays
//! independent of every backward rule it checks.

use rand::Rng;

use super::{Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: Scalar,
    pub tolerance: Scalar,
    /// Coordinates probed; every coordinate is probed when there are fewer.
    pub samples: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            tolerance: 1e-4,
            samples: 20,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Probe {
    pub input: usize,
    pub index: usize,
    pub analytic: Scalar,
    pub numeric: Scalar,
    /// `|analytic - numeric| / max(1, |numeric|)`
    pub error: Scalar,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
    pub tolerance: Scalar,
}

impl GradCheckReport {
    pub fn max_error(&self) -> Scalar {
        self.probes.iter().map(|p| p.error).fold(0.0, Scalar::max)
    }

    pub fn passed(&self) -> bool {
        !self.probes.is_empty() && self.probes.iter().all(|p| p.error < self.tolerance)
    }
}

/// Picks `samples` distinct random `(input, flat index)` coordinates.
pub fn random_coordinates<R: Rng + ?Sized>(
    inputs: &[Tensor],
    samples: usize,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let all: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
        .collect();
    if all.len() <= samples {
        return all;
    }
    rand::seq::index::sample(rng, all.len(), samples)
        .into_iter()
        .map(|k| all[k])
        .collect()
}

fn evaluate<F>(inputs: &[Tensor], f: &F) -> Result<Scalar>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    f(&tape, &vars)?.value().item()
}

/// Compares tape gradients of the scalar `f(inputs)` with central
/// differences at random coordinates.
pub fn check_gradients<F, R>(
    inputs: &[Tensor],
    f: F,
    cfg: &GradCheckConfig,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
    R: Rng + ?Sized,
{
    let coords = random_coordinates(inputs, cfg.samples, rng);
    check_gradients_at(inputs, &coords, f, cfg)
}

/// Same as [`check_gradients`] at explicit coordinates.
pub fn check_gradients_at<F>(
    inputs: &[Tensor],
    coords: &[(usize, usize)],
    f: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &vars)?;
    if out.value().numel() != 1 {
        return Err(Error::Contract("gradient check needs a scalar function".into()));
    }
    let grads = tape.backward(&out)?;
    let mut probes = Vec::with_capacity(coords.len());
    let mut work = inputs.to_vec();
    for &(input, index) in coords {
        let analytic = grads
            .get(&vars[input])
            .map(|g| g.data()[index])
            .unwrap_or(0.0);
        let original = work[input].data()[index];
        work[input].data_mut()[index] = original + cfg.step;
        let plus = evaluate(&work, &f)?;
        work[input].data_mut()[index] = original - cfg.step;
        let minus = evaluate(&work, &f)?;
        work[input].data_mut()[index] = original;
        let numeric = (plus - minus) / (2.0 * cfg.step);
        let error = (analytic - numeric).abs() / numeric.abs().max(1.0);
        probes.push(Probe {
            input,
            index,
            analytic,
            numeric,
            error,
        });
    }
    Ok(GradCheckReport {
        probes,
        tolerance: cfg.tolerance,
    })
}
