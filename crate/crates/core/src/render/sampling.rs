//! Depth sampling along rays: stratified coarse samples and inverse-CDF
//! fine samples.

use rand::Rng;

use super::camera::{Ray, Vec3};
use crate::tensor::Scalar;
use crate::{Error, Result};

/// Ascending depths along one ray with their compositing intervals.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySampleBatch {
    pub depths: Vec<Scalar>,
    pub deltas: Vec<Scalar>,
}

impl RaySampleBatch {
    /// Builds deltas from sorted `depths`; the last interval runs to `far`.
    pub fn from_depths(depths: Vec<Scalar>, far: Scalar) -> Result<Self> {
        if depths.is_empty() {
            return Err(Error::Contract("a ray needs at least one sample".into()));
        }
        if depths.windows(2).any(|w| w[1] < w[0]) || *depths.last().unwrap() > far {
            return Err(Error::Contract("sample depths must ascend and end before far".into()));
        }
        let mut deltas: Vec<Scalar> = depths.windows(2).map(|w| w[1] - w[0]).collect();
        deltas.push(far - depths[depths.len() - 1]);
        Ok(Self { depths, deltas })
    }

    pub fn len(&self) -> usize {
        self.depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depths.is_empty()
    }

    pub fn positions(&self, ray: &Ray) -> Vec<Vec3> {
        self.depths.iter().map(|&z| ray.at(z)).collect()
    }
}

fn stratified_depths<R: Rng + ?Sized>(ray: &Ray, m: usize, jitter: bool, rng: &mut R) -> Vec<Scalar> {
    let width = (ray.far - ray.near) / m as Scalar;
    (0..m)
        .map(|i| {
            let u: Scalar = if jitter { rng.gen() } else { 0.5 };
            // min keeps rounding from escaping the last bin
            (ray.near + (i as Scalar + u) * width).min(ray.far)
        })
        .collect()
}

/// One sample per equal bin of `[near, far]`: the bin center, or a
/// uniform draw inside the bin when `jitter` is set.
pub fn stratified_sample<R: Rng + ?Sized>(ray: &Ray, m: usize, jitter: bool, rng: &mut R) -> Result<RaySampleBatch> {
    if m == 0 {
        return Err(Error::Contract("stratified_sample needs M >= 1".into()));
    }
    RaySampleBatch::from_depths(stratified_depths(ray, m, jitter, rng), ray.far)
}

/// Draws `m_fine` depths from the piecewise-constant density given by
/// `weights` over the equal bins of `[near, far]`, then merges them with
/// `coarse` depths. All-zero weights fall back to stratified draws.
pub fn importance_sample<R: Rng + ?Sized>(
    ray: &Ray,
    coarse: &RaySampleBatch,
    weights: &[Scalar],
    m_fine: usize,
    rng: &mut R,
) -> Result<RaySampleBatch> {
    if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::Contract("importance weights must be finite and non-negative".into()));
    }
    let total: Scalar = weights.iter().sum();
    let fine = if total > 0.0 {
        let bins = weights.len();
        let width = (ray.far - ray.near) / bins as Scalar;
        let mut cdf = Vec::with_capacity(bins + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        for w in weights {
            acc += w / total;
            cdf.push(acc);
        }
        (0..m_fine)
            .map(|_| {
                let u: Scalar = rng.gen::<Scalar>() * acc;
                // first bin whose upper CDF edge exceeds u, skipping empty bins
                let k = cdf[1..].partition_point(|&c| c <= u).min(bins - 1);
                let frac = ((u - cdf[k]) / (cdf[k + 1] - cdf[k])).clamp(0.0, 1.0);
                (ray.near + (k as Scalar + frac) * width).min(ray.far)
            })
            .collect()
    } else if m_fine > 0 {
        stratified_depths(ray, m_fine, true, rng)
    } else {
        Vec::new()
    };
    let mut depths = coarse.depths.clone();
    depths.extend(fine);
    depths.sort_by(Scalar::total_cmp);
    RaySampleBatch::from_depths(depths, ray.far)
}
