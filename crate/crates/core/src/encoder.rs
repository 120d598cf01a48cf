//! Parameter-free axis grouping that turns a dense `[C, S, S, S]` grid
//! into three slim volumes.
//!
//! Along the grouped axis, each run of `N = S / G` consecutive voxels is
//! folded into the channel dimension: input channel `c` at in-group
//! offset `j` becomes output channel `c + C * j`.

use crate::pointcloud::GridVolume;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    /// Spatial axis index (0 = x).
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

fn cube_dims(v: &Tensor) -> Result<(usize, usize)> {
    match *v.shape() {
        [c, a, b, d] if a == b && b == d => Ok((c, a)),
        ref s => Err(Error::Dimension(format!(
            "grouping needs a [C, S, S, S] volume, got {s:?}"
        ))),
    }
}

fn check_groups(s: usize, groups: usize) -> Result<usize> {
    if groups == 0 || s % groups != 0 {
        return Err(Error::Parameter(format!(
            "resolution {s} is not divisible by group count {groups}"
        )));
    }
    Ok(s / groups)
}

/// Flat index pairs `(dense, grouped)` for every element.
fn for_each_pair(c: usize, s: usize, axis: Axis, groups: usize, mut f: impl FnMut(usize, usize)) {
    let n = s / groups;
    let a = axis.index();
    let mut out_dims = [s; 3];
    out_dims[a] = groups;
    for ch in 0..c {
        for i in 0..s {
            for j in 0..s {
                for k in 0..s {
                    let dense = ((ch * s + i) * s + j) * s + k;
                    let mut pos = [i, j, k];
                    let within = pos[a] % n;
                    pos[a] /= n;
                    let out_ch = ch + c * within;
                    let grouped = ((out_ch * out_dims[0] + pos[0]) * out_dims[1] + pos[1])
                        * out_dims[2]
                        + pos[2];
                    f(dense, grouped);
                }
            }
        }
    }
}

fn grouped_shape(c: usize, s: usize, axis: Axis, groups: usize) -> Vec<usize> {
    let mut shape = vec![c * (s / groups), s, s, s];
    shape[1 + axis.index()] = groups;
    shape
}

/// Groups `volume [C, S, S, S]` along `axis` into `G` slabs.
pub fn group_axis(volume: &Tensor, axis: Axis, groups: usize) -> Result<Tensor> {
    let (c, s) = cube_dims(volume)?;
    check_groups(s, groups)?;
    let src = volume.data();
    let mut out = vec![0.0; src.len()];
    for_each_pair(c, s, axis, groups, |dense, grouped| out[grouped] = src[dense]);
    Tensor::new(grouped_shape(c, s, axis, groups), out)
}

/// Inverse of [`group_axis`] for a grid with `channels` channels.
pub fn ungroup_axis(grouped: &Tensor, axis: Axis, channels: usize) -> Result<Tensor> {
    let shape = grouped.shape();
    if shape.len() != 4 || channels == 0 || shape[0] % channels != 0 {
        return Err(Error::Dimension(format!(
            "cannot ungroup {shape:?} into {channels} channels"
        )));
    }
    let n = shape[0] / channels;
    let a = axis.index();
    let groups = shape[1 + a];
    let s = groups * n;
    if grouped_shape(channels, s, axis, groups) != shape {
        return Err(Error::Dimension(format!(
            "{shape:?} is not a {}-grouped volume",
            axis.label()
        )));
    }
    let src = grouped.data();
    let mut out = vec![0.0; src.len()];
    for_each_pair(channels, s, axis, groups, |dense, g| out[dense] = src[g]);
    Tensor::new(vec![channels, s, s, s], out)
}

/// The three grouped volumes before decoding.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialTriVol {
    pub vx: Tensor,
    pub vy: Tensor,
    pub vz: Tensor,
    pub groups: usize,
    /// Voxels folded per group (`S / G`).
    pub per_group: usize,
}

impl InitialTriVol {
    pub fn volume(&self, axis: Axis) -> &Tensor {
        match axis {
            Axis::X => &self.vx,
            Axis::Y => &self.vy,
            Axis::Z => &self.vz,
        }
    }

    pub fn channels(&self) -> usize {
        self.vx.shape()[0]
    }

    /// Total cells across the three volumes (`3 * G * S^2`).
    pub fn cells(&self) -> usize {
        Axis::ALL
            .iter()
            .map(|&a| self.volume(a).shape()[1..].iter().product::<usize>())
            .sum()
    }
}

pub fn encode_trivol(volume: &GridVolume, groups: usize) -> Result<InitialTriVol> {
    encode_tensor(volume.data(), groups)
}

pub fn encode_tensor(volume: &Tensor, groups: usize) -> Result<InitialTriVol> {
    let (_, s) = cube_dims(volume)?;
    let per_group = check_groups(s, groups)?;
    Ok(InitialTriVol {
        vx: group_axis(volume, Axis::X, groups)?,
        vy: group_axis(volume, Axis::Y, groups)?,
        vz: group_axis(volume, Axis::Z, groups)?,
        groups,
        per_group,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn full_group_count_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let v = Tensor::uniform(&[4, 8, 8, 8], 1.0, &mut rng);
        for axis in Axis::ALL {
            assert_eq!(group_axis(&v, axis, 8).unwrap(), v);
        }
    }

    #[test]
    fn paper_scale_shape() {
        // shape arithmetic only; a 4 x 256^3 tensor is 512 MiB
        assert_eq!(grouped_shape(4, 256, Axis::X, 16), vec![64, 16, 256, 256]);
        assert_eq!(grouped_shape(4, 256, Axis::Y, 16), vec![64, 256, 16, 256]);
        assert_eq!(grouped_shape(4, 256, Axis::Z, 16), vec![64, 256, 256, 16]);
    }

    #[test]
    fn desk_scale_shapes_and_zero_volume() {
        let tri = encode_tensor(&Tensor::zeros(&[4, 32, 32, 32]), 4).unwrap();
        assert_eq!(tri.vx.shape(), &[32, 4, 32, 32]);
        assert_eq!(tri.vy.shape(), &[32, 32, 4, 32]);
        assert_eq!(tri.vz.shape(), &[32, 32, 32, 4]);
        assert_eq!(tri.per_group, 8);
        for a in Axis::ALL {
            assert!(tri.volume(a).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn one_hot_voxel_lands_at_computed_index() {
        let (c, s, g) = (2usize, 8usize, 2usize);
        let n = s / g;
        let (ch, i, j, k) = (1usize, 5usize, 2usize, 7usize);
        let mut v = Tensor::zeros(&[c, s, s, s]);
        v.data_mut()[((ch * s + i) * s + j) * s + k] = 1.0;
        let tri = encode_tensor(&v, g).unwrap();
        let at = |t: &Tensor, idx: [usize; 4]| {
            let sh = t.shape();
            t.data()[((idx[0] * sh[1] + idx[1]) * sh[2] + idx[2]) * sh[3] + idx[3]]
        };
        assert_eq!(at(&tri.vx, [ch + c * (i % n), i / n, j, k]), 1.0);
        assert_eq!(at(&tri.vy, [ch + c * (j % n), i, j / n, k]), 1.0);
        assert_eq!(at(&tri.vz, [ch + c * (k % n), i, j, k / n]), 1.0);
        for a in Axis::ALL {
            assert_eq!(tri.volume(a).data().iter().filter(|&&x| x != 0.0).count(), 1);
        }
    }

    #[test]
    fn rejects_indivisible_groups() {
        let v = Tensor::zeros(&[1, 8, 8, 8]);
        assert!(matches!(group_axis(&v, Axis::X, 3), Err(Error::Parameter(_))));
        assert!(matches!(group_axis(&v, Axis::X, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn ungroup_inverts_group() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let v = Tensor::uniform(&[2, 8, 8, 8], 1.0, &mut rng);
        for axis in Axis::ALL {
            let g = group_axis(&v, axis, 2).unwrap();
            assert_eq!(ungroup_axis(&g, axis, 2).unwrap(), v);
        }
    }
}
