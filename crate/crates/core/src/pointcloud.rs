//! Colored point clouds: text I/O, unit-cube normalization and dense
//! voxelization.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

/// Feature channels of a [`GridVolume`]: mean RGB plus occupancy.
pub const GRID_CHANNELS: usize = 4;
/// Point count at which a voxel's occupancy saturates to 1.
pub const OCCUPANCY_CAP: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    positions: Vec<[Scalar; 3]>,
    colors: Vec<[Scalar; 3]>,
}

impl PointCloud {
    pub fn new(positions: Vec<[Scalar; 3]>, colors: Vec<[Scalar; 3]>) -> Result<Self> {
        if positions.len() != colors.len() {
            return Err(Error::Validation(format!(
                "{} positions but {} colors",
                positions.len(),
                colors.len()
            )));
        }
        if positions.is_empty() {
            return Err(Error::Validation("no points".into()));
        }
        if let Some(i) = positions.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::Validation(format!("point {i} has a non-finite coordinate")));
        }
        if let Some(i) = colors
            .iter()
            .position(|c| c.iter().any(|v| !(0.0..=1.0).contains(v)))
        {
            return Err(Error::Validation(format!(
                "point {i} has color {:?} outside [0, 1]",
                colors[i]
            )));
        }
        Ok(Self { positions, colors })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[[Scalar; 3]] {
        &self.positions
    }

    pub fn colors(&self) -> &[[Scalar; 3]] {
        &self.colors
    }

    /// Parses `x y z r g b` lines; `#` starts a comment.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut positions = Vec::new();
        let mut colors = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message,
            };
            let values = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<Scalar>()
                        .map_err(|_| parse_err(format!("not a number: {tok:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let [x, y, z, r, g, b] = values[..] else {
                return Err(parse_err(format!(
                    "expected 6 values (x y z r g b), found {}",
                    values.len()
                )));
            };
            if [x, y, z].iter().any(|v| !v.is_finite()) {
                return Err(parse_err("non-finite coordinate".into()));
            }
            if [r, g, b].iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Validation(format!(
                    "{}:{}: color ({r}, {g}, {b}) outside [0, 1]",
                    path.display(),
                    n + 1
                )));
            }
            positions.push([x, y, z]);
            colors.push([r, g, b]);
        }
        if positions.is_empty() {
            return Err(Error::Validation(format!("{}: no points", path.display())));
        }
        Self::new(positions, colors)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Shortest round-trip decimal formatting, so save/load is exact.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.len() * 64);
        for (p, c) in self.positions.iter().zip(&self.colors) {
            let _ = writeln!(s, "{} {} {} {} {} {}", p[0], p[1], p[2], c[0], c[1], c[2]);
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Points with indices in `keep`, in that order.
    pub fn subset(&self, keep: &[usize]) -> Result<Self> {
        Self::new(
            keep.iter().map(|&i| self.positions[i]).collect(),
            keep.iter().map(|&i| self.colors[i]).collect(),
        )
    }
}

/// World-space cube that normalization maps onto `[0, 1]^3`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneBounds {
    pub min: [Scalar; 3],
    pub max: [Scalar; 3],
}

impl SceneBounds {
    pub fn new(min: [Scalar; 3], max: [Scalar; 3]) -> Result<Self> {
        if (0..3).any(|a| !(max[a] > min[a]) || !min[a].is_finite() || !max[a].is_finite()) {
            return Err(Error::Validation(format!(
                "scene bounds need max > min on every axis, got {min:?} / {max:?}"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn unit() -> Self {
        Self {
            min: [0.0; 3],
            max: [1.0; 3],
        }
    }

    pub fn extent(&self) -> [Scalar; 3] {
        std::array::from_fn(|a| self.max[a] - self.min[a])
    }

    /// World point to normalized coordinates.
    pub fn to_unit(&self, p: [Scalar; 3]) -> [Scalar; 3] {
        let e = self.extent();
        std::array::from_fn(|a| (p[a] - self.min[a]) / e[a])
    }

    /// Factor by which world lengths shrink along `axis`.
    pub fn scale(&self, axis: usize) -> Scalar {
        1.0 / self.extent()[axis]
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let b: SceneBounds =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        Self::new(b.min, b.max)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("bounds serialize");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Cube bounds that fit `pc` into `[margin, 1 - margin]^3` with one
/// uniform scale (longest axis spans the range, others centered).
pub fn fit_bounds(pc: &PointCloud, margin: Scalar) -> Result<SceneBounds> {
    if !(0.0..0.5).contains(&margin) {
        return Err(Error::Parameter(format!(
            "margin must lie in [0, 0.5), got {margin}"
        )));
    }
    let mut lo = [Scalar::INFINITY; 3];
    let mut hi = [Scalar::NEG_INFINITY; 3];
    for p in pc.positions() {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let longest = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, Scalar::max);
    if longest <= 0.0 {
        return Err(Error::Validation(
            "degenerate point cloud: zero extent on every axis".into(),
        ));
    }
    let side = longest / (1.0 - 2.0 * margin);
    let min = std::array::from_fn(|a| 0.5 * (lo[a] + hi[a]) - 0.5 * side);
    let max = std::array::from_fn(|a| 0.5 * (lo[a] + hi[a]) + 0.5 * side);
    SceneBounds::new(min, max)
}

/// Maps `pc` into the unit cube; returns the world-space cube it came
/// from so cameras can be converted the same way.
pub fn normalize(pc: &PointCloud, margin: Scalar) -> Result<(PointCloud, SceneBounds)> {
    let bounds = fit_bounds(pc, margin)?;
    let positions = pc
        .positions()
        .iter()
        .map(|&p| bounds.to_unit(p).map(|v| v.clamp(0.0, 1.0)))
        .collect();
    Ok((PointCloud::new(positions, pc.colors().to_vec())?, bounds))
}

/// Dense `[4, S, S, S]` voxelization: mean color in channels 0..3,
/// `min(1, count / 8)` in channel 3. Axis order is (x, y, z).
#[derive(Clone, Debug, PartialEq)]
pub struct GridVolume {
    data: Tensor,
    resolution: usize,
}

impl GridVolume {
    pub fn from_tensor(data: Tensor) -> Result<Self> {
        match *data.shape() {
            [_, a, b, c] if a == b && b == c && a > 0 => Ok(Self {
                resolution: a,
                data,
            }),
            ref s => Err(Error::Dimension(format!(
                "grid volume must be [C, S, S, S], got {s:?}"
            ))),
        }
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn voxel_index(p: [Scalar; 3], s: usize) -> [usize; 3] {
        p.map(|v| ((v * s as Scalar).floor() as usize).min(s - 1))
    }

    /// Voxels with non-zero occupancy.
    pub fn occupied(&self) -> usize {
        let cells = self.resolution.pow(3);
        self.data.data()[3 * cells..4 * cells]
            .iter()
            .filter(|&&v| v > 0.0)
            .count()
    }
}

pub fn voxelize(pc: &PointCloud, resolution: usize) -> Result<GridVolume> {
    if resolution < 4 {
        return Err(Error::Parameter(format!(
            "voxel resolution must be >= 4, got {resolution}"
        )));
    }
    if let Some(p) = pc
        .positions()
        .iter()
        .find(|p| p.iter().any(|v| !(0.0..=1.0).contains(v)))
    {
        return Err(Error::Contract(format!(
            "voxelize needs normalized points in [0, 1]^3, found {p:?}"
        )));
    }
    let s = resolution;
    let cells = s * s * s;
    let mut sums = vec![[0.0; 3]; cells];
    let mut counts = vec![0usize; cells];
    for (p, c) in pc.positions().iter().zip(pc.colors()) {
        let [i, j, k] = GridVolume::voxel_index(*p, s);
        let v = (i * s + j) * s + k;
        for ch in 0..3 {
            sums[v][ch] += c[ch];
        }
        counts[v] += 1;
    }
    let mut data = vec![0.0; GRID_CHANNELS * cells];
    for v in 0..cells {
        let n = counts[v];
        if n == 0 {
            continue;
        }
        for ch in 0..3 {
            data[ch * cells + v] = sums[v][ch] / n as Scalar;
        }
        data[3 * cells + v] = (n as Scalar / OCCUPANCY_CAP as Scalar).min(1.0);
    }
    GridVolume::from_tensor(Tensor::new(vec![GRID_CHANNELS, s, s, s], data)?)
}
