//! Trilinear sampling of `[F, A, B, C]` volumes spanning the unit cube.
//!
//! Cell `i` of an axis with `n` cells has its center at `(i + 0.5) / n`.
//! Between the outermost centers and the cube faces the nearest cell is
//! replicated. Points outside `[0, 1]^3` sample zero.

use super::{Operation, Scalar, Tensor, Var};
use crate::{Error, Result};

struct Corners {
    /// `[lower, upper]` cell index per axis.
    idx: [[usize; 2]; 3],
    /// Fractional position between lower and upper centers.
    frac: [Scalar; 3],
}

fn corners(dims: [usize; 3], x: [Scalar; 3]) -> Option<Corners> {
    let mut idx = [[0; 2]; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        if !(0.0..=1.0).contains(&x[a]) {
            return None;
        }
        let u = x[a] * dims[a] as Scalar - 0.5;
        let i0 = u.floor();
        frac[a] = u - i0;
        let last = dims[a] as isize - 1;
        let i0 = i0 as isize;
        idx[a] = [i0.clamp(0, last) as usize, (i0 + 1).clamp(0, last) as usize];
    }
    Some(Corners { idx, frac })
}

impl Corners {
    /// `(flat spatial offset, weight, d weight / d frac)` of the 8 corners.
    fn taps(&self, dims: [usize; 3]) -> [(usize, Scalar, [Scalar; 3]); 8] {
        let [_, b, c] = dims;
        let mut out = [(0, 0.0, [0.0; 3]); 8];
        for (n, tap) in out.iter_mut().enumerate() {
            let bits = [(n >> 2) & 1, (n >> 1) & 1, n & 1];
            let mut w = [0.0; 3];
            let mut dw = [0.0; 3];
            for a in 0..3 {
                if bits[a] == 1 {
                    w[a] = self.frac[a];
                    dw[a] = 1.0;
                } else {
                    w[a] = 1.0 - self.frac[a];
                    dw[a] = -1.0;
                }
            }
            let offset = (self.idx[0][bits[0]] * b + self.idx[1][bits[1]]) * c + self.idx[2][bits[2]];
            *tap = (
                offset,
                w[0] * w[1] * w[2],
                [dw[0] * w[1] * w[2], w[0] * dw[1] * w[2], w[0] * w[1] * dw[2]],
            );
        }
        out
    }
}

fn volume_dims(volume: &Tensor) -> Result<(usize, [usize; 3])> {
    match *volume.shape() {
        [f, a, b, c] if a > 0 && b > 0 && c > 0 => Ok((f, [a, b, c])),
        ref s => Err(Error::Dimension(format!(
            "trilinear: volume must be [F, A, B, C] with non-empty axes, got {s:?}"
        ))),
    }
}

fn sample_into(volume: &Tensor, dims: [usize; 3], x: [Scalar; 3], out: &mut [Scalar]) {
    out.fill(0.0);
    let Some(c) = corners(dims, x) else {
        return;
    };
    let cells: usize = dims.iter().product();
    let v = volume.data();
    for (offset, w, _) in c.taps(dims) {
        for (f, o) in out.iter_mut().enumerate() {
            *o += w * v[f * cells + offset];
        }
    }
}

/// Feature vector of `volume` at the point `x`.
pub fn trilinear_point(volume: &Tensor, x: [Scalar; 3]) -> Result<Vec<Scalar>> {
    let (f, dims) = volume_dims(volume)?;
    let mut out = vec![0.0; f];
    sample_into(volume, dims, x, &mut out);
    Ok(out)
}

fn points_count(points: &Tensor) -> Result<usize> {
    match *points.shape() {
        [p, 3] => Ok(p),
        ref s => Err(Error::Dimension(format!(
            "trilinear: points must be [P, 3], got {s:?}"
        ))),
    }
}

/// Samples `volume [F, A, B, C]` at `points [P, 3]`, giving `[P, F]`.
pub fn trilinear_sample(volume: &Tensor, points: &Tensor) -> Result<Tensor> {
    let (f, dims) = volume_dims(volume)?;
    let p = points_count(points)?;
    let mut out = vec![0.0; p * f];
    for (row, x) in out.chunks_exact_mut(f.max(1)).zip(points.data().chunks_exact(3)) {
        sample_into(volume, dims, [x[0], x[1], x[2]], row);
    }
    Tensor::new(vec![p, f], out)
}

struct Trilinear;

impl Operation for Trilinear {
    fn name(&self) -> &'static str {
        "trilinear"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let (volume, points) = (inputs[0], inputs[1]);
        let (f, dims) = volume_dims(volume)?;
        let cells: usize = dims.iter().product();
        let v = volume.data();
        let g = grad.data();
        let mut dvol = needs[0].then(|| vec![0.0; volume.numel()]);
        let mut dpts = needs[1].then(|| vec![0.0; points.numel()]);
        for (p, x) in points.data().chunks_exact(3).enumerate() {
            let Some(c) = corners(dims, [x[0], x[1], x[2]]) else {
                continue;
            };
            let gp = &g[p * f..(p + 1) * f];
            for (offset, w, dw) in c.taps(dims) {
                if let Some(dv) = dvol.as_mut() {
                    for (ch, gv) in gp.iter().enumerate() {
                        dv[ch * cells + offset] += w * gv;
                    }
                }
                if let Some(dp) = dpts.as_mut() {
                    let s: Scalar = gp
                        .iter()
                        .enumerate()
                        .map(|(ch, gv)| gv * v[ch * cells + offset])
                        .sum();
                    for a in 0..3 {
                        dp[p * 3 + a] += s * dw[a] * dims[a] as Scalar;
                    }
                }
            }
        }
        Ok(vec![
            dvol.map(|d| Tensor::new(volume.shape().to_vec(), d)).transpose()?,
            dpts.map(|d| Tensor::new(points.shape().to_vec(), d)).transpose()?,
        ])
    }
}

impl Var {
    /// Differentiable [`trilinear_sample`] of `self` (the volume) at
    /// `points`.
    pub fn trilinear(&self, points: &Var) -> Result<Var> {
        let out = trilinear_sample(self.value(), points.value())?;
        self.tape().record(Trilinear, &[self, points], out)
    }
}
