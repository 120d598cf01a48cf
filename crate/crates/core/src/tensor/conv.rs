//! 3D convolution (cross-correlation), average pooling and nearest
//! upsampling on `[C, D, H, W]` volumes.
//!
//! Convolution lowers fixed-size chunks of output positions to column
//! matrices and multiplies them with the flattened kernel. Chunk
//! boundaries never depend on the thread count, and partial results are
//! reduced in chunk order, so results are bit-identical for any pool
//! size.

use rayon::prelude::*;

use super::gemm::{gemm, Layout};
use super::{Operation, Scalar, Tensor, Var};
use crate::{Error, Result};

const CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dGeometry {
    pub kernel: usize,
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Conv3dGeometry {
    pub fn uniform(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride: [stride; 3],
            padding: [padding; 3],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::Parameter(format!(
                "conv3d kernel must be odd, got {}",
                self.kernel
            )));
        }
        if self.stride.contains(&0) {
            return Err(Error::Parameter("conv3d stride must be positive".into()));
        }
        Ok(())
    }

    pub fn output_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * self.padding[a];
            if padded < self.kernel {
                return Err(Error::Dimension(format!(
                    "conv3d: spatial extent {} with padding {} is smaller than kernel {}",
                    input[a], self.padding[a], self.kernel
                )));
            }
            out[a] = (padded - self.kernel) / self.stride[a] + 1;
        }
        Ok(out)
    }
}

fn spatial(t: &Tensor, what: &str) -> Result<(usize, [usize; 3])> {
    match *t.shape() {
        [c, d, h, w] => Ok((c, [d, h, w])),
        ref s => Err(Error::Dimension(format!(
            "{what}: expected a [C, D, H, W] volume, got {s:?}"
        ))),
    }
}

struct Lowering<'a> {
    input: &'a [Scalar],
    cin: usize,
    dims: [usize; 3],
    out_dims: [usize; 3],
    geom: Conv3dGeometry,
}

impl Lowering<'_> {
    fn positions(&self) -> usize {
        self.out_dims.iter().product()
    }

    fn rows(&self) -> usize {
        self.cin * self.geom.kernel.pow(3)
    }

    /// Calls `f(row, column, source, count)` for every run along the
    /// innermost output axis. `source` is the input index of the first
    /// tap (the index then advances by the W stride), or `None` for a
    /// run of taps that fall into the padding.
    fn for_each_run(&self, range: std::ops::Range<usize>, mut f: impl FnMut(usize, usize, Option<usize>, usize)) {
        let k = self.geom.kernel;
        let [d, h, w] = self.dims;
        let [_, oh, ow] = self.out_dims;
        let [sd, sh, sw] = self.geom.stride;
        let [pd, ph, pw] = self.geom.padding.map(|v| v as isize);
        // (column, first x, length, od, oy) of each output row piece
        let mut segments = Vec::new();
        let mut p = range.start;
        while p < range.end {
            let (od, oy, ox) = (p / (oh * ow), (p / ow) % oh, p % ow);
            let run = (ow - ox).min(range.end - p);
            segments.push((p - range.start, ox, run, od, oy));
            p += run;
        }
        // valid x range per kw
        let x_bounds: Vec<(isize, usize, usize)> = (0..k)
            .map(|kw| {
                let off = kw as isize - pw;
                let x_min = if off < 0 { ((-off) as usize).div_ceil(sw) } else { 0 };
                let last = w as isize - 1 - off;
                let x_end = if last < 0 { 0 } else { last as usize / sw + 1 };
                (off, x_min, x_end)
            })
            .collect();
        for ci in 0..self.cin {
            for kd in 0..k {
                for kh in 0..k {
                    for (kw, &(off, x_min, x_end)) in x_bounds.iter().enumerate() {
                        let row = ((ci * k + kd) * k + kh) * k + kw;
                        for &(col, ox, run, od, oy) in &segments {
                            let id = (od * sd) as isize - pd + kd as isize;
                            let ih = (oy * sh) as isize - ph + kh as isize;
                            if id < 0 || ih < 0 || id >= d as isize || ih >= h as isize {
                                f(row, col, None, run);
                                continue;
                            }
                            let lo = ox.max(x_min).min(ox + run);
                            let hi = (ox + run).min(x_end).max(lo);
                            if lo > ox {
                                f(row, col, None, lo - ox);
                            }
                            if hi > lo {
                                let iw = (lo * sw) as isize + off;
                                let idx = ((ci * d + id as usize) * h + ih as usize) * w + iw as usize;
                                f(row, col + lo - ox, Some(idx), hi - lo);
                            }
                            if ox + run > hi {
                                f(row, col + hi - ox, None, ox + run - hi);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Writes the column matrix of `range` into `cols`, reusing its
    /// allocation.
    fn columns_into(&self, range: std::ops::Range<usize>, cols: &mut Vec<Scalar>) {
        let len = range.len();
        let sw = self.geom.stride[2];
        cols.resize(self.rows() * len, 0.0);
        self.for_each_run(range, |row, col, src, n| {
            let dst = &mut cols[row * len + col..row * len + col + n];
            match src {
                None => dst.fill(0.0),
                Some(idx) if sw == 1 => dst.copy_from_slice(&self.input[idx..idx + n]),
                Some(idx) => {
                    for (j, v) in dst.iter_mut().enumerate() {
                        *v = self.input[idx + j * sw];
                    }
                }
            }
        });
    }

    fn scatter_columns(&self, range: std::ops::Range<usize>, cols: &[Scalar], into: &mut [Scalar]) {
        let len = range.len();
        let sw = self.geom.stride[2];
        self.for_each_run(range, |row, col, src, n| {
            if let Some(idx) = src {
                let src = &cols[row * len + col..row * len + col + n];
                for (j, v) in src.iter().enumerate() {
                    into[idx + j * sw] += v;
                }
            }
        });
    }
}

thread_local! {
    static COLUMNS: std::cell::RefCell<Vec<Scalar>> = const { std::cell::RefCell::new(Vec::new()) };
}

/// Runs `f` with this thread's column buffer.
fn with_columns<T>(f: impl FnOnce(&mut Vec<Scalar>) -> T) -> T {
    COLUMNS.with(|c| f(&mut c.borrow_mut()))
}

/// Bias-free convolution `weight [cout, rows]` applied to `low`.
fn correlate(low: &Lowering<'_>, weight: &[Scalar], cout: usize) -> Vec<Scalar> {
    let p = low.positions();
    let rows = low.rows();
    let parts: Vec<Vec<Scalar>> = chunks(p)
        .into_par_iter()
        .map(|range| {
            let len = range.len();
            let mut out = vec![0.0; cout * len];
            with_columns(|cols| {
                low.columns_into(range, cols);
                gemm(cout, rows, len, weight, Layout::Normal, cols, Layout::Normal, 0.0, &mut out);
            });
            out
        })
        .collect();
    let mut data = vec![0.0; cout * p];
    for (range, part) in chunks(p).into_iter().zip(parts) {
        let len = range.len();
        for co in 0..cout {
            data[co * p + range.start..co * p + range.end].copy_from_slice(&part[co * len..(co + 1) * len]);
        }
    }
    data
}

fn chunks(total: usize) -> Vec<std::ops::Range<usize>> {
    (0..total)
        .step_by(CHUNK)
        .map(|s| s..(s + CHUNK).min(total))
        .collect()
}

fn check_conv_args(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    geom: &Conv3dGeometry,
) -> Result<(usize, usize, [usize; 3], [usize; 3])> {
    geom.validate()?;
    let (cin, dims) = spatial(input, "conv3d input")?;
    let k = geom.kernel;
    let cout = match *weight.shape() {
        [co, ci, a, b, c] if ci == cin && a == k && b == k && c == k => co,
        ref s => {
            return Err(Error::Dimension(format!(
                "conv3d: weight {s:?} does not match {cin} input channels and kernel {k}"
            )))
        }
    };
    if bias.shape() != [cout] {
        return Err(Error::Dimension(format!(
            "conv3d: bias {:?} does not match {cout} output channels",
            bias.shape()
        )));
    }
    input.ensure_finite("conv3d input")?;
    let out_dims = geom.output_dims(dims)?;
    Ok((cin, cout, dims, out_dims))
}

/// Cross-correlation of `input [Cin, D, H, W]` with `weight
/// [Cout, Cin, k, k, k]` plus `bias [Cout]`.
pub fn conv3d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    geom: Conv3dGeometry,
) -> Result<Tensor> {
    let (cin, cout, dims, out_dims) = check_conv_args(input, weight, bias, &geom)?;
    let low = Lowering {
        input: input.data(),
        cin,
        dims,
        out_dims,
        geom,
    };
    let p = low.positions();
    let mut data = correlate(&low, weight.data(), cout);
    for (co, plane) in data.chunks_mut(p).enumerate() {
        let b = bias.data()[co];
        plane.iter_mut().for_each(|v| *v += b);
    }
    let [od, oh, ow] = out_dims;
    Tensor::new(vec![cout, od, oh, ow], data)
}

struct Conv3d {
    geom: Conv3dGeometry,
}

impl Operation for Conv3d {
    fn name(&self) -> &'static str {
        "conv3d"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let (input, weight) = (inputs[0], inputs[1]);
        let (cin, dims) = spatial(input, "conv3d input")?;
        let (cout, out_dims) = spatial(output, "conv3d output")?;
        let low = Lowering {
            input: input.data(),
            cin,
            dims,
            out_dims,
            geom: self.geom,
        };
        let p = low.positions();
        let g = grad.data();

        let db = needs[2].then(|| {
            Tensor::from_fn(&[cout], |co| g[co * p..(co + 1) * p].iter().sum())
        });

        let dweight = needs[1].then(|| weight_gradient(&low, g, cout));
        let dinput = needs[0].then(|| input_gradient(&low, weight.data(), g, cout));
        let dinput = dinput.map(|d| Tensor::new(input.shape().to_vec(), d)).transpose()?;
        let dweight = dweight
            .map(|d| Tensor::new(weight.shape().to_vec(), d))
            .transpose()?;
        Ok(vec![dinput, dweight, db])
    }
}

/// Chunks reduced together before the partial sums are combined.
const SPAN: usize = 16;

/// `dW = dY * cols^T`, summed over fixed spans of chunks.
fn weight_gradient(low: &Lowering<'_>, g: &[Scalar], cout: usize) -> Vec<Scalar> {
    let p = low.positions();
    let rows = low.rows();
    let all = chunks(p);
    let partials: Vec<Vec<Scalar>> = all
        .par_chunks(SPAN)
        .map(|span| {
            let mut dw = vec![0.0; cout * rows];
            let mut gy = Vec::new();
            with_columns(|cols| {
                for range in span {
                    let len = range.len();
                    gy.clear();
                    for co in 0..cout {
                        gy.extend_from_slice(&g[co * p + range.start..co * p + range.end]);
                    }
                    low.columns_into(range.clone(), cols);
                    gemm(cout, len, rows, &gy, Layout::Normal, cols, Layout::Transposed, 1.0, &mut dw);
                }
            });
            dw
        })
        .collect();
    let mut iter = partials.into_iter();
    let mut acc = iter.next().unwrap_or_else(|| vec![0.0; cout * rows]);
    for part in iter {
        acc.iter_mut().zip(&part).for_each(|(a, v)| *a += v);
    }
    acc
}

/// `dX` of a convolution. With unit stride this is the correlation of
/// `dY` with the flipped, transposed kernel; otherwise the columns of
/// `W^T dY` are scattered back.
fn input_gradient(low: &Lowering<'_>, weight: &[Scalar], g: &[Scalar], cout: usize) -> Vec<Scalar> {
    let geom = low.geom;
    let k = geom.kernel;
    let cin = low.cin;
    let unit = geom.stride == [1; 3] && geom.padding.iter().all(|&p| p < k);
    if unit {
        let taps = k * k * k;
        let mut flipped = vec![0.0; cin * cout * taps];
        for co in 0..cout {
            for ci in 0..cin {
                for t in 0..taps {
                    flipped[(ci * cout + co) * taps + taps - 1 - t] = weight[(co * cin + ci) * taps + t];
                }
            }
        }
        let back = Lowering {
            input: g,
            cin: cout,
            dims: low.out_dims,
            out_dims: low.dims,
            geom: Conv3dGeometry {
                kernel: k,
                stride: [1; 3],
                padding: geom.padding.map(|p| k - 1 - p),
            },
        };
        return correlate(&back, &flipped, cin);
    }
    let p = low.positions();
    let rows = low.rows();
    let mut dinput = vec![0.0; cin * low.dims.iter().product::<usize>()];
    let mut gy = Vec::new();
    let mut dc = Vec::new();
    for range in chunks(p) {
        let len = range.len();
        gy.clear();
        for co in 0..cout {
            gy.extend_from_slice(&g[co * p + range.start..co * p + range.end]);
        }
        dc.resize(rows * len, 0.0);
        gemm(rows, cout, len, weight, Layout::Transposed, &gy, Layout::Normal, 0.0, &mut dc);
        low.scatter_columns(range, &dc, &mut dinput);
    }
    dinput
}

fn check_factors(factors: [usize; 3], what: &str) -> Result<()> {
    if factors.contains(&0) || factors == [1, 1, 1] {
        return Err(Error::Parameter(format!(
            "{what}: factors must be >= 1 with at least one >= 2, got {factors:?}"
        )));
    }
    Ok(())
}

/// Mean over non-overlapping `factors` blocks.
/// Exchanges spatial axes `a` and `b` of a `[C, D, H, W]` volume.
pub fn swap_spatial_forward(input: &Tensor, a: usize, b: usize) -> Result<Tensor> {
    let (c, dims) = spatial(input, "swap_spatial")?;
    if a > 2 || b > 2 {
        return Err(Error::Dimension(format!("swap_spatial: axes ({a}, {b}) out of range")));
    }
    let mut out_dims = dims;
    out_dims.swap(a, b);
    let [d, h, w] = dims;
    let x = input.data();
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        for i in 0..d {
            for j in 0..h {
                let row = ((ch * d + i) * h + j) * w;
                for k in 0..w {
                    let mut idx = [i, j, k];
                    idx.swap(a, b);
                    out[((ch * out_dims[0] + idx[0]) * out_dims[1] + idx[1]) * out_dims[2] + idx[2]] = x[row + k];
                }
            }
        }
    }
    Tensor::new(vec![c, out_dims[0], out_dims[1], out_dims[2]], out)
}

struct SwapSpatial {
    axes: (usize, usize),
}

impl Operation for SwapSpatial {
    fn name(&self) -> &'static str {
        "swap_spatial"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![needs[0]
            .then(|| swap_spatial_forward(grad, self.axes.0, self.axes.1))
            .transpose()?])
    }
}

pub fn avg_pool3d_forward(input: &Tensor, factors: [usize; 3]) -> Result<Tensor> {
    check_factors(factors, "avg_pool3d")?;
    let (c, [d, h, w]) = spatial(input, "avg_pool3d")?;
    let [fd, fh, fw] = factors;
    if d % fd != 0 || h % fh != 0 || w % fw != 0 {
        return Err(Error::Dimension(format!(
            "avg_pool3d: extent {:?} not divisible by {factors:?}",
            [d, h, w]
        )));
    }
    let (od, oh, ow) = (d / fd, h / fh, w / fw);
    let norm = 1.0 / (fd * fh * fw) as Scalar;
    let x = input.data();
    let mut out = vec![0.0; c * od * oh * ow];
    for ch in 0..c {
        for z in 0..d {
            for y in 0..h {
                let src = ((ch * d + z) * h + y) * w;
                let dst = ((ch * od + z / fd) * oh + y / fh) * ow;
                for xw in 0..w {
                    out[dst + xw / fw] += x[src + xw] * norm;
                }
            }
        }
    }
    Tensor::new(vec![c, od, oh, ow], out)
}

/// Replicates every voxel into a `factors` block.
pub fn upsample_nearest3d_forward(input: &Tensor, factors: [usize; 3]) -> Result<Tensor> {
    check_factors(factors, "upsample_nearest3d")?;
    let (c, [d, h, w]) = spatial(input, "upsample_nearest3d")?;
    let [fd, fh, fw] = factors;
    let (od, oh, ow) = (d * fd, h * fh, w * fw);
    let x = input.data();
    let mut out = Vec::with_capacity(c * od * oh * ow);
    for ch in 0..c {
        for z in 0..od {
            for y in 0..oh {
                let src = ((ch * d + z / fd) * h + y / fh) * w;
                out.extend((0..ow).map(|xw| x[src + xw / fw]));
            }
        }
    }
    Tensor::new(vec![c, od, oh, ow], out)
}

struct AvgPool {
    factors: [usize; 3],
}

impl Operation for AvgPool {
    fn name(&self) -> &'static str {
        "avg_pool3d"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let [fd, fh, fw] = self.factors;
        let norm = 1.0 / (fd * fh * fw) as Scalar;
        let up = upsample_nearest3d_forward(grad, self.factors)?;
        Ok(vec![Some(up.map(|v| v * norm))])
    }
}

struct Upsample {
    factors: [usize; 3],
}

impl Operation for Upsample {
    fn name(&self) -> &'static str {
        "upsample_nearest3d"
    }

    fn backward(
        &self,
        _inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        // block sum = block mean times block size
        let [fd, fh, fw] = self.factors;
        let size = (fd * fh * fw) as Scalar;
        let pooled = avg_pool3d_forward(grad, self.factors)?;
        Ok(vec![Some(pooled.map(|v| v * size))])
    }
}

impl Var {
    /// Cross-correlation with a cubic kernel; see [`conv3d_forward`].
    pub fn conv3d(&self, weight: &Var, bias: &Var, stride: usize, padding: usize) -> Result<Var> {
        self.conv3d_with(weight, bias, Conv3dGeometry::uniform(weight_kernel(weight)?, stride, padding))
    }

    pub fn conv3d_with(&self, weight: &Var, bias: &Var, geom: Conv3dGeometry) -> Result<Var> {
        let out = conv3d_forward(self.value(), weight.value(), bias.value(), geom)?;
        self.tape().record(Conv3d { geom }, &[self, weight, bias], out)
    }

    pub fn swap_spatial(&self, a: usize, b: usize) -> Result<Var> {
        let out = swap_spatial_forward(self.value(), a, b)?;
        self.tape().record(SwapSpatial { axes: (a, b) }, &[self], out)
    }

    pub fn avg_pool3d(&self, factors: [usize; 3]) -> Result<Var> {
        let out = avg_pool3d_forward(self.value(), factors)?;
        self.tape().record(AvgPool { factors }, &[self], out)
    }

    /// Nearest-neighbour upsampling by the same factor on every axis.
    pub fn upsample_nearest3d(&self, factor: usize) -> Result<Var> {
        if factor < 2 {
            return Err(Error::Parameter(format!(
                "upsample factor must be >= 2, got {factor}"
            )));
        }
        self.upsample_nearest3d_axes([factor; 3])
    }

    pub fn upsample_nearest3d_axes(&self, factors: [usize; 3]) -> Result<Var> {
        let out = upsample_nearest3d_forward(self.value(), factors)?;
        self.tape().record(Upsample { factors }, &[self], out)
    }
}

fn weight_kernel(weight: &Var) -> Result<usize> {
    match *weight.shape() {
        [_, _, k, _, _] => Ok(k),
        ref s => Err(Error::Dimension(format!(
            "conv3d weight must be [Cout, Cin, k, k, k], got {s:?}"
        ))),
    }
}
