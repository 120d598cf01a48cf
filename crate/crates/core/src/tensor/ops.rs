use super::gemm::{gemm, Layout};
use super::{Operation, Scalar, Tensor, Var};
use crate::{Error, Result};

pub(crate) fn softplus(x: Scalar) -> Scalar {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: Scalar) -> Scalar {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy)]
enum Unary {
    Relu,
    Softplus,
    Sigmoid,
    Square,
    Scale(Scalar),
}

impl Unary {
    fn apply(self, x: Scalar) -> Scalar {
        match self {
            Unary::Relu => x.max(0.0),
            Unary::Softplus => softplus(x),
            Unary::Sigmoid => sigmoid(x),
            Unary::Square => x * x,
            Unary::Scale(s) => s * x,
        }
    }

    fn derivative(self, x: Scalar, y: Scalar) -> Scalar {
        match self {
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Softplus => sigmoid(x),
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Square => 2.0 * x,
            Unary::Scale(s) => s,
        }
    }
}

impl Operation for Unary {
    fn name(&self) -> &'static str {
        match self {
            Unary::Relu => "relu",
            Unary::Softplus => "softplus",
            Unary::Sigmoid => "sigmoid",
            Unary::Square => "square",
            Unary::Scale(_) => "scale",
        }
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let x = inputs[0].data();
        let y = output.data();
        let g = grad.data();
        let data = (0..x.len())
            .map(|i| g[i] * self.derivative(x[i], y[i]))
            .collect();
        Ok(vec![Some(Tensor::new(grad.shape().to_vec(), data)?)])
    }
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

impl Operation for Binary {
    fn name(&self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        }
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let g = grad;
        let (ga, gb) = match self {
            Binary::Add => (g.clone(), g.clone()),
            Binary::Sub => (g.clone(), g.map(|v| -v)),
            Binary::Mul => {
                let a = inputs[0].data();
                let b = inputs[1].data();
                let gd = g.data();
                let ga = Tensor::from_fn(g.shape(), |i| gd[i] * b[i]);
                let gb = Tensor::from_fn(g.shape(), |i| gd[i] * a[i]);
                (ga, gb)
            }
        };
        Ok(vec![needs[0].then_some(ga), needs[1].then_some(gb)])
    }
}

struct Reshape;

impl Operation for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(grad.clone().reshape(inputs[0].shape())?)])
    }
}

struct Sum {
    scale: Scalar,
}

impl Operation for Sum {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let g = grad.item()? * self.scale;
        Ok(vec![Some(Tensor::full(inputs[0].shape(), g))])
    }
}

/// `y = x W^T + b` on the last axis.
struct Linear {
    rows: usize,
    din: usize,
    dout: usize,
}

impl Operation for Linear {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let (rows, din, dout) = (self.rows, self.din, self.dout);
        let x = inputs[0];
        let w = inputs[1];
        let g = grad.data();
        let dx = needs[0].then(|| {
            let mut dx = vec![0.0; rows * din];
            gemm(rows, dout, din, g, Layout::Normal, w.data(), Layout::Normal, 0.0, &mut dx);
            Tensor {
                shape: x.shape().to_vec(),
                data: dx,
            }
        });
        let dw = needs[1].then(|| {
            let mut dw = vec![0.0; dout * din];
            gemm(dout, rows, din, g, Layout::Transposed, x.data(), Layout::Normal, 0.0, &mut dw);
            Tensor {
                shape: vec![dout, din],
                data: dw,
            }
        });
        let db = needs[2].then(|| {
            let mut db = vec![0.0; dout];
            for row in g.chunks_exact(dout) {
                for (acc, v) in db.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            Tensor {
                shape: vec![dout],
                data: db,
            }
        });
        Ok(vec![dx, dw, db])
    }
}

struct Concat {
    axis: usize,
}

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Operation for Concat {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let (outer, total, inner) = split_at_axis(output.shape(), self.axis);
        let g = grad.data();
        let mut offset = 0;
        let mut result = Vec::with_capacity(inputs.len());
        for (t, &need) in inputs.iter().zip(needs) {
            let n = t.shape()[self.axis];
            if need {
                let mut data = Vec::with_capacity(t.numel());
                for o in 0..outer {
                    let start = (o * total + offset) * inner;
                    data.extend_from_slice(&g[start..start + n * inner]);
                }
                result.push(Some(Tensor::new(t.shape().to_vec(), data)?));
            } else {
                result.push(None);
            }
            offset += n;
        }
        Ok(result)
    }
}

/// Concatenates along `axis`; all other extents must agree.
pub fn concat(vars: &[&Var], axis: usize) -> Result<Var> {
    let first = vars
        .first()
        .ok_or_else(|| Error::Dimension("concat of an empty list".into()))?;
    let rank = first.shape().len();
    if axis >= rank {
        return Err(Error::Dimension(format!(
            "concat axis {axis} out of range for rank {rank}"
        )));
    }
    for v in vars {
        let s = v.shape();
        let compatible = s.len() == rank
            && s.iter()
                .zip(first.shape())
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(Error::Dimension(format!(
                "concat along axis {axis}: shape {s:?} incompatible with {:?}",
                first.shape()
            )));
        }
    }
    let total: usize = vars.iter().map(|v| v.shape()[axis]).sum();
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    let (outer, _, inner) = split_at_axis(&shape, axis);
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for v in vars {
            let n = v.shape()[axis] * inner;
            data.extend_from_slice(&v.value().data()[o * n..(o + 1) * n]);
        }
    }
    let out = Tensor::new(shape, data)?;
    first.tape().record(Concat { axis }, vars, out)
}

impl Var {
    fn unary(&self, op: Unary) -> Result<Var> {
        let out = self.value().map(|x| op.apply(x));
        self.tape().record(op, &[self], out)
    }

    pub fn relu(&self) -> Result<Var> {
        self.unary(Unary::Relu)
    }

    /// `ln(1 + e^x)`, always positive.
    pub fn softplus(&self) -> Result<Var> {
        self.unary(Unary::Softplus)
    }

    pub fn sigmoid(&self) -> Result<Var> {
        self.unary(Unary::Sigmoid)
    }

    pub fn square(&self) -> Result<Var> {
        self.unary(Unary::Square)
    }

    pub fn scale(&self, s: Scalar) -> Result<Var> {
        self.unary(Unary::Scale(s))
    }

    fn binary(&self, other: &Var, op: Binary) -> Result<Var> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension(format!(
                "{}: shapes {:?} and {:?} differ",
                op.name(),
                self.shape(),
                other.shape()
            )));
        }
        let a = self.value().data();
        let b = other.value().data();
        let out = Tensor::from_fn(self.shape(), |i| match op {
            Binary::Add => a[i] + b[i],
            Binary::Sub => a[i] - b[i],
            Binary::Mul => a[i] * b[i],
        });
        self.tape().record(op, &[self, other], out)
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        self.binary(other, Binary::Sub)
    }

    pub fn mul(&self, other: &Var) -> Result<Var> {
        self.binary(other, Binary::Mul)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let out = self.value().clone().reshape(shape)?;
        self.tape().record(Reshape, &[self], out)
    }

    pub fn sum(&self) -> Result<Var> {
        let out = Tensor::scalar(self.value().sum());
        self.tape().record(Sum { scale: 1.0 }, &[self], out)
    }

    pub fn mean(&self) -> Result<Var> {
        let n = self.value().numel();
        if n == 0 {
            return Err(Error::Dimension("mean of an empty tensor".into()));
        }
        let scale = 1.0 / n as Scalar;
        let out = Tensor::scalar(self.value().sum() * scale);
        self.tape().record(Sum { scale }, &[self], out)
    }

    /// Affine map on the last axis: `weight` is `[dout, din]`, `bias` is
    /// `[dout]`.
    pub fn linear(&self, weight: &Var, bias: &Var) -> Result<Var> {
        let shape = self.shape();
        let (&din, lead) = shape
            .split_last()
            .ok_or_else(|| Error::Dimension("linear on a rank-0 tensor".into()))?;
        let ws = weight.shape();
        if ws.len() != 2 || ws[1] != din {
            return Err(Error::Dimension(format!(
                "linear: weight {ws:?} does not accept input features {din}"
            )));
        }
        let dout = ws[0];
        if bias.shape() != [dout] {
            return Err(Error::Dimension(format!(
                "linear: bias {:?} does not match {dout} outputs",
                bias.shape()
            )));
        }
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * dout);
        for _ in 0..rows {
            data.extend_from_slice(bias.value().data());
        }
        gemm(
            rows,
            din,
            dout,
            self.value().data(),
            Layout::Normal,
            weight.value().data(),
            Layout::Transposed,
            1.0,
            &mut data,
        );
        let mut out_shape = lead.to_vec();
        out_shape.push(dout);
        let out = Tensor::new(out_shape, data)?;
        self.tape()
            .record(Linear { rows, din, dout }, &[self, weight, bias], out)
    }
}
