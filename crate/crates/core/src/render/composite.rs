//! Front-to-back volume compositing.

use crate::tensor::{Operation, Scalar, Tensor, Var};
use crate::{Error, Result};

pub const WHITE: [Scalar; 3] = [1.0; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct Composited {
    pub color: [Scalar; 3],
    /// `sum_i T_i alpha_i`.
    pub opacity: Scalar,
    /// Per-sample contribution `T_i alpha_i`.
    pub weights: Vec<Scalar>,
    /// Transmittance left after the last sample.
    pub residual: Scalar,
}

fn check_inputs(sigma: &[Scalar], deltas: &[Scalar]) -> Result<()> {
    if sigma.len() != deltas.len() {
        return Err(Error::Dimension(format!(
            "composite: {} densities but {} intervals",
            sigma.len(),
            deltas.len()
        )));
    }
    if let Some(s) = sigma.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::Contract(format!("composite: negative density {s}")));
    }
    if let Some(d) = deltas.iter().find(|d| !(**d >= 0.0)) {
        return Err(Error::Contract(format!("composite: negative interval {d}")));
    }
    Ok(())
}

/// Transmittance before each sample plus the residual after the last.
fn transmittance(sigma: &[Scalar], deltas: &[Scalar]) -> Vec<Scalar> {
    let mut t = Vec::with_capacity(sigma.len() + 1);
    t.push(1.0);
    let mut acc = 0.0;
    for (s, d) in sigma.iter().zip(deltas) {
        acc += s * d;
        t.push((-acc).exp());
    }
    t
}

/// Composites one ray: `sum_i T_i (1 - exp(-sigma_i delta_i)) c_i` plus
/// the residual transmittance times `background`.
pub fn composite(
    sigma: &[Scalar],
    colors: &[[Scalar; 3]],
    deltas: &[Scalar],
    background: [Scalar; 3],
) -> Result<Composited> {
    check_inputs(sigma, deltas)?;
    if colors.len() != sigma.len() {
        return Err(Error::Dimension("composite: colors and densities differ in length".into()));
    }
    let t = transmittance(sigma, deltas);
    let m = sigma.len();
    let weights: Vec<Scalar> = (0..m).map(|i| t[i] - t[i + 1]).collect();
    let mut color = background.map(|b| t[m] * b);
    for (w, c) in weights.iter().zip(colors) {
        for ch in 0..3 {
            color[ch] += w * c[ch];
        }
    }
    Ok(Composited {
        color,
        opacity: 1.0 - t[m],
        weights,
        residual: t[m],
    })
}

/// Batched compositing of `sigma [R, M]` and `rgb [R, M, 3]` into `[R, 3]`.
struct Composite {
    deltas: Vec<Scalar>,
    samples: usize,
    background: [Scalar; 3],
}

impl Operation for Composite {
    fn name(&self) -> &'static str {
        "composite"
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let sigma = inputs[0].data();
        let rgb = inputs[1].data();
        let g = grad.data();
        let m = self.samples;
        let rays = sigma.len() / m;
        let mut d_sigma = vec![0.0; sigma.len()];
        let mut d_rgb = vec![0.0; rgb.len()];
        for r in 0..rays {
            let s = &sigma[r * m..(r + 1) * m];
            let d = &self.deltas[r * m..(r + 1) * m];
            let c = &rgb[r * m * 3..(r + 1) * m * 3];
            let gr = &g[r * 3..r * 3 + 3];
            let t = transmittance(s, d);
            // suffix = sum_{i>k} w_i c_i + T_{M+1} background, projected on gr
            let mut suffix: Scalar = (0..3).map(|ch| t[m] * self.background[ch] * gr[ch]).sum();
            for k in (0..m).rev() {
                let ck: Scalar = (0..3).map(|ch| c[k * 3 + ch] * gr[ch]).sum();
                let w = t[k] - t[k + 1];
                // d color / d tau_k = T_{k+1} c_k - suffix
                d_sigma[r * m + k] = d[k] * (t[k + 1] * ck - suffix);
                for ch in 0..3 {
                    d_rgb[(r * m + k) * 3 + ch] = w * gr[ch];
                }
                suffix += w * ck;
            }
        }
        Ok(vec![
            needs[0].then(|| Tensor::new(inputs[0].shape().to_vec(), d_sigma)).transpose()?,
            needs[1].then(|| Tensor::new(inputs[1].shape().to_vec(), d_rgb)).transpose()?,
        ])
    }
}

/// Differentiable compositing: `sigma [R, M]`, `rgb [R, M, 3]`,
/// `deltas` of length `R * M`; returns colors `[R, 3]`.
pub fn composite_var(sigma: &Var, rgb: &Var, deltas: &[Scalar], background: [Scalar; 3]) -> Result<Var> {
    let (rays, m) = match *sigma.shape() {
        [r, m] if m > 0 => (r, m),
        ref s => return Err(Error::Dimension(format!("composite: sigma must be [R, M], got {s:?}"))),
    };
    if rgb.shape() != [rays, m, 3] {
        return Err(Error::Dimension(format!(
            "composite: rgb {:?} does not match sigma [{rays}, {m}]",
            rgb.shape()
        )));
    }
    let s = sigma.value().data();
    check_inputs(s, deltas)?;
    let c = rgb.value().data();
    let mut out = Vec::with_capacity(rays * 3);
    for r in 0..rays {
        let colors: Vec<[Scalar; 3]> = (0..m)
            .map(|k| std::array::from_fn(|ch| c[(r * m + k) * 3 + ch]))
            .collect();
        let res = composite(&s[r * m..(r + 1) * m], &colors, &deltas[r * m..(r + 1) * m], background)?;
        out.extend_from_slice(&res.color);
    }
    let op = Composite {
        deltas: deltas.to_vec(),
        samples: m,
        background,
    };
    sigma.tape().record(op, &[sigma, rgb], Tensor::new(vec![rays, 3], out)?)
}
