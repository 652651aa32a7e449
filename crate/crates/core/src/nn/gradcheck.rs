use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

use super::{Dense, Layer, ModelPart, ParamGrads};

pub const DEFAULT_FD_EPS: f64 = 1e-5;

/// Central-difference estimate of `∂ loss(part(input)) / ∂θ` for every
/// parameter θ of `part`.
///
/// `loss` maps the part's output to a scalar. This is a test oracle: it costs
/// two forward passes per parameter.
pub fn finite_difference_grad<F>(part: &ModelPart, input: &Tensor2D, loss: F, eps: f64) -> Result<ParamGrads>
where
    F: Fn(&Tensor2D) -> Result<f64>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid(format!("finite-difference eps must be > 0, got {eps}")));
    }
    let base = part.params_flat();
    let mut probe = part.clone();
    let mut eval = |params: &[f64]| -> Result<f64> {
        probe.set_params_flat(params)?;
        let (out, _) = probe.forward(input)?;
        loss(&out)
    };

    let mut flat_grad = Vec::with_capacity(base.len());
    let mut shifted = base.clone();
    for i in 0..base.len() {
        shifted[i] = base[i] + eps;
        let up = eval(&shifted)?;
        shifted[i] = base[i] - eps;
        let down = eval(&shifted)?;
        shifted[i] = base[i];
        flat_grad.push((up - down) / (2.0 * eps));
    }

    let mut offset = 0;
    let layers = part
        .layers()
        .iter()
        .map(|layer| match layer {
            Layer::Dense(d) => {
                let nw = d.weights.len();
                let nb = d.bias.len();
                let weights = Tensor2D::from_vec(d.in_units(), d.out_units(), flat_grad[offset..offset + nw].to_vec())
                    .expect("sized from layer");
                let bias = flat_grad[offset + nw..offset + nw + nb].to_vec();
                offset += nw + nb;
                Some(Dense { weights, bias })
            }
            Layer::Relu => None,
        })
        .collect();
    Ok(ParamGrads { layers })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_weight_part(w: f64) -> ModelPart {
        ModelPart::new(vec![Layer::Dense(Dense {
            weights: Tensor2D::from_vec(1, 1, vec![w]).unwrap(),
            bias: vec![0.0],
        })])
        .unwrap()
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let part = one_weight_part(0.7);
        let x = Tensor2D::from_vec(1, 1, vec![2.0]).unwrap();
        let g = finite_difference_grad(&part, &x, |_| Ok(4.2), DEFAULT_FD_EPS).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_loss_slope_is_exact() {
        // loss = 3 · w · x with x = 1, so ∂/∂w = 3 and ∂/∂b = 3.
        let part = one_weight_part(0.25);
        let x = Tensor2D::from_vec(1, 1, vec![1.0]).unwrap();
        let g = finite_difference_grad(&part, &x, |y| Ok(3.0 * y[(0, 0)]), DEFAULT_FD_EPS).unwrap();
        let flat = g.flatten();
        assert!((flat[0] - 3.0).abs() < 1e-8);
        assert!((flat[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn rejects_nonpositive_eps() {
        let part = one_weight_part(1.0);
        let x = Tensor2D::zeros(1, 1);
        assert!(finite_difference_grad(&part, &x, |_| Ok(0.0), 0.0).is_err());
    }
}
