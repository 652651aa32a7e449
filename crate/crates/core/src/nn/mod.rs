//! Layered feed-forward networks with explicit forward and backward passes.
//!
//! A [`LayeredModel`] is an ordered list of [`Layer`]s plus a cut index. Split
//! it with [`LayeredModel::split`] to obtain the client-side and server-side
//! [`ModelPart`]s; [`join_models`] puts them back together.
//!
//! Dense weights are stored `in_units × out_units`, so a forward pass is
//! `X · W + b` with one sample per row.

mod gradcheck;

pub use gradcheck::{finite_difference_grad, DEFAULT_FD_EPS};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Tensor2D,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(weights: Tensor2D, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.cols() {
            return Err(Error::invalid(format!(
                "bias has {} entries but weights have {} output units",
                bias.len(),
                weights.cols()
            )));
        }
        Ok(Self { weights, bias })
    }

    pub fn zeros(in_units: usize, out_units: usize) -> Self {
        Self {
            weights: Tensor2D::zeros(in_units, out_units),
            bias: vec![0.0; out_units],
        }
    }

    /// Uniform Glorot init with zero bias.
    pub fn glorot<R: Rng + ?Sized>(in_units: usize, out_units: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_units + out_units) as f64).sqrt();
        let values = (0..in_units * out_units)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            weights: Tensor2D::from_vec(in_units, out_units, values).expect("sized above"),
            bias: vec![0.0; out_units],
        }
    }

    #[inline]
    pub fn in_units(&self) -> usize {
        self.weights.rows()
    }

    #[inline]
    pub fn out_units(&self) -> usize {
        self.weights.cols()
    }

    fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Dense(Dense),
    Relu,
}

impl Layer {
    pub fn as_dense(&self) -> Option<&Dense> {
        match self {
            Layer::Dense(d) => Some(d),
            Layer::Relu => None,
        }
    }

    fn num_params(&self) -> usize {
        self.as_dense().map_or(0, Dense::num_params)
    }
}

/// Per-layer parameter gradients; `None` for parameter-free layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<Option<Dense>>,
}

impl ParamGrads {
    pub fn zeros_like(part: &ModelPart) -> Self {
        Self {
            layers: part
                .layers()
                .iter()
                .map(|l| l.as_dense().map(|d| Dense::zeros(d.in_units(), d.out_units())))
                .collect(),
        }
    }

    /// Gradients in the same flat order as [`ModelPart::params_flat`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for d in self.layers.iter().flatten() {
            out.extend_from_slice(d.weights.as_slice());
            out.extend_from_slice(&d.bias);
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flatten()
            .map(|d| d.weights.frobenius_norm_sq() + d.bias.iter().map(|b| b * b).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Concatenates the gradients of two consecutive parts.
    pub fn chain(mut self, other: ParamGrads) -> ParamGrads {
        self.layers.extend(other.layers);
        self
    }
}

/// Layer inputs and the final output recorded during a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Tensor2D>,
}

impl ForwardCache {
    pub fn num_layers(&self) -> usize {
        self.activations.len() - 1
    }

    /// Input to layer `i`; `i == num_layers()` gives the final output.
    pub fn activation(&self, i: usize) -> &Tensor2D {
        &self.activations[i]
    }

    pub fn output(&self) -> &Tensor2D {
        self.activations.last().expect("cache holds at least the input")
    }
}

/// A contiguous run of layers: a whole model, or one side of a split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPart {
    layers: Vec<Layer>,
}

impl ModelPart {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a model part needs at least one layer"));
        }
        let mut width: Option<usize> = None;
        for (i, layer) in layers.iter().enumerate() {
            if let Layer::Dense(d) = layer {
                if d.bias.len() != d.out_units() {
                    return Err(Error::invalid(format!("layer {i}: bias length mismatch")));
                }
                if let Some(w) = width {
                    if w != d.in_units() {
                        return Err(Error::invalid(format!(
                            "layer {i} expects {} inputs but the previous dense layer emits {w}",
                            d.in_units()
                        )));
                    }
                }
                width = Some(d.out_units());
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Input width, if the part contains a dense layer.
    pub fn input_width(&self) -> Option<usize> {
        self.layers.iter().find_map(Layer::as_dense).map(Dense::in_units)
    }

    pub fn output_width(&self) -> Option<usize> {
        self.layers.iter().rev().find_map(Layer::as_dense).map(Dense::out_units)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for d in self.layers.iter().filter_map(Layer::as_dense) {
            out.extend_from_slice(d.weights.as_slice());
            out.extend_from_slice(&d.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            if let Layer::Dense(d) = layer {
                let nw = d.weights.len();
                d.weights.as_mut_slice().copy_from_slice(&flat[offset..offset + nw]);
                offset += nw;
                let nb = d.bias.len();
                d.bias.copy_from_slice(&flat[offset..offset + nb]);
                offset += nb;
            }
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor2D) -> Result<(Tensor2D, ForwardCache)> {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.clone());
        for layer in &self.layers {
            let x = activations.last().expect("non-empty");
            let y = match layer {
                Layer::Dense(d) => {
                    if x.cols() != d.in_units() {
                        return Err(Error::ShapeMismatch {
                            context: "dense forward",
                            expected: (x.rows(), d.in_units()),
                            actual: x.shape(),
                        });
                    }
                    let mut y = x.matmul(&d.weights)?;
                    for r in 0..y.rows() {
                        for (v, b) in y.row_mut(r).iter_mut().zip(&d.bias) {
                            *v += b;
                        }
                    }
                    y
                }
                Layer::Relu => x.map(|v| v.max(0.0)),
            };
            activations.push(y);
        }
        let output = activations.last().expect("non-empty").clone();
        Ok((output, ForwardCache { activations }))
    }

    pub fn backward(&self, cache: &ForwardCache, upstream_grad: &Tensor2D) -> Result<(ParamGrads, Tensor2D)> {
        if cache.num_layers() != self.layers.len() {
            return Err(Error::invalid(format!(
                "cache holds {} layers, model part has {}",
                cache.num_layers(),
                self.layers.len()
            )));
        }
        upstream_grad.ensure_shape("backward upstream gradient", cache.output().shape())?;

        let mut grads: Vec<Option<Dense>> = vec![None; self.layers.len()];
        let mut g = upstream_grad.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = cache.activation(i);
            match layer {
                Layer::Dense(d) => {
                    let dw = x.t_matmul(&g)?;
                    let db = g.column_sums();
                    g = g.matmul_t(&d.weights)?;
                    grads[i] = Some(Dense { weights: dw, bias: db });
                }
                Layer::Relu => {
                    for (gv, &xv) in g.as_mut_slice().iter_mut().zip(x.as_slice()) {
                        if xv <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                }
            }
        }
        Ok((ParamGrads { layers: grads }, g))
    }

    /// In-place `params ← params − eta · grads`.
    pub fn sgd_step(&mut self, grads: &ParamGrads, eta: f64) -> Result<()> {
        check_learning_rate(eta)?;
        if grads.layers.len() != self.layers.len() {
            return Err(Error::invalid("gradient layer count does not match model"));
        }
        for (layer, grad) in self.layers.iter_mut().zip(&grads.layers) {
            match (layer, grad) {
                (Layer::Dense(d), Some(g)) => {
                    sgd_step(d.weights.as_mut_slice(), g.weights.as_slice(), eta)?;
                    sgd_step(&mut d.bias, &g.bias, eta)?;
                }
                (Layer::Relu, None) => {}
                _ => return Err(Error::invalid("gradient layer kinds do not match model")),
            }
        }
        Ok(())
    }
}

fn check_learning_rate(eta: f64) -> Result<()> {
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(Error::invalid(format!(
            "learning rate must be finite and >= 0, got {eta}"
        )));
    }
    Ok(())
}

/// Elementwise `params ← params − eta · grads`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], eta: f64) -> Result<()> {
    check_learning_rate(eta)?;
    if params.len() != grads.len() {
        return Err(Error::ShapeMismatch {
            context: "sgd_step",
            expected: (params.len(), 1),
            actual: (grads.len(), 1),
        });
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= eta * g;
    }
    Ok(())
}

/// A full network with a designated cut layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayeredModel {
    body: ModelPart,
    cut_index: usize,
}

impl LayeredModel {
    pub fn new(layers: Vec<Layer>, cut_index: usize) -> Result<Self> {
        let body = ModelPart::new(layers)?;
        check_cut(cut_index, body.len())?;
        if !matches!(body.layers.last(), Some(Layer::Dense(_))) {
            return Err(Error::invalid("the final layer must be the dense classifier"));
        }
        Ok(Self { body, cut_index })
    }

    /// Dense/ReLU stack over `widths = [input, hidden.., classes]` with
    /// Glorot-uniform weights and zero biases. No ReLU follows the classifier.
    pub fn mlp<R: Rng + ?Sized>(widths: &[usize], cut_index: usize, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::invalid(format!("invalid MLP widths {widths:?}")));
        }
        let mut layers = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            layers.push(Layer::Dense(Dense::glorot(pair[0], pair[1], rng)));
            if i + 2 < widths.len() {
                layers.push(Layer::Relu);
            }
        }
        Self::new(layers, cut_index)
    }

    pub fn cut_index(&self) -> usize {
        self.cut_index
    }

    pub fn full(&self) -> &ModelPart {
        &self.body
    }

    pub fn full_mut(&mut self) -> &mut ModelPart {
        &mut self.body
    }

    pub fn num_classes(&self) -> usize {
        self.classifier().out_units()
    }

    /// The final dense layer, whose weight columns are the per-class vectors.
    pub fn classifier(&self) -> &Dense {
        self.body
            .layers
            .last()
            .and_then(Layer::as_dense)
            .expect("validated in new")
    }

    pub fn split(&self) -> Result<(ModelPart, ModelPart)> {
        check_cut(self.cut_index, self.body.len())?;
        let (client, server) = self.body.layers.split_at(self.cut_index);
        Ok((
            ModelPart {
                layers: client.to_vec(),
            },
            ModelPart {
                layers: server.to_vec(),
            },
        ))
    }

    /// Width of the activations crossing the cut.
    pub fn cut_width(&self) -> usize {
        self.body.layers[..self.cut_index]
            .iter()
            .rev()
            .find_map(Layer::as_dense)
            .map(Dense::out_units)
            .or_else(|| self.body.input_width())
            .expect("model has a dense layer")
    }
}

fn check_cut(cut_index: usize, n: usize) -> Result<()> {
    if cut_index == 0 || cut_index >= n {
        return Err(Error::invalid(format!(
            "cut index {cut_index} must satisfy 1 <= cut < {n}"
        )));
    }
    Ok(())
}

/// Inverse of [`LayeredModel::split`].
pub fn join_models(client: &ModelPart, server: &ModelPart) -> Result<LayeredModel> {
    let mut layers = client.layers.clone();
    layers.extend(server.layers.iter().cloned());
    LayeredModel::new(layers, client.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let part = ModelPart::new(vec![Layer::Dense(Dense {
            weights: Tensor2D::identity(3),
            bias: vec![0.0; 3],
        })])
        .unwrap();
        let x = Tensor2D::from_rows(&[[1.0, -2.0, 3.5], [0.0, 4.0, -1.0]]).unwrap();
        let (y, cache) = part.forward(&x).unwrap();
        assert_eq!(y, x);
        assert_eq!(cache.num_layers(), 1);
    }

    #[test]
    fn relu_forward() {
        let part = ModelPart::new(vec![Layer::Relu]).unwrap();
        let x = Tensor2D::from_rows(&[[-1.0, 2.0]]).unwrap();
        let (y, _) = part.forward(&x).unwrap();
        assert_eq!(y.as_slice(), &[0.0, 2.0]);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let m = LayeredModel::mlp(&[4, 3, 2], 1, &mut rng()).unwrap();
        let err = m.full().forward(&Tensor2D::zeros(2, 5)).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let m = LayeredModel::mlp(&[4, 5, 3], 2, &mut rng()).unwrap();
        let x = Tensor2D::from_vec(2, 4, (0..8).map(|v| v as f64 * 0.3 - 1.0).collect()).unwrap();
        let (y, cache) = m.full().forward(&x).unwrap();
        let (g, gx) = m.full().backward(&cache, &Tensor2D::zeros(y.rows(), y.cols())).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
        assert!(gx.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_dense_weight_grad_is_outer_product() {
        let d = Dense::glorot(3, 2, &mut rng());
        let part = ModelPart::new(vec![Layer::Dense(d.clone())]).unwrap();
        let x = Tensor2D::from_rows(&[[0.5, -1.0, 2.0]]).unwrap();
        let up = Tensor2D::from_rows(&[[3.0, -0.25]]).unwrap();
        let (_, cache) = part.forward(&x).unwrap();
        let (g, gx) = part.backward(&cache, &up).unwrap();
        let gw = &g.layers[0].as_ref().unwrap().weights;
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(gw[(i, j)], x[(0, i)] * up[(0, j)]);
            }
        }
        assert_eq!(g.layers[0].as_ref().unwrap().bias, vec![3.0, -0.25]);
        for i in 0..3 {
            let expect = d.weights[(i, 0)] * 3.0 + d.weights[(i, 1)] * -0.25;
            assert!((gx[(0, i)] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_rejects_bad_upstream_shape() {
        // a single dense layer cannot be split
        assert!(LayeredModel::mlp(&[2, 2], 1, &mut rng()).is_err());
        let m = LayeredModel::mlp(&[2, 3, 2], 1, &mut rng()).unwrap();
        let (_, cache) = m.full().forward(&Tensor2D::zeros(4, 2)).unwrap();
        assert!(m.full().backward(&cache, &Tensor2D::zeros(3, 2)).is_err());
    }

    #[test]
    fn sgd_arithmetic() {
        let mut p = vec![1.0];
        sgd_step(&mut p, &[2.0], 0.5).unwrap();
        assert_eq!(p, vec![0.0]);
        let mut p = vec![1.0, -3.0];
        sgd_step(&mut p, &[2.0, 7.0], 0.0).unwrap();
        assert_eq!(p, vec![1.0, -3.0]);
        assert!(sgd_step(&mut p, &[1.0], 0.1).is_err());
        assert!(sgd_step(&mut p, &[1.0, 1.0], -0.1).is_err());
    }

    #[test]
    fn sgd_on_quadratic_converges() {
        // f(x) = 2 (x - 3)^2, minimum at 3.
        let mut x = vec![-10.0];
        for _ in 0..200 {
            let g = 4.0 * (x[0] - 3.0);
            sgd_step(&mut x, &[g], 0.1).unwrap();
        }
        assert!((x[0] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn split_and_join() {
        let m = LayeredModel::mlp(&[4, 6, 5, 3], 2, &mut rng()).unwrap();
        assert_eq!(m.full().len(), 5);
        let m = LayeredModel::new(m.full().layers()[..4].to_vec(), 2);
        // last layer is a relu
        assert!(m.is_err());

        let m = LayeredModel::mlp(&[4, 6, 5, 3], 2, &mut rng()).unwrap();
        let (c, s) = m.split().unwrap();
        assert_eq!((c.len(), s.len()), (2, 3));
        assert_eq!(join_models(&c, &s).unwrap(), m);
        assert_eq!(m.cut_width(), 6);
    }

    #[test]
    fn four_layer_model_cut_two() {
        let layers = vec![
            Layer::Dense(Dense::zeros(3, 4)),
            Layer::Relu,
            Layer::Dense(Dense::zeros(4, 4)),
            Layer::Dense(Dense::zeros(4, 2)),
        ];
        let m = LayeredModel::new(layers, 2).unwrap();
        let (c, s) = m.split().unwrap();
        assert_eq!((c.len(), s.len()), (2, 2));
    }

    #[test]
    fn cut_out_of_range() {
        let layers = vec![Layer::Dense(Dense::zeros(3, 4)), Layer::Dense(Dense::zeros(4, 2))];
        assert!(LayeredModel::new(layers.clone(), 0).is_err());
        assert!(LayeredModel::new(layers.clone(), 2).is_err());
        assert!(LayeredModel::new(layers, 1).is_ok());
    }

    #[test]
    fn mismatched_dense_chain_rejected() {
        let layers = vec![
            Layer::Dense(Dense::zeros(3, 4)),
            Layer::Relu,
            Layer::Dense(Dense::zeros(5, 2)),
        ];
        assert!(ModelPart::new(layers).is_err());
    }

    #[test]
    fn flat_params_round_trip() {
        let m = LayeredModel::mlp(&[3, 4, 2], 1, &mut rng()).unwrap();
        let mut part = m.full().clone();
        let flat: Vec<f64> = (0..part.num_params()).map(|i| i as f64).collect();
        part.set_params_flat(&flat).unwrap();
        assert_eq!(part.params_flat(), flat);
    }

    #[test]
    fn glorot_bounds_and_determinism() {
        let a = Dense::glorot(10, 6, &mut rng());
        let b = Dense::glorot(10, 6, &mut rng());
        assert_eq!(a, b);
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(a.weights.as_slice().iter().all(|w| w.abs() <= limit));
        assert!(a.bias.iter().all(|&b| b == 0.0));
    }
}
