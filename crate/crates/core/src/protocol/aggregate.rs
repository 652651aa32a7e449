use crate::error::{Error, Result};
use crate::nn::ModelPart;

/// Data-size weighted average `Σ |D_k| w_k / Σ |D_k|`, per parameter.
///
/// Computed as `w_0 + Σ λ_k (w_k − w_0)` and clamped to the per-parameter
/// range of the inputs, so identical inputs come back bit-identical and the
/// result is always a convex combination.
pub fn aggregate_client_models(models: &[&ModelPart], data_sizes: &[usize]) -> Result<ModelPart> {
    if models.is_empty() {
        return Err(Error::invalid("no models to aggregate"));
    }
    if models.len() != data_sizes.len() {
        return Err(Error::invalid(format!(
            "{} models but {} data sizes",
            models.len(),
            data_sizes.len()
        )));
    }
    if data_sizes.contains(&0) {
        return Err(Error::invalid("aggregation weights must be positive"));
    }
    let reference = models[0];
    for (i, m) in models.iter().enumerate().skip(1) {
        let same_shape = m.len() == reference.len()
            && m.layers()
                .iter()
                .zip(reference.layers())
                .all(|(a, b)| match (a.as_dense(), b.as_dense()) {
                    (Some(x), Some(y)) => x.weights.shape() == y.weights.shape(),
                    (None, None) => true,
                    _ => false,
                });
        if !same_shape {
            return Err(Error::invalid(format!("model {i} does not match the shape of model 0")));
        }
    }

    let total: usize = data_sizes.iter().sum();
    let flats: Vec<Vec<f64>> = models.iter().map(|m| m.params_flat()).collect();
    let base = &flats[0];
    let mut out = base.clone();
    for (p, v) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        let (mut lo, mut hi) = (base[p], base[p]);
        for (flat, &d) in flats.iter().zip(data_sizes).skip(1) {
            acc += (d as f64 / total as f64) * (flat[p] - base[p]);
            lo = lo.min(flat[p]);
            hi = hi.max(flat[p]);
        }
        *v = (base[p] + acc).clamp(lo, hi);
    }
    let mut result = reference.clone();
    result.set_params_flat(&out)?;
    Ok(result)
}
