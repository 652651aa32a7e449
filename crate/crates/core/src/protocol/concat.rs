use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

/// One client's cut-layer activations and labels for a local iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationBatch {
    pub client: usize,
    pub activations: Tensor2D,
    pub labels: Vec<usize>,
}

/// Row range of one client inside a [`ConcatenatedBatch`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub client: usize,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcatenatedBatch {
    pub activations: Tensor2D,
    pub labels: Vec<usize>,
    /// In ascending client-id order.
    pub offsets: Vec<Segment>,
}

impl ConcatenatedBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels_of(&self, seg: &Segment) -> &[usize] {
        &self.labels[seg.start..seg.start + seg.len]
    }
}

/// Stacks client activations in ascending client-id order, whatever order
/// they arrive in.
pub fn concatenate_activations(batches: &[ActivationBatch]) -> Result<ConcatenatedBatch> {
    if batches.is_empty() {
        return Err(Error::invalid("nothing to concatenate"));
    }
    let mut order: Vec<&ActivationBatch> = batches.iter().collect();
    order.sort_by_key(|b| b.client);
    if order.windows(2).any(|w| w[0].client == w[1].client) {
        return Err(Error::invalid("duplicate client id in activation batches"));
    }
    let width = order[0].activations.cols();
    let mut offsets = Vec::with_capacity(order.len());
    let mut labels = Vec::new();
    let mut start = 0;
    for b in &order {
        if b.activations.cols() != width {
            return Err(Error::ShapeMismatch {
                context: "concatenate activations",
                expected: (b.activations.rows(), width),
                actual: b.activations.shape(),
            });
        }
        if b.activations.rows() != b.labels.len() {
            return Err(Error::invalid(format!(
                "client {}: {} activation rows but {} labels",
                b.client,
                b.activations.rows(),
                b.labels.len()
            )));
        }
        offsets.push(Segment {
            client: b.client,
            start,
            len: b.labels.len(),
        });
        start += b.labels.len();
        labels.extend_from_slice(&b.labels);
    }
    let parts: Vec<&Tensor2D> = order.iter().map(|b| &b.activations).collect();
    Ok(ConcatenatedBatch {
        activations: Tensor2D::vstack(&parts)?,
        labels,
        offsets,
    })
}

/// Cuts the gradient w.r.t. the concatenated input back into per-client
/// pieces `G_k`, in the order of `offsets`.
pub fn scatter_gradients(concat_input_grad: &Tensor2D, offsets: &[Segment]) -> Result<Vec<Tensor2D>> {
    let total: usize = offsets.iter().map(|s| s.len).sum();
    if total != concat_input_grad.rows() {
        return Err(Error::Internal(format!(
            "offsets cover {total} rows but the gradient has {}",
            concat_input_grad.rows()
        )));
    }
    let mut expected_start = 0;
    offsets
        .iter()
        .map(|s| {
            if s.start != expected_start {
                return Err(Error::Internal(format!(
                    "segment for client {} is not contiguous",
                    s.client
                )));
            }
            expected_start += s.len;
            concat_input_grad.slice_rows(s.start, s.len)
        })
        .collect()
}
