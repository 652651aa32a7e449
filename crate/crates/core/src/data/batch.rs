use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

use super::partition::largest_remainder;
use super::{Dataset, Partition};

/// Per-round minibatch sizes, `B_k ∝ |D_k|` with `Σ B_k = B`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub participants: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub total: usize,
}

impl BatchPlan {
    pub fn size_of(&self, client: usize) -> Option<usize> {
        self.participants
            .iter()
            .position(|&c| c == client)
            .map(|i| self.batch_sizes[i])
    }

    /// Unrounded `|D_k| · B / Σ |D_j|` for each participant.
    pub fn ideal_sizes(data_sizes: &[usize], total: usize) -> Vec<f64> {
        let sum: usize = data_sizes.iter().sum();
        data_sizes
            .iter()
            .map(|&d| d as f64 * total as f64 / sum as f64)
            .collect()
    }
}

/// Largest-remainder apportionment of `total` proportional to `data_sizes`,
/// with every share at least 1.
///
/// When every ideal share is at least 1, each result is within 1 of its ideal.
/// Otherwise the floor of 1 is met by taking units from the clients that were
/// rounded up the most.
pub fn proportional_batch_sizes(data_sizes: &[usize], total: usize) -> Result<Vec<usize>> {
    if data_sizes.is_empty() {
        return Err(Error::invalid("no participants to allocate a batch to"));
    }
    if data_sizes.contains(&0) {
        return Err(Error::invalid("participant with no local data"));
    }
    if total < data_sizes.len() {
        return Err(Error::invalid(format!(
            "batch size {total} is smaller than the {} participants",
            data_sizes.len()
        )));
    }
    let sum: usize = data_sizes.iter().sum();
    let weights: Vec<f64> = data_sizes.iter().map(|&d| d as f64 / sum as f64).collect();
    let mut sizes = largest_remainder(&weights, total);
    let ideal = BatchPlan::ideal_sizes(data_sizes, total);

    while let Some(zero) = sizes.iter().position(|&s| s == 0) {
        sizes[zero] = 1;
        let donor = (0..sizes.len())
            .filter(|&j| sizes[j] >= 2)
            .max_by(|&a, &b| {
                (sizes[a] as f64 - ideal[a])
                    .total_cmp(&(sizes[b] as f64 - ideal[b]))
                    .then(b.cmp(&a))
            })
            .ok_or_else(|| Error::Internal("no donor for minimum batch share".into()))?;
        sizes[donor] -= 1;
    }
    Ok(sizes)
}

pub fn allocate_minibatch_sizes(partition: &Partition, participants: &[usize], total: usize) -> Result<BatchPlan> {
    let data_sizes: Vec<usize> = participants
        .iter()
        .map(|&k| {
            if k >= partition.num_clients() {
                Err(Error::invalid(format!("unknown client {k}")))
            } else {
                Ok(partition.client(k).len())
            }
        })
        .collect::<Result<_>>()?;
    Ok(BatchPlan {
        participants: participants.to_vec(),
        batch_sizes: proportional_batch_sizes(&data_sizes, total)?,
        total,
    })
}

/// Epoch-shuffled sampling without replacement over one client's indices.
#[derive(Debug, Clone, PartialEq)]
pub struct MinibatchSampler {
    local: Vec<usize>,
    order: Vec<usize>,
    cursor: usize,
}

impl MinibatchSampler {
    pub fn new(local_indices: Vec<usize>) -> Result<Self> {
        if local_indices.is_empty() {
            return Err(Error::invalid("cannot sample from a client with no data"));
        }
        Ok(Self {
            local: local_indices,
            order: Vec::new(),
            cursor: 0,
        })
    }

    pub fn local_indices(&self) -> &[usize] {
        &self.local
    }

    /// Next `size` dataset indices. A batch that runs past the end of the
    /// current epoch finishes it and continues in a freshly shuffled one.
    pub fn next_indices<R: Rng + ?Sized>(&mut self, size: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.order.len() {
                self.order.clone_from(&self.local);
                self.order.shuffle(rng);
                self.cursor = 0;
            }
            let take = (size - out.len()).min(self.order.len() - self.cursor);
            out.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
            self.cursor += take;
        }
        out
    }
}

pub fn sample_minibatch<R: Rng + ?Sized>(
    dataset: &Dataset,
    sampler: &mut MinibatchSampler,
    size: usize,
    rng: &mut R,
) -> Result<(Tensor2D, Vec<usize>)> {
    let idx = sampler.next_indices(size, rng);
    let features = dataset.features().select_rows(&idx)?;
    let labels = idx.iter().map(|&i| dataset.labels()[i]).collect();
    Ok((features, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    #[test]
    fn worked_example_25_75() {
        assert_eq!(proportional_batch_sizes(&[25, 75], 320).unwrap(), vec![80, 240]);
    }

    #[test]
    fn equal_sizes_equal_shares() {
        assert_eq!(proportional_batch_sizes(&[7; 10], 320).unwrap(), vec![32; 10]);
    }

    #[test]
    fn three_equal_clients() {
        let s = proportional_batch_sizes(&[1, 1, 1], 320).unwrap();
        let mut sorted = s.clone();
        sorted.sort();
        assert_eq!(sorted, vec![106, 107, 107]);
    }

    #[test]
    fn floor_of_one() {
        let s = proportional_batch_sizes(&[1, 1000], 10).unwrap();
        assert_eq!(s, vec![1, 9]);
        let s = proportional_batch_sizes(&[1, 1, 1000], 3).unwrap();
        assert_eq!(s, vec![1, 1, 1]);
    }

    #[test]
    fn too_small_batch() {
        assert!(proportional_batch_sizes(&[1, 1, 1], 2).is_err());
        assert!(proportional_batch_sizes(&[], 2).is_err());
    }

    #[test]
    fn full_batch_is_permutation() {
        let mut s = MinibatchSampler::new(vec![3, 5, 8, 13]).unwrap();
        let mut rng = stream_rng(0, Stream::Minibatch(0));
        let mut b = s.next_indices(4, &mut rng);
        b.sort();
        assert_eq!(b, vec![3, 5, 8, 13]);
    }

    #[test]
    fn epoch_covers_every_sample_once() {
        let local: Vec<usize> = (100..130).collect();
        let mut s = MinibatchSampler::new(local.clone()).unwrap();
        let mut rng = stream_rng(1, Stream::Minibatch(3));
        let mut seen: Vec<usize> = (0..6).flat_map(|_| s.next_indices(5, &mut rng)).collect();
        seen.sort();
        assert_eq!(seen, local);
    }

    #[test]
    fn sampling_is_deterministic() {
        let draw = || {
            let mut s = MinibatchSampler::new((0..17).collect()).unwrap();
            let mut rng = stream_rng(9, Stream::Minibatch(2));
            (0..10).map(|_| s.next_indices(6, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn empty_client_rejected() {
        assert!(MinibatchSampler::new(vec![]).is_err());
    }
}
