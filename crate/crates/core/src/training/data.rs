use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::tensor::RngStream;

/// Labelled samples with `dim` features each, features stored as `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Vec<f32>,
    labels: Vec<u8>,
    dim: usize,
}

impl Dataset {
    pub fn new(images: Vec<f32>, labels: Vec<u8>, dim: usize) -> Result<Self> {
        if dim == 0 || images.len() != labels.len() * dim {
            return Err(Error::InvalidShape(format!(
                "{} features do not hold {} samples of dimension {dim}",
                images.len(),
                labels.len()
            )));
        }
        Ok(Self { images, labels, dim })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.images[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// First `count` samples.
    pub fn head(&self, count: usize) -> Self {
        let count = count.min(self.len());
        Self {
            images: self.images[..count * self.dim].to_vec(),
            labels: self.labels[..count].to_vec(),
            dim: self.dim,
        }
    }
}

/// `k` workers drawing minibatches from disjoint shards. Every epoch the
/// samples are reshuffled and split into `k` contiguous shards whose sizes
/// differ by at most one.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkerSet {
    samples: usize,
    workers: usize,
    batch: usize,
    stream: RngStream,
}

impl WorkerSet {
    pub fn new(samples: usize, workers: usize, batch: usize, stream: RngStream) -> Result<Self> {
        if workers == 0 || batch == 0 {
            return Err(Error::Config("workers and batch size must be positive".into()));
        }
        if samples < workers {
            return Err(Error::Config(format!("{samples} samples cannot feed {workers} workers")));
        }
        Ok(Self {
            samples,
            workers,
            batch,
            stream,
        })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Rounds needed for the smallest shard to be seen once.
    pub fn rounds_per_epoch(&self) -> usize {
        let smallest = self.samples / self.workers;
        smallest.div_ceil(self.batch)
    }

    pub fn shards(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut perm: Vec<usize> = (0..self.samples).collect();
        perm.shuffle(&mut self.stream.child(epoch as u64).rng());
        let base = self.samples / self.workers;
        let extra = self.samples % self.workers;
        let mut out = Vec::with_capacity(self.workers);
        let mut start = 0;
        for w in 0..self.workers {
            let len = base + usize::from(w < extra);
            out.push(perm[start..start + len].to_vec());
            start += len;
        }
        out
    }

    /// Indices of worker `w`'s minibatch for `round` within an epoch, given
    /// that epoch's shards. The final round takes whatever remains of the
    /// shard, so every sample is visited once per epoch.
    pub fn minibatch<'a>(&self, shards: &'a [Vec<usize>], w: usize, round: usize) -> &'a [usize] {
        let shard = &shards[w];
        let start = (round * self.batch).min(shard.len());
        let end = if round + 1 >= self.rounds_per_epoch() {
            shard.len()
        } else {
            (start + self.batch).min(shard.len())
        };
        &shard[start..end]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shards_partition_and_balance() {
        let ws = WorkerSet::new(103, 4, 8, RngStream::new(0, 0)).unwrap();
        for epoch in 0..3 {
            let shards = ws.shards(epoch);
            let mut all: Vec<usize> = shards.concat();
            all.sort_unstable();
            assert_eq!(all, (0..103).collect::<Vec<_>>());
            let sizes: Vec<usize> = shards.iter().map(|s| s.len()).collect();
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
        assert_ne!(ws.shards(0), ws.shards(1));
    }

    #[test]
    fn minibatches_cover_common_prefix() {
        let ws = WorkerSet::new(60_000, 16, 128, RngStream::new(0, 0)).unwrap();
        assert_eq!(ws.rounds_per_epoch(), 30);
        let shards = ws.shards(0);
        assert_eq!(ws.minibatch(&shards, 3, 0).len(), 128);
        assert_eq!(ws.minibatch(&shards, 3, 29).len(), 3750 - 29 * 128);
        let mut seen: Vec<usize> = (0..30).flat_map(|r| ws.minibatch(&shards, 3, r).to_vec()).collect();
        seen.sort_unstable();
        let mut shard = shards[3].clone();
        shard.sort_unstable();
        assert_eq!(seen, shard);
    }

    #[test]
    fn uneven_shards_are_fully_visited() {
        let ws = WorkerSet::new(103, 4, 8, RngStream::new(0, 0)).unwrap();
        let shards = ws.shards(0);
        for w in 0..4 {
            let n: usize = (0..ws.rounds_per_epoch()).map(|r| ws.minibatch(&shards, w, r).len()).sum();
            assert_eq!(n, shards[w].len());
        }
    }

    #[test]
    fn dataset_shape_is_checked() {
        assert!(Dataset::new(vec![0.0; 7], vec![0, 1], 4).is_err());
        let d = Dataset::new(vec![0.0; 8], vec![0, 1], 4).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.head(1).len(), 1);
    }
}
