use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Class-balanced epochs for a single binary attribute: the minority class is
/// oversampled until both classes contribute the same number of draws, and
/// the pool is shuffled. Batches are read sequentially; a fresh epoch is
/// built when the pool runs out.
#[derive(Clone, Debug)]
pub struct BinaryBalancer {
    majority: Vec<usize>,
    minority: Vec<usize>,
    pool: Vec<usize>,
    cursor: usize,
}

impl BinaryBalancer {
    /// `labels[i]` is the 0/1 label of sample `i`.
    pub fn new(labels: &[u8]) -> Result<Self> {
        let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
        let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 1).collect();
        if pos.is_empty() || neg.is_empty() {
            return Err(Error::Data("binary balancing needs samples of both classes".into()));
        }
        let (majority, minority) = if pos.len() > neg.len() { (pos, neg) } else { (neg, pos) };
        Ok(Self { majority, minority, pool: Vec::new(), cursor: 0 })
    }

    /// One shuffled epoch: every majority sample once, the minority samples
    /// cycled (in shuffled order) up to the same count.
    pub fn epoch_pool(&self, rng: &mut impl Rng) -> Vec<usize> {
        let mut minority = self.minority.clone();
        minority.shuffle(rng);
        let mut pool = self.majority.clone();
        pool.extend(minority.iter().cycle().take(self.majority.len()));
        pool.shuffle(rng);
        pool
    }

    pub fn next_batch(&mut self, batch_size: usize, rng: &mut impl Rng) -> Vec<usize> {
        let mut batch = Vec::with_capacity(batch_size);
        while batch.len() < batch_size {
            if self.cursor == self.pool.len() {
                self.pool = self.epoch_pool(rng);
                self.cursor = 0;
            }
            let take = (batch_size - batch.len()).min(self.pool.len() - self.cursor);
            batch.extend_from_slice(&self.pool[self.cursor..self.cursor + take]);
            self.cursor += take;
        }
        batch
    }
}

/// Per-attribute rare-class queues plus one queue of samples that are in the
/// common class for every attribute. Each queue is shuffled once and then
/// read as a circular buffer.
#[derive(Clone, Debug)]
pub struct QueueSet {
    /// `queues[0]` is the all-majority queue, `queues[a + 1]` the rare-class
    /// queue of attribute `a`.
    queues: Vec<Vec<usize>>,
    cursors: Vec<usize>,
    minority_class: Vec<u8>,
}

impl QueueSet {
    /// `labels[i][a]` is sample `i`'s label for the network's attribute `a`.
    /// The minority class of an attribute is the rarer label; on a tie the
    /// positive label is treated as rare.
    pub fn new(labels: &[Vec<u8>], rng: &mut impl Rng) -> Result<Self> {
        let num_attrs = labels.first().map_or(0, Vec::len);
        if num_attrs == 0 || labels.iter().any(|l| l.len() != num_attrs) {
            return Err(Error::Data("queue set needs a consistent, non-empty label matrix".into()));
        }
        let minority_class: Vec<u8> = (0..num_attrs)
            .map(|a| {
                let pos = labels.iter().filter(|l| l[a] == 1).count();
                u8::from(pos * 2 <= labels.len())
            })
            .collect();
        let mut queues = vec![Vec::new(); num_attrs + 1];
        for (i, l) in labels.iter().enumerate() {
            let mut rare_any = false;
            for a in 0..num_attrs {
                if l[a] == minority_class[a] {
                    queues[a + 1].push(i);
                    rare_any = true;
                }
            }
            if !rare_any {
                queues[0].push(i);
            }
        }
        if queues.iter().all(Vec::is_empty) {
            return Err(Error::Data("all queues are empty".into()));
        }
        for q in &mut queues {
            q.shuffle(rng);
        }
        let cursors = vec![0; queues.len()];
        Ok(Self { queues, cursors, minority_class })
    }

    pub fn num_attrs(&self) -> usize {
        self.minority_class.len()
    }

    pub fn minority_class(&self, attr: usize) -> u8 {
        self.minority_class[attr]
    }

    /// Queue contents: index 0 is the all-majority queue.
    pub fn queue(&self, q: usize) -> &[usize] {
        &self.queues[q]
    }

    /// Picks a queue uniformly at random (redrawing past empty ones) and pops
    /// its next element circularly. Returns `(queue, sample)`.
    pub fn next(&mut self, rng: &mut impl Rng) -> (usize, usize) {
        loop {
            let q = rng.random_range(0..self.queues.len());
            if let Some(sample) = self.pop(q) {
                return (q, sample);
            }
        }
    }

    /// Next element of queue `q`, or `None` if it is empty.
    pub fn pop(&mut self, q: usize) -> Option<usize> {
        let queue = &self.queues[q];
        if queue.is_empty() {
            return None;
        }
        let sample = queue[self.cursors[q]];
        self.cursors[q] = (self.cursors[q] + 1) % queue.len();
        Some(sample)
    }

    pub fn sample_batch(&mut self, batch_size: usize, rng: &mut impl Rng) -> Vec<usize> {
        (0..batch_size).map(|_| self.next(rng).1).collect()
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn epoch_pool_balances_ninety_ten() {
        let labels: Vec<u8> = (0..100).map(|i| u8::from(i < 10)).collect();
        let b = BinaryBalancer::new(&labels).unwrap();
        let pool = b.epoch_pool(&mut ChaCha8Rng::seed_from_u64(0));
        let pos = pool.iter().filter(|&&i| labels[i] == 1).count();
        assert_eq!((pos, pool.len() - pos), (90, 90));
        // each positive is repeated 9 times
        for i in 0..10 {
            assert_eq!(pool.iter().filter(|&&j| j == i).count(), 9);
        }
    }

    #[test]
    fn balanced_data_pool_is_a_permutation() {
        let labels: Vec<u8> = (0..50).map(|i| (i % 2) as u8).collect();
        let mut pool = BinaryBalancer::new(&labels).unwrap().epoch_pool(&mut ChaCha8Rng::seed_from_u64(1));
        pool.sort_unstable();
        assert_eq!(pool, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(BinaryBalancer::new(&[0, 0, 0]).is_err());
    }

    #[test]
    fn queue_partition_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let labels: Vec<Vec<u8>> =
            (0..200).map(|_| (0..3).map(|a| u8::from(rng.random::<f64>() < 0.1 * (a + 1) as f64)).collect()).collect();
        let qs = QueueSet::new(&labels, &mut rng).unwrap();
        for i in 0..labels.len() {
            let in_queues = (0..=3).filter(|&q| qs.queue(q).contains(&i)).count();
            assert!(in_queues >= 1);
            if qs.queue(0).contains(&i) {
                assert_eq!(in_queues, 1);
            }
        }
        for a in 0..3 {
            for &i in qs.queue(a + 1) {
                assert_eq!(labels[i][a], qs.minority_class(a));
            }
            let expected = labels.iter().filter(|l| l[a] == qs.minority_class(a)).count();
            assert_eq!(qs.queue(a + 1).len(), expected);
        }
    }

    #[test]
    fn queue_reads_are_circular() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let labels: Vec<Vec<u8>> = (0..7).map(|i| vec![u8::from(i < 3)]).collect();
        let mut qs = QueueSet::new(&labels, &mut rng).unwrap();
        let len = qs.queue(1).len();
        let first: Vec<_> = (0..len).map(|_| qs.pop(1).unwrap()).collect();
        let second: Vec<_> = (0..len).map(|_| qs.pop(1).unwrap()).collect();
        assert_eq!(first, second);
    }

    #[test]
    fn single_attribute_picks_each_queue_half_the_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let labels: Vec<Vec<u8>> = (0..100).map(|i| vec![u8::from(i % 5 == 0)]).collect();
        let mut qs = QueueSet::new(&labels, &mut rng).unwrap();
        let n = 10_000;
        let zeros = (0..n).filter(|_| qs.next(&mut rng).0 == 0).count();
        assert!((zeros as f64 / n as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn empty_queues_are_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // attribute 1 is always 0 with ties impossible, so its rare class is
        // the (absent) positive label
        let labels: Vec<Vec<u8>> = (0..10).map(|i| vec![u8::from(i < 2), 0]).collect();
        let mut qs = QueueSet::new(&labels, &mut rng).unwrap();
        assert!(qs.queue(2).is_empty());
        for _ in 0..100 {
            assert_ne!(qs.next(&mut rng).0, 2);
        }
    }
}
