//! Deterministic sample ordering across data sources.

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// `(source, index within source)`.
pub type SampleRef = (usize, usize);

/// Epoch-structured sample order. By default every epoch is the
/// concatenation of all sources, globally shuffled, so each source is drawn in
/// proportion to its size. With weights, each draw first picks a source with
/// probability proportional to its weight.
#[derive(Clone, Debug)]
pub struct Mixture {
    sizes: Vec<usize>,
    weights: Option<Vec<f64>>,
    seed: u64,
}

impl Mixture {
    pub fn new(sizes: Vec<usize>, weights: Option<Vec<f64>>, seed: u64) -> Result<Self> {
        if sizes.iter().sum::<usize>() == 0 {
            return Err(Error::Config("mixture has no samples".into()));
        }
        if let Some(w) = &weights {
            if w.len() != sizes.len() {
                return Err(Error::Config(format!("{} weights for {} sources", w.len(), sizes.len())));
            }
            if let Some(i) = w.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::Config(format!("source {i} has weight {} (must be > 0)", w[i])));
            }
            if let Some(i) = sizes.iter().position(|&n| n == 0) {
                return Err(Error::Config(format!("weighted source {i} is empty")));
            }
        }
        Ok(Mixture { sizes, weights, seed })
    }

    pub fn epoch_len(&self) -> usize {
        self.sizes.iter().sum()
    }

    fn rng(&self, epoch: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch as u64);
        rng
    }

    pub fn epoch(&self, epoch: usize) -> Vec<SampleRef> {
        let mut rng = self.rng(epoch);
        match &self.weights {
            None => {
                let mut all: Vec<SampleRef> =
                    self.sizes.iter().enumerate().flat_map(|(s, &n)| (0..n).map(move |i| (s, i))).collect();
                all.shuffle(&mut rng);
                all
            }
            Some(w) => {
                let mut orders: Vec<Vec<usize>> = self
                    .sizes
                    .iter()
                    .map(|&n| {
                        let mut o: Vec<usize> = (0..n).collect();
                        o.shuffle(&mut rng);
                        o
                    })
                    .collect();
                let total: f64 = w.iter().sum();
                let mut cursor = vec![0usize; self.sizes.len()];
                (0..self.epoch_len())
                    .map(|_| {
                        let mut r = rng.random::<f64>() * total;
                        let mut s = w.len() - 1;
                        for (i, &wi) in w.iter().enumerate() {
                            if r < wi {
                                s = i;
                                break;
                            }
                            r -= wi;
                        }
                        let n = self.sizes[s];
                        if cursor[s] == n {
                            orders[s].shuffle(&mut rng);
                            cursor[s] = 0;
                        }
                        cursor[s] += 1;
                        (s, orders[s][cursor[s] - 1])
                    })
                    .collect()
            }
        }
    }

    /// The `batch_size` samples of training step `step`. Depends only on the
    /// step, so a resumed run sees the same data.
    pub fn batch(&self, step: usize, batch_size: usize) -> Vec<SampleRef> {
        let n = self.epoch_len();
        let start = step * batch_size;
        let mut out = Vec::with_capacity(batch_size);
        let mut cached: Option<(usize, Vec<SampleRef>)> = None;
        for g in start..start + batch_size {
            let e = g / n;
            if cached.as_ref().map(|c| c.0) != Some(e) {
                cached = Some((e, self.epoch(e)));
            }
            out.push(cached.as_ref().expect("set above").1[g % n]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_proportional_by_default() {
        let m = Mixture::new(vec![100, 300], None, 3).unwrap();
        let mut counts = [0usize; 2];
        for e in 0..25 {
            for (s, _) in m.epoch(e) {
                counts[s] += 1;
            }
        }
        assert_eq!(counts, [2500, 7500]);
        let first = m.epoch(0);
        assert_ne!(first, m.epoch(1));
        assert_eq!(first, Mixture::new(vec![100, 300], None, 3).unwrap().epoch(0));
    }

    #[test]
    fn weighted_draws_follow_weights() {
        let m = Mixture::new(vec![100, 300], Some(vec![1.0, 1.0]), 9).unwrap();
        let mut c0 = 0usize;
        let mut total = 0usize;
        for e in 0..25 {
            for (s, _) in m.epoch(e) {
                c0 += usize::from(s == 0);
                total += 1;
            }
        }
        // binomial sd = sqrt(10000·0.25) = 50
        assert!((c0 as f64 - 0.5 * total as f64).abs() < 4.0 * 50.0);
    }

    #[test]
    fn single_source_is_a_permutation() {
        let m = Mixture::new(vec![10], None, 0).unwrap();
        let mut e: Vec<usize> = m.epoch(0).into_iter().map(|(_, i)| i).collect();
        e.sort();
        assert_eq!(e, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn invalid_weights_rejected() {
        assert!(Mixture::new(vec![1, 2], Some(vec![1.0, 0.0]), 0).is_err());
        assert!(Mixture::new(vec![1, 2], Some(vec![1.0]), 0).is_err());
        assert!(Mixture::new(vec![0], None, 0).is_err());
    }

    #[test]
    fn batches_cross_epoch_boundaries() {
        let m = Mixture::new(vec![5], None, 1).unwrap();
        let b = m.batch(1, 4); // global indices 4..8
        assert_eq!(b[0], m.epoch(0)[4]);
        assert_eq!(b[1], m.epoch(1)[0]);
        assert_eq!(b[3], m.epoch(1)[2]);
    }
}
