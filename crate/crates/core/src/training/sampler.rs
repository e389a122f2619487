// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

/// Splits pair indices into batches of at most `batch_size` in which no
/// group (change request) appears twice. Pairs are visited in a shuffled
/// order; a pair whose group is already in the current batch is deferred
/// to a later batch. Every pair is emitted exactly once.
pub fn constrained_batches<R: Rng>(groups: &[usize], batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut pending: Vec<usize> = (0..groups.len()).collect();
    pending.shuffle(rng);
    let mut batches = Vec::new();
    while !pending.is_empty() {
        let mut batch = Vec::with_capacity(batch_size);
        let mut seen = BTreeSet::new();
        let mut deferred = Vec::new();
        for p in pending {
            if batch.len() < batch_size && seen.insert(groups[p]) {
                batch.push(p);
            } else {
                deferred.push(p);
            }
        }
        batches.push(batch);
        pending = deferred;
    }
    batches
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn five_positive_group_is_spread_out() {
        let mut groups = vec![0, 0, 0, 0, 0];
        groups.extend(1..20);
        let b = constrained_batches(&groups, 8, &mut ChaCha8Rng::seed_from_u64(1));
        let mut all: Vec<usize> = b.iter().flatten().copied().collect();
        all.sort();
        assert_eq!(all, (0..groups.len()).collect::<Vec<_>>());
        for batch in &b {
            assert!(batch.len() <= 8);
            let g: BTreeSet<usize> = batch.iter().map(|&p| groups[p]).collect();
            assert_eq!(g.len(), batch.len());
        }
    }
}
