// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SplitError {
    #[error("need at least 3 IPs to split, found {0}")]
    TooFewIPs(usize),
    #[error("ratios must be non-negative and sum to a positive value")]
    BadRatios,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IpSplit {
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl IpSplit {
    pub fn parts(&self) -> [&BTreeSet<String>; 3] {
        [&self.train, &self.val, &self.test]
    }
}

/// Partitions IPs (never instances) so that pair counts approach `ratios`.
/// IPs are shuffled with `seed`, then stably sorted by descending count so
/// the shuffle only orders ties; each IP goes to the split with the largest
/// remaining deficit. A split left empty takes the smallest IP of the most
/// populated split.
pub fn ip_disjoint_split(counts: &BTreeMap<String, usize>, ratios: [f64; 3], seed: u64) -> Result<IpSplit, SplitError> {
    if counts.len() < 3 {
        return Err(SplitError::TooFewIPs(counts.len()));
    }
    let rsum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| *r < 0.0 || !r.is_finite()) || rsum <= 0.0 {
        return Err(SplitError::BadRatios);
    }
    let total: usize = counts.values().sum();
    let target: Vec<f64> = ratios.iter().map(|r| r / rsum * total as f64).collect();
    let mut ips: Vec<(&String, usize)> = counts.iter().map(|(k, v)| (k, *v)).collect();
    ips.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ips.sort_by_key(|&(_, c)| std::cmp::Reverse(c));
    let mut parts: [Vec<(&String, usize)>; 3] = Default::default();
    let mut load = [0usize; 3];
    for (ip, c) in ips {
        let mut best = 0;
        let mut best_def = f64::NEG_INFINITY;
        for s in 0..3 {
            let def = target[s] - load[s] as f64;
            if def > best_def {
                best = s;
                best_def = def;
            }
        }
        parts[best].push((ip, c));
        load[best] += c;
    }
    for s in 0..3 {
        if parts[s].is_empty() {
            let donor = (0..3)
                .max_by_key(|&d| (parts[d].len(), std::cmp::Reverse(d)))
                .expect("three parts");
            let (k, _) = parts[donor]
                .iter()
                .enumerate()
                .min_by(|a, b| a.1 .1.cmp(&b.1 .1).then_with(|| b.1 .0.cmp(a.1 .0)))
                .expect("donor has IPs");
            let moved = parts[donor].remove(k);
            parts[s].push(moved);
        }
    }
    let set = |v: &Vec<(&String, usize)>| v.iter().map(|(k, _)| (*k).clone()).collect();
    Ok(IpSplit {
        train: set(&parts[0]),
        val: set(&parts[1]),
        test: set(&parts[2]),
    })
}
