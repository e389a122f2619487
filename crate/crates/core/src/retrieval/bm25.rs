// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};

/// Lower-cased word pieces: splits on anything that is not alphanumeric,
/// on `_`, on lower-to-upper case changes and on letter/digit changes.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split(|c: char| !c.is_ascii_alphanumeric()) {
        let chars: Vec<char> = word.chars().collect();
        let mut start = 0;
        for i in 1..=chars.len() {
            let boundary = i == chars.len() || {
                let (a, b) = (chars[i - 1], chars[i]);
                (a.is_ascii_lowercase() && b.is_ascii_uppercase())
                    || (a.is_ascii_alphabetic() != b.is_ascii_alphabetic())
                    || (i + 1 < chars.len()
                        && a.is_ascii_uppercase()
                        && b.is_ascii_uppercase()
                        && chars[i + 1].is_ascii_lowercase())
            };
            if boundary {
                if i > start {
                    out.push(chars[start..i].iter().collect::<String>().to_ascii_lowercase());
                }
                start = i;
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// Okapi BM25 over a fixed document list.
#[derive(Clone, Debug)]
pub struct Bm25Index {
    tf: Vec<BTreeMap<String, usize>>,
    len: Vec<usize>,
    df: BTreeMap<String, usize>,
    avgdl: f64,
    params: Bm25Params,
}

impl Bm25Index {
    pub fn new<S: AsRef<str>>(docs: &[S], params: Bm25Params) -> Self {
        let mut tf = Vec::with_capacity(docs.len());
        let mut len = Vec::with_capacity(docs.len());
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for d in docs {
            let toks = tokenize(d.as_ref());
            len.push(toks.len());
            let mut m: BTreeMap<String, usize> = BTreeMap::new();
            for t in toks {
                *m.entry(t).or_default() += 1;
            }
            for t in m.keys() {
                *df.entry(t.clone()).or_default() += 1;
            }
            tf.push(m);
        }
        let avgdl = if len.is_empty() {
            0.0
        } else {
            len.iter().sum::<usize>() as f64 / len.len() as f64
        };
        Bm25Index {
            tf,
            len,
            df,
            avgdl,
            params,
        }
    }

    /// `ln((N − df + 0.5) / (df + 0.5) + 1)`, never negative.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.tf.len() as f64;
        let df = self.df.get(term).copied().unwrap_or(0) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Score of every document; each distinct query term counts once.
    pub fn scores(&self, query: &str) -> Vec<f64> {
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        let Bm25Params { k1, b } = self.params;
        let idfs: Vec<(&String, f64)> = terms
            .iter()
            .filter(|t| self.df.contains_key(*t))
            .map(|t| (t, self.idf(t)))
            .collect();
        (0..self.tf.len())
            .map(|d| {
                let norm = if self.avgdl > 0.0 {
                    self.len[d] as f64 / self.avgdl
                } else {
                    0.0
                };
                idfs.iter()
                    .map(|(t, idf)| {
                        let f = self.tf[d].get(*t).copied().unwrap_or(0) as f64;
                        idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * norm))
                    })
                    .sum()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identifier_aware_tokens() {
        assert_eq!(
            tokenize("rx_fifoDepth q <= 8'hFF;"),
            vec!["rx", "fifo", "depth", "q", "8", "h", "ff"]
        );
        assert_eq!(tokenize("HTTPServer2"), vec!["http", "server", "2"]);
    }
}
