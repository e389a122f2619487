// SPDX-License-Identifier: Apache-2.0

use rtloc_nn::{Affine, Graph, Init, Mode, NnError, ParamId, ParamStore, Tensor, Var};

use super::{EncoderError, ModelConfig};
use crate::graph::fnv1a64;

/// Character 3- to 5-grams of the lower-cased, space-padded text, hashed
/// into `vocab` buckets. Repeated grams are kept.
pub fn ngram_buckets(text: &str, vocab: usize) -> Vec<usize> {
    let chars: Vec<char> = format!(" {} ", text.to_lowercase()).chars().collect();
    let mut out = Vec::new();
    let mut buf = String::new();
    for n in 3..=5 {
        for w in chars.windows(n) {
            buf.clear();
            buf.extend(w);
            out.push((fnv1a64(buf.as_bytes()) % vocab as u64) as usize);
        }
    }
    out
}

/// Hashed n-gram bag, mean-pooled, projected and normalized. Queries and
/// blocks share every parameter.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub store: ParamStore,
    pub table: ParamId,
    pub proj: Affine,
    pub vocab: usize,
    pub dim: usize,
}

impl TextEncoder {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let table = store.add("text.table", cfg.text_vocab, cfg.dim, Init::XavierUniform, seed);
        let proj = Affine::new(&mut store, "text.proj", cfg.dim, cfg.dim, false, seed);
        TextEncoder {
            store,
            table,
            proj,
            vocab: cfg.text_vocab,
            dim: cfg.dim,
        }
    }

    /// `texts.len() x dim`, unit rows.
    pub fn forward<S: AsRef<str>>(&self, g: &mut Graph, texts: &[S]) -> Result<Var, EncoderError> {
        let mut ids = Vec::new();
        let mut seg = Vec::new();
        for (i, t) in texts.iter().enumerate() {
            let t = t.as_ref();
            if t.trim().is_empty() {
                return Err(EncoderError::EmptyText);
            }
            let b = ngram_buckets(t, self.vocab);
            seg.extend(std::iter::repeat(i).take(b.len()));
            ids.extend(b);
        }
        let rows = g.gather(self.table, &ids)?;
        let pooled = g.segment_mean(rows, &seg, texts.len())?;
        let y = self.proj.forward(g, pooled)?;
        Ok(g.l2_normalize_rows(y)?)
    }

    pub fn embed_batch<S: AsRef<str>>(&self, texts: &[S]) -> Result<Vec<Vec<f64>>, EncoderError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new(&self.store, Mode::Eval, 0);
        let v = self.forward(&mut g, texts)?;
        Ok(rows_of(g.value(v)))
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>, EncoderError> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }
}

pub(crate) fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

impl From<NnError> for EncoderError {
    fn from(e: NnError) -> Self {
        EncoderError::Nn(e)
    }
}
