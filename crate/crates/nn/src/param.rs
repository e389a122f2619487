// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::{NnError, Tensor};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    /// Frozen parameters never receive gradients or optimizer updates.
    pub frozen: bool,
}

/// How a fresh parameter is filled.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Xavier/Glorot uniform over `(fan_in, fan_out) = (rows, cols)`.
    XavierUniform,
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
}

/// Named parameters of one model, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, ParamId>,
}

/// Per-parameter seed: the run seed mixed with a hash of the parameter
/// name, so initial values do not depend on registration order.
pub fn param_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    seed ^ h
}

pub fn init_tensor(rows: usize, cols: usize, init: Init, seed: u64) -> Tensor {
    match init {
        Init::Zeros => Tensor::zeros(rows, cols),
        Init::Ones => Tensor::filled(rows, cols, 1.0),
        Init::XavierUniform => {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            init_tensor(rows, cols, Init::Uniform(bound), seed)
        }
        Init::Uniform(bound) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
            Tensor::from_vec(rows, cols, data).expect("sized by construction")
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter initialized from `seed` and its name.
    pub fn add(&mut self, name: &str, rows: usize, cols: usize, init: Init, seed: u64) -> ParamId {
        let tensor = init_tensor(rows, cols, init, param_seed(seed, name));
        self.add_tensor(name, tensor)
    }

    pub fn add_tensor(&mut self, name: &str, tensor: Tensor) -> ParamId {
        assert!(!self.by_name.contains_key(name), "duplicate parameter name {name}");
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            tensor,
            frozen: false,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        for p in &mut self.params {
            p.frozen = frozen;
        }
    }

    /// Copies values from `other`, which must hold the same names and shapes.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<(), NnError> {
        for p in &mut self.params {
            let src = other
                .id(&p.name)
                .map(|id| other.value(id))
                .ok_or_else(|| NnError::Checkpoint(format!("missing parameter {}", p.name)))?;
            if src.shape() != p.tensor.shape() {
                return Err(NnError::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name,
                    src.shape(),
                    p.tensor.shape()
                )));
            }
            p.tensor = src.clone();
        }
        if other.len() != self.len() {
            return Err(NnError::Checkpoint(format!(
                "checkpoint holds {} parameters, model has {}",
                other.len(),
                self.len()
            )));
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            h.update((p.tensor.rows() as u64).to_le_bytes());
            h.update((p.tensor.cols() as u64).to_le_bytes());
            for v in p.tensor.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xavier_is_bounded_and_seeded() {
        let a = init_tensor(10, 20, Init::XavierUniform, 36);
        let b = init_tensor(10, 20, Init::XavierUniform, 36);
        let c = init_tensor(10, 20, Init::XavierUniform, 37);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = (6.0f64 / 30.0).sqrt();
        assert!(a.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn init_does_not_depend_on_registration_order() {
        let mut s1 = ParamStore::new();
        s1.add("a", 3, 3, Init::XavierUniform, 36);
        s1.add("b", 3, 3, Init::XavierUniform, 36);
        let mut s2 = ParamStore::new();
        s2.add("b", 3, 3, Init::XavierUniform, 36);
        s2.add("a", 3, 3, Init::XavierUniform, 36);
        assert_eq!(s1.value(s1.id("a").unwrap()), s2.value(s2.id("a").unwrap()));
    }
}
