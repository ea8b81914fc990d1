//! Trainable word-embedding table with reserved control tokens.

use crate::error::{Error, Result};
use crate::nn::params::{Binding, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Tape, TensorId};

pub const CLS_TOKEN: &str = "[CLS]";
pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";

pub const CLS_ID: usize = 0;
pub const PAD_ID: usize = 1;
pub const UNK_ID: usize = 2;

/// Number of reserved rows at the front of every table.
pub const RESERVED: usize = 3;

#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub vocab_size: usize,
    pub dim: usize,
    pub weights: ParamId,
}

impl EmbeddingTable {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        vocab_size: usize,
        dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if vocab_size <= UNK_ID {
            return Err(Error::invalid(format!(
                "embedding table needs at least {} rows for reserved tokens, got {vocab_size}",
                RESERVED
            )));
        }
        let data: Vec<f64> = (0..vocab_size * dim).map(|_| 0.1 * rng.normal()).collect();
        let weights = store.add(
            name,
            crate::tensor::Tensor::new(vec![vocab_size, dim], data)?,
        );
        Ok(EmbeddingTable {
            vocab_size,
            dim,
            weights,
        })
    }

    /// Look rows up from the bound table tensor. Gradient flows only into
    /// the gathered rows.
    pub fn lookup(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        ids: &[usize],
    ) -> Result<TensorId> {
        self.lookup_in(tape, binding.id(self.weights), ids)
    }

    /// Same as [`lookup`](Self::lookup) but against an explicit table tensor
    /// (e.g. one already updated by a row scatter).
    pub fn lookup_in(&self, tape: &mut Tape, table: TensorId, ids: &[usize]) -> Result<TensorId> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(Error::invalid(format!(
                "token id {bad} out of range for vocabulary of {}",
                self.vocab_size
            )));
        }
        tape.gather_rows(table, ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn table() -> (ParamStore, EmbeddingTable) {
        let mut rng = Rng::seed(7);
        let mut store = ParamStore::new();
        let t = EmbeddingTable::new(&mut store, "emb", 8, 4, &mut rng).unwrap();
        (store, t)
    }

    #[test]
    fn repeated_ids_give_identical_rows() {
        let (store, t) = table();
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let out = t.lookup(&mut tape, &binding, &[5, 5]).unwrap();
        let v = tape.values(out);
        assert_eq!(&v[..4], &v[4..]);
    }

    #[test]
    fn updated_row_is_returned_and_others_untouched() {
        let (mut store, t) = table();
        let before = store.get(t.weights).value.data.clone();
        // overwrite row 3 with ones
        store.get_mut(t.weights).value.data[3 * 4..4 * 4].copy_from_slice(&[1.0; 4]);
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let out = t.lookup(&mut tape, &binding, &[3]).unwrap();
        assert_eq!(tape.values(out), &[1.0; 4]);
        // non-targeted rows bit-identical
        let after = &store.get(t.weights).value.data;
        for row in 0..8 {
            if row != 3 {
                assert_eq!(&after[row * 4..(row + 1) * 4], &before[row * 4..(row + 1) * 4]);
            }
        }
    }

    #[test]
    fn out_of_range_id_rejected() {
        let (store, t) = table();
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        assert!(t.lookup(&mut tape, &binding, &[8]).is_err());
    }

    #[test]
    fn gradient_lands_only_on_looked_up_rows() {
        let (store, t) = table();
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let out = t.lookup(&mut tape, &binding, &[2, 2]).unwrap();
        let loss = tape.sum_all(out).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(binding.id(t.weights)).unwrap();
        for row in 0..8 {
            for col in 0..4 {
                let expect = if row == 2 { 2.0 } else { 0.0 };
                assert_eq!(g[row * 4 + col], expect);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (store, t) = table();
        let weights = store.get(t.weights).value.clone();
        let err = crate::tensor::grad_check(
            |tape, w| {
                let picked = tape.gather_rows(w, &[2, 2])?;
                tape.sum_all(picked)
            },
            &Tensor::new(weights.shape.clone(), weights.data.clone()).unwrap(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-10, "err {err}");
    }
}
