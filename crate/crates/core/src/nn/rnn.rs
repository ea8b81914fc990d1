//! Bidirectional stacked LSTM encoder.
//!
//! Standard 4-gate cells. Position i of the output concatenates the forward
//! pass over tokens 0..=i with the backward pass over tokens n-1..=i, so each
//! token sees its full left and right context.

use crate::error::{Error, Result};
use crate::nn::params::{Binding, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Tape, TensorId};

#[derive(Clone, Debug)]
pub struct LstmCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Gate order: input, forget, cell, output.
    w_x: [ParamId; 4],
    w_h: [ParamId; 4],
    b: [ParamId; 4],
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        let gates = ["i", "f", "g", "o"];
        let mk_wx = |store: &mut ParamStore, rng: &mut Rng, g: &str| {
            store.add_matrix(format!("{name}.wx_{g}"), input_dim, hidden_dim, rng)
        };
        let mk_wh = |store: &mut ParamStore, rng: &mut Rng, g: &str| {
            store.add_matrix(format!("{name}.wh_{g}"), hidden_dim, hidden_dim, rng)
        };
        let w_x = [
            mk_wx(store, rng, gates[0]),
            mk_wx(store, rng, gates[1]),
            mk_wx(store, rng, gates[2]),
            mk_wx(store, rng, gates[3]),
        ];
        let w_h = [
            mk_wh(store, rng, gates[0]),
            mk_wh(store, rng, gates[1]),
            mk_wh(store, rng, gates[2]),
            mk_wh(store, rng, gates[3]),
        ];
        let b = [
            store.add_zeros(format!("{name}.b_i"), vec![hidden_dim]),
            store.add_zeros(format!("{name}.b_f"), vec![hidden_dim]),
            store.add_zeros(format!("{name}.b_g"), vec![hidden_dim]),
            store.add_zeros(format!("{name}.b_o"), vec![hidden_dim]),
        ];
        LstmCell {
            input_dim,
            hidden_dim,
            w_x,
            w_h,
            b,
        }
    }

    /// All parameter ids in a fixed order (useful for tying directions).
    pub fn param_ids(&self) -> Vec<ParamId> {
        self.w_x
            .iter()
            .chain(self.w_h.iter())
            .chain(self.b.iter())
            .copied()
            .collect()
    }

    fn gate(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        idx: usize,
        x: TensorId,
        h: TensorId,
    ) -> Result<TensorId> {
        let xw = tape.matmul(x, binding.id(self.w_x[idx]))?;
        let hw = tape.matmul(h, binding.id(self.w_h[idx]))?;
        let s = tape.add(xw, hw)?;
        tape.add(s, binding.id(self.b[idx]))
    }

    /// One recurrence step over a `[1, input_dim]` row.
    pub fn step(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        x: TensorId,
        h: TensorId,
        c: TensorId,
    ) -> Result<(TensorId, TensorId)> {
        let i_pre = self.gate(tape, binding, 0, x, h)?;
        let f_pre = self.gate(tape, binding, 1, x, h)?;
        let g_pre = self.gate(tape, binding, 2, x, h)?;
        let o_pre = self.gate(tape, binding, 3, x, h)?;
        let i = tape.sigmoid(i_pre)?;
        let f = tape.sigmoid(f_pre)?;
        let g = tape.tanh(g_pre)?;
        let o = tape.sigmoid(o_pre)?;
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c_next = tape.add(fc, ig)?;
        let c_act = tape.tanh(c_next)?;
        let h_next = tape.mul(o, c_act)?;
        Ok((h_next, c_next))
    }

    /// Run over `[1, input_dim]` rows in the given order; returns the hidden
    /// state after each step.
    pub fn run(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        rows: &[TensorId],
    ) -> Result<Vec<TensorId>> {
        let mut h = tape.zeros(vec![1, self.hidden_dim]);
        let mut c = tape.zeros(vec![1, self.hidden_dim]);
        let mut out = Vec::with_capacity(rows.len());
        for &x in rows {
            let (h2, c2) = self.step(tape, binding, x, h, c)?;
            h = h2;
            c = c2;
            out.push(h);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct BiRnn {
    pub input_dim: usize,
    pub hidden_dim: usize,
    layers: Vec<(LstmCell, LstmCell)>,
}

impl BiRnn {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        num_layers: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if num_layers == 0 {
            return Err(Error::invalid("BiRnn: num_layers must be >= 1"));
        }
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let d_in = if l == 0 { input_dim } else { 2 * hidden_dim };
            let fwd = LstmCell::new(store, &format!("{name}.l{l}.fwd"), d_in, hidden_dim, rng);
            let bwd = LstmCell::new(store, &format!("{name}.l{l}.bwd"), d_in, hidden_dim, rng);
            layers.push((fwd, bwd));
        }
        Ok(BiRnn {
            input_dim,
            hidden_dim,
            layers,
        })
    }

    pub fn layers(&self) -> &[(LstmCell, LstmCell)] {
        &self.layers
    }

    /// Per-token output dimension: forward ⊕ backward.
    pub fn output_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    /// Encode a `[n, input_dim]` sequence to `[n, 2*hidden_dim]`.
    pub fn encode(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        seq: TensorId,
        dropout: f64,
        training: bool,
        rng: &mut Rng,
    ) -> Result<TensorId> {
        let shape = tape.shape(seq).to_vec();
        if shape.len() != 2 || shape[1] != self.input_dim {
            return Err(Error::ShapeMismatch {
                op: "birnn_encode",
                lhs: shape,
                rhs: vec![0, self.input_dim],
            });
        }
        let n = shape[0];
        let mut current = seq;
        for (l, (fwd, bwd)) in self.layers.iter().enumerate() {
            let rows: Vec<TensorId> = (0..n)
                .map(|i| tape.row(current, i))
                .collect::<Result<_>>()?;
            let fwd_states = fwd.run(tape, binding, &rows)?;
            let rev_rows: Vec<TensorId> = rows.iter().rev().copied().collect();
            let mut bwd_states = bwd.run(tape, binding, &rev_rows)?;
            bwd_states.reverse();
            let joined: Vec<TensorId> = fwd_states
                .iter()
                .zip(&bwd_states)
                .map(|(&f, &b)| tape.concat(&[f, b], 1))
                .collect::<Result<_>>()?;
            current = tape.concat(&joined, 0)?;
            if l + 1 < self.layers.len() {
                current = tape.dropout(current, dropout, training, rng)?;
            }
        }
        Ok(current)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn encode_values(
        store: &ParamStore,
        rnn: &BiRnn,
        seq: &Tensor,
    ) -> Vec<f64> {
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let x = tape.leaf(seq.clone());
        let mut rng = Rng::seed(0);
        let out = rnn
            .encode(&mut tape, &binding, x, 0.0, false, &mut rng)
            .unwrap();
        tape.values(out).to_vec()
    }

    #[test]
    fn zero_parameters_give_zero_outputs() {
        let mut rng = Rng::seed(1);
        let mut store = ParamStore::new();
        let rnn = BiRnn::new(&mut store, "r", 3, 4, 1, &mut rng).unwrap();
        for p in store.iter_mut() {
            p.value.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let seq = Tensor::new(vec![2, 3], vec![1.0, -2.0, 0.5, 3.0, 4.0, -0.5]).unwrap();
        let out = encode_values(&store, &rnn, &seq);
        assert!(out.iter().all(|&v| v == 0.0), "{out:?}");
    }

    #[test]
    fn single_token_with_tied_directions_has_equal_halves() {
        let mut rng = Rng::seed(2);
        let mut store = ParamStore::new();
        let rnn = BiRnn::new(&mut store, "r", 3, 4, 1, &mut rng).unwrap();
        let (fwd, bwd) = &rnn.layers()[0];
        for (fp, bp) in fwd.param_ids().into_iter().zip(bwd.param_ids()) {
            let data = store.get(fp).value.data.clone();
            store.get_mut(bp).value.data = data;
        }
        let seq = Tensor::new(vec![1, 3], vec![0.3, -0.8, 1.2]).unwrap();
        let out = encode_values(&store, &rnn, &seq);
        assert_eq!(&out[..4], &out[4..]);
    }

    #[test]
    fn two_step_unroll_matches_plain_oracle() {
        let mut rng = Rng::seed(3);
        let mut store = ParamStore::new();
        let rnn = BiRnn::new(&mut store, "r", 2, 3, 1, &mut rng).unwrap();
        let seq = Tensor::new(vec![2, 2], vec![0.5, -1.0, 0.25, 0.75]).unwrap();
        let got = encode_values(&store, &rnn, &seq);

        // Plain f64 re-implementation of the recurrence.
        let read = |p: ParamId| store.get(p).value.data.clone();
        #[allow(clippy::needless_range_loop)]
        let cell_step = |cell: &LstmCell, x: &[f64], h: &[f64], c: &[f64]| {
            let u = cell.hidden_dim;
            let mut pre = vec![vec![0.0; u]; 4];
            for gi in 0..4 {
                let wx = read(cell.w_x[gi]);
                let wh = read(cell.w_h[gi]);
                let b = read(cell.b[gi]);
                for j in 0..u {
                    let mut s = b[j];
                    for (k, &xv) in x.iter().enumerate() {
                        s += xv * wx[k * u + j];
                    }
                    for (k, &hv) in h.iter().enumerate() {
                        s += hv * wh[k * u + j];
                    }
                    pre[gi][j] = s;
                }
            }
            let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
            let mut h2 = vec![0.0; u];
            let mut c2 = vec![0.0; u];
            for j in 0..u {
                let i = sig(pre[0][j]);
                let f = sig(pre[1][j]);
                let g = pre[2][j].tanh();
                let o = sig(pre[3][j]);
                c2[j] = f * c[j] + i * g;
                h2[j] = o * c2[j].tanh();
            }
            (h2, c2)
        };

        let (fwd, bwd) = &rnn.layers()[0];
        let x0 = vec![0.5, -1.0];
        let x1 = vec![0.25, 0.75];
        let zero = vec![0.0; 3];
        let (hf0, cf0) = cell_step(fwd, &x0, &zero, &zero);
        let (hf1, _) = cell_step(fwd, &x1, &hf0, &cf0);
        let (hb1, cb1) = cell_step(bwd, &x1, &zero, &zero);
        let (hb0, _) = cell_step(bwd, &x0, &hb1, &cb1);

        let expect: Vec<f64> = hf0
            .iter()
            .chain(&hb0)
            .chain(&hf1)
            .chain(&hb1)
            .copied()
            .collect();
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-10, "got {g}, expected {e}");
        }
    }

    #[test]
    fn forward_half_ignores_future_tokens() {
        let mut rng = Rng::seed(4);
        let mut store = ParamStore::new();
        let rnn = BiRnn::new(&mut store, "r", 2, 3, 1, &mut rng).unwrap();
        let base = Tensor::new(vec![3, 2], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let mut perturbed = base.clone();
        perturbed.data[4] = 9.0; // token 2, after position 1
        perturbed.data[5] = -9.0;

        let a = encode_values(&store, &rnn, &base);
        let b = encode_values(&store, &rnn, &perturbed);
        // Forward halves of positions 0 and 1 are bit-identical...
        assert_eq!(&a[0..3], &b[0..3]);
        assert_eq!(&a[6..9], &b[6..9]);
        // ...while the backward half of position 1 must change.
        assert_ne!(&a[9..12], &b[9..12]);

        // Symmetric check: perturbing token 0 leaves backward halves of later
        // positions untouched.
        let mut early = base.clone();
        early.data[0] = 7.0;
        let c = encode_values(&store, &rnn, &early);
        assert_eq!(&a[9..12], &c[9..12]);
        assert_eq!(&a[15..18], &c[15..18]);
    }

    #[test]
    fn empty_sequence_rejected() {
        let mut rng = Rng::seed(5);
        let mut store = ParamStore::new();
        let rnn = BiRnn::new(&mut store, "r", 2, 3, 1, &mut rng).unwrap();
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        // Zero-row tensors cannot even be constructed; a wrong feature dim is
        // the reachable misuse.
        let x = tape.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        let mut rng2 = Rng::seed(0);
        assert!(rnn
            .encode(&mut tape, &binding, x, 0.0, false, &mut rng2)
            .is_err());
    }

    #[test]
    fn stacked_layers_change_output_dim_correctly() {
        let mut rng = Rng::seed(6);
        let mut store = ParamStore::new();
        let rnn = BiRnn::new(&mut store, "r", 5, 4, 2, &mut rng).unwrap();
        let seq = Tensor::new(vec![3, 5], (0..15).map(|i| i as f64 * 0.1).collect()).unwrap();
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let x = tape.leaf(seq);
        let mut r = Rng::seed(0);
        let out = rnn.encode(&mut tape, &binding, x, 0.0, false, &mut r).unwrap();
        assert_eq!(tape.shape(out), &[3, 8]);
    }

    #[test]
    fn gradients_flow_through_recurrence() {
        let mut rng = Rng::seed(7);
        let mut store = ParamStore::new();
        let rnn = BiRnn::new(&mut store, "r", 2, 2, 1, &mut rng).unwrap();
        let seq = Tensor::new(vec![2, 2], vec![0.5, -0.25, 0.75, 0.1]).unwrap();
        let err = crate::tensor::grad_check(
            |tape, x| {
                let binding = store.bind(tape);
                let mut r = Rng::seed(0);
                let h = rnn.encode(tape, &binding, x, 0.0, false, &mut r)?;
                tape.sum_all(h)
            },
            &seq,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "err {err}");
    }
}
