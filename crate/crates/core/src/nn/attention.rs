//! Pre-norm multi-head attention blocks (self and cross variants).
//!
//! Layout per block: x + Drop(MHA(LN1(x))) followed by h + Drop(FFN(LN2(h))).
//! In the cross variant queries come from the target sequence and keys/values
//! from the source; the residual lands on the target.

use crate::error::{Error, Result};
use crate::nn::params::{Binding, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Tape, TensorId};

/// Forward-value snapshot of one head's attention matrix.
#[derive(Clone, Debug)]
pub struct AttentionWeights {
    pub head: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    ff1_w: ParamId,
    ff1_b: ParamId,
    ff2_w: ParamId,
    ff2_b: ParamId,
}

const LN_EPS: f64 = 1e-5;

impl AttentionBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::invalid(format!(
                "attention dim {dim} not divisible by {heads} heads"
            )));
        }
        let ff_dim = 2 * dim;
        Ok(AttentionBlock {
            dim,
            heads,
            ff_dim,
            wq: store.add_matrix(format!("{name}.wq"), dim, dim, rng),
            bq: store.add_zeros(format!("{name}.bq"), vec![dim]),
            wk: store.add_matrix(format!("{name}.wk"), dim, dim, rng),
            bk: store.add_zeros(format!("{name}.bk"), vec![dim]),
            wv: store.add_matrix(format!("{name}.wv"), dim, dim, rng),
            bv: store.add_zeros(format!("{name}.bv"), vec![dim]),
            wo: store.add_matrix(format!("{name}.wo"), dim, dim, rng),
            bo: store.add_zeros(format!("{name}.bo"), vec![dim]),
            ln1_g: store.add_full(format!("{name}.ln1_g"), vec![dim], 1.0),
            ln1_b: store.add_zeros(format!("{name}.ln1_b"), vec![dim]),
            ln2_g: store.add_full(format!("{name}.ln2_g"), vec![dim], 1.0),
            ln2_b: store.add_zeros(format!("{name}.ln2_b"), vec![dim]),
            ff1_w: store.add_matrix(format!("{name}.ff1_w"), dim, ff_dim, rng),
            ff1_b: store.add_zeros(format!("{name}.ff1_b"), vec![ff_dim]),
            ff2_w: store.add_matrix(format!("{name}.ff2_w"), ff_dim, dim, rng),
            ff2_b: store.add_zeros(format!("{name}.ff2_b"), vec![dim]),
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![
            self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo, self.ln1_g,
            self.ln1_b, self.ln2_g, self.ln2_b, self.ff1_w, self.ff1_b, self.ff2_w, self.ff2_b,
        ]
    }

    fn check_dim(&self, tape: &Tape, x: TensorId, what: &'static str) -> Result<()> {
        let s = tape.shape(x);
        if s.len() != 2 || s[1] != self.dim {
            return Err(Error::ShapeMismatch {
                op: what,
                lhs: s.to_vec(),
                rhs: vec![0, self.dim],
            });
        }
        Ok(())
    }

    /// Multi-head attention core on already-normalized inputs. Returns the
    /// projected context and per-head weight snapshots.
    fn attend(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        q_in: TensorId,
        kv_in: TensorId,
    ) -> Result<(TensorId, Vec<AttentionWeights>)> {
        let head_dim = self.dim / self.heads;
        let q = tape.linear(q_in, binding.id(self.wq), binding.id(self.bq))?;
        let k = tape.linear(kv_in, binding.id(self.wk), binding.id(self.bk))?;
        let v = tape.linear(kv_in, binding.id(self.wv), binding.id(self.bv))?;
        let n_t = tape.shape(q)[0];
        let n_s = tape.shape(k)[0];

        let mut contexts = Vec::with_capacity(self.heads);
        let mut snapshots = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
            let qh = tape.slice(q, 1, lo, hi)?;
            let kh = tape.slice(k, 1, lo, hi)?;
            let vh = tape.slice(v, 1, lo, hi)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scaled = tape.scale(scores, 1.0 / (head_dim as f64).sqrt())?;
            let weights = tape.softmax(scaled, 1)?;
            snapshots.push(AttentionWeights {
                head: h,
                rows: n_t,
                cols: n_s,
                data: tape.values(weights).to_vec(),
            });
            contexts.push(tape.matmul(weights, vh)?);
        }
        let ctx = tape.concat(&contexts, 1)?;
        let out = tape.linear(ctx, binding.id(self.wo), binding.id(self.bo))?;
        Ok((out, snapshots))
    }

    #[allow(clippy::too_many_arguments)]
    fn forward(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        target: TensorId,
        source: TensorId,
        op_name: &'static str,
        dropout: f64,
        training: bool,
        rng: &mut Rng,
    ) -> Result<(TensorId, Vec<AttentionWeights>)> {
        self.check_dim(tape, target, op_name)?;
        self.check_dim(tape, source, op_name)?;
        let q_in = tape.layer_norm(target, binding.id(self.ln1_g), binding.id(self.ln1_b), LN_EPS)?;
        let kv_in = if source == target {
            q_in
        } else {
            tape.layer_norm(source, binding.id(self.ln1_g), binding.id(self.ln1_b), LN_EPS)?
        };
        let (ctx, weights) = self.attend(tape, binding, q_in, kv_in)?;
        let ctx = tape.dropout(ctx, dropout, training, rng)?;
        let h = tape.add(target, ctx)?;

        let h_norm = tape.layer_norm(h, binding.id(self.ln2_g), binding.id(self.ln2_b), LN_EPS)?;
        let ff = tape.linear(h_norm, binding.id(self.ff1_w), binding.id(self.ff1_b))?;
        let ff = tape.relu(ff)?;
        let ff = tape.linear(ff, binding.id(self.ff2_w), binding.id(self.ff2_b))?;
        let ff = tape.dropout(ff, dropout, training, rng)?;
        let out = tape.add(h, ff)?;
        Ok((out, weights))
    }

    pub fn forward_self(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        x: TensorId,
        dropout: f64,
        training: bool,
        rng: &mut Rng,
    ) -> Result<(TensorId, Vec<AttentionWeights>)> {
        self.forward(tape, binding, x, x, "self_attention", dropout, training, rng)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward_cross(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        target: TensorId,
        source: TensorId,
        dropout: f64,
        training: bool,
        rng: &mut Rng,
    ) -> Result<(TensorId, Vec<AttentionWeights>)> {
        self.forward(
            tape,
            binding,
            target,
            source,
            "cross_attention",
            dropout,
            training,
            rng,
        )
    }
}

/// Row 0 of a sequence whose position 0 holds the [CLS] slot.
pub fn cls_pool(tape: &mut Tape, seq: TensorId) -> Result<TensorId> {
    tape.row(seq, 0)
}

/// Last row of a sequence, the summary convention of the fusion stack.
pub fn final_pool(tape: &mut Tape, seq: TensorId) -> Result<TensorId> {
    let n = tape.shape(seq)[0];
    tape.row(seq, n - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn no_dropout() -> (f64, bool, Rng) {
        (0.0, false, Rng::seed(0))
    }

    fn block(dim: usize, heads: usize, seed: u64) -> (ParamStore, AttentionBlock) {
        let mut rng = Rng::seed(seed);
        let mut store = ParamStore::new();
        let b = AttentionBlock::new(&mut store, "blk", dim, heads, &mut rng).unwrap();
        (store, b)
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut rng = Rng::seed(0);
        let mut store = ParamStore::new();
        assert!(AttentionBlock::new(&mut store, "b", 6, 4, &mut rng).is_err());
    }

    #[test]
    fn single_position_attends_to_itself_fully() {
        let (store, blk) = block(4, 2, 1);
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let x = tape.constant(vec![1, 4], vec![0.5, -0.3, 0.8, 0.1]).unwrap();
        let (d, t, mut rng) = no_dropout();
        let (_, weights) = blk
            .forward_self(&mut tape, &binding, x, d, t, &mut rng)
            .unwrap();
        for w in &weights {
            assert_eq!(w.rows, 1);
            assert_eq!(w.cols, 1);
            assert!((w.data[0] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_rows_give_identical_outputs() {
        let (store, blk) = block(4, 2, 2);
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let row = vec![0.4, 1.2, -0.5, 0.9];
        let x = tape
            .constant(vec![3, 4], [row.clone(), row.clone(), row].concat())
            .unwrap();
        let (d, t, mut rng) = no_dropout();
        let (out, _) = blk
            .forward_self(&mut tape, &binding, x, d, t, &mut rng)
            .unwrap();
        let v = tape.values(out);
        assert_eq!(&v[0..4], &v[4..8]);
        assert_eq!(&v[4..8], &v[8..12]);
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let (store, blk) = block(8, 4, 3);
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let mut r = Rng::seed(9);
        let x = tape
            .constant(vec![5, 8], (0..40).map(|_| r.normal()).collect())
            .unwrap();
        let (d, t, mut rng) = no_dropout();
        let (_, weights) = blk
            .forward_self(&mut tape, &binding, x, d, t, &mut rng)
            .unwrap();
        assert_eq!(weights.len(), 4);
        for w in &weights {
            for row in w.data.chunks(w.cols) {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-12, "row sum {s}");
            }
        }
    }

    #[test]
    fn cross_attention_single_source_gets_full_weight() {
        let (store, blk) = block(4, 2, 4);
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let mut r = Rng::seed(10);
        let target = tape
            .constant(vec![3, 4], (0..12).map(|_| r.normal()).collect())
            .unwrap();
        let source = tape
            .constant(vec![1, 4], (0..4).map(|_| r.normal()).collect())
            .unwrap();
        let (d, t, mut rng) = no_dropout();
        let (out, weights) = blk
            .forward_cross(&mut tape, &binding, target, source, d, t, &mut rng)
            .unwrap();
        assert_eq!(tape.shape(out), &[3, 4]);
        for w in &weights {
            assert_eq!((w.rows, w.cols), (3, 1));
            assert!(w.data.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        }
    }

    #[test]
    fn cross_attention_identical_source_rows_make_weights_irrelevant() {
        // With every source row equal, the attention output is that row's
        // value projection no matter how the weights distribute.
        let (store, blk) = block(4, 1, 5);
        let mut r = Rng::seed(11);
        let target_data: Vec<f64> = (0..8).map(|_| r.normal()).collect();
        let src_row: Vec<f64> = (0..4).map(|_| r.normal()).collect();

        let run = |source_rows: usize, store: &ParamStore| {
            let mut tape = Tape::new();
            let binding = store.bind(&mut tape);
            let target = tape.constant(vec![2, 4], target_data.clone()).unwrap();
            let mut data = Vec::new();
            for _ in 0..source_rows {
                data.extend_from_slice(&src_row);
            }
            let source = tape.constant(vec![source_rows, 4], data).unwrap();
            let (d, t, mut rng) = no_dropout();
            let (out, _) = blk
                .forward_cross(&mut tape, &binding, target, source, d, t, &mut rng)
                .unwrap();
            tape.values(out).to_vec()
        };

        let one = run(1, &store);
        let many = run(5, &store);
        for (a, b) in one.iter().zip(&many) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dim_mismatch_is_rejected() {
        let (store, blk) = block(4, 2, 6);
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let x = tape.constant(vec![2, 6], vec![0.0; 12]).unwrap();
        let (d, t, mut rng) = no_dropout();
        assert!(blk
            .forward_self(&mut tape, &binding, x, d, t, &mut rng)
            .is_err());
    }

    #[test]
    fn two_token_single_head_matches_manual_computation() {
        let (store, blk) = block(2, 1, 7);
        let x_data = vec![0.6, -0.2, 0.1, 0.9];

        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let x = tape.constant(vec![2, 2], x_data.clone()).unwrap();
        let (d, t, mut rng) = no_dropout();
        let (out, weights) = blk
            .forward_self(&mut tape, &binding, x, d, t, &mut rng)
            .unwrap();
        let got = tape.values(out).to_vec();
        let got_w = weights[0].data.clone();

        // Manual recomputation with plain f64 arithmetic.
        let read = |p: ParamId| store.get(p).value.data.clone();
        let d2 = 2usize;
        let ln = |xs: &[f64], g: &[f64], b: &[f64]| {
            let mut out = vec![0.0; xs.len()];
            for r in 0..xs.len() / d2 {
                let row = &xs[r * d2..(r + 1) * d2];
                let mean = (row[0] + row[1]) / 2.0;
                let var = ((row[0] - mean).powi(2) + (row[1] - mean).powi(2)) / 2.0;
                let is = 1.0 / (var + LN_EPS).sqrt();
                for j in 0..d2 {
                    out[r * d2 + j] = (row[j] - mean) * is * g[j] + b[j];
                }
            }
            out
        };
        let matvec = |xs: &[f64], w: &[f64], b: &[f64], rows: usize, ci: usize, co: usize| {
            let mut out = vec![0.0; rows * co];
            for r in 0..rows {
                for j in 0..co {
                    let mut s = b[j];
                    for k in 0..ci {
                        s += xs[r * ci + k] * w[k * co + j];
                    }
                    out[r * co + j] = s;
                }
            }
            out
        };

        let xn = ln(&x_data, &read(blk.ln1_g), &read(blk.ln1_b));
        let q = matvec(&xn, &read(blk.wq), &read(blk.bq), 2, 2, 2);
        let k = matvec(&xn, &read(blk.wk), &read(blk.bk), 2, 2, 2);
        let v = matvec(&xn, &read(blk.wv), &read(blk.bv), 2, 2, 2);
        let scale = 1.0 / (2.0f64).sqrt();
        let mut attn = vec![0.0; 4];
        for i in 0..2 {
            let s0 = (q[i * 2] * k[0] + q[i * 2 + 1] * k[1]) * scale;
            let s1 = (q[i * 2] * k[2] + q[i * 2 + 1] * k[3]) * scale;
            let m = s0.max(s1);
            let (e0, e1) = ((s0 - m).exp(), (s1 - m).exp());
            attn[i * 2] = e0 / (e0 + e1);
            attn[i * 2 + 1] = e1 / (e0 + e1);
        }
        for (a, b) in got_w.iter().zip(&attn) {
            assert!((a - b).abs() < 1e-12, "weights {a} vs {b}");
        }
        let mut ctx = vec![0.0; 4];
        for i in 0..2 {
            for j in 0..2 {
                ctx[i * 2 + j] = attn[i * 2] * v[j] + attn[i * 2 + 1] * v[2 + j];
            }
        }
        let proj = matvec(&ctx, &read(blk.wo), &read(blk.bo), 2, 2, 2);
        let h: Vec<f64> = x_data.iter().zip(&proj).map(|(a, b)| a + b).collect();
        let hn = ln(&h, &read(blk.ln2_g), &read(blk.ln2_b));
        let ff = matvec(&hn, &read(blk.ff1_w), &read(blk.ff1_b), 2, 2, 4);
        let ff: Vec<f64> = ff.iter().map(|&v| v.max(0.0)).collect();
        let ff = matvec(&ff, &read(blk.ff2_w), &read(blk.ff2_b), 2, 4, 2);
        let expect: Vec<f64> = h.iter().zip(&ff).map(|(a, b)| a + b).collect();

        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-10, "out {g} vs {e}");
        }
    }

    #[test]
    fn cross_two_by_two_matches_manual_computation() {
        let (store, blk) = block(2, 1, 21);
        let target_data = vec![0.3, -0.9, 1.1, 0.4];
        let source_data = vec![-0.2, 0.8, 0.6, -0.5];

        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let target = tape.constant(vec![2, 2], target_data.clone()).unwrap();
        let source = tape.constant(vec![2, 2], source_data.clone()).unwrap();
        let (d, t, mut rng) = no_dropout();
        let (out, weights) = blk
            .forward_cross(&mut tape, &binding, target, source, d, t, &mut rng)
            .unwrap();
        let got = tape.values(out).to_vec();

        let read = |p: ParamId| store.get(p).value.data.clone();
        let d2 = 2usize;
        let ln = |xs: &[f64], g: &[f64], b: &[f64]| {
            let mut out = vec![0.0; xs.len()];
            for r in 0..xs.len() / d2 {
                let row = &xs[r * d2..(r + 1) * d2];
                let mean = (row[0] + row[1]) / 2.0;
                let var = ((row[0] - mean).powi(2) + (row[1] - mean).powi(2)) / 2.0;
                let is = 1.0 / (var + LN_EPS).sqrt();
                for j in 0..d2 {
                    out[r * d2 + j] = (row[j] - mean) * is * g[j] + b[j];
                }
            }
            out
        };
        let matvec = |xs: &[f64], w: &[f64], b: &[f64], rows: usize, ci: usize, co: usize| {
            let mut out = vec![0.0; rows * co];
            for r in 0..rows {
                for j in 0..co {
                    let mut s = b[j];
                    for k in 0..ci {
                        s += xs[r * ci + k] * w[k * co + j];
                    }
                    out[r * co + j] = s;
                }
            }
            out
        };

        // Queries from the normalized target, keys/values from the
        // normalized source (shared first norm).
        let tn = ln(&target_data, &read(blk.ln1_g), &read(blk.ln1_b));
        let sn = ln(&source_data, &read(blk.ln1_g), &read(blk.ln1_b));
        let q = matvec(&tn, &read(blk.wq), &read(blk.bq), 2, 2, 2);
        let k = matvec(&sn, &read(blk.wk), &read(blk.bk), 2, 2, 2);
        let v = matvec(&sn, &read(blk.wv), &read(blk.bv), 2, 2, 2);
        let scale = 1.0 / (2.0f64).sqrt();
        let mut attn = vec![0.0; 4];
        for i in 0..2 {
            let s0 = (q[i * 2] * k[0] + q[i * 2 + 1] * k[1]) * scale;
            let s1 = (q[i * 2] * k[2] + q[i * 2 + 1] * k[3]) * scale;
            let m = s0.max(s1);
            let (e0, e1) = ((s0 - m).exp(), (s1 - m).exp());
            attn[i * 2] = e0 / (e0 + e1);
            attn[i * 2 + 1] = e1 / (e0 + e1);
        }
        for (a, b) in weights[0].data.iter().zip(&attn) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut ctx = vec![0.0; 4];
        for i in 0..2 {
            for j in 0..2 {
                ctx[i * 2 + j] = attn[i * 2] * v[j] + attn[i * 2 + 1] * v[2 + j];
            }
        }
        let proj = matvec(&ctx, &read(blk.wo), &read(blk.bo), 2, 2, 2);
        // Residual lands on the target.
        let h: Vec<f64> = target_data.iter().zip(&proj).map(|(a, b)| a + b).collect();
        let hn = ln(&h, &read(blk.ln2_g), &read(blk.ln2_b));
        let ff = matvec(&hn, &read(blk.ff1_w), &read(blk.ff1_b), 2, 2, 4);
        let ff: Vec<f64> = ff.iter().map(|&v| v.max(0.0)).collect();
        let ff = matvec(&ff, &read(blk.ff2_w), &read(blk.ff2_b), 2, 4, 2);
        let expect: Vec<f64> = h.iter().zip(&ff).map(|(a, b)| a + b).collect();
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-10, "out {g} vs {e}");
        }
    }

    #[test]
    fn cls_pool_returns_row_zero_and_routes_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(
            Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 9.0, 9.0, 9.0])
                .unwrap()
                .with_grad(),
        );
        let pooled = cls_pool(&mut tape, x).unwrap();
        assert_eq!(tape.values(pooled), &[1.0, 2.0, 3.0]);
        let loss = tape.sum_all(pooled).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn self_attention_mixes_cls_with_rest() {
        let (store, blk) = block(4, 2, 8);
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        let mut r = Rng::seed(12);
        let x = tape
            .constant(vec![3, 4], (0..12).map(|_| r.normal()).collect())
            .unwrap();
        let before = tape.values(x)[0..4].to_vec();
        let (d, t, mut rng) = no_dropout();
        let (out, _) = blk
            .forward_self(&mut tape, &binding, x, d, t, &mut rng)
            .unwrap();
        let pooled = cls_pool(&mut tape, out).unwrap();
        let after = tape.values(pooled).to_vec();
        assert_ne!(before, after);
    }

    #[test]
    fn block_passes_grad_check() {
        let (store, blk) = block(4, 2, 13);
        let mut r = Rng::seed(14);
        let x = Tensor::new(vec![3, 4], (0..12).map(|_| r.normal()).collect()).unwrap();
        let err = crate::tensor::grad_check(
            |tape, x| {
                let binding = store.bind(tape);
                let mut rng = Rng::seed(0);
                let (out, _) = blk.forward_self(tape, &binding, x, 0.0, false, &mut rng)?;
                tape.sum_all(out)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "err {err}");
    }
}
