//! Cross-relation aggregation over the heterogeneous graph.
//!
//! Each round updates every node from its per-relation neighborhoods:
//! NodeAGG pools the neighbor vectors of one relation (ordered by token
//! position for the recurrent kinds), a relation-specific weight then mixes
//! the node's previous state with the pooled vector through a relu, and
//! HeteroAGG combines the per-relation results elementwise. Keyword nodes
//! see up to two relations (gesture, audio); gesture and audio nodes see
//! only the keyword relation. Isolated nodes aggregate a zero neighbor
//! vector so the update stays well-defined for unused vocabulary entries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::nn::params::{Binding, ParamId, ParamStore};
use crate::nn::rnn::LstmCell;
use crate::rng::Rng;
use crate::tensor::{ReduceKind, Tape, TensorId};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum NodeAggKind {
    Mean,
    Pool,
    Lstm,
    BiLstm,
}

impl NodeAggKind {
    pub const ALL: [NodeAggKind; 4] = [
        NodeAggKind::Mean,
        NodeAggKind::Pool,
        NodeAggKind::Lstm,
        NodeAggKind::BiLstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NodeAggKind::Mean => "mean",
            NodeAggKind::Pool => "pool",
            NodeAggKind::Lstm => "lstm",
            NodeAggKind::BiLstm => "bilstm",
        }
    }
}

impl std::str::FromStr for NodeAggKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(NodeAggKind::Mean),
            "pool" => Ok(NodeAggKind::Pool),
            "lstm" => Ok(NodeAggKind::Lstm),
            "bilstm" => Ok(NodeAggKind::BiLstm),
            other => Err(Error::invalid(format!(
                "unknown node aggregator `{other}` (valid: mean, pool, lstm, bilstm)"
            ))),
        }
    }
}

impl std::fmt::Display for NodeAggKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum HeteroAggKind {
    Mean,
    Sum,
    Max,
    Min,
}

impl HeteroAggKind {
    pub const ALL: [HeteroAggKind; 4] = [
        HeteroAggKind::Mean,
        HeteroAggKind::Sum,
        HeteroAggKind::Max,
        HeteroAggKind::Min,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HeteroAggKind::Mean => "mean",
            HeteroAggKind::Sum => "sum",
            HeteroAggKind::Max => "max",
            HeteroAggKind::Min => "min",
        }
    }

    fn reduce_kind(self) -> ReduceKind {
        match self {
            HeteroAggKind::Mean => ReduceKind::Mean,
            HeteroAggKind::Sum => ReduceKind::Sum,
            HeteroAggKind::Max => ReduceKind::Max,
            HeteroAggKind::Min => ReduceKind::Min,
        }
    }
}

impl std::str::FromStr for HeteroAggKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(HeteroAggKind::Mean),
            "sum" => Ok(HeteroAggKind::Sum),
            "max" => Ok(HeteroAggKind::Max),
            "min" => Ok(HeteroAggKind::Min),
            other => Err(Error::invalid(format!(
                "unknown hetero aggregator `{other}` (valid: mean, sum, max, min)"
            ))),
        }
    }
}

impl std::fmt::Display for HeteroAggKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Learned parameters of one relation's neighbor aggregator. Output dim
/// always equals the neighbor feature dim, so swapping aggregator kinds
/// never changes downstream shapes.
#[derive(Clone, Debug)]
pub enum AggParams {
    Mean,
    Pool { w: ParamId, b: ParamId },
    Lstm(LstmCell),
    BiLstm { fwd: LstmCell, bwd: LstmCell },
}

impl AggParams {
    fn new(
        store: &mut ParamStore,
        name: &str,
        kind: NodeAggKind,
        neighbor_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(match kind {
            NodeAggKind::Mean => AggParams::Mean,
            NodeAggKind::Pool => AggParams::Pool {
                w: store.add_matrix(format!("{name}.pool_w"), neighbor_dim, neighbor_dim, rng),
                b: store.add_zeros(format!("{name}.pool_b"), vec![neighbor_dim]),
            },
            NodeAggKind::Lstm => AggParams::Lstm(LstmCell::new(
                store,
                &format!("{name}.lstm"),
                neighbor_dim,
                neighbor_dim,
                rng,
            )),
            NodeAggKind::BiLstm => {
                if !neighbor_dim.is_multiple_of(2) {
                    return Err(Error::invalid(format!(
                        "bilstm aggregator needs an even neighbor dim, got {neighbor_dim}"
                    )));
                }
                AggParams::BiLstm {
                    fwd: LstmCell::new(
                        store,
                        &format!("{name}.bilstm_f"),
                        neighbor_dim,
                        neighbor_dim / 2,
                        rng,
                    ),
                    bwd: LstmCell::new(
                        store,
                        &format!("{name}.bilstm_b"),
                        neighbor_dim,
                        neighbor_dim / 2,
                        rng,
                    ),
                }
            }
        })
    }
}

/// Pool one relation's neighbor matrix `[q, d]` down to `[1, d]`.
/// `None` (an isolated node) yields the zero vector.
pub fn node_aggregate(
    tape: &mut Tape,
    binding: &Binding,
    neighbors: Option<TensorId>,
    neighbor_dim: usize,
    params: &AggParams,
) -> Result<TensorId> {
    let Some(neigh) = neighbors else {
        return Ok(tape.zeros(vec![1, neighbor_dim]));
    };
    let (q, d) = tape.tensor(neigh).dims2()?;
    if d != neighbor_dim {
        return Err(Error::ShapeMismatch {
            op: "node_aggregate",
            lhs: vec![q, d],
            rhs: vec![q, neighbor_dim],
        });
    }
    match params {
        AggParams::Mean => tape.mean_rows(neigh),
        AggParams::Pool { w, b } => {
            let h = tape.linear(neigh, binding.id(*w), binding.id(*b))?;
            let h = tape.relu(h)?;
            let m = tape.reduce(h, 0, ReduceKind::Max)?;
            tape.reshape(m, vec![1, neighbor_dim])
        }
        AggParams::Lstm(cell) => {
            let rows: Vec<TensorId> = (0..q).map(|i| tape.row(neigh, i)).collect::<Result<_>>()?;
            let states = cell.run(tape, binding, &rows)?;
            Ok(*states.last().expect("q >= 1"))
        }
        AggParams::BiLstm { fwd, bwd } => {
            let rows: Vec<TensorId> = (0..q).map(|i| tape.row(neigh, i)).collect::<Result<_>>()?;
            let f_states = fwd.run(tape, binding, &rows)?;
            let rev: Vec<TensorId> = rows.iter().rev().copied().collect();
            let b_states = bwd.run(tape, binding, &rev)?;
            tape.concat(&[*f_states.last().unwrap(), *b_states.last().unwrap()], 1)
        }
    }
}

/// relu(W · (h_prev ⊕ h_neigh)) for row vectors.
pub fn sage_update(
    tape: &mut Tape,
    h_prev: TensorId,
    h_neigh: TensorId,
    weight: TensorId,
) -> Result<TensorId> {
    let joined = tape.concat(&[h_prev, h_neigh], 1)?;
    let mixed = tape.matmul(joined, weight)?;
    tape.relu(mixed)
}

/// Elementwise combination of per-relation representations.
pub fn hetero_aggregate(
    tape: &mut Tape,
    relations: &[TensorId],
    kind: HeteroAggKind,
) -> Result<TensorId> {
    if relations.is_empty() {
        return Err(Error::invalid("hetero_aggregate: empty relation list"));
    }
    let d = tape.shape(relations[0])[1];
    let stacked = tape.concat(relations, 0)?;
    let reduced = tape.reduce(stacked, 0, kind.reduce_kind())?;
    tape.reshape(reduced, vec![1, d])
}

#[derive(Clone, Debug)]
struct Relation {
    agg: AggParams,
    weight: ParamId,
}

impl Relation {
    fn new(
        store: &mut ParamStore,
        name: &str,
        kind: NodeAggKind,
        self_dim: usize,
        neighbor_dim: usize,
        out_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(Relation {
            agg: AggParams::new(store, name, kind, neighbor_dim, rng)?,
            weight: store.add_matrix(
                format!("{name}.w"),
                self_dim + neighbor_dim,
                out_dim,
                rng,
            ),
        })
    }
}

#[derive(Clone, Debug)]
struct GraphStep {
    kw_from_gesture: Option<Relation>,
    kw_from_audio: Option<Relation>,
    gesture_from_kw: Option<Relation>,
    audio_from_kw: Option<Relation>,
}

/// The K-step encoder; h^0 is the raw node inputs.
#[derive(Clone, Debug)]
pub struct GraphEncoder {
    pub depth: usize,
    pub node_agg: NodeAggKind,
    pub hetero_agg: HeteroAggKind,
    pub keyword_in_dim: usize,
    pub gesture_in_dim: usize,
    pub audio_in_dim: usize,
    pub out_dim: usize,
    steps: Vec<GraphStep>,
    use_gesture: bool,
    use_audio: bool,
}

impl GraphEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        depth: usize,
        node_agg: NodeAggKind,
        hetero_agg: HeteroAggKind,
        keyword_in_dim: usize,
        gesture_in_dim: usize,
        audio_in_dim: usize,
        out_dim: usize,
        use_gesture: bool,
        use_audio: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::invalid("graph encoder depth must be >= 1"));
        }
        if !use_gesture && !use_audio {
            return Err(Error::invalid(
                "graph encoder needs at least one of the gesture/audio relations",
            ));
        }
        let mut steps = Vec::with_capacity(depth);
        for k in 0..depth {
            // After the first step every node type carries out_dim features.
            let (d_f, d_v, d_a) = if k == 0 {
                (keyword_in_dim, gesture_in_dim, audio_in_dim)
            } else {
                (out_dim, out_dim, out_dim)
            };
            let kw_from_gesture = use_gesture
                .then(|| {
                    Relation::new(
                        store,
                        &format!("{name}.k{k}.f_from_v"),
                        node_agg,
                        d_f,
                        d_v,
                        out_dim,
                        rng,
                    )
                })
                .transpose()?;
            let kw_from_audio = use_audio
                .then(|| {
                    Relation::new(
                        store,
                        &format!("{name}.k{k}.f_from_a"),
                        node_agg,
                        d_f,
                        d_a,
                        out_dim,
                        rng,
                    )
                })
                .transpose()?;
            let gesture_from_kw = use_gesture
                .then(|| {
                    Relation::new(
                        store,
                        &format!("{name}.k{k}.v_from_f"),
                        node_agg,
                        d_v,
                        d_f,
                        out_dim,
                        rng,
                    )
                })
                .transpose()?;
            let audio_from_kw = use_audio
                .then(|| {
                    Relation::new(
                        store,
                        &format!("{name}.k{k}.a_from_f"),
                        node_agg,
                        d_a,
                        d_f,
                        out_dim,
                        rng,
                    )
                })
                .transpose()?;
            steps.push(GraphStep {
                kw_from_gesture,
                kw_from_audio,
                gesture_from_kw,
                audio_from_kw,
            });
        }
        Ok(GraphEncoder {
            depth,
            node_agg,
            hetero_agg,
            keyword_in_dim,
            gesture_in_dim,
            audio_in_dim,
            out_dim,
            steps,
            use_gesture,
            use_audio,
        })
    }

    /// One relation-side update for a single node.
    #[allow(clippy::too_many_arguments)]
    fn relation_update(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        rel: &Relation,
        self_row: TensorId,
        neighbor_src: TensorId,
        neighbor_ids: &[usize],
        neighbor_dim: usize,
    ) -> Result<TensorId> {
        let neigh = if neighbor_ids.is_empty() {
            None
        } else {
            Some(tape.gather_rows(neighbor_src, neighbor_ids)?)
        };
        let pooled = node_aggregate(tape, binding, neigh, neighbor_dim, &rel.agg)?;
        sage_update(tape, self_row, pooled, binding.id(rel.weight))
    }

    /// Run K rounds over the graph. Inputs: keyword features `[m, d_f]` and
    /// the active modalities' token features `[n, d]`. Returns refined
    /// features in the same order, each `[*, out_dim]`.
    pub fn encode(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        graph: &HeteroGraph,
        h_keywords: TensorId,
        h_gesture: Option<TensorId>,
        h_audio: Option<TensorId>,
    ) -> Result<(TensorId, Option<TensorId>, Option<TensorId>)> {
        if self.use_gesture != h_gesture.is_some() || self.use_audio != h_audio.is_some() {
            return Err(Error::invalid(
                "graph encoder: modality inputs do not match the configured relations",
            ));
        }
        let m = graph.keyword_count;
        let n = graph.token_count;
        if tape.shape(h_keywords) != [m, self.keyword_in_dim] {
            return Err(Error::ShapeMismatch {
                op: "encode_graph(keywords)",
                lhs: tape.shape(h_keywords).to_vec(),
                rhs: vec![m, self.keyword_in_dim],
            });
        }

        let mut cur_f = h_keywords;
        let mut cur_v = h_gesture;
        let mut cur_a = h_audio;
        let mut d_f = self.keyword_in_dim;
        let mut d_v = self.gesture_in_dim;
        let mut d_a = self.audio_in_dim;

        for step in &self.steps {
            // Keyword nodes: one representation per active relation, then
            // the hetero combination.
            let mut new_f_rows = Vec::with_capacity(m);
            for kw in 0..m {
                let self_row = tape.row(cur_f, kw)?;
                let mut rels = Vec::new();
                if let (Some(rel), Some(v)) = (&step.kw_from_gesture, cur_v) {
                    let ids = graph.gesture_neighbors(kw);
                    rels.push(self.relation_update(tape, binding, rel, self_row, v, &ids, d_v)?);
                }
                if let (Some(rel), Some(a)) = (&step.kw_from_audio, cur_a) {
                    let ids = graph.audio_neighbors(kw);
                    rels.push(self.relation_update(tape, binding, rel, self_row, a, &ids, d_a)?);
                }
                new_f_rows.push(hetero_aggregate(tape, &rels, self.hetero_agg)?);
            }

            // Gesture nodes: single keyword relation.
            let new_v = if let (Some(rel), Some(v)) = (&step.gesture_from_kw, cur_v) {
                let mut rows = Vec::with_capacity(n);
                for p in 0..n {
                    let self_row = tape.row(v, p)?;
                    let ids = graph.keywords_at_gesture(p);
                    rows.push(
                        self.relation_update(tape, binding, rel, self_row, cur_f, &ids, d_f)?,
                    );
                }
                Some(tape.concat(&rows, 0)?)
            } else {
                None
            };

            // Audio nodes: single keyword relation.
            let new_a = if let (Some(rel), Some(a)) = (&step.audio_from_kw, cur_a) {
                let mut rows = Vec::with_capacity(n);
                for p in 0..n {
                    let self_row = tape.row(a, p)?;
                    let ids = graph.keywords_at_audio(p);
                    rows.push(
                        self.relation_update(tape, binding, rel, self_row, cur_f, &ids, d_f)?,
                    );
                }
                Some(tape.concat(&rows, 0)?)
            } else {
                None
            };

            cur_f = tape.concat(&new_f_rows, 0)?;
            cur_v = new_v;
            cur_a = new_a;
            d_f = self.out_dim;
            d_v = self.out_dim;
            d_a = self.out_dim;
        }
        Ok((cur_f, cur_v, cur_a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn tape_with(store: &ParamStore) -> (Tape, Binding) {
        let mut tape = Tape::new();
        let binding = store.bind(&mut tape);
        (tape, binding)
    }

    #[test]
    fn mean_aggregation_is_arithmetic_mean() {
        let store = ParamStore::new();
        let (mut tape, binding) = tape_with(&store);
        let neigh = tape
            .constant(vec![2, 2], vec![1.0, 3.0, 3.0, 1.0])
            .unwrap();
        let out = node_aggregate(&mut tape, &binding, Some(neigh), 2, &AggParams::Mean).unwrap();
        assert_eq!(tape.values(out), &[2.0, 2.0]);
    }

    #[test]
    fn pool_with_identity_linear_is_elementwise_max() {
        let mut rng = Rng::seed(0);
        let mut store = ParamStore::new();
        let params = AggParams::new(&mut store, "p", NodeAggKind::Pool, 2, &mut rng).unwrap();
        if let AggParams::Pool { w, .. } = &params {
            store.get_mut(*w).value.data = vec![1.0, 0.0, 0.0, 1.0];
        }
        let (mut tape, binding) = tape_with(&store);
        let neigh = tape
            .constant(vec![2, 2], vec![1.0, 0.0, 0.0, 2.0])
            .unwrap();
        let out = node_aggregate(&mut tape, &binding, Some(neigh), 2, &params).unwrap();
        assert_eq!(tape.values(out), &[1.0, 2.0]);
    }

    #[test]
    fn isolated_node_aggregates_zero_vector() {
        let store = ParamStore::new();
        let (mut tape, binding) = tape_with(&store);
        let out = node_aggregate(&mut tape, &binding, None, 3, &AggParams::Mean).unwrap();
        assert_eq!(tape.shape(out), &[1, 3]);
        assert_eq!(tape.values(out), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn bilstm_aggregation_matches_two_step_unroll() {
        let mut rng = Rng::seed(1);
        let mut store = ParamStore::new();
        let params = AggParams::new(&mut store, "b", NodeAggKind::BiLstm, 2, &mut rng).unwrap();
        let (mut tape, binding) = tape_with(&store);
        let neigh_data = vec![0.4, -0.6, 0.8, 0.2];
        let neigh = tape.constant(vec![2, 2], neigh_data.clone()).unwrap();
        let out = node_aggregate(&mut tape, &binding, Some(neigh), 2, &params).unwrap();
        let got = tape.values(out).to_vec();

        // Oracle: run the same cells one step at a time on fresh tapes.
        let AggParams::BiLstm { fwd, bwd } = &params else {
            unreachable!()
        };
        let step = |cell: &LstmCell, xs: &[Vec<f64>]| {
            let (mut tape, binding) = tape_with(&store);
            let rows: Vec<TensorId> = xs
                .iter()
                .map(|x| tape.constant(vec![1, 2], x.clone()).unwrap())
                .collect();
            let states = cell.run(&mut tape, &binding, &rows).unwrap();
            tape.values(*states.last().unwrap()).to_vec()
        };
        let f_last = step(fwd, &[neigh_data[0..2].to_vec(), neigh_data[2..4].to_vec()]);
        let b_last = step(bwd, &[neigh_data[2..4].to_vec(), neigh_data[0..2].to_vec()]);
        let expect: Vec<f64> = f_last.into_iter().chain(b_last).collect();
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn bilstm_rejects_odd_dims() {
        let mut rng = Rng::seed(2);
        let mut store = ParamStore::new();
        assert!(AggParams::new(&mut store, "b", NodeAggKind::BiLstm, 3, &mut rng).is_err());
    }

    #[test]
    fn sage_update_zero_weight_and_identity() {
        let mut store = ParamStore::new();
        let w_zero = store.add_zeros("w0", vec![4, 3]);
        let mut eye = vec![0.0; 16];
        for i in 0..4 {
            eye[i * 4 + i] = 1.0;
        }
        let w_eye = store.add("weye", Tensor::new(vec![4, 4], eye).unwrap());
        let (mut tape, binding) = tape_with(&store);
        let h = tape.constant(vec![1, 2], vec![0.5, 1.5]).unwrap();
        let n = tape.constant(vec![1, 2], vec![2.0, 0.25]).unwrap();

        let z = sage_update(&mut tape, h, n, binding.id(w_zero)).unwrap();
        assert_eq!(tape.values(z), &[0.0, 0.0, 0.0]);

        let c = sage_update(&mut tape, h, n, binding.id(w_eye)).unwrap();
        assert_eq!(tape.values(c), &[0.5, 1.5, 2.0, 0.25]);
    }

    #[test]
    fn sage_update_matches_matmul_relu_oracle() {
        let mut rng = Rng::seed(3);
        let mut store = ParamStore::new();
        let w = store.add_matrix("w", 4, 3, &mut rng);
        let wd = store.get(w).value.data.clone();
        let (mut tape, binding) = tape_with(&store);
        let h_data = vec![0.3, -0.7];
        let n_data = vec![1.1, 0.2];
        let h = tape.constant(vec![1, 2], h_data.clone()).unwrap();
        let n = tape.constant(vec![1, 2], n_data.clone()).unwrap();
        let out = sage_update(&mut tape, h, n, binding.id(w)).unwrap();
        let joined = [h_data, n_data].concat();
        for j in 0..3 {
            let mut s = 0.0;
            for (k, &x) in joined.iter().enumerate() {
                s += x * wd[k * 3 + j];
            }
            let expect = s.max(0.0);
            assert!((tape.values(out)[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn hetero_kinds_and_ordering() {
        let store = ParamStore::new();
        let (mut tape, binding) = tape_with(&store);
        let _ = binding;
        let a = tape.constant(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = tape.constant(vec![1, 2], vec![3.0, 0.0]).unwrap();
        let mn = hetero_aggregate(&mut tape, &[a, b], HeteroAggKind::Min).unwrap();
        assert_eq!(tape.values(mn), &[1.0, 0.0]);
        let mx = hetero_aggregate(&mut tape, &[a, b], HeteroAggKind::Max).unwrap();
        assert_eq!(tape.values(mx), &[3.0, 2.0]);
        let mean = hetero_aggregate(&mut tape, &[a, b], HeteroAggKind::Mean).unwrap();
        assert_eq!(tape.values(mean), &[2.0, 1.0]);
        let sum = hetero_aggregate(&mut tape, &[a, b], HeteroAggKind::Sum).unwrap();
        assert_eq!(tape.values(sum), &[4.0, 2.0]);
        // min <= mean <= max elementwise, and sum = j * mean.
        for j in 0..2 {
            assert!(tape.values(mn)[j] <= tape.values(mean)[j]);
            assert!(tape.values(mean)[j] <= tape.values(mx)[j]);
            assert_eq!(tape.values(sum)[j], 2.0 * tape.values(mean)[j]);
        }
        // single relation: identity for every kind
        for kind in HeteroAggKind::ALL {
            let one = hetero_aggregate(&mut tape, &[a], kind).unwrap();
            assert_eq!(tape.values(one), tape.values(a));
        }
        assert!(hetero_aggregate(&mut tape, &[], HeteroAggKind::Mean).is_err());
    }

    fn tiny_graph() -> HeteroGraph {
        // 1 keyword linked to token position 0 of 1 token.
        HeteroGraph {
            keyword_count: 1,
            token_count: 1,
            gesture_edges: vec![(0, 0)],
            audio_edges: vec![(0, 0)],
        }
    }

    fn encoder(
        store: &mut ParamStore,
        depth: usize,
        node: NodeAggKind,
        hetero: HeteroAggKind,
        rng: &mut Rng,
    ) -> GraphEncoder {
        GraphEncoder::new(
            store, "g", depth, node, hetero, 2, 2, 2, 2, true, true, rng,
        )
        .unwrap()
    }

    #[test]
    fn empty_edges_depend_only_on_own_features() {
        let mut rng = Rng::seed(4);
        let mut store = ParamStore::new();
        let enc = encoder(&mut store, 1, NodeAggKind::Mean, HeteroAggKind::Mean, &mut rng);
        let graph = HeteroGraph {
            keyword_count: 1,
            token_count: 1,
            gesture_edges: vec![],
            audio_edges: vec![],
        };
        let run = |gesture_val: f64, store: &ParamStore| {
            let (mut tape, binding) = tape_with(store);
            let hf = tape.constant(vec![1, 2], vec![0.5, -0.5]).unwrap();
            let hv = tape
                .constant(vec![1, 2], vec![gesture_val, gesture_val])
                .unwrap();
            let ha = tape.constant(vec![1, 2], vec![0.1, 0.2]).unwrap();
            let (f, _, _) = enc
                .encode(&mut tape, &binding, &graph, hf, Some(hv), Some(ha))
                .unwrap();
            tape.values(f).to_vec()
        };
        // With no edges, keyword output ignores the token features entirely.
        assert_eq!(run(0.0, &store), run(42.0, &store));
    }

    #[test]
    fn one_keyword_one_token_matches_hand_unroll() {
        let mut rng = Rng::seed(5);
        let mut store = ParamStore::new();
        let enc = encoder(&mut store, 1, NodeAggKind::Mean, HeteroAggKind::Min, &mut rng);
        let graph = tiny_graph();

        let hf_data = vec![0.3, -0.2];
        let hv_data = vec![0.7, 0.1];
        let ha_data = vec![-0.4, 0.9];

        let (mut tape, binding) = tape_with(&store);
        let hf = tape.constant(vec![1, 2], hf_data.clone()).unwrap();
        let hv = tape.constant(vec![1, 2], hv_data.clone()).unwrap();
        let ha = tape.constant(vec![1, 2], ha_data.clone()).unwrap();
        let (f, v, a) = enc
            .encode(&mut tape, &binding, &graph, hf, Some(hv), Some(ha))
            .unwrap();

        // Hand-computed oracle with plain f64 math.
        let read = |p: ParamId| store.get(p).value.data.clone();
        let matrow = |x: &[f64], w: &[f64], co: usize| -> Vec<f64> {
            (0..co)
                .map(|j| {
                    x.iter()
                        .enumerate()
                        .map(|(k, &xv)| xv * w[k * co + j])
                        .sum::<f64>()
                        .max(0.0)
                })
                .collect()
        };
        let step = &enc.steps[0];
        let w_fv = read(step.kw_from_gesture.as_ref().unwrap().weight);
        let w_fa = read(step.kw_from_audio.as_ref().unwrap().weight);
        let w_vf = read(step.gesture_from_kw.as_ref().unwrap().weight);
        let w_af = read(step.audio_from_kw.as_ref().unwrap().weight);

        // Keyword: mean over the single neighbor is the neighbor itself.
        let rel_v = matrow(&[hf_data.clone(), hv_data.clone()].concat(), &w_fv, 2);
        let rel_a = matrow(&[hf_data.clone(), ha_data.clone()].concat(), &w_fa, 2);
        let expect_f: Vec<f64> = rel_v
            .iter()
            .zip(&rel_a)
            .map(|(x, y)| x.min(*y))
            .collect();
        let expect_v = matrow(&[hv_data.clone(), hf_data.clone()].concat(), &w_vf, 2);
        let expect_a = matrow(&[ha_data, hf_data].concat(), &w_af, 2);

        for (g, e) in tape.values(f).iter().zip(&expect_f) {
            assert!((g - e).abs() < 1e-12);
        }
        for (g, e) in tape.values(v.unwrap()).iter().zip(&expect_v) {
            assert!((g - e).abs() < 1e-12);
        }
        for (g, e) in tape.values(a.unwrap()).iter().zip(&expect_a) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn edge_list_order_does_not_matter() {
        let mut rng = Rng::seed(6);
        let mut store = ParamStore::new();
        let enc = encoder(&mut store, 1, NodeAggKind::BiLstm, HeteroAggKind::Min, &mut rng);
        let run = |edges: Vec<(usize, usize)>, store: &ParamStore| {
            let graph = HeteroGraph {
                keyword_count: 2,
                token_count: 2,
                gesture_edges: edges.clone(),
                audio_edges: edges,
            };
            let (mut tape, binding) = tape_with(store);
            let hf = tape
                .constant(vec![2, 2], vec![0.1, 0.2, 0.3, 0.4])
                .unwrap();
            let hv = tape
                .constant(vec![2, 2], vec![0.5, 0.6, 0.7, 0.8])
                .unwrap();
            let ha = tape
                .constant(vec![2, 2], vec![-0.1, -0.2, -0.3, -0.4])
                .unwrap();
            let (f, v, a) = enc
                .encode(&mut tape, &binding, &graph, hf, Some(hv), Some(ha))
                .unwrap();
            [
                tape.values(f).to_vec(),
                tape.values(v.unwrap()).to_vec(),
                tape.values(a.unwrap()).to_vec(),
            ]
        };
        let forward = run(vec![(0, 0), (0, 1), (1, 1)], &store);
        let shuffled = run(vec![(1, 1), (0, 1), (0, 0)], &store);
        assert_eq!(forward, shuffled);
    }

    #[test]
    fn isolated_keyword_identical_across_samples() {
        let mut rng = Rng::seed(7);
        let mut store = ParamStore::new();
        let enc = encoder(&mut store, 1, NodeAggKind::Lstm, HeteroAggKind::Mean, &mut rng);
        // Keyword 1 never occurs; the token features differ across "samples".
        let run = |hv_data: Vec<f64>, store: &ParamStore| {
            let graph = HeteroGraph {
                keyword_count: 2,
                token_count: 1,
                gesture_edges: vec![(0, 0)],
                audio_edges: vec![(0, 0)],
            };
            let (mut tape, binding) = tape_with(store);
            let hf = tape
                .constant(vec![2, 2], vec![0.1, 0.2, 0.9, -0.9])
                .unwrap();
            let hv = tape.constant(vec![1, 2], hv_data).unwrap();
            let ha = tape.constant(vec![1, 2], vec![0.4, 0.5]).unwrap();
            let (f, _, _) = enc
                .encode(&mut tape, &binding, &graph, hf, Some(hv), Some(ha))
                .unwrap();
            tape.values(f)[2..4].to_vec()
        };
        assert_eq!(
            run(vec![1.0, 2.0], &store),
            run(vec![-5.0, 3.0], &store)
        );
    }

    #[test]
    fn depth_two_changes_output_and_keeps_shape() {
        let mut rng = Rng::seed(8);
        let mut store = ParamStore::new();
        let enc1 = encoder(&mut store, 1, NodeAggKind::Mean, HeteroAggKind::Mean, &mut rng);
        let enc2 = encoder(&mut store, 2, NodeAggKind::Mean, HeteroAggKind::Mean, &mut rng);
        let graph = tiny_graph();
        let run = |enc: &GraphEncoder, store: &ParamStore| {
            let (mut tape, binding) = tape_with(store);
            let hf = tape.constant(vec![1, 2], vec![0.3, -0.2]).unwrap();
            let hv = tape.constant(vec![1, 2], vec![0.7, 0.1]).unwrap();
            let ha = tape.constant(vec![1, 2], vec![-0.4, 0.9]).unwrap();
            let (f, v, a) = enc
                .encode(&mut tape, &binding, &graph, hf, Some(hv), Some(ha))
                .unwrap();
            assert_eq!(tape.shape(f), &[1, 2]);
            assert_eq!(tape.shape(v.unwrap()), &[1, 2]);
            assert_eq!(tape.shape(a.unwrap()), &[1, 2]);
            tape.values(f).to_vec()
        };
        assert_ne!(run(&enc1, &store), run(&enc2, &store));
    }

    #[test]
    fn gesture_only_relation_configuration() {
        let mut rng = Rng::seed(9);
        let mut store = ParamStore::new();
        let enc = GraphEncoder::new(
            &mut store,
            "g",
            1,
            NodeAggKind::Mean,
            HeteroAggKind::Min,
            2,
            2,
            2,
            2,
            true,
            false,
            &mut rng,
        )
        .unwrap();
        let graph = tiny_graph();
        let (mut tape, binding) = tape_with(&store);
        let hf = tape.constant(vec![1, 2], vec![0.3, -0.2]).unwrap();
        let hv = tape.constant(vec![1, 2], vec![0.7, 0.1]).unwrap();
        let (f, v, a) = enc
            .encode(&mut tape, &binding, &graph, hf, Some(hv), None)
            .unwrap();
        assert!(a.is_none());
        assert!(v.is_some());
        assert_eq!(tape.shape(f), &[1, 2]);
        // Passing an audio input against a gesture-only encoder is an error.
        let ha = tape.constant(vec![1, 2], vec![0.0, 0.0]).unwrap();
        assert!(enc
            .encode(&mut tape, &binding, &graph, hf, Some(hv), Some(ha))
            .is_err());
    }

    #[test]
    fn full_encoder_passes_grad_check() {
        let mut rng = Rng::seed(10);
        let mut store = ParamStore::new();
        let enc = encoder(&mut store, 1, NodeAggKind::BiLstm, HeteroAggKind::Min, &mut rng);
        let graph = HeteroGraph {
            keyword_count: 2,
            token_count: 2,
            gesture_edges: vec![(0, 0), (0, 1)],
            audio_edges: vec![(0, 0), (0, 1)],
        };
        let hf = Tensor::new(vec![2, 2], vec![0.3, -0.2, 0.6, 0.5]).unwrap();
        let err = crate::tensor::grad_check(
            |tape, hf| {
                let binding = store.bind(tape);
                let hv = tape.constant(vec![2, 2], vec![0.7, 0.1, -0.3, 0.4])?;
                let ha = tape.constant(vec![2, 2], vec![-0.4, 0.9, 0.2, -0.6])?;
                let (f, v, a) = enc.encode(tape, &binding, &graph, hf, Some(hv), Some(ha))?;
                let fv = tape.concat(&[f, v.unwrap(), a.unwrap()], 0)?;
                tape.sum_all(fv)
            },
            &hf,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "err {err}");
    }
}
