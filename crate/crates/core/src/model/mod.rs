//! The full classifier: gesture-aware word-embedding update, cross-modal
//! transformer fusion, and the 4-way decoder.
//!
//! Forward pass for the full configuration, per sample:
//!
//! 1. encode gesture and audio token streams with bidirectional LSTMs;
//! 2. build the sample's heterogeneous graph and refine keyword, gesture,
//!    and audio node features by cross-relation aggregation;
//! 3. project refined keyword features back into the word-embedding table
//!    (row replacement), making the text encoder gesture-aware;
//! 4. encode `[CLS]` + text through the self-attention stack;
//! 5. run cross-attention in all directions between the projected modality
//!    sequences, fuse per target with self-attention, pool to one vector
//!    per modality;
//! 6. combine the pooled vectors (concat-project by default), add the
//!    `[CLS]` residual, and decode to 4 logits.
//!
//! Ablation knobs reshape this composition: the graph step, the embedding
//! update, the fusion kind, and the active modality subset can each be
//! switched independently.

mod trace;

pub use trace::{export_attention, AttentionTrace, TraceEntry};

pub use crate::corpus::ClassLabel;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{AlignedSample, TokenVocab, AUDIO_DIM, GESTURE_DIM};
use crate::error::{Error, Result};
use crate::graph::{
    build_hetero_graph, DisfluencyVocabulary, GraphEncoder, HeteroAggKind, NodeAggKind,
};
use crate::nn::embedding::CLS_ID;
use crate::nn::{cls_pool, final_pool, AttentionBlock, Binding, EmbeddingTable, ParamId, ParamStore};
use crate::nn::rnn::BiRnn;
use crate::rng::Rng;
use crate::tensor::{Tape, TensorId};

/// How the pooled per-modality vectors are combined (and, for the
/// attention-based kinds, whether the cross-modal encoder runs at all).
///
/// `Mult` is the full cross-modal transformer with per-pair parameters;
/// `SpLite` shares one attention block across every directed pair. `Concat`,
/// `Multiply`, and `Add` skip cross-attention and combine the pooled
/// projected sequences directly.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum FusionKind {
    Mult,
    Concat,
    Multiply,
    Add,
    SpLite,
}

impl FusionKind {
    pub const ALL: [FusionKind; 5] = [
        FusionKind::Mult,
        FusionKind::Concat,
        FusionKind::Multiply,
        FusionKind::Add,
        FusionKind::SpLite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionKind::Mult => "mult",
            FusionKind::Concat => "concat",
            FusionKind::Multiply => "multiply",
            FusionKind::Add => "add",
            FusionKind::SpLite => "sp-lite",
        }
    }

    fn uses_cross_attention(self) -> bool {
        matches!(self, FusionKind::Mult | FusionKind::SpLite)
    }

    fn uses_concat_projection(self) -> bool {
        matches!(self, FusionKind::Mult | FusionKind::SpLite | FusionKind::Concat)
    }
}

impl std::str::FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mult" => Ok(FusionKind::Mult),
            "concat" => Ok(FusionKind::Concat),
            "multiply" => Ok(FusionKind::Multiply),
            "add" => Ok(FusionKind::Add),
            "sp-lite" | "splite" => Ok(FusionKind::SpLite),
            other => Err(Error::invalid(format!(
                "unknown fusion kind `{other}` (valid: mult, concat, multiply, add, sp-lite)"
            ))),
        }
    }
}

impl std::fmt::Display for FusionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, PartialOrd, Ord)]
pub enum Modality {
    Text,
    Gesture,
    Audio,
}

impl Modality {
    pub fn short(self) -> &'static str {
        match self {
            Modality::Text => "T",
            Modality::Gesture => "V",
            Modality::Audio => "A",
        }
    }
}

/// Which modalities participate in the model.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct ModalitySet {
    pub text: bool,
    pub gesture: bool,
    pub audio: bool,
}

impl ModalitySet {
    pub const TVA: ModalitySet = ModalitySet {
        text: true,
        gesture: true,
        audio: true,
    };

    pub fn count(self) -> usize {
        usize::from(self.text) + usize::from(self.gesture) + usize::from(self.audio)
    }

    pub fn contains(self, m: Modality) -> bool {
        match m {
            Modality::Text => self.text,
            Modality::Gesture => self.gesture,
            Modality::Audio => self.audio,
        }
    }

    /// Active modalities in the fixed T, V, A order.
    pub fn active(self) -> Vec<Modality> {
        [Modality::Text, Modality::Gesture, Modality::Audio]
            .into_iter()
            .filter(|&m| self.contains(m))
            .collect()
    }

    pub fn name(self) -> String {
        let parts: Vec<&str> = self.active().iter().map(|m| m.short()).collect();
        parts.join("+")
    }
}

impl std::str::FromStr for ModalitySet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut set = ModalitySet {
            text: false,
            gesture: false,
            audio: false,
        };
        for part in s.split('+') {
            match part.trim().to_ascii_uppercase().as_str() {
                "T" => set.text = true,
                "V" => set.gesture = true,
                "A" => set.audio = true,
                other => {
                    return Err(Error::invalid(format!(
                        "unknown modality `{other}` (valid: T, V, A, joined with '+')"
                    )))
                }
            }
        }
        if set.count() == 0 {
            return Err(Error::invalid("empty modality set"));
        }
        Ok(set)
    }
}

impl std::fmt::Display for ModalitySet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

/// Every dimension and architectural switch of the classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Word-embedding / text-encoder width (d_t).
    pub text_dim: usize,
    /// Hidden size of each directional LSTM (U_i).
    pub rnn_hidden: usize,
    pub rnn_layers: usize,
    pub heads: usize,
    /// Self-attention blocks in the text encoder.
    pub text_blocks: usize,
    /// Graph node feature width after refinement (d_g).
    pub graph_dim: usize,
    /// Aggregation rounds (K).
    pub graph_depth: usize,
    pub node_agg: NodeAggKind,
    pub hetero_agg: HeteroAggKind,
    pub fusion_kind: FusionKind,
    /// Common width the modalities are projected to before fusion (d).
    pub fusion_dim: usize,
    pub decoder_hidden: usize,
    pub dropout: f64,
    /// Disfluency keywords to extract for the graph (m).
    pub keyword_count: usize,
    pub modalities: ModalitySet,
    pub use_graph: bool,
    pub use_embedding_update: bool,
    /// Blend refined keyword rows into the table instead of replacing them.
    pub additive_embedding_update: bool,
    /// Pool fused sequences by mean instead of final position.
    pub mean_pool_fusion: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            text_dim: 64,
            rnn_hidden: 32,
            rnn_layers: 1,
            heads: 4,
            text_blocks: 2,
            graph_dim: 64,
            graph_depth: 1,
            node_agg: NodeAggKind::BiLstm,
            hetero_agg: HeteroAggKind::Min,
            fusion_kind: FusionKind::Mult,
            fusion_dim: 64,
            decoder_hidden: 64,
            dropout: 0.1,
            keyword_count: 50,
            modalities: ModalitySet::TVA,
            use_graph: true,
            use_embedding_update: true,
            additive_embedding_update: false,
            mean_pool_fusion: false,
        }
    }
}

impl ModelConfig {
    /// The reported full-scale settings: 768-wide states, 2 LSTM layers.
    pub fn paper_scale() -> Self {
        ModelConfig {
            text_dim: 768,
            rnn_hidden: 768,
            rnn_layers: 2,
            graph_dim: 768,
            fusion_dim: 768,
            decoder_hidden: 768,
            keyword_count: 100,
            ..ModelConfig::default()
        }
    }

    /// A tiny configuration for gradient checking and fast tests.
    pub fn tiny() -> Self {
        ModelConfig {
            text_dim: 8,
            rnn_hidden: 4,
            heads: 2,
            text_blocks: 1,
            graph_dim: 8,
            fusion_dim: 8,
            decoder_hidden: 8,
            dropout: 0.0,
            keyword_count: 2,
            ..ModelConfig::default()
        }
    }

    pub fn graph_active(&self) -> bool {
        self.use_graph
            && self.modalities.text
            && (self.modalities.gesture || self.modalities.audio)
    }

    pub fn update_active(&self) -> bool {
        self.use_embedding_update && self.graph_active()
    }

    pub fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("text_dim", self.text_dim),
            ("rnn_hidden", self.rnn_hidden),
            ("rnn_layers", self.rnn_layers),
            ("heads", self.heads),
            ("graph_dim", self.graph_dim),
            ("graph_depth", self.graph_depth),
            ("fusion_dim", self.fusion_dim),
            ("decoder_hidden", self.decoder_hidden),
            ("keyword_count", self.keyword_count),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{what} must be positive")));
            }
        }
        if self.modalities.text && self.text_blocks == 0 {
            return Err(Error::invalid("text encoder needs at least one block"));
        }
        if !self.text_dim.is_multiple_of(self.heads) || !self.fusion_dim.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "heads ({}) must divide text_dim ({}) and fusion_dim ({})",
                self.heads, self.text_dim, self.fusion_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!(
                "dropout {} not in [0,1)",
                self.dropout
            )));
        }
        if matches!(self.fusion_kind, FusionKind::Multiply | FusionKind::Add)
            && self.modalities.count() >= 2
            && self.fusion_dim != self.text_dim
        {
            return Err(Error::invalid(
                "multiply/add fusion requires fusion_dim == text_dim",
            ));
        }
        if self.modalities.count() == 0 {
            return Err(Error::invalid("at least one modality must be active"));
        }
        Ok(())
    }
}

enum CrossBlocks {
    /// One block per directed (source -> target) pair.
    PerPair(Vec<((Modality, Modality), AttentionBlock)>),
    Shared(AttentionBlock),
}

impl CrossBlocks {
    fn block_for(&self, source: Modality, target: Modality) -> &AttentionBlock {
        match self {
            CrossBlocks::PerPair(blocks) => {
                &blocks
                    .iter()
                    .find(|((s, t), _)| *s == source && *t == target)
                    .expect("pair block exists for active modalities")
                    .1
            }
            CrossBlocks::Shared(b) => b,
        }
    }
}

struct Fuser {
    in_proj_w: ParamId,
    in_proj_b: ParamId,
    block: AttentionBlock,
}

/// The classifier: configuration, vocabularies, and all parameters.
pub struct Model {
    pub config: ModelConfig,
    pub token_vocab: TokenVocab,
    pub keywords: DisfluencyVocabulary,
    pub store: ParamStore,
    keyword_token_ids: Vec<usize>,
    embedding: Option<EmbeddingTable>,
    gesture_rnn: Option<BiRnn>,
    audio_rnn: Option<BiRnn>,
    text_blocks: Vec<AttentionBlock>,
    graph: Option<GraphEncoder>,
    update_proj: Option<ParamId>,
    proj_text: Option<ParamId>,
    proj_gesture: Option<ParamId>,
    proj_audio: Option<ParamId>,
    cross: Option<CrossBlocks>,
    fusers: Vec<(Modality, Fuser)>,
    fusion_p: Option<ParamId>,
    unimodal_block: Option<AttentionBlock>,
    f1_w: ParamId,
    f1_b: ParamId,
    f2_w: ParamId,
    f2_b: ParamId,
}

impl Model {
    pub fn new(
        config: ModelConfig,
        token_vocab: TokenVocab,
        keywords: DisfluencyVocabulary,
        seed: u64,
    ) -> Result<Model> {
        config.validate()?;
        let mods = config.modalities;
        if config.graph_active() && keywords.is_empty() {
            return Err(Error::invalid(
                "graph encoder enabled but the keyword vocabulary is empty",
            ));
        }
        let keyword_token_ids: Vec<usize> = keywords
            .keywords()
            .iter()
            .map(|k| {
                token_vocab.id(k).ok_or_else(|| {
                    Error::data(format!("keyword `{k}` missing from the token vocabulary"))
                })
            })
            .collect::<Result<_>>()?;

        let mut store = ParamStore::new();
        let mut rng = Rng::seed(seed);
        let d_t = config.text_dim;
        let d = config.fusion_dim;
        let rnn_out = 2 * config.rnn_hidden;

        let embedding = if mods.text {
            Some(EmbeddingTable::new(
                &mut store,
                "embedding",
                token_vocab.len(),
                d_t,
                &mut rng,
            )?)
        } else {
            None
        };
        let gesture_rnn = if mods.gesture {
            Some(BiRnn::new(
                &mut store,
                "gesture_rnn",
                GESTURE_DIM,
                config.rnn_hidden,
                config.rnn_layers,
                &mut rng,
            )?)
        } else {
            None
        };
        let audio_rnn = if mods.audio {
            Some(BiRnn::new(
                &mut store,
                "audio_rnn",
                AUDIO_DIM,
                config.rnn_hidden,
                config.rnn_layers,
                &mut rng,
            )?)
        } else {
            None
        };
        let text_blocks = if mods.text {
            (0..config.text_blocks)
                .map(|i| {
                    AttentionBlock::new(&mut store, &format!("text.{i}"), d_t, config.heads, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let graph = if config.graph_active() {
            Some(GraphEncoder::new(
                &mut store,
                "graph",
                config.graph_depth,
                config.node_agg,
                config.hetero_agg,
                d_t,
                rnn_out,
                rnn_out,
                config.graph_dim,
                mods.gesture,
                mods.audio,
                &mut rng,
            )?)
        } else {
            None
        };
        let update_proj = config
            .update_active()
            .then(|| store.add_matrix("update_proj", config.graph_dim, d_t, &mut rng));

        // Feature width entering fusion per non-text modality.
        let nontext_in = if config.graph_active() {
            config.graph_dim
        } else {
            rnn_out
        };
        let multi = mods.count() >= 2;
        let proj_text = (mods.text && multi)
            .then(|| store.add_matrix("proj_text", d_t, d, &mut rng));
        let proj_gesture = mods.gesture.then(|| {
            let out = if multi { d } else { d_t };
            store.add_matrix("proj_gesture", nontext_in, out, &mut rng)
        });
        let proj_audio = mods.audio.then(|| {
            let out = if multi { d } else { d_t };
            store.add_matrix("proj_audio", nontext_in, out, &mut rng)
        });

        let active = mods.active();
        let mut cross = None;
        let mut fusers = Vec::new();
        if multi && config.fusion_kind.uses_cross_attention() {
            cross = Some(match config.fusion_kind {
                FusionKind::SpLite => CrossBlocks::Shared(AttentionBlock::new(
                    &mut store,
                    "cross.shared",
                    d,
                    config.heads,
                    &mut rng,
                )?),
                _ => {
                    let mut blocks = Vec::new();
                    for &target in &active {
                        for &source in &active {
                            if source == target {
                                continue;
                            }
                            blocks.push((
                                (source, target),
                                AttentionBlock::new(
                                    &mut store,
                                    &format!("cross.{}_to_{}", source.short(), target.short()),
                                    d,
                                    config.heads,
                                    &mut rng,
                                )?,
                            ));
                        }
                    }
                    CrossBlocks::PerPair(blocks)
                }
            });
            let src_count = active.len() - 1;
            for &target in &active {
                fusers.push((
                    target,
                    Fuser {
                        in_proj_w: store.add_matrix(
                            format!("fuse.{}.in_w", target.short()),
                            src_count * d,
                            d,
                            &mut rng,
                        ),
                        in_proj_b: store
                            .add_zeros(format!("fuse.{}.in_b", target.short()), vec![d]),
                        block: AttentionBlock::new(
                            &mut store,
                            &format!("fuse.{}.block", target.short()),
                            d,
                            config.heads,
                            &mut rng,
                        )?,
                    },
                ));
            }
        }
        let fusion_p = (multi && config.fusion_kind.uses_concat_projection())
            .then(|| store.add_matrix("fusion_p", active.len() * d, d_t, &mut rng));
        let unimodal_block = (!mods.text && mods.count() == 1)
            .then(|| AttentionBlock::new(&mut store, "unimodal", d_t, config.heads, &mut rng))
            .transpose()?;

        let f1_w = store.add_matrix("decoder.f1_w", d_t, config.decoder_hidden, &mut rng);
        let f1_b = store.add_zeros("decoder.f1_b", vec![config.decoder_hidden]);
        // Zero-initialized output layer: an untrained model emits uniform
        // class probabilities exactly.
        let f2_w = store.add_zeros("decoder.f2_w", vec![config.decoder_hidden, 4]);
        let f2_b = store.add_zeros("decoder.f2_b", vec![4]);

        Ok(Model {
            config,
            token_vocab,
            keywords,
            store,
            keyword_token_ids,
            embedding,
            gesture_rnn,
            audio_rnn,
            text_blocks,
            graph,
            update_proj,
            proj_text,
            proj_gesture,
            proj_audio,
            cross,
            fusers,
            fusion_p,
            unimodal_block,
            f1_w,
            f1_b,
            f2_w,
            f2_b,
        })
    }

    /// Replace (or blend into) the table rows of the graph keywords with the
    /// projection of their refined representations. All other rows are
    /// bit-identical to the input table; gradients flow back through the
    /// refined features into the graph encoder.
    pub fn update_word_embeddings(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        table: TensorId,
        h_f_refined: TensorId,
    ) -> Result<TensorId> {
        let proj = self
            .update_proj
            .ok_or_else(|| Error::invalid("embedding update is disabled in this configuration"))?;
        if self.keyword_token_ids.is_empty() {
            return tape.scatter_rows(table, &[], h_f_refined);
        }
        let projected = tape.matmul(h_f_refined, binding.id(proj))?;
        let rows = if self.config.additive_embedding_update {
            let old = tape.gather_rows(table, &self.keyword_token_ids)?;
            tape.add(old, projected)?
        } else {
            projected
        };
        tape.scatter_rows(table, &self.keyword_token_ids, rows)
    }

    /// Embed `[CLS]` + tokens from the given table tensor and run the text
    /// self-attention stack. Returns the full sequence and the `[CLS]` row.
    #[allow(clippy::too_many_arguments)]
    pub fn encode_text(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        table: TensorId,
        token_ids: &[usize],
        training: bool,
        rng: &mut Rng,
        mut trace: Option<(&mut AttentionTrace, &[String])>,
    ) -> Result<(TensorId, TensorId)> {
        if token_ids.is_empty() {
            return Err(Error::invalid("encode_text: empty token sequence"));
        }
        let embedding = self
            .embedding
            .as_ref()
            .ok_or_else(|| Error::invalid("text modality is disabled"))?;
        let mut full_ids = Vec::with_capacity(token_ids.len() + 1);
        full_ids.push(CLS_ID);
        full_ids.extend_from_slice(token_ids);
        let mut h = embedding.lookup_in(tape, table, &full_ids)?;
        h = tape.dropout(h, self.config.dropout, training, rng)?;
        for (layer, block) in self.text_blocks.iter().enumerate() {
            let (out, weights) =
                block.forward_self(tape, binding, h, self.config.dropout, training, rng)?;
            if let Some((t, labels)) = trace.as_mut() {
                t.record("T-self", layer, &weights, labels, labels);
            }
            h = out;
        }
        let cls = cls_pool(tape, h)?;
        Ok((h, cls))
    }

    fn pool(&self, tape: &mut Tape, seq: TensorId) -> Result<TensorId> {
        if self.config.mean_pool_fusion {
            tape.mean_rows(seq)
        } else {
            final_pool(tape, seq)
        }
    }

    /// Cross-modal encoding: for each target modality, attend to every other
    /// modality, concatenate along features, project, self-attention fuse,
    /// and pool to one vector.
    #[allow(clippy::too_many_arguments)]
    pub fn crossmodal_encode(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        seqs: &[(Modality, TensorId)],
        training: bool,
        rng: &mut Rng,
        mut trace: Option<(&mut AttentionTrace, &ModalityLabels)>,
    ) -> Result<Vec<(Modality, TensorId)>> {
        let cross = self
            .cross
            .as_ref()
            .ok_or_else(|| Error::invalid("cross-modal encoder not built for this config"))?;
        let mut out = Vec::with_capacity(seqs.len());
        for &(target, target_seq) in seqs {
            let fuser = &self
                .fusers
                .iter()
                .find(|(m, _)| *m == target)
                .ok_or_else(|| Error::invalid("no fuser for target modality"))?
                .1;
            let mut parts = Vec::new();
            for &(source, source_seq) in seqs {
                if source == target {
                    continue;
                }
                let block = cross.block_for(source, target);
                let (ctx, weights) = block.forward_cross(
                    tape,
                    binding,
                    target_seq,
                    source_seq,
                    self.config.dropout,
                    training,
                    rng,
                )?;
                if let Some((t, labels)) = trace.as_mut() {
                    let name = format!("{}->{}", source.short(), target.short());
                    t.record(
                        &name,
                        0,
                        &weights,
                        &labels[&target],
                        &labels[&source],
                    );
                }
                parts.push(ctx);
            }
            let cat = tape.concat(&parts, 1)?;
            let z = tape.linear(cat, binding.id(fuser.in_proj_w), binding.id(fuser.in_proj_b))?;
            let (fused, weights) =
                fuser
                    .block
                    .forward_self(tape, binding, z, self.config.dropout, training, rng)?;
            if let Some((t, labels)) = trace.as_mut() {
                let name = format!("{}-fuse", target.short());
                t.record(&name, 0, &weights, &labels[&target], &labels[&target]);
            }
            out.push((target, self.pool(tape, fused)?));
        }
        Ok(out)
    }

    /// Combine pooled modality vectors per the fusion kind and add the
    /// `[CLS]` residual when the text modality participates.
    pub fn fuse(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        pooled: &[TensorId],
        h_cls: Option<TensorId>,
    ) -> Result<TensorId> {
        if pooled.is_empty() {
            return Err(Error::invalid("fuse: no modality vectors"));
        }
        let combined = if self.config.fusion_kind.uses_concat_projection() {
            let p = self
                .fusion_p
                .ok_or_else(|| Error::invalid("fusion projection not built"))?;
            let cat = tape.concat(pooled, 1)?;
            tape.matmul(cat, binding.id(p))?
        } else {
            let mut acc = pooled[0];
            for &u in &pooled[1..] {
                acc = match self.config.fusion_kind {
                    FusionKind::Multiply => tape.mul(acc, u)?,
                    FusionKind::Add => tape.add(acc, u)?,
                    _ => unreachable!("concat kinds handled above"),
                };
            }
            acc
        };
        match h_cls {
            Some(cls) => tape.add(combined, cls),
            None => Ok(combined),
        }
    }

    /// The prediction head: F2(relu(F1(x))). Softmax lives in the loss.
    pub fn decode(&self, tape: &mut Tape, binding: &Binding, x: TensorId) -> Result<TensorId> {
        let h = tape.linear(x, binding.id(self.f1_w), binding.id(self.f1_b))?;
        let h = tape.relu(h)?;
        tape.linear(h, binding.id(self.f2_w), binding.id(self.f2_b))
    }

    fn gesture_tensor(&self, tape: &mut Tape, sample: &AlignedSample) -> Result<TensorId> {
        let n = sample.token_count();
        let mut data = Vec::with_capacity(n * GESTURE_DIM);
        for t in &sample.tokens {
            data.extend_from_slice(&t.gesture);
        }
        tape.constant(vec![n, GESTURE_DIM], data)
    }

    fn audio_tensor(&self, tape: &mut Tape, sample: &AlignedSample) -> Result<TensorId> {
        let n = sample.token_count();
        let mut data = Vec::with_capacity(n * AUDIO_DIM);
        for t in &sample.tokens {
            data.extend_from_slice(&t.audio);
        }
        tape.constant(vec![n, AUDIO_DIM], data)
    }

    /// Forward one sample to its `[1, 4]` logits.
    pub fn forward_sample(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        sample: &AlignedSample,
        training: bool,
        rng: &mut Rng,
        mut trace: Option<&mut AttentionTrace>,
    ) -> Result<TensorId> {
        if sample.tokens.is_empty() {
            return Err(Error::data("forward: sample has no tokens"));
        }
        let cfg = &self.config;
        let mods = cfg.modalities;
        let dropout = cfg.dropout;

        let text_labels: Vec<String> = std::iter::once("[CLS]".to_string())
            .chain(sample.texts().map(String::from))
            .collect();
        let token_labels: Vec<String> = sample.texts().map(String::from).collect();

        // 1. Recurrent encodings of the non-text streams.
        let mut h_v = None;
        if let Some(rnn) = &self.gesture_rnn {
            let x = self.gesture_tensor(tape, sample)?;
            h_v = Some(rnn.encode(tape, binding, x, dropout, training, rng)?);
        }
        let mut h_a = None;
        if let Some(rnn) = &self.audio_rnn {
            let x = self.audio_tensor(tape, sample)?;
            h_a = Some(rnn.encode(tape, binding, x, dropout, training, rng)?);
        }

        // 2. Graph refinement.
        let mut h_f_refined = None;
        if let Some(graph_enc) = &self.graph {
            let graph = build_hetero_graph(sample, &self.keywords);
            let table = binding.id(self.embedding.as_ref().unwrap().weights);
            let h_f0 = tape.gather_rows(table, &self.keyword_token_ids)?;
            let (f, v, a) = graph_enc.encode(tape, binding, &graph, h_f0, h_v, h_a)?;
            h_f_refined = Some(f);
            h_v = v;
            h_a = a;
        }

        // 3. Gesture-aware embedding update, then the text encoder.
        let mut h_t = None;
        let mut h_cls = None;
        if mods.text {
            let base_table = binding.id(self.embedding.as_ref().unwrap().weights);
            let table = match (self.update_proj.is_some(), h_f_refined) {
                (true, Some(refined)) => {
                    self.update_word_embeddings(tape, binding, base_table, refined)?
                }
                _ => base_table,
            };
            let ids = self.token_vocab.encode_sample(sample);
            let (seq, cls) = self.encode_text(
                tape,
                binding,
                table,
                &ids,
                training,
                rng,
                trace.as_deref_mut().map(|t| (t, &text_labels[..])),
            )?;
            h_t = Some(seq);
            h_cls = Some(cls);
        }

        // 4. Fusion (or the unimodal shortcut).
        let decoder_in = if mods.count() == 1 {
            if mods.text {
                h_cls.unwrap()
            } else {
                let (seq, proj) = if mods.gesture {
                    (h_v.unwrap(), self.proj_gesture.unwrap())
                } else {
                    (h_a.unwrap(), self.proj_audio.unwrap())
                };
                let p = tape.matmul(seq, binding.id(proj))?;
                let block = self.unimodal_block.as_ref().unwrap();
                let (enc, _) = block.forward_self(tape, binding, p, dropout, training, rng)?;
                self.pool(tape, enc)?
            }
        } else {
            let mut seqs: Vec<(Modality, TensorId)> = Vec::new();
            if let (Some(t), Some(p)) = (h_t, self.proj_text) {
                seqs.push((Modality::Text, tape.matmul(t, binding.id(p))?));
            }
            if let (Some(v), Some(p)) = (h_v, self.proj_gesture) {
                seqs.push((Modality::Gesture, tape.matmul(v, binding.id(p))?));
            }
            if let (Some(a), Some(p)) = (h_a, self.proj_audio) {
                seqs.push((Modality::Audio, tape.matmul(a, binding.id(p))?));
            }

            let pooled: Vec<TensorId> = if cfg.fusion_kind.uses_cross_attention() {
                let labels: ModalityLabels = [
                    (Modality::Text, text_labels.clone()),
                    (Modality::Gesture, token_labels.clone()),
                    (Modality::Audio, token_labels.clone()),
                ]
                .into_iter()
                .collect();
                self.crossmodal_encode(
                    tape,
                    binding,
                    &seqs,
                    training,
                    rng,
                    trace.map(|t| (t, &labels)),
                )?
                .into_iter()
                .map(|(_, u)| u)
                .collect()
            } else {
                seqs.iter()
                    .map(|&(_, s)| self.pool(tape, s))
                    .collect::<Result<_>>()?
            };
            self.fuse(tape, binding, &pooled, h_cls)?
        };

        self.decode(tape, binding, decoder_in)
    }

    /// Forward a batch: per-sample logits stacked to `[b, 4]`, then the mean
    /// cross-entropy against the labels.
    pub fn forward_batch(
        &self,
        samples: &[&AlignedSample],
        training: bool,
        rng: &mut Rng,
    ) -> Result<BatchForward> {
        if samples.is_empty() {
            return Err(Error::data("forward_batch: empty batch"));
        }
        let mut tape = Tape::new();
        let binding = self.store.bind(&mut tape);
        let mut rows = Vec::with_capacity(samples.len());
        let mut labels = Vec::with_capacity(samples.len());
        for s in samples {
            rows.push(self.forward_sample(&mut tape, &binding, s, training, rng, None)?);
            labels.push(s.label.index());
        }
        let logits = tape.concat(&rows, 0)?;
        let loss = tape.cross_entropy(logits, &labels)?;
        let loss_value = tape.values(loss)[0];
        let logits_values: Vec<[f64; 4]> = tape
            .values(logits)
            .chunks(4)
            .map(|c| [c[0], c[1], c[2], c[3]])
            .collect();
        Ok(BatchForward {
            tape,
            binding,
            loss,
            loss_value,
            logits: logits_values,
        })
    }

    /// Evaluation-mode logits, one tape per sample.
    pub fn eval_logits(&self, samples: &[AlignedSample]) -> Result<Vec<[f64; 4]>> {
        let mut rng = Rng::seed(0);
        let mut out = Vec::with_capacity(samples.len());
        for s in samples {
            let mut tape = Tape::new();
            let binding = self.store.bind(&mut tape);
            let logits = self.forward_sample(&mut tape, &binding, s, false, &mut rng, None)?;
            let v = tape.values(logits);
            out.push([v[0], v[1], v[2], v[3]]);
        }
        Ok(out)
    }

    /// Evaluation-mode forward of one sample with attention capture.
    pub fn traced_forward(&self, sample: &AlignedSample) -> Result<(AttentionTrace, [f64; 4])> {
        let mut trace = AttentionTrace::new(sample.subject_id.clone());
        let mut rng = Rng::seed(0);
        let mut tape = Tape::new();
        let binding = self.store.bind(&mut tape);
        let logits =
            self.forward_sample(&mut tape, &binding, sample, false, &mut rng, Some(&mut trace))?;
        let v = tape.values(logits);
        Ok((trace, [v[0], v[1], v[2], v[3]]))
    }

    // ---- persistence ---------------------------------------------------------

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let checkpoint = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            token_vocab: self.token_vocab.clone(),
            keywords: self.keywords.keywords().to_vec(),
            params: self
                .store
                .iter()
                .map(|p| ParamRecord {
                    name: p.name.clone(),
                    shape: p.value.shape.clone(),
                    data: p.value.data.clone(),
                })
                .collect(),
        };
        let text =
            serde_json::to_string(&checkpoint).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        let checkpoint: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::data(format!("bad checkpoint: {e}")))?;
        if checkpoint.format != CHECKPOINT_FORMAT || checkpoint.version != CHECKPOINT_VERSION {
            return Err(Error::data(format!(
                "unsupported checkpoint {} v{}",
                checkpoint.format, checkpoint.version
            )));
        }
        let keywords = DisfluencyVocabulary::new(checkpoint.keywords)?;
        let mut model = Model::new(checkpoint.config, checkpoint.token_vocab, keywords, 0)?;
        if checkpoint.params.len() != model.store.len() {
            return Err(Error::data(format!(
                "checkpoint has {} parameters, model expects {}",
                checkpoint.params.len(),
                model.store.len()
            )));
        }
        for (slot, rec) in model.store.iter_mut().zip(checkpoint.params) {
            if slot.name != rec.name || slot.value.shape != rec.shape {
                return Err(Error::data(format!(
                    "checkpoint parameter `{}` {:?} does not match model `{}` {:?}",
                    rec.name, rec.shape, slot.name, slot.value.shape
                )));
            }
            slot.value.data = rec.data;
        }
        Ok(model)
    }
}

/// Per-modality axis labels used when tracing attention.
pub type ModalityLabels = std::collections::BTreeMap<Modality, Vec<String>>;

pub struct BatchForward {
    pub tape: Tape,
    pub binding: Binding,
    pub loss: TensorId,
    pub loss_value: f64,
    pub logits: Vec<[f64; 4]>,
}

const CHECKPOINT_FORMAT: &str = "aphasia-model";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    token_vocab: TokenVocab,
    keywords: Vec<String>,
    params: Vec<ParamRecord>,
}

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}
