//! Per-sample heterogeneous speech-gesture graphs.
//!
//! Nodes: one keyword node per disfluency-vocabulary entry (shared across
//! every graph in a run), plus one gesture node and one audio node per
//! aligned token. Edges connect keyword f to the gesture/audio nodes at
//! every position whose text token equals f. Gesture and audio nodes never
//! connect to each other, and keywords never connect to keywords.

mod encoder;

pub use encoder::{
    hetero_aggregate, node_aggregate, sage_update, GraphEncoder, HeteroAggKind, NodeAggKind,
};

use std::collections::BTreeMap;
use std::path::Path;

use crate::corpus::AlignedSample;
use crate::error::{Error, Result};

/// Ordered list of disfluency keywords; order is significant and shared by
/// every graph in a run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DisfluencyVocabulary {
    keywords: Vec<String>,
}

impl DisfluencyVocabulary {
    pub fn new(keywords: Vec<String>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for k in &keywords {
            if !seen.insert(k.as_str()) {
                return Err(Error::invalid(format!("duplicate keyword `{k}`")));
            }
        }
        Ok(DisfluencyVocabulary { keywords })
    }

    pub fn len(&self) -> usize {
        self.keywords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.keywords.iter().position(|k| k == token)
    }

    /// One keyword per line, order preserved.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.keywords.join("\n");
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        let keywords: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        DisfluencyVocabulary::new(keywords)
    }
}

/// The `m` most frequent text tokens across a corpus, ties broken
/// lexicographically. Stopwords are deliberately retained.
pub fn extract_disfluency_keywords(
    samples: &[AlignedSample],
    m: usize,
) -> Result<DisfluencyVocabulary> {
    if m == 0 {
        return Err(Error::invalid("keyword count m must be >= 1"));
    }
    if samples.is_empty() {
        return Err(Error::data("keyword extraction over an empty corpus"));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in samples {
        for t in s.texts() {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    if m > counts.len() {
        return Err(Error::data(format!(
            "requested {m} keywords but the corpus has only {} distinct tokens",
            counts.len()
        )));
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    // BTreeMap already gives lexicographic order; a stable sort by count
    // keeps that order among ties.
    ranked.sort_by_key(|&(_, count)| std::cmp::Reverse(count));
    DisfluencyVocabulary::new(ranked.into_iter().take(m).map(|(t, _)| t.to_string()).collect())
}

/// One sample's heterogeneous graph. Edges are (keyword index, token
/// position) pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeteroGraph {
    pub keyword_count: usize,
    pub token_count: usize,
    pub gesture_edges: Vec<(usize, usize)>,
    pub audio_edges: Vec<(usize, usize)>,
}

impl HeteroGraph {
    /// Gesture-node positions adjacent to keyword `k`, ascending.
    pub fn gesture_neighbors(&self, k: usize) -> Vec<usize> {
        Self::neighbors_of(&self.gesture_edges, k)
    }

    /// Audio-node positions adjacent to keyword `k`, ascending.
    pub fn audio_neighbors(&self, k: usize) -> Vec<usize> {
        Self::neighbors_of(&self.audio_edges, k)
    }

    fn neighbors_of(edges: &[(usize, usize)], k: usize) -> Vec<usize> {
        let mut out: Vec<usize> = edges
            .iter()
            .filter(|(kw, _)| *kw == k)
            .map(|(_, p)| *p)
            .collect();
        out.sort_unstable();
        out
    }

    /// Keywords adjacent to the gesture node at `position`, ascending
    /// (co-occurrence makes at most one possible for graphs built from text).
    pub fn keywords_at_gesture(&self, position: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .gesture_edges
            .iter()
            .filter(|(_, p)| *p == position)
            .map(|(kw, _)| *kw)
            .collect();
        out.sort_unstable();
        out
    }

    pub fn keywords_at_audio(&self, position: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .audio_edges
            .iter()
            .filter(|(_, p)| *p == position)
            .map(|(kw, _)| *kw)
            .collect();
        out.sort_unstable();
        out
    }

    pub fn node_count(&self) -> usize {
        self.keyword_count + 2 * self.token_count
    }
}

/// Build the co-occurrence graph: an edge (f, p) exists in both relations
/// exactly when the text token at position p equals keyword f. Keywords with
/// no occurrence stay as isolated nodes.
pub fn build_hetero_graph(sample: &AlignedSample, vocab: &DisfluencyVocabulary) -> HeteroGraph {
    let mut edges = Vec::new();
    for (p, text) in sample.texts().enumerate() {
        if let Some(k) = vocab.index_of(text) {
            edges.push((k, p));
        }
    }
    HeteroGraph {
        keyword_count: vocab.len(),
        token_count: sample.token_count(),
        gesture_edges: edges.clone(),
        audio_edges: edges,
    }
}
