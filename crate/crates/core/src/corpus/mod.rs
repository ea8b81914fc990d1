//! Aligned multimodal corpus: data model, file format, chunking, splits,
//! synthetic generation, and statistical utilities.

mod chunk;
mod format;
mod split;
pub mod stats;
mod synth;

pub use chunk::chunk_session;
pub use format::{corpus_to_string, parse_corpus_str, read_corpus, write_corpus};
pub use split::{group_stratified_kfold, split_disjoint_subjects};
pub use synth::{generate_synthetic, SyntheticConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper-body pose keypoints captured per token.
pub const GESTURE_KEYPOINTS: usize = 23;
/// Flattened gesture coordinates (x, y, z per keypoint).
pub const GESTURE_DIM: usize = GESTURE_KEYPOINTS * 3;
/// Low-level acoustic descriptors averaged per token.
pub const AUDIO_DIM: usize = 25;
/// Segments shorter than this many seconds are dropped during chunking.
pub const MIN_SAMPLE_SECONDS: f64 = 3.0;
/// Default chunk length in tokens.
pub const DEFAULT_CHUNK_TOKENS: usize = 50;

/// Names of the 23 upper-body keypoints, in storage order.
pub const KEYPOINT_NAMES: [&str; GESTURE_KEYPOINTS] = [
    "NOSE",
    "LEFT_EYE_INNER",
    "LEFT_EYE",
    "LEFT_EYE_OUTER",
    "RIGHT_EYE_INNER",
    "RIGHT_EYE",
    "RIGHT_EYE_OUTER",
    "LEFT_EAR",
    "RIGHT_EAR",
    "MOUTH_LEFT",
    "MOUTH_RIGHT",
    "LEFT_SHOULDER",
    "RIGHT_SHOULDER",
    "LEFT_ELBOW",
    "RIGHT_ELBOW",
    "LEFT_WRIST",
    "RIGHT_WRIST",
    "LEFT_PINKY",
    "RIGHT_PINKY",
    "LEFT_INDEX",
    "RIGHT_INDEX",
    "LEFT_THUMB",
    "RIGHT_THUMB",
];

/// The four diagnostic classes, with fixed output indices.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    Control,
    Fluent,
    NonComprehension,
    NonFluent,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 4] = [
        ClassLabel::Control,
        ClassLabel::Fluent,
        ClassLabel::NonComprehension,
        ClassLabel::NonFluent,
    ];

    pub fn index(self) -> usize {
        match self {
            ClassLabel::Control => 0,
            ClassLabel::Fluent => 1,
            ClassLabel::NonComprehension => 2,
            ClassLabel::NonFluent => 3,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::invalid(format!("class index {i} out of range 0..4")))
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Control => "Control",
            ClassLabel::Fluent => "Fluent",
            ClassLabel::NonComprehension => "NonComprehension",
            ClassLabel::NonFluent => "NonFluent",
        }
    }
}

impl std::str::FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Control" => Ok(ClassLabel::Control),
            "Fluent" => Ok(ClassLabel::Fluent),
            "NonComprehension" => Ok(ClassLabel::NonComprehension),
            "NonFluent" => Ok(ClassLabel::NonFluent),
            other => Err(Error::invalid(format!("unknown class label `{other}`"))),
        }
    }
}

impl std::fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One aligned (text, gesture, audio) token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignedToken {
    pub text: String,
    /// 23 keypoints × 3 coordinates, flattened row-major.
    pub gesture: Vec<f64>,
    /// 25 acoustic descriptors.
    pub audio: Vec<f64>,
    pub t_start: f64,
    pub t_end: f64,
}

impl AlignedToken {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.gesture.len() != GESTURE_DIM {
            return Err(format!(
                "gesture must have {GESTURE_DIM} values ({GESTURE_KEYPOINTS} keypoints x 3), got {}",
                self.gesture.len()
            ));
        }
        if self.audio.len() != AUDIO_DIM {
            return Err(format!(
                "audio must have {AUDIO_DIM} values, got {}",
                self.audio.len()
            ));
        }
        if !self.gesture.iter().chain(&self.audio).all(|v| v.is_finite()) {
            return Err("non-finite feature value".to_string());
        }
        if !(self.t_start.is_finite() && self.t_end.is_finite()) {
            return Err("non-finite timestamp".to_string());
        }
        if self.t_start < 0.0 || self.t_end <= self.t_start {
            return Err(format!(
                "need t_end > t_start >= 0, got [{}, {}]",
                self.t_start, self.t_end
            ));
        }
        Ok(())
    }
}

/// One chunk of aligned tokens for one subject, with its diagnostic label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignedSample {
    pub subject_id: String,
    pub label: ClassLabel,
    pub tokens: Vec<AlignedToken>,
}

impl AlignedSample {
    /// Wall-clock span of the chunk.
    pub fn duration(&self) -> f64 {
        match (self.tokens.first(), self.tokens.last()) {
            (Some(a), Some(b)) => b.t_end - a.t_start,
            _ => 0.0,
        }
    }

    pub fn token_count(&self) -> usize {
        self.tokens.len()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.text.as_str())
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.tokens.is_empty() {
            return Err("sample has no tokens".to_string());
        }
        if self.subject_id.is_empty() {
            return Err("empty subject id".to_string());
        }
        for (i, tok) in self.tokens.iter().enumerate() {
            tok.validate().map_err(|e| format!("token {i}: {e}"))?;
        }
        for (i, pair) in self.tokens.windows(2).enumerate() {
            if pair[1].t_start < pair[0].t_start {
                return Err(format!("token {}: timestamps decrease", i + 1));
            }
        }
        if self.duration() < MIN_SAMPLE_SECONDS {
            return Err(format!(
                "sample spans {:.3}s, below the {MIN_SAMPLE_SECONDS}s floor",
                self.duration()
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct CorpusMetadata {
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<SyntheticConfig>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Corpus {
    pub metadata: CorpusMetadata,
    pub samples: Vec<AlignedSample>,
}

impl Corpus {
    pub fn new(metadata: CorpusMetadata, samples: Vec<AlignedSample>) -> Self {
        Corpus { metadata, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct subject ids in first-appearance order.
    pub fn subjects(&self) -> Vec<&str> {
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::new();
        for s in &self.samples {
            if seen.insert(s.subject_id.as_str()) {
                out.push(s.subject_id.as_str());
            }
        }
        out
    }

    /// Subject -> label map; errors if a subject carries two labels.
    pub fn subject_labels(&self) -> Result<std::collections::BTreeMap<&str, ClassLabel>> {
        let mut map = std::collections::BTreeMap::new();
        for s in &self.samples {
            match map.insert(s.subject_id.as_str(), s.label) {
                Some(prev) if prev != s.label => {
                    return Err(Error::data(format!(
                        "subject `{}` appears with labels {prev} and {}",
                        s.subject_id, s.label
                    )));
                }
                _ => {}
            }
        }
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            s.validate()
                .map_err(|e| Error::data(format!("sample {i}: {e}")))?;
        }
        self.subject_labels()?;
        Ok(())
    }

    /// Retain only the given subjects, keeping sample order.
    pub fn filter_subjects(&self, keep: &std::collections::BTreeSet<&str>) -> Corpus {
        Corpus {
            metadata: self.metadata.clone(),
            samples: self
                .samples
                .iter()
                .filter(|s| keep.contains(s.subject_id.as_str()))
                .cloned()
                .collect(),
        }
    }
}

/// Text-token vocabulary with reserved control rows, built from a training
/// split only. Unseen tokens map to `[UNK]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenVocab {
    tokens: Vec<String>,
}

impl TokenVocab {
    pub fn build(samples: &[AlignedSample]) -> TokenVocab {
        use crate::nn::embedding::{CLS_TOKEN, PAD_TOKEN, UNK_TOKEN};
        let mut distinct: std::collections::BTreeSet<&str> = std::collections::BTreeSet::new();
        for s in samples {
            for t in s.texts() {
                distinct.insert(t);
            }
        }
        let mut tokens = vec![
            CLS_TOKEN.to_string(),
            PAD_TOKEN.to_string(),
            UNK_TOKEN.to_string(),
        ];
        tokens.extend(distinct.into_iter().map(String::from));
        TokenVocab { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        use crate::nn::embedding::RESERVED;
        // Reserved rows are positional; the rest is sorted, so binary search.
        self.tokens[RESERVED..]
            .binary_search_by(|t| t.as_str().cmp(token))
            .ok()
            .map(|i| i + RESERVED)
    }

    pub fn encode(&self, token: &str) -> usize {
        self.id(token).unwrap_or(crate::nn::embedding::UNK_ID)
    }

    pub fn encode_sample(&self, sample: &AlignedSample) -> Vec<usize> {
        sample.texts().map(|t| self.encode(t)).collect()
    }
}
