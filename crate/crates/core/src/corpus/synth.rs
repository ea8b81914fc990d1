//! Synthetic aligned-corpus generator.
//!
//! Class signal design: gesture trajectories are smoothed random walks whose
//! step size scales with a per-class amplitude multiplier; disfluency filler
//! tokens are inserted at per-class rates (each class also skews toward one
//! preferred filler); audio vectors shift and spread per class. All of it is
//! a pure function of the seed.

use serde::{Deserialize, Serialize};

use crate::corpus::{
    chunk_session, AlignedToken, ClassLabel, Corpus, CorpusMetadata, AUDIO_DIM, GESTURE_DIM,
    MIN_SAMPLE_SECONDS,
};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub subjects_per_class: usize,
    pub sessions_per_subject: usize,
    pub min_session_tokens: usize,
    pub max_session_tokens: usize,
    /// Gesture random-walk step multiplier per class index.
    pub gesture_amplitudes: [f64; 4],
    /// Probability that a token is a disfluency filler, per class index.
    pub disfluency_rates: [f64; 4],
    /// Additive shift applied to every audio descriptor, per class index.
    pub audio_loudness: [f64; 4],
    /// Audio noise scale per class index.
    pub audio_spread: [f64; 4],
    /// Extra gesture-step scale at disfluency tokens, concentrating class
    /// signal where keyword/gesture graph edges sit. At 0 (default) gesture
    /// stds stay exactly proportional to the class amplitudes.
    pub keyword_gesture_boost: f64,
    pub filler_vocabulary: Vec<String>,
    pub content_vocabulary: Vec<String>,
    pub token_min_seconds: f64,
    pub token_max_seconds: f64,
    /// Tokens per emitted chunk.
    pub chunk_tokens: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            subjects_per_class: 40,
            sessions_per_subject: 1,
            min_session_tokens: 10,
            max_session_tokens: 14,
            gesture_amplitudes: [1.0, 1.5, 0.7, 3.0],
            disfluency_rates: [0.05, 0.12, 0.30, 0.60],
            audio_loudness: [0.0, 0.3, 0.6, 0.9],
            audio_spread: [1.0, 1.0, 1.0, 1.0],
            keyword_gesture_boost: 0.0,
            filler_vocabulary: ["[*]", "um", "uh", "er", "mm", "hm"]
                .map(String::from)
                .to_vec(),
            content_vocabulary: [
                "the", "and", "to", "she", "a", "her", "was", "they", "so", "that", "of",
                "cinderella", "it", "in", "i", "he", "but", "all", "is", "had", "then", "ball",
                "go", "with", "prince", "this", "one", "on", "you", "two", "there", "were",
                "for", "going", "king", "be", "know", "out", "at", "no", "not", "like",
                "slipper", "get", "have", "dress", "got", "up", "went", "very", "who", "glass",
                "because", "or", "time", "oh", "stepmother", "into", "do", "what", "beautiful",
                "back", "home", "girl", "woman", "fairy", "when", "godmother", "would", "said",
            ]
            .map(String::from)
            .to_vec(),
            token_min_seconds: 0.35,
            token_max_seconds: 0.8,
            chunk_tokens: 50,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subjects_per_class == 0 || self.sessions_per_subject == 0 {
            return Err(Error::invalid("subjects and sessions must be positive"));
        }
        if self.min_session_tokens == 0 || self.min_session_tokens > self.max_session_tokens {
            return Err(Error::invalid(format!(
                "bad session token range {}..{}",
                self.min_session_tokens, self.max_session_tokens
            )));
        }
        if self.gesture_amplitudes.iter().any(|&a| a <= 0.0) {
            return Err(Error::invalid("gesture amplitudes must be positive"));
        }
        if self.disfluency_rates.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
            return Err(Error::invalid("disfluency rates must lie in [0,1]"));
        }
        if self.audio_spread.iter().any(|&s| s <= 0.0) {
            return Err(Error::invalid("audio spread must be positive"));
        }
        if self.keyword_gesture_boost < 0.0 {
            return Err(Error::invalid("keyword gesture boost must be nonnegative"));
        }
        if self.filler_vocabulary.is_empty() || self.content_vocabulary.is_empty() {
            return Err(Error::invalid("vocabularies must be non-empty"));
        }
        if !(self.token_min_seconds > 0.0 && self.token_min_seconds <= self.token_max_seconds) {
            return Err(Error::invalid("bad token duration range"));
        }
        if self.chunk_tokens == 0 {
            return Err(Error::invalid("chunk_tokens must be >= 1"));
        }
        Ok(())
    }
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Corpus> {
    config.validate()?;
    let mut root = Rng::seed(config.seed);
    let mut samples = Vec::new();
    for label in ClassLabel::ALL {
        let class = label.index();
        for subj in 0..config.subjects_per_class {
            let subject_id = format!("{}-{subj:03}", label.name().to_lowercase());
            let mut rng = root.fork((class as u64) << 32 | subj as u64);
            let mut clock = 0.0;
            for _ in 0..config.sessions_per_subject {
                let tokens = generate_session(config, label, &mut rng, &mut clock);
                samples.extend(chunk_session(
                    &subject_id,
                    label,
                    &tokens,
                    config.chunk_tokens,
                    MIN_SAMPLE_SECONDS,
                )?);
            }
        }
    }
    Ok(Corpus {
        metadata: CorpusMetadata {
            description: "synthetic aligned corpus".to_string(),
            seed: Some(config.seed),
            generator: Some(config.clone()),
        },
        samples,
    })
}

fn generate_session(
    config: &SyntheticConfig,
    label: ClassLabel,
    rng: &mut Rng,
    clock: &mut f64,
) -> Vec<AlignedToken> {
    let class = label.index();
    let amplitude = config.gesture_amplitudes[class];
    let rate = config.disfluency_rates[class];
    let loudness = config.audio_loudness[class];
    let spread = config.audio_spread[class];
    let preferred_filler = class % config.filler_vocabulary.len();

    let span = config.max_session_tokens - config.min_session_tokens + 1;
    let n_tokens = config.min_session_tokens + rng.below(span);

    // Smoothed random walk shared by all 69 coordinates, scaled per class.
    let mut position = vec![0.0f64; GESTURE_DIM];
    let mut velocity = vec![0.0f64; GESTURE_DIM];

    let mut out = Vec::with_capacity(n_tokens);
    for _ in 0..n_tokens {
        let (text, is_filler) = if rng.uniform() < rate {
            let word = if rng.uniform() < 0.5 {
                config.filler_vocabulary[preferred_filler].clone()
            } else {
                rng.choose(&config.filler_vocabulary).clone()
            };
            (word, true)
        } else {
            (rng.choose(&config.content_vocabulary).clone(), false)
        };

        let step_scale = if is_filler {
            amplitude * (1.0 + config.keyword_gesture_boost)
        } else {
            amplitude
        };
        for j in 0..GESTURE_DIM {
            velocity[j] = 0.7 * velocity[j] + 0.3 * rng.normal();
            position[j] += step_scale * velocity[j];
        }

        let audio: Vec<f64> = (0..AUDIO_DIM)
            .map(|_| loudness + spread * rng.normal())
            .collect();

        let dur = rng.range(config.token_min_seconds, config.token_max_seconds);
        let t_start = *clock;
        *clock += dur;
        out.push(AlignedToken {
            text,
            gesture: position.clone(),
            audio,
            t_start,
            t_end: *clock,
        });
    }
    out
}
