//! Session chunking: fixed-length token windows with a duration floor.

use crate::corpus::{AlignedSample, AlignedToken, ClassLabel};
use crate::error::{Error, Result};

/// Split one session's token stream into consecutive non-overlapping windows
/// of `n` tokens. Every window — including the final shorter remainder — is
/// kept only if it spans at least `min_seconds`.
pub fn chunk_session(
    subject_id: &str,
    label: ClassLabel,
    tokens: &[AlignedToken],
    n: usize,
    min_seconds: f64,
) -> Result<Vec<AlignedSample>> {
    if n == 0 {
        return Err(Error::invalid("chunk_session: window size must be >= 1"));
    }
    let mut out = Vec::new();
    for window in tokens.chunks(n) {
        let span = window.last().unwrap().t_end - window[0].t_start;
        if span >= min_seconds {
            out.push(AlignedSample {
                subject_id: subject_id.to_string(),
                label,
                tokens: window.to_vec(),
            });
        }
    }
    Ok(out)
}
