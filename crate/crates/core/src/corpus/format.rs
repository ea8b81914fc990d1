//! Line-delimited corpus file format.
//!
//! Line 1 is a JSON header carrying format version and metadata; every
//! following line is one sample as a JSON record. Floats round-trip
//! bit-exactly (shortest-representation printing on write, correctly rounded
//! parsing on read).

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{AlignedSample, Corpus, CorpusMetadata};
use crate::error::{Error, Result};

const FORMAT_NAME: &str = "aligned-corpus";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    metadata: CorpusMetadata,
}

pub fn corpus_to_string(corpus: &Corpus) -> Result<String> {
    let mut out = Vec::new();
    write_corpus_to(corpus, &mut out)?;
    String::from_utf8(out).map_err(|e| Error::Io(e.to_string()))
}

pub fn write_corpus_to(corpus: &Corpus, w: &mut impl Write) -> Result<()> {
    let header = Header {
        format: FORMAT_NAME.to_string(),
        version: FORMAT_VERSION,
        metadata: corpus.metadata.clone(),
    };
    let line = serde_json::to_string(&header).map_err(|e| Error::Io(e.to_string()))?;
    writeln!(w, "{line}")?;
    for s in &corpus.samples {
        let line = serde_json::to_string(s).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_corpus_to(corpus, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn parse_corpus_str(s: &str) -> Result<Corpus> {
    parse_lines(s.lines().map(|l| Ok(l.to_string())))
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let f = std::fs::File::open(&path).map_err(|e| {
        Error::Io(format!("{}: {e}", path.as_ref().display()))
    })?;
    let reader = std::io::BufReader::new(f);
    parse_lines(reader.lines().map(|l| l.map_err(Error::from)))
}

fn parse_lines(lines: impl Iterator<Item = Result<String>>) -> Result<Corpus> {
    let mut lines = lines.enumerate();
    let header_line = match lines.next() {
        Some((_, line)) => line?,
        None => {
            return Err(Error::Parse {
                line: 1,
                field: "header".into(),
                message: "empty file".into(),
            })
        }
    };
    let header: Header = serde_json::from_str(&header_line).map_err(|e| Error::Parse {
        line: 1,
        field: "header".into(),
        message: e.to_string(),
    })?;
    if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
        return Err(Error::Parse {
            line: 1,
            field: "header".into(),
            message: format!(
                "expected {FORMAT_NAME} v{FORMAT_VERSION}, got {} v{}",
                header.format, header.version
            ),
        });
    }

    let mut samples = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: AlignedSample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            field: "sample".into(),
            message: e.to_string(),
        })?;
        sample.validate().map_err(|message| {
            // Validation messages start with the offending field, e.g.
            // "token 3: gesture must have 69 values ...".
            let field = message
                .split(':')
                .next()
                .unwrap_or("sample")
                .to_string();
            Error::Parse {
                line: line_no,
                field,
                message,
            }
        })?;
        samples.push(sample);
    }
    Ok(Corpus {
        metadata: header.metadata,
        samples,
    })
}
