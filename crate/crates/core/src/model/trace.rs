//! Attention-weight capture and export.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::AttentionWeights;

/// One captured attention matrix with axis labels.
#[derive(Clone, Debug)]
pub struct TraceEntry {
    /// Directed pair or stage name, e.g. "V->T", "T-self", "T-fuse".
    pub name: String,
    pub layer: usize,
    pub head: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
}

impl TraceEntry {
    pub fn row_sums(&self) -> Vec<f64> {
        self.data.chunks(self.cols).map(|r| r.iter().sum()).collect()
    }
}

/// Every attention matrix seen during one sample's forward pass.
#[derive(Clone, Debug, Default)]
pub struct AttentionTrace {
    pub sample_id: String,
    pub entries: Vec<TraceEntry>,
}

impl AttentionTrace {
    pub fn new(sample_id: impl Into<String>) -> Self {
        AttentionTrace {
            sample_id: sample_id.into(),
            entries: Vec::new(),
        }
    }

    pub(crate) fn record(
        &mut self,
        name: &str,
        layer: usize,
        weights: &[AttentionWeights],
        row_labels: &[String],
        col_labels: &[String],
    ) {
        for w in weights {
            self.entries.push(TraceEntry {
                name: name.to_string(),
                layer,
                head: w.head,
                rows: w.rows,
                cols: w.cols,
                data: w.data.clone(),
                row_labels: row_labels.to_vec(),
                col_labels: col_labels.to_vec(),
            });
        }
    }

    pub fn entries_named(&self, name: &str) -> Vec<&TraceEntry> {
        self.entries.iter().filter(|e| e.name == name).collect()
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

/// Write every captured matrix as a CSV file (one-line header naming the
/// directed pair and sample id, then numeric rows) plus one sidecar file
/// carrying the row/column token labels per matrix axis.
pub fn export_attention(trace: &AttentionTrace, dir: impl AsRef<Path>) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    if trace.entries.is_empty() {
        return Err(Error::data(format!(
            "no attention entries captured for sample `{}`",
            trace.sample_id
        )));
    }
    let mut written = Vec::new();
    for e in &trace.entries {
        let file = format!(
            "{}__{}__L{}H{}.csv",
            sanitize(&trace.sample_id),
            sanitize(&e.name),
            e.layer,
            e.head
        );
        let mut out = String::new();
        out.push_str(&format!(
            "pair={},sample={},layer={},head={}\n",
            e.name, trace.sample_id, e.layer, e.head
        ));
        for r in 0..e.rows {
            let row: Vec<String> = (0..e.cols)
                .map(|c| e.data[r * e.cols + c].to_string())
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        std::fs::write(dir.join(&file), out)?;
        written.push(file);
    }

    // Labels sidecar: one row per axis entry of each named matrix.
    let mut sidecar = String::from("matrix,axis,index,label\n");
    let mut seen = std::collections::BTreeSet::new();
    for e in &trace.entries {
        if !seen.insert(e.name.clone()) {
            continue;
        }
        for (i, l) in e.row_labels.iter().enumerate() {
            sidecar.push_str(&format!("{},row,{i},{l}\n", e.name));
        }
        for (i, l) in e.col_labels.iter().enumerate() {
            sidecar.push_str(&format!("{},col,{i},{l}\n", e.name));
        }
    }
    let labels_file = format!("{}__labels.csv", sanitize(&trace.sample_id));
    std::fs::write(dir.join(&labels_file), sidecar)?;
    written.push(labels_file);
    Ok(written)
}
