//! Ablation runner: a cartesian grid over architectural axes, one seeded
//! train+evaluate run per point.

use crate::corpus::{chunk_session, Corpus};
use crate::error::{Error, Result};
use crate::train::{train_split, TrainConfig};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AblationAxis {
    NodeAgg,
    HeteroAgg,
    Fusion,
    Modality,
    KeywordCount,
    ChunkTokens,
    Graph,
    EmbeddingUpdate,
}

impl AblationAxis {
    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::NodeAgg => "node",
            AblationAxis::HeteroAgg => "hetero",
            AblationAxis::Fusion => "fusion",
            AblationAxis::Modality => "modality",
            AblationAxis::KeywordCount => "m",
            AblationAxis::ChunkTokens => "chunk",
            AblationAxis::Graph => "graph",
            AblationAxis::EmbeddingUpdate => "update",
        }
    }
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "node" => Ok(AblationAxis::NodeAgg),
            "hetero" => Ok(AblationAxis::HeteroAgg),
            "fusion" => Ok(AblationAxis::Fusion),
            "modality" => Ok(AblationAxis::Modality),
            "m" => Ok(AblationAxis::KeywordCount),
            "chunk" => Ok(AblationAxis::ChunkTokens),
            "graph" => Ok(AblationAxis::Graph),
            "update" => Ok(AblationAxis::EmbeddingUpdate),
            other => Err(Error::invalid(format!(
                "unknown ablation axis `{other}` (valid: node, hetero, fusion, modality, m, chunk, graph, update)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AxisSpec {
    pub axis: AblationAxis,
    pub values: Vec<String>,
}

impl AxisSpec {
    /// Parse `axis=v1,v2,...`.
    pub fn parse(s: &str) -> Result<AxisSpec> {
        let (axis, values) = s.split_once('=').ok_or_else(|| {
            Error::invalid(format!("axis spec `{s}` must look like `axis=value1,value2`"))
        })?;
        let axis: AblationAxis = axis.trim().parse()?;
        let values: Vec<String> = values
            .split(',')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            return Err(Error::invalid(format!("axis `{}` has no values", axis.name())));
        }
        Ok(AxisSpec { axis, values })
    }
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        other => Err(Error::invalid(format!(
            "expected on/off, got `{other}`"
        ))),
    }
}

/// Apply one axis setting to a config (and, for the chunk axis, to the
/// corpus).
fn apply(
    axis: AblationAxis,
    value: &str,
    config: &mut TrainConfig,
    corpus: &mut Corpus,
) -> Result<()> {
    match axis {
        AblationAxis::NodeAgg => config.model.node_agg = value.parse()?,
        AblationAxis::HeteroAgg => config.model.hetero_agg = value.parse()?,
        AblationAxis::Fusion => config.model.fusion_kind = value.parse()?,
        AblationAxis::Modality => config.model.modalities = value.parse()?,
        AblationAxis::KeywordCount => {
            config.model.keyword_count = value
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("bad keyword count `{value}`")))?;
        }
        AblationAxis::ChunkTokens => {
            let n = value
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("bad chunk size `{value}`")))?;
            config.chunk_tokens = n;
            *corpus = rechunk(corpus, n)?;
        }
        AblationAxis::Graph => config.model.use_graph = parse_bool(value)?,
        AblationAxis::EmbeddingUpdate => config.model.use_embedding_update = parse_bool(value)?,
    }
    Ok(())
}

/// Rebuild per-subject token streams (ordered by time) and re-chunk them
/// with a new window length.
pub fn rechunk(corpus: &Corpus, n: usize) -> Result<Corpus> {
    let labels = corpus.subject_labels()?;
    let mut out = Vec::new();
    for (subject, label) in labels {
        let mut samples: Vec<&crate::corpus::AlignedSample> = corpus
            .samples
            .iter()
            .filter(|s| s.subject_id == subject)
            .collect();
        samples.sort_by(|a, b| {
            a.tokens[0]
                .t_start
                .partial_cmp(&b.tokens[0].t_start)
                .expect("finite timestamps")
        });
        let tokens: Vec<crate::corpus::AlignedToken> = samples
            .iter()
            .flat_map(|s| s.tokens.iter().cloned())
            .collect();
        out.extend(chunk_session(
            subject,
            label,
            &tokens,
            n,
            crate::corpus::MIN_SAMPLE_SECONDS,
        )?);
    }
    Ok(Corpus::new(corpus.metadata.clone(), out))
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub settings: Vec<(String, String)>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub best_epoch: usize,
}

/// Run one train+evaluate per grid point (cartesian product over the axes),
/// all points sharing the base seed so rows are comparable.
pub fn ablate(corpus: &Corpus, base: &TrainConfig, axes: &[AxisSpec]) -> Result<Vec<AblationRow>> {
    if axes.is_empty() {
        return Err(Error::invalid("ablate: no axes given"));
    }
    let mut rows = Vec::new();
    let mut index = vec![0usize; axes.len()];
    loop {
        let mut config = base.clone();
        let mut point_corpus = corpus.clone();
        let mut settings = Vec::with_capacity(axes.len());
        for (spec, &i) in axes.iter().zip(&index) {
            let value = &spec.values[i];
            apply(spec.axis, value, &mut config, &mut point_corpus)?;
            settings.push((spec.axis.name().to_string(), value.clone()));
        }
        let outcome = train_split(&point_corpus, &config)?;
        rows.push(AblationRow {
            settings,
            precision: outcome.report.weighted_precision,
            recall: outcome.report.weighted_recall,
            f1: outcome.report.weighted_f1,
            best_epoch: outcome.best_epoch,
        });

        // Advance the mixed-radix counter.
        let mut pos = axes.len();
        loop {
            if pos == 0 {
                return Ok(rows);
            }
            pos -= 1;
            index[pos] += 1;
            if index[pos] < axes[pos].values.len() {
                break;
            }
            index[pos] = 0;
        }
    }
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let Some(first) = rows.first() else {
        return String::from("precision,recall,f1,best_epoch\n");
    };
    let mut out: String = first
        .settings
        .iter()
        .map(|(axis, _)| axis.as_str())
        .collect::<Vec<_>>()
        .join(",");
    out.push_str(",precision,recall,f1,best_epoch\n");
    for row in rows {
        let values: Vec<&str> = row.settings.iter().map(|(_, v)| v.as_str()).collect();
        out.push_str(&values.join(","));
        out.push_str(&format!(
            ",{},{},{},{}\n",
            row.precision, row.recall, row.f1, row.best_epoch
        ));
    }
    out
}
