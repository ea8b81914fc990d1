//! Command-line surface for the aphasia classifier toolkit.
//!
//! Every run that produces files also writes a `<output>.manifest.csv`
//! beside them recording the command, crate version, seeds, and full
//! configuration, so runs can be reproduced and compared byte-for-byte.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use aphasia_core::corpus::{
    generate_synthetic, group_stratified_kfold, read_corpus, stats, write_corpus, SyntheticConfig,
};
use aphasia_core::error::Error;
use aphasia_core::graph::extract_disfluency_keywords;
use aphasia_core::model::{export_attention, Model, ModelConfig};
use aphasia_core::train::{
    ablate, ablation_csv, evaluate, history_csv, train_split, AxisSpec, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "aphasia",
    version,
    about = "Multimodal aphasia-type classifier: synthetic corpora, training, evaluation, ablations, and analysis utilities"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic aligned corpus.
    Generate(GenerateArgs),
    /// Extract the most frequent tokens as disfluency keywords.
    Keywords(KeywordsArgs),
    /// Subject-disjoint train/test split.
    Split(SplitArgs),
    /// Group-stratified k-fold partitions.
    Kfold(KfoldArgs),
    /// Train a model and save the best-validation checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Grid of train+evaluate runs over configuration axes.
    Ablate(AblateArgs),
    /// Statistical utilities.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Export cross-modal attention matrices for one sample.
    ExportAttention(ExportAttentionArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output corpus file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 40)]
    subjects_per_class: usize,
    #[arg(long, default_value_t = 1)]
    sessions: usize,
    #[arg(long, default_value_t = 10)]
    min_tokens: usize,
    #[arg(long, default_value_t = 14)]
    max_tokens: usize,
    /// Per-class gesture amplitude multipliers (4 comma-separated values).
    #[arg(long, value_delimiter = ',', num_args = 4)]
    amplitudes: Option<Vec<f64>>,
    /// Per-class disfluency token rates (4 comma-separated values).
    #[arg(long, value_delimiter = ',', num_args = 4)]
    disfluency_rates: Option<Vec<f64>>,
    #[arg(long, default_value_t = 50)]
    chunk_tokens: usize,
    #[arg(long, default_value_t = 0.35)]
    min_token_seconds: f64,
    #[arg(long, default_value_t = 0.8)]
    max_token_seconds: f64,
}

#[derive(Args)]
struct KeywordsArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Number of keywords (m).
    #[arg(long)]
    count: usize,
    /// Output vocabulary file, one keyword per line.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_train: PathBuf,
    #[arg(long)]
    out_test: PathBuf,
}

#[derive(Args)]
struct KfoldArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving fold_<i>_{train,val}.jsonl files.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Clone)]
struct ModelFlags {
    #[arg(long, default_value_t = 64)]
    text_dim: usize,
    #[arg(long, default_value_t = 32)]
    rnn_hidden: usize,
    #[arg(long, default_value_t = 1)]
    rnn_layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 2)]
    text_blocks: usize,
    #[arg(long, default_value_t = 64)]
    graph_dim: usize,
    /// Aggregation rounds K.
    #[arg(long, default_value_t = 1)]
    graph_depth: usize,
    /// Node aggregator: mean | pool | lstm | bilstm.
    #[arg(long, default_value = "bilstm")]
    node_agg: String,
    /// Hetero aggregator: mean | sum | max | min.
    #[arg(long, default_value = "min")]
    hetero_agg: String,
    /// Fusion kind: mult | concat | multiply | add | sp-lite.
    #[arg(long, default_value = "mult")]
    fusion: String,
    #[arg(long, default_value_t = 64)]
    fusion_dim: usize,
    #[arg(long, default_value_t = 64)]
    decoder_hidden: usize,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    /// Disfluency keyword count m.
    #[arg(long, default_value_t = 50)]
    keywords: usize,
    /// Modalities, e.g. T+V+A, T+V, T.
    #[arg(long, default_value = "T+V+A")]
    modalities: String,
    /// Disable the speech-gesture graph encoder.
    #[arg(long)]
    no_graph: bool,
    /// Disable the gesture-aware word-embedding update.
    #[arg(long)]
    no_embedding_update: bool,
    /// Blend refined keyword rows into the table instead of replacing them.
    #[arg(long)]
    additive_update: bool,
    /// Mean-pool fused sequences instead of taking the final position.
    #[arg(long)]
    mean_pool: bool,
    /// Use the full-scale preset (768-wide, 2 LSTM layers, lr 1e-5).
    #[arg(long)]
    paper_scale: bool,
}

impl ModelFlags {
    fn to_config(&self) -> Result<ModelConfig, Error> {
        let mut config = if self.paper_scale {
            ModelConfig::paper_scale()
        } else {
            ModelConfig {
                text_dim: self.text_dim,
                rnn_hidden: self.rnn_hidden,
                rnn_layers: self.rnn_layers,
                heads: self.heads,
                text_blocks: self.text_blocks,
                graph_dim: self.graph_dim,
                graph_depth: self.graph_depth,
                fusion_dim: self.fusion_dim,
                decoder_hidden: self.decoder_hidden,
                dropout: self.dropout,
                keyword_count: self.keywords,
                ..ModelConfig::default()
            }
        };
        config.node_agg = self.node_agg.parse()?;
        config.hetero_agg = self.hetero_agg.parse()?;
        config.fusion_kind = self.fusion.parse()?;
        config.modalities = self.modalities.parse()?;
        config.use_graph = !self.no_graph;
        config.use_embedding_update = !self.no_embedding_update;
        config.additive_embedding_update = self.additive_update;
        config.mean_pool_fusion = self.mean_pool;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args, Clone)]
struct TrainFlags {
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 7)]
    patience: usize,
    /// Initial learning rate (the full-scale preset uses 1e-5).
    #[arg(long)]
    lr: Option<f64>,
    /// Exponential LR decay per epoch.
    #[arg(long, default_value_t = 0.95)]
    gamma: f64,
    #[arg(long, default_value_t = 0.01)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0.8)]
    split_ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    chunk_tokens: usize,
    #[command(flatten)]
    model: ModelFlags,
}

impl TrainFlags {
    fn to_config(&self) -> Result<TrainConfig, Error> {
        let model = self.model.to_config()?;
        let lr = self.lr.unwrap_or(if self.model.paper_scale { 1e-5 } else { 1e-3 });
        let config = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            lr,
            lr_gamma: self.gamma,
            weight_decay: self.weight_decay,
            split_ratio: self.split_ratio,
            seed: self.seed,
            chunk_tokens: self.chunk_tokens,
            model,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out_model: PathBuf,
    /// Per-epoch history CSV.
    #[arg(long)]
    history: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Metrics table CSV (stdout gets a summary either way).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Confusion matrix CSV.
    #[arg(long)]
    confusion: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Axis spec `axis=v1,v2,...`; repeatable. Axes: node, hetero, fusion,
    /// modality, m, chunk, graph, update.
    #[arg(long = "axis", required = true)]
    axes: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Word error rate between reference and hypothesis transcripts
    /// (parallel text files, one utterance per line).
    Wer(WerArgs),
    /// One-way ANOVA over a `group,value` CSV.
    Anova(AnovaArgs),
    /// Per-class pose-keypoint standard deviations.
    PoseStd(PoseStdArgs),
}

#[derive(Args)]
struct WerArgs {
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    hypothesis: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnovaArgs {
    /// CSV with a `group,value` header row.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PoseStdArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportAttentionArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Subject id (first matching sample) or numeric sample index.
    #[arg(long)]
    sample: String,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Entry point: parse and dispatch, mapping errors to exit codes
/// (1 usage, 2 data, 3 numeric).
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version are successful exits by convention.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidArgument(_) => 1,
                Error::Parse { .. } | Error::Data(_) | Error::Io(_) => 2,
                Error::Numeric(_) | Error::ShapeMismatch { .. } => 3,
            }
        }
    }
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Generate(args) => cmd_generate(args),
        Command::Keywords(args) => cmd_keywords(args),
        Command::Split(args) => cmd_split(args),
        Command::Kfold(args) => cmd_kfold(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Analyze(cmd) => match cmd {
            AnalyzeCommand::Wer(args) => cmd_wer(args),
            AnalyzeCommand::Anova(args) => cmd_anova(args),
            AnalyzeCommand::PoseStd(args) => cmd_pose_std(args),
        },
        Command::ExportAttention(args) => cmd_export_attention(args),
    }
}

// ---- manifest ----------------------------------------------------------------

fn manifest_path(primary_out: &Path) -> PathBuf {
    let mut name = primary_out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_string());
    name.push_str(".manifest.csv");
    primary_out.with_file_name(name)
}

fn flatten_json(prefix: &str, value: &serde_json::Value, rows: &mut Vec<(String, String)>) {
    match value {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_json(&key, v, rows);
            }
        }
        serde_json::Value::Array(items) => {
            let joined: Vec<String> = items.iter().map(render_scalar).collect();
            rows.push((prefix.to_string(), joined.join("|")));
        }
        other => rows.push((prefix.to_string(), render_scalar(other))),
    }
}

fn render_scalar(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// key,value rows: command, crate version, then the flattened config.
fn write_manifest<C: serde::Serialize>(
    primary_out: &Path,
    command: &str,
    config: &C,
) -> Result<(), Error> {
    let mut rows = vec![
        ("command".to_string(), command.to_string()),
        ("version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
    ];
    let value = serde_json::to_value(config).map_err(|e| Error::Io(e.to_string()))?;
    flatten_json("", &value, &mut rows);
    let mut out = String::from("key,value\n");
    for (k, v) in rows {
        out.push_str(&format!("{k},{v}\n"));
    }
    std::fs::write(manifest_path(primary_out), out)?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => write_text(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

// ---- subcommands ---------------------------------------------------------------

fn cmd_generate(args: GenerateArgs) -> Result<(), Error> {
    let mut config = SyntheticConfig {
        subjects_per_class: args.subjects_per_class,
        sessions_per_subject: args.sessions,
        min_session_tokens: args.min_tokens,
        max_session_tokens: args.max_tokens,
        chunk_tokens: args.chunk_tokens,
        token_min_seconds: args.min_token_seconds,
        token_max_seconds: args.max_token_seconds,
        seed: args.seed,
        ..SyntheticConfig::default()
    };
    if let Some(a) = &args.amplitudes {
        config.gesture_amplitudes = [a[0], a[1], a[2], a[3]];
    }
    if let Some(r) = &args.disfluency_rates {
        config.disfluency_rates = [r[0], r[1], r[2], r[3]];
    }
    let corpus = generate_synthetic(&config)?;
    write_corpus(&corpus, &args.out)?;
    write_manifest(&args.out, "generate", &config)?;
    println!(
        "wrote {} samples over {} subjects to {}",
        corpus.len(),
        corpus.subjects().len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_keywords(args: KeywordsArgs) -> Result<(), Error> {
    let corpus = read_corpus(&args.corpus)?;
    let vocab = extract_disfluency_keywords(&corpus.samples, args.count)?;
    vocab.save(&args.out)?;
    write_manifest(
        &args.out,
        "keywords",
        &serde_json::json!({ "corpus": args.corpus.display().to_string(), "count": args.count }),
    )?;
    println!("wrote {} keywords to {}", vocab.len(), args.out.display());
    Ok(())
}

fn cmd_split(args: SplitArgs) -> Result<(), Error> {
    let corpus = read_corpus(&args.corpus)?;
    let (train_part, test_part) =
        aphasia_core::corpus::split_disjoint_subjects(&corpus, args.ratio, args.seed)?;
    write_corpus(&train_part, &args.out_train)?;
    write_corpus(&test_part, &args.out_test)?;
    write_manifest(
        &args.out_train,
        "split",
        &serde_json::json!({
            "corpus": args.corpus.display().to_string(),
            "ratio": args.ratio,
            "seed": args.seed,
        }),
    )?;
    println!(
        "train: {} samples / {} subjects; test: {} samples / {} subjects",
        train_part.len(),
        train_part.subjects().len(),
        test_part.len(),
        test_part.subjects().len()
    );
    Ok(())
}

fn cmd_kfold(args: KfoldArgs) -> Result<(), Error> {
    let corpus = read_corpus(&args.corpus)?;
    let folds = group_stratified_kfold(&corpus, args.k, args.seed)?;
    std::fs::create_dir_all(&args.out_dir)?;
    for (i, (train_part, val_part)) in folds.iter().enumerate() {
        write_corpus(train_part, args.out_dir.join(format!("fold_{i}_train.jsonl")))?;
        write_corpus(val_part, args.out_dir.join(format!("fold_{i}_val.jsonl")))?;
    }
    write_manifest(
        &args.out_dir.join("folds"),
        "kfold",
        &serde_json::json!({
            "corpus": args.corpus.display().to_string(),
            "k": args.k,
            "seed": args.seed,
        }),
    )?;
    println!("wrote {} folds to {}", folds.len(), args.out_dir.display());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), Error> {
    let config = args.train.to_config()?;
    let corpus = read_corpus(&args.corpus)?;
    let outcome = train_split(&corpus, &config)?;
    outcome.model.save(&args.out_model)?;
    if let Some(history) = &args.history {
        write_text(history, &history_csv(&outcome.history))?;
    }
    write_manifest(&args.out_model, "train", &config)?;
    println!(
        "best epoch {} of {} (validation weighted F1 {:.3})",
        outcome.best_epoch,
        outcome.history.len(),
        outcome.best_val_f1
    );
    println!("{}", outcome.report);
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Error> {
    let model = Model::load(&args.model)?;
    let corpus = read_corpus(&args.corpus)?;
    let report = evaluate(&model, &corpus.samples)?;
    println!("{report}");
    if let Some(out) = &args.out {
        write_text(out, &report.to_csv())?;
        write_manifest(
            out,
            "eval",
            &serde_json::json!({
                "model": args.model.display().to_string(),
                "corpus": args.corpus.display().to_string(),
            }),
        )?;
    }
    if let Some(path) = &args.confusion {
        write_text(path, &report.confusion_csv())?;
    }
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<(), Error> {
    let config = args.train.to_config()?;
    let corpus = read_corpus(&args.corpus)?;
    let axes: Vec<AxisSpec> = args
        .axes
        .iter()
        .map(|s| AxisSpec::parse(s))
        .collect::<Result<_, _>>()?;
    let rows = ablate(&corpus, &config, &axes)?;
    let csv = ablation_csv(&rows);
    match &args.out {
        Some(out) => {
            write_text(out, &csv)?;
            write_manifest(out, "ablate", &config)?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(String::from).collect())
}

fn cmd_wer(args: WerArgs) -> Result<(), Error> {
    let refs = read_lines(&args.reference)?;
    let hyps = read_lines(&args.hypothesis)?;
    if refs.len() != hyps.len() {
        return Err(Error::data(format!(
            "reference has {} lines, hypothesis {}",
            refs.len(),
            hyps.len()
        )));
    }
    let raw_tok = |s: &str| -> Vec<String> { s.split_whitespace().map(String::from).collect() };

    let mut table = String::from("variant,weighting,wer,lines,ref_tokens\n");
    for (variant, tokenize) in [
        ("raw", &raw_tok as &dyn Fn(&str) -> Vec<String>),
        ("preprocessed", &|s: &str| stats::normalize_transcript(s)),
    ] {
        let mut edits_total = 0usize;
        let mut ref_total = 0usize;
        let mut per_line = Vec::new();
        for (r, h) in refs.iter().zip(&hyps) {
            let rt = tokenize(r);
            let ht = tokenize(h);
            if rt.is_empty() {
                return Err(Error::data(format!(
                    "empty reference line after `{variant}` tokenization: `{r}`"
                )));
            }
            let d = stats::edit_distance(&rt, &ht);
            edits_total += d;
            ref_total += rt.len();
            per_line.push(d as f64 / rt.len() as f64);
        }
        let token_weighted = edits_total as f64 / ref_total as f64;
        let sample_weighted = per_line.iter().sum::<f64>() / per_line.len() as f64;
        table.push_str(&format!(
            "{variant},token_weighted,{token_weighted},{},{ref_total}\n",
            per_line.len()
        ));
        table.push_str(&format!(
            "{variant},sample_weighted,{sample_weighted},{},{ref_total}\n",
            per_line.len()
        ));
    }
    emit(args.out.as_deref(), &table)?;
    Ok(())
}

fn cmd_anova(args: AnovaArgs) -> Result<(), Error> {
    let lines = read_lines(&args.input)?;
    let mut iter = lines.iter();
    let header = iter.next().ok_or_else(|| Error::data("empty anova input"))?;
    if header.trim() != "group,value" {
        return Err(Error::Parse {
            line: 1,
            field: "header".into(),
            message: format!("expected `group,value`, got `{header}`"),
        });
    }
    let mut groups: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    for (i, line) in iter.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (g, v) = line.split_once(',').ok_or_else(|| Error::Parse {
            line: i + 2,
            field: "row".into(),
            message: "expected `group,value`".into(),
        })?;
        let value: f64 = v.trim().parse().map_err(|_| Error::Parse {
            line: i + 2,
            field: "value".into(),
            message: format!("bad number `{v}`"),
        })?;
        groups.entry(g.trim().to_string()).or_default().push(value);
    }
    let ordered: Vec<Vec<f64>> = groups.values().cloned().collect();
    let result = stats::anova_oneway(&ordered)?;
    let mut out = String::from("f,p,df_between,df_within,groups\n");
    out.push_str(&format!(
        "{},{},{},{},{}\n",
        result.f,
        result.p,
        result.df_between,
        result.df_within,
        groups.len()
    ));
    emit(args.out.as_deref(), &out)?;
    Ok(())
}

fn cmd_pose_std(args: PoseStdArgs) -> Result<(), Error> {
    let corpus = read_corpus(&args.corpus)?;
    let report = stats::pose_std_report(&corpus)?;
    emit(args.out.as_deref(), &report.to_csv())?;
    Ok(())
}

fn cmd_export_attention(args: ExportAttentionArgs) -> Result<(), Error> {
    let model = Model::load(&args.model)?;
    let corpus = read_corpus(&args.corpus)?;
    let sample = if let Ok(index) = args.sample.parse::<usize>() {
        corpus.samples.get(index).ok_or_else(|| {
            Error::data(format!(
                "sample index {index} out of range ({} samples)",
                corpus.len()
            ))
        })?
    } else {
        corpus
            .samples
            .iter()
            .find(|s| s.subject_id == args.sample)
            .ok_or_else(|| Error::data(format!("no sample for subject `{}`", args.sample)))?
    };
    let (trace, logits) = model.traced_forward(sample)?;
    let files = export_attention(&trace, &args.out_dir)?;
    write_manifest(
        &args.out_dir.join("attention"),
        "export-attention",
        &serde_json::json!({
            "model": args.model.display().to_string(),
            "corpus": args.corpus.display().to_string(),
            "sample": args.sample,
        }),
    )?;
    println!(
        "wrote {} matrices for `{}` (logits {:?})",
        files.len() - 1,
        sample.subject_id,
        logits
    );
    Ok(())
}

