use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use cleve::clustering::ClusteringOutput;
use cleve::amr::{merge_entity_nodes_with_report, read_corpus_jsonl, read_penman_documents, write_corpus_jsonl, AmrGraph};
use cleve::downstream::{finetune, liberal_pipeline, read_instances_jsonl, FinetuneConfig, LiberalConfig};
use cleve::error::Error;
use cleve::evaluation::{read_gold_jsonl, score_clustering, write_gold_jsonl};
use cleve::graph_encoder::{GraphEncoder, GraphEncoderConfig};
use cleve::persistence::{self, NamedTensor};
use cleve::semantic_pretrain::{train_semantic, SemanticTrainConfig};
use cleve::structure_pretrain::{train_structure, StructureTrainConfig};
use cleve::synth;
use cleve::text_encoder::{EncoderConfig, TextEncoder, Vocabulary};

#[derive(Parser)]
#[command(name = "cleve", version, about = "Contrastive event representations over AMR graphs")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum InputFormat {
    Jsonl,
    Penman,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Semantic,
    Structure,
}

#[derive(Clone, Copy, ValueEnum)]
enum Ablation {
    Structure,
}

#[derive(Subcommand)]
enum Command {
    /// Read parser output, merge entity nodes and write canonical JSONL.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Input format; guessed from the extension when omitted.
        #[arg(long)]
        format: Option<InputFormat>,
        /// Print graph, node, edge and merge counts.
        #[arg(long)]
        stats: bool,
    },
    /// Train the text encoder (semantic) or the graph encoder (structure).
    Pretrain {
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Semantic checkpoint providing node features (structure mode).
        #[arg(long)]
        text: Option<PathBuf>,
        /// Loss log; defaults to `<out>.loss.csv`.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Liberal event extraction by joint constraint clustering.
    Cluster {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        text: PathBuf,
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Schema summary; defaults to `<out>.schema.json`.
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long, value_enum)]
        ablate: Option<Ablation>,
    },
    /// B-Cubed scores of a clustering output against gold labels.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
    },
    /// Supervised fine-tuning of both encoders with a classifier head.
    Finetune {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        text: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch log; defaults to `<out>.epochs.csv`.
        #[arg(long)]
        epochs_csv: Option<PathBuf>,
    },
    /// Write a generated corpus with gold labels and supervised splits.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 300)]
        sentences: usize,
        #[arg(long, default_value_t = 500)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite(_) => Failure::Numeric(e.to_string()),
            Error::InvalidArgument(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<persistence::CheckpointError> for Failure {
    fn from(e: persistence::CheckpointError) -> Self {
        Failure::Data(e.to_string())
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Outcome<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        Failure::Usage(format!("config {}: at `{key}`: {}", path.display(), e.inner()))
    })
}

fn seed_override() -> Outcome<Option<u64>> {
    match std::env::var("CLEVE_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("CLEVE_SEED must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn write_text(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text).map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Run metadata written next to every checkpoint.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Meta {
    Semantic {
        encoder: EncoderConfig,
        seed: u64,
    },
    Structure {
        graph: GraphEncoderConfig,
        input_dim: usize,
        seed: u64,
    },
    Finetune {
        encoder: EncoderConfig,
        graph: GraphEncoderConfig,
        config: FinetuneConfig,
        labels: Vec<String>,
        best_epoch: usize,
    },
}

fn write_meta(ckpt: &Path, meta: &Meta) -> Outcome {
    write_text(&with_suffix(ckpt, ".meta.json"), &to_json(meta))
}

fn read_meta(ckpt: &Path) -> Outcome<Meta> {
    let path = with_suffix(ckpt, ".meta.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn load_text_encoder(ckpt: &Path) -> Outcome<TextEncoder> {
    let (encoder, _) = match read_meta(ckpt)? {
        Meta::Semantic { encoder, seed } => (encoder, seed),
        _ => return Err(Failure::Usage(format!("{} is not a semantic checkpoint", ckpt.display()))),
    };
    let vocab = Vocabulary::read(with_suffix(ckpt, ".vocab"))?;
    let tensors = persistence::load(ckpt)?;
    Ok(TextEncoder::from_tensors(encoder, vocab, &tensors)?)
}

fn load_graph_encoder(ckpt: &Path) -> Outcome<GraphEncoder> {
    match read_meta(ckpt)? {
        Meta::Structure { graph, input_dim, .. } => {
            let tensors = persistence::load(ckpt)?;
            Ok(GraphEncoder::from_tensors(graph, input_dim, &tensors)?)
        }
        _ => Err(Failure::Usage(format!("{} is not a structure checkpoint", ckpt.display()))),
    }
}

fn read_corpus(path: &Path) -> Outcome<Vec<AmrGraph>> {
    Ok(read_corpus_jsonl(path)?)
}

fn preprocess(input: &Path, out: &Path, format: Option<InputFormat>, stats: bool) -> Outcome {
    let format = format.unwrap_or(match input.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") => InputFormat::Jsonl,
        _ => InputFormat::Penman,
    });
    let graphs = match format {
        InputFormat::Jsonl => read_corpus(input)?,
        InputFormat::Penman => {
            let text = std::fs::read_to_string(input)
                .map_err(|e| Failure::Data(format!("cannot read {}: {e}", input.display())))?;
            read_penman_documents(&text)?
        }
    };
    let mut merged = Vec::with_capacity(graphs.len());
    let (mut merged_nodes, mut absorbed) = (0, 0);
    for g in &graphs {
        let (m, report) = merge_entity_nodes_with_report(g);
        merged_nodes += report.merged_nodes;
        absorbed += report.absorbed;
        for w in &report.warnings {
            eprintln!("warning: {w}");
        }
        merged.push(m);
    }
    write_corpus_jsonl(out, &merged)?;
    if stats {
        let nodes: usize = merged.iter().map(|g| g.nodes.len()).sum();
        let edges: usize = merged.iter().map(|g| g.edges.len()).sum();
        println!(
            "graphs={} nodes={nodes} edges={edges} merged_nodes={merged_nodes} absorbed_nodes={absorbed}",
            merged.len()
        );
    }
    Ok(())
}

fn pretrain(
    mode: Mode,
    corpus: &Path,
    config: Option<&Path>,
    out: &Path,
    text: Option<&Path>,
    loss_csv: Option<&Path>,
) -> Outcome {
    let seed = seed_override()?;
    let loss_csv = loss_csv.map(Path::to_path_buf).unwrap_or_else(|| with_suffix(out, ".loss.csv"));
    match mode {
        Mode::Semantic => {
            let mut cfg: SemanticTrainConfig = read_config(config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let graphs = read_corpus(corpus)?;
            let model = train_semantic(&graphs, &cfg)?;
            let mut tensors = model.encoder.to_tensors();
            tensors.extend(model.scorer.to_tensors());
            persistence::save(&tensors, out)?;
            model.encoder.vocab.write(with_suffix(out, ".vocab"))?;
            write_meta(
                out,
                &Meta::Semantic {
                    encoder: model.encoder.config,
                    seed: cfg.seed,
                },
            )?;
            model.trace.write_csv(&loss_csv)?;
        }
        Mode::Structure => {
            let text = text.ok_or_else(|| {
                Failure::Usage("--mode structure needs --text <semantic checkpoint> for node features".into())
            })?;
            let mut cfg: StructureTrainConfig = read_config(config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let encoder = load_text_encoder(text)?;
            let graphs = read_corpus(corpus)?;
            let (gin, trace) = train_structure(&graphs, &encoder, &cfg)?;
            persistence::save(&gin.to_tensors(), out)?;
            write_meta(
                out,
                &Meta::Structure {
                    graph: gin.config,
                    input_dim: gin.input_dim(),
                    seed: cfg.seed,
                },
            )?;
            trace.write_csv(&loss_csv)?;
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cluster(
    corpus: &Path,
    text: &Path,
    graph: Option<&Path>,
    config: Option<&Path>,
    out: &Path,
    schema: Option<&Path>,
    ablate: Option<Ablation>,
) -> Outcome {
    let mut cfg: LiberalConfig = read_config(config)?;
    if let Some(s) = seed_override()? {
        cfg.clustering.seed = s;
    }
    if ablate.is_some() {
        cfg.ablate_structure = true;
    }
    let encoder = load_text_encoder(text)?;
    let gin = match graph {
        Some(p) => load_graph_encoder(p)?,
        None if cfg.ablate_structure => {
            // placeholder; the pipeline does not run it when structure is ablated
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            GraphEncoder::new(GraphEncoderConfig::default(), encoder.dim(), &mut rng)?
        }
        None => return Err(Failure::Usage("--graph is required unless --ablate structure is given".into())),
    };
    let graphs = read_corpus(corpus)?;
    let result = liberal_pipeline(&graphs, &encoder, &gin, &cfg)?;
    write_text(out, &to_json(&result.output))?;
    let schema = schema.map(Path::to_path_buf).unwrap_or_else(|| with_suffix(out, ".schema.json"));
    write_text(&schema, &to_json(&result.schema))?;
    Ok(())
}

fn evaluate(pred: &Path, gold: &Path) -> Outcome {
    let text = std::fs::read_to_string(pred)
        .map_err(|e| Failure::Data(format!("cannot read {}: {e}", pred.display())))?;
    let output: ClusteringOutput =
        serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", pred.display())))?;
    let gold = read_gold_jsonl(gold)?;
    let scores = score_clustering(&output, &gold)?;
    print!("{}", to_json(&scores));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn finetune_cmd(
    train: &Path,
    dev: &Path,
    text: &Path,
    graph: &Path,
    config: Option<&Path>,
    out: &Path,
    epochs_csv: Option<&Path>,
) -> Outcome {
    let mut cfg: FinetuneConfig = read_config(config)?;
    if let Some(s) = seed_override()? {
        cfg.seed = s;
    }
    let encoder = load_text_encoder(text)?;
    let gin = load_graph_encoder(graph)?;
    let train = read_instances_jsonl(train)?;
    let dev = read_instances_jsonl(dev)?;
    let model = finetune(&train, &dev, encoder, gin, &cfg)?;
    let mut tensors: Vec<NamedTensor> = model.text.to_tensors();
    tensors.extend(model.graph.to_tensors());
    tensors.extend(model.head.to_tensors());
    persistence::save(&tensors, out)?;
    model.text.vocab.write(with_suffix(out, ".vocab"))?;
    write_meta(
        out,
        &Meta::Finetune {
            encoder: model.text.config,
            graph: model.graph.config,
            config: cfg,
            labels: model.labels.clone(),
            best_epoch: model.best_epoch,
        },
    )?;
    let mut csv = String::from("epoch,train_loss,dev_f1\n");
    for e in &model.epochs {
        csv.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.dev_f1));
    }
    let path = epochs_csv.map(Path::to_path_buf).unwrap_or_else(|| with_suffix(out, ".epochs.csv"));
    write_text(&path, &csv)
}

fn synth_cmd(out_dir: &Path, sentences: usize, instances: usize, seed: u64) -> Outcome {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Failure::Data(format!("cannot create {}: {e}", out_dir.display())))?;
    let corpus = synth::liberal_corpus(sentences, seed);
    write_corpus_jsonl(out_dir.join("corpus.jsonl"), &corpus.graphs)?;
    write_gold_jsonl(out_dir.join("gold.jsonl"), &corpus.gold)?;
    let inst = synth::supervised_instances(instances, seed.wrapping_add(1));
    let n_dev = instances / 5;
    let lines = |items: &[cleve::downstream::SupervisedInstance]| {
        items
            .iter()
            .map(|i| serde_json::to_string(i).expect("serializable") + "\n")
            .collect::<String>()
    };
    write_text(&out_dir.join("train.jsonl"), &lines(&inst[n_dev..]))?;
    write_text(&out_dir.join("dev.jsonl"), &lines(&inst[..n_dev]))?;
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        cleve::par::configure_threads(t);
    }
    match cli.command {
        Command::Preprocess {
            input,
            out,
            format,
            stats,
        } => preprocess(&input, &out, format, stats),
        Command::Pretrain {
            mode,
            corpus,
            config,
            out,
            text,
            loss_csv,
        } => pretrain(mode, &corpus, config.as_deref(), &out, text.as_deref(), loss_csv.as_deref()),
        Command::Cluster {
            corpus,
            text,
            graph,
            config,
            out,
            schema,
            ablate,
        } => cluster(&corpus, &text, graph.as_deref(), config.as_deref(), &out, schema.as_deref(), ablate),
        Command::Evaluate { pred, gold } => evaluate(&pred, &gold),
        Command::Finetune {
            train,
            dev,
            text,
            graph,
            config,
            out,
            epochs_csv,
        } => finetune_cmd(&train, &dev, &text, &graph, config.as_deref(), &out, epochs_csv.as_deref()),
        Command::Synth {
            out_dir,
            sentences,
            instances,
            seed,
        } => synth_cmd(&out_dir, sentences, instances, seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
