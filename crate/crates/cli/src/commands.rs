use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use routeprobe::corpus::{corpus_distribution, parse_conllu_with, CorpusError, ParseOptions, PosTagset, Sentence, TagSource, DEFAULT_SPLIT_RATIO};
use routeprobe::metrics::{count_assignments, kl_stats, spec_report, token_distribution, word_distribution, DEFAULT_KL_EPSILON};
use routeprobe::moe::{read_checkpoint, train_toy, write_checkpoint, ModelConfig, MoeModel, PosOracle, RoutingTrace, SyntheticRouter, TrainConfig};
use routeprobe::probe::{AblationSide, Encoding, ProbeConfig, ProbeExperiment};
use routeprobe::projection::{pca_2d, tsne_2d, write_svg, write_tsv, TsneConfig};
use routeprobe::report::{
    ablation_tsv, confusion_tsv, distribution_markdown, kl_markdown, kl_matrix_tsv, probe_markdown, spec_markdown, spec_matrix_tsv,
    ReportMeta,
};
use routeprobe::tokenizer::{align_pos, train_bpe, AlignedToken, SubwordVocab};
use routeprobe::trace::{path_vector, read_trace, PathMode, TokenRecord, TraceHeader, TraceWriter};
use routeprobe_cli::config::{Scope, Settings};

use crate::Common;

pub const TRACE_FILE: &str = "routing.trace.jsonl";

struct Ctx {
    command: &'static str,
    settings: Settings,
    seed: u64,
    out_dir: PathBuf,
    tagset: PosTagset,
    tagset_given: bool,
}

impl Ctx {
    fn new(common: &Common, command: &'static str) -> Result<Self> {
        let settings = match &common.config {
            Some(p) => Settings::load(p)?,
            None => Settings::default(),
        };
        let scope = settings.scope(command);
        let seed = scope.pick(common.seed, "seed", 0)?;
        let out_dir = scope.pick(common.out_dir.clone(), "out_dir", PathBuf::from("."))?;
        let tagset_path = match &common.tagset {
            Some(p) => Some(p.clone()),
            None => scope.get::<PathBuf>("tagset")?,
        };
        let (tagset, tagset_given) = match tagset_path {
            Some(p) => {
                let text = std::fs::read_to_string(&p).with_context(|| format!("cannot read tagset {}", p.display()))?;
                (PosTagset::parse(&text).with_context(|| format!("invalid tagset {}", p.display()))?, true)
            }
            None => (PosTagset::default(), false),
        };
        Ok(Ctx {
            command,
            settings,
            seed,
            out_dir,
            tagset,
            tagset_given,
        })
    }

    fn scope(&self) -> Scope<'_> {
        self.settings.scope(self.command)
    }

    fn write(&self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir).with_context(|| format!("cannot create {}", self.out_dir.display()))?;
        let path = self.out_dir.join(name);
        std::fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        println!("wrote {}", path.display());
        Ok(path)
    }

    fn meta(&self, title: &str) -> ReportMeta {
        ReportMeta::new(title).with("seed", self.seed)
    }

    /// Tagset for an existing trace: the `--tagset` file must list exactly
    /// the header's tags; otherwise the header's tags with the default
    /// exclusions.
    fn tagset_for(&self, header: &TraceHeader) -> Result<PosTagset> {
        if self.tagset_given {
            if self.tagset.tags() != header.tagset.as_slice() {
                bail!(CorpusError::InvalidTagset(format!(
                    "tagset file lists {:?} but the trace header lists {:?}",
                    self.tagset.tags(),
                    header.tagset
                )));
            }
            return Ok(self.tagset.clone());
        }
        let excluded = PosTagset::default()
            .excluded_from_global()
            .iter()
            .copied()
            .filter(|t| header.tagset.contains(t))
            .collect();
        Ok(PosTagset::new(header.tagset.clone(), excluded)?)
    }
}

fn parse_tag_source(s: &str) -> Result<TagSource> {
    match s {
        "prefer_upos" => Ok(TagSource::PreferUpos),
        "convert_xpos" => Ok(TagSource::ConvertXpos),
        other => bail!("unknown tag source {other:?} (expected prefer_upos or convert_xpos)"),
    }
}

fn parse_modes(s: &str) -> Result<Vec<PathMode>> {
    match s {
        "top_k" => Ok(vec![PathMode::TopK]),
        "top_1" => Ok(vec![PathMode::Top1]),
        "both" => Ok(vec![PathMode::TopK, PathMode::Top1]),
        other => bail!("unknown path mode {other:?} (expected top_k, top_1 or both)"),
    }
}

/// `base.ext` for the first mode, `base_<mode>.ext` for the rest.
fn per_mode_name(base: &str, ext: &str, index: usize, mode: PathMode) -> String {
    if index == 0 {
        format!("{base}.{ext}")
    } else {
        format!("{base}_{}.{ext}", mode.as_str())
    }
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// CoNLL-U corpus file.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// `prefer_upos` keeps a valid UPOS column; `convert_xpos` maps the Penn XPOS column.
    #[arg(long)]
    tag_source: Option<String>,
}

fn load_corpus(ctx: &Ctx, args: &CorpusArgs) -> Result<Vec<Sentence>> {
    let scope = ctx.scope();
    let path: PathBuf = scope.require(args.corpus.clone(), "corpus")?;
    let source = parse_tag_source(&scope.pick(args.tag_source.clone(), "tag_source", "prefer_upos".into())?)?;
    let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read corpus {}", path.display()))?;
    let opts = ParseOptions {
        tag_source: source,
        tagset: ctx.tagset.clone(),
    };
    let sentences = parse_conllu_with(&text, &opts).with_context(|| format!("cannot parse {}", path.display()))?;
    if sentences.iter().all(|s| s.words.is_empty()) {
        return Err(CorpusError::EmptyStream).with_context(|| format!("{} contains no words", path.display()));
    }
    Ok(sentences)
}

fn load_vocab(ctx: &Ctx, flag: Option<PathBuf>) -> Result<SubwordVocab> {
    let path = ctx.scope().pick(flag, "vocab", ctx.out_dir.join("vocab.json"))?;
    let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read vocab {}", path.display()))?;
    Ok(SubwordVocab::from_json(&text).with_context(|| format!("invalid vocab {}", path.display()))?)
}

fn load_trace(ctx: &Ctx, flag: Option<PathBuf>) -> Result<(TraceHeader, Vec<TokenRecord>)> {
    let path: PathBuf = ctx.scope().require(flag, "trace")?;
    let file = File::open(&path).with_context(|| format!("cannot open trace {}", path.display()))?;
    Ok(read_trace(BufReader::new(file)).with_context(|| format!("invalid trace {}", path.display()))?)
}

/// Token ids grouped by sentence, in corpus order.
fn sentence_sequences(tokens: &[AlignedToken]) -> Vec<Vec<u32>> {
    let mut out: Vec<Vec<u32>> = Vec::new();
    let mut last = None;
    for t in tokens {
        if last != Some(t.sentence_id) {
            out.push(Vec::new());
            last = Some(t.sentence_id);
        }
        out.last_mut().expect("pushed above").push(t.token_id);
    }
    out
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
}

pub fn ingest(common: &Common, args: IngestArgs) -> Result<()> {
    let ctx = Ctx::new(common, "ingest")?;
    let sentences = load_corpus(&ctx, &args.corpus)?;
    let words: Vec<_> = sentences.iter().flat_map(|s| s.words.iter().cloned()).collect();
    let dist = corpus_distribution(&words, &ctx.tagset)?;
    let meta = ctx
        .meta("POS distribution")
        .with("sentences", sentences.len())
        .with("words", words.len());
    ctx.write("pos_distribution.md", distribution_markdown(&meta, &dist).as_bytes())?;
    let mut tsv = String::from("pos\tcount\tpercent\n");
    for (tag, &c) in dist.tags().iter().zip(dist.counts()) {
        tsv.push_str(&format!("{tag}\t{c}\t{:.4}\n", 100.0 * c as f64 / dist.total() as f64));
    }
    ctx.write("pos_distribution.tsv", tsv.as_bytes())?;
    println!("{} sentences, {} words", sentences.len(), words.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct TokenizeArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Maximum vocabulary size, unk and byte alphabet included.
    #[arg(long)]
    vocab_size: Option<usize>,
}

pub fn tokenize(common: &Common, args: TokenizeArgs) -> Result<()> {
    let ctx = Ctx::new(common, "tokenize")?;
    let sentences = load_corpus(&ctx, &args.corpus)?;
    let size = ctx.scope().pick(args.vocab_size, "vocab_size", 1000)?;
    let vocab = train_bpe(sentences.iter().flat_map(|s| s.words.iter().map(|w| w.surface.as_str())), size)?;
    ctx.write("vocab.json", vocab.to_json().as_bytes())?;
    let tokens = align_pos(&sentences, &vocab);
    let mut tsv = String::from("sid\twid\ttid\ttok\tpos\n");
    for t in &tokens {
        tsv.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", t.sentence_id, t.word_index, t.token_id, t.surface, t.upos));
    }
    ctx.write("tokens.tsv", tsv.as_bytes())?;
    println!("vocab {} ({} merges), {} tokens", vocab.fingerprint(), vocab.merge_count(), tokens.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct ModelShape {
    /// Number of MoE layers.
    #[arg(long)]
    layers: Option<usize>,
    /// Experts per layer.
    #[arg(long)]
    experts: Option<usize>,
    /// Experts selected per token.
    #[arg(long)]
    top_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Vocabulary file (default: <out-dir>/vocab.json).
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[command(flatten)]
    shape: ModelShape,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    d_ff: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Weight of the load-balancing loss.
    #[arg(long)]
    aux_weight: Option<f64>,
    /// Sentences per step.
    #[arg(long)]
    batch_size: Option<usize>,
}

pub fn train(common: &Common, args: TrainArgs) -> Result<()> {
    let ctx = Ctx::new(common, "train")?;
    let sentences = load_corpus(&ctx, &args.corpus)?;
    let vocab = load_vocab(&ctx, args.vocab)?;
    let s = ctx.scope();
    let config = ModelConfig {
        n_layers: s.pick(args.shape.layers, "layers", 4)?,
        n_experts: s.pick(args.shape.experts, "experts", 8)?,
        k: s.pick(args.shape.top_k, "top_k", 2)?,
        d_model: s.pick(args.d_model, "d_model", 32)?,
        d_ff: s.pick(args.d_ff, "d_ff", 64)?,
        vocab_size: vocab.len(),
        seed: ctx.seed,
    };
    let defaults = TrainConfig::default();
    let tcfg = TrainConfig {
        steps: s.pick(args.steps, "steps", defaults.steps)?,
        lr: s.pick(args.lr, "lr", defaults.lr)?,
        aux_weight: s.pick(args.aux_weight, "aux_weight", defaults.aux_weight)?,
        batch_size: s.pick(args.batch_size, "batch_size", defaults.batch_size)?,
        seed: ctx.seed,
    };
    let corpus: Vec<Vec<u32>> = sentence_sequences(&align_pos(&sentences, &vocab))
        .into_iter()
        .filter(|seq| seq.len() >= 2)
        .collect();
    let mut model = MoeModel::new(config)?;
    let report = train_toy(&mut model, &corpus, &tcfg)?;
    let mut ckpt = Vec::new();
    write_checkpoint(&model, &mut ckpt)?;
    ctx.write("model.ckpt", &ckpt)?;
    let mut log = String::new();
    let meta = ctx
        .meta("toy MoE training")
        .with("parameters", model.parameter_count())
        .with("steps", tcfg.steps)
        .with("lr", tcfg.lr)
        .with("aux_weight", tcfg.aux_weight)
        .with("batch_size", tcfg.batch_size);
    log.push_str(&format!("# {}\n", meta.title));
    for (k, v) in &meta.params {
        log.push_str(&format!("# {k}={v}\n"));
    }
    log.push_str("step\tloss\n");
    for (i, l) in report.step_losses.iter().enumerate() {
        log.push_str(&format!("{i}\t{l:.6}\n"));
    }
    ctx.write("train_log.tsv", log.as_bytes())?;
    println!("loss {:.4} -> {:.4} over {} steps", report.initial_loss, report.final_loss, tcfg.steps);
    Ok(())
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Vocabulary file (default: <out-dir>/vocab.json).
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// `model` (needs --model), `uniform`, `oracle` or `hash`.
    #[arg(long)]
    router: Option<String>,
    /// Model checkpoint for `--router model`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Model name written to the trace header.
    #[arg(long)]
    model_name: Option<String>,
    #[command(flatten)]
    shape: ModelShape,
}

pub fn trace(common: &Common, args: TraceArgs) -> Result<()> {
    let ctx = Ctx::new(common, "trace")?;
    let sentences = load_corpus(&ctx, &args.corpus)?;
    let vocab = load_vocab(&ctx, args.vocab)?;
    let tokens = align_pos(&sentences, &vocab);
    let s = ctx.scope();
    let model_path = match args.model {
        Some(p) => Some(p),
        None => s.get::<PathBuf>("model")?,
    };
    let router: String = s.pick(args.router, "router", if model_path.is_some() { "model" } else { "uniform" }.into())?;

    let (name, shape, routed): (String, (usize, usize, usize), RoutingTrace) = if router == "model" {
        let path = model_path.context("--router model needs --model")?;
        let file = File::open(&path).with_context(|| format!("cannot open model {}", path.display()))?;
        let model = read_checkpoint(BufReader::new(file)).with_context(|| format!("invalid checkpoint {}", path.display()))?;
        let cfg = model.config().clone();
        if cfg.vocab_size != vocab.len() {
            bail!("checkpoint vocab size {} does not match vocab {} ({})", cfg.vocab_size, vocab.fingerprint(), vocab.len());
        }
        let mut routed = Vec::with_capacity(tokens.len());
        for seq in sentence_sequences(&tokens) {
            let (_, trace) = model.forward_with_trace(&seq)?;
            routed.extend(trace);
        }
        ("toy-moe".to_string(), (cfg.n_layers, cfg.n_experts, cfg.k), routed)
    } else {
        let l = s.pick(args.shape.layers, "layers", 32)?;
        let n = s.pick(args.shape.experts, "experts", 8)?;
        let k = s.pick(args.shape.top_k, "top_k", 2)?;
        let synthetic = match router.as_str() {
            "uniform" => SyntheticRouter::UniformRandom { seed: ctx.seed },
            "oracle" => SyntheticRouter::PosOracle(PosOracle::spread(&ctx.tagset, l, n, k)?),
            "hash" => SyntheticRouter::TokenIdHash { seed: ctx.seed },
            other => bail!("unknown router {other:?} (expected model, uniform, oracle or hash)"),
        };
        (format!("synthetic-{router}"), (l, n, k), synthetic.route_tokens(&tokens, l, n, k)?)
    };
    let model_name = s.pick(args.model_name, "model_name", name)?;
    let header = TraceHeader::new(model_name, shape.0, shape.1, shape.2, vocab.fingerprint(), &ctx.tagset);

    std::fs::create_dir_all(&ctx.out_dir)?;
    let path = ctx.out_dir.join(TRACE_FILE);
    let file = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut writer = TraceWriter::new(BufWriter::new(file), header)?;
    for (t, decisions) in tokens.iter().zip(&routed) {
        writer.write_record(&TokenRecord::from_decisions(t, decisions))?;
    }
    writer.finish()?.flush()?;
    println!("wrote {}", path.display());
    println!("{} records, L={} N={} k={}", tokens.len(), shape.0, shape.1, shape.2);
    Ok(())
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Routing trace (.trace.jsonl).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Compare experts against the word-level tag distribution instead of
    /// the token-level one.
    #[arg(long)]
    word_level: bool,
    /// Smoothing added to both distributions before KL.
    #[arg(long)]
    kl_epsilon: Option<f64>,
}

pub fn metrics(common: &Common, args: MetricsArgs) -> Result<()> {
    let ctx = Ctx::new(common, "metrics")?;
    let (header, records) = load_trace(&ctx, args.trace)?;
    let tagset = ctx.tagset_for(&header)?;
    let s = ctx.scope();
    let word_level = args.word_level || s.get::<bool>("word_level")?.unwrap_or(false);
    let eps = s.pick(args.kl_epsilon, "kl_epsilon", DEFAULT_KL_EPSILON)?;

    let counts = count_assignments(&header, &records);
    let spec = spec_report(&counts, &tagset)?;
    let corpus = if word_level {
        word_distribution(&records, &tagset)?
    } else {
        token_distribution(&records, &tagset)?
    };
    let kl = kl_stats(&counts, &corpus, eps)?;

    let meta = |title: &str| {
        ctx.meta(title)
            .with("model", &header.model_name)
            .with("layers", header.n_layers)
            .with("experts", header.n_experts)
            .with("k", header.k)
            .with("tokenizer", &header.tokenizer_id)
            .with("records", records.len())
    };
    ctx.write("spec_report.md", spec_markdown(&meta("Expert specialization"), &header.model_name, &spec, None).as_bytes())?;
    ctx.write("spec_matrix.tsv", spec_matrix_tsv(&meta("Spec per POS and layer"), &spec).as_bytes())?;
    let kl_meta = |title: &str| {
        meta(title)
            .with("distribution", if word_level { "word" } else { "token" })
            .with("kl_epsilon", eps)
    };
    ctx.write("kl_report.md", kl_markdown(&kl_meta("KL divergence from the corpus"), &header.model_name, &kl).as_bytes())?;
    ctx.write("kl_matrix.tsv", kl_matrix_tsv(&kl_meta("KL per layer and expert"), &kl).as_bytes())?;
    println!(
        "spec_global={:.2} U={:.1} dU={:+.2} kl_min={:.4} kl_max={:.4} kl_mean={:.4}",
        spec.global, spec.uniform, spec.delta_u, kl.mu_min, kl.mu_max, kl.mu_mean
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// Routing trace (.trace.jsonl).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// `top_k`, `top_1` or `both`.
    #[arg(long)]
    mode: Option<String>,
    /// `raw_index` or `one_hot`.
    #[arg(long)]
    encoding: Option<String>,
    /// Share of tokens used for training.
    #[arg(long)]
    train_ratio: Option<f64>,
    #[arg(long)]
    hidden_width: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Minimum loss improvement that counts as progress.
    #[arg(long)]
    convergence_tol: Option<f64>,
    /// Epochs without progress before stopping.
    #[arg(long)]
    patience: Option<usize>,
    /// L2 penalty.
    #[arg(long)]
    alpha: Option<f64>,
}

struct ProbeSetup {
    modes: Vec<PathMode>,
    ratio: f64,
    cfg: ProbeConfig,
}

fn probe_setup(ctx: &Ctx, args: ProbeArgs, default_mode: &str) -> Result<ProbeSetup> {
    let s = ctx.scope();
    let d = ProbeConfig::default();
    let encoding: Encoding = s
        .pick(args.encoding, "encoding", d.encoding.as_str().to_string())?
        .parse()
        .map_err(anyhow::Error::msg)?;
    let cfg = ProbeConfig {
        hidden_width: s.pick(args.hidden_width, "hidden_width", d.hidden_width)?,
        learning_rate: s.pick(args.learning_rate, "learning_rate", d.learning_rate)?,
        batch_size: s.pick(args.batch_size, "batch_size", d.batch_size)?,
        max_epochs: s.pick(args.max_epochs, "max_epochs", d.max_epochs)?,
        convergence_tol: s.pick(args.convergence_tol, "convergence_tol", d.convergence_tol)?,
        patience: s.pick(args.patience, "patience", d.patience)?,
        alpha: s.pick(args.alpha, "alpha", d.alpha)?,
        seed: ctx.seed,
        encoding,
        ..d
    };
    cfg.validate()?;
    Ok(ProbeSetup {
        modes: parse_modes(&s.pick(args.mode, "mode", default_mode.into())?)?,
        ratio: s.pick(args.train_ratio, "train_ratio", DEFAULT_SPLIT_RATIO)?,
        cfg,
    })
}

fn probe_meta(ctx: &Ctx, title: &str, header: &TraceHeader, setup: &ProbeSetup) -> ReportMeta {
    ctx.meta(title)
        .with("model", &header.model_name)
        .with("layers", header.n_layers)
        .with("experts", header.n_experts)
        .with("k", header.k)
        .with("encoding", setup.cfg.encoding)
        .with("train_ratio", setup.ratio)
        .with("hidden_width", setup.cfg.hidden_width)
        .with("max_epochs", setup.cfg.max_epochs)
}

pub fn probe(common: &Common, args: ProbeArgs) -> Result<()> {
    let ctx = Ctx::new(common, "probe")?;
    let trace = args.trace.clone();
    let setup = probe_setup(&ctx, args, "both")?;
    let (header, records) = load_trace(&ctx, trace)?;
    let exp = ProbeExperiment::new(&header, &records, setup.ratio, ctx.seed)?;
    let mut outcomes = Vec::new();
    for &mode in &setup.modes {
        let o = exp.run(mode, 0..header.n_layers, &setup.cfg)?;
        println!("{} accuracy {:.4} ({} epochs)", mode.as_str(), o.accuracy, o.epochs_run);
        outcomes.push(o);
    }
    let baseline = exp.baseline()?;
    let prior = exp.majority_prior();
    let meta = probe_meta(&ctx, "Routing-path POS probe", &header, &setup);
    ctx.write("probe_report.md", probe_markdown(&meta, &outcomes, baseline, prior).as_bytes())?;
    for (i, o) in outcomes.iter().enumerate() {
        let m = probe_meta(&ctx, "Probe confusion counts", &header, &setup).with("mode", o.mode.as_str());
        ctx.write(&per_mode_name("confusion", "tsv", i, o.mode), confusion_tsv(&m, &o.confusion).as_bytes())?;
    }
    println!("baseline {baseline:.4}, majority prior {prior:.4}");
    Ok(())
}

pub fn ablate(common: &Common, args: ProbeArgs) -> Result<()> {
    let ctx = Ctx::new(common, "ablate")?;
    let trace = args.trace.clone();
    let setup = probe_setup(&ctx, args, "top_k")?;
    let (header, records) = load_trace(&ctx, trace)?;
    let exp = ProbeExperiment::new(&header, &records, setup.ratio, ctx.seed)?;
    for (i, &mode) in setup.modes.iter().enumerate() {
        let mut points = exp.ablation_curve(AblationSide::First, mode, &setup.cfg)?;
        points.extend(exp.ablation_curve(AblationSide::Last, mode, &setup.cfg)?);
        for p in &points {
            println!("{} {} removed={} accuracy={:.4}", mode.as_str(), p.side.as_str(), p.layers_removed, p.accuracy);
        }
        let meta = probe_meta(&ctx, "Layer ablation", &header, &setup).with("mode", mode.as_str());
        ctx.write(&per_mode_name("ablation", "tsv", i, mode), ablation_tsv(&meta, &points).as_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Routing trace (.trace.jsonl).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// `pca` or `tsne`.
    #[arg(long)]
    method: Option<String>,
    /// `top_k` or `top_1`.
    #[arg(long)]
    mode: Option<String>,
    /// `raw_index` or `one_hot`.
    #[arg(long)]
    encoding: Option<String>,
    /// Seeded subsample size; exact t-SNE is quadratic in the point count.
    #[arg(long)]
    max_points: Option<usize>,
    #[arg(long)]
    perplexity: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

pub fn project(common: &Common, args: ProjectArgs) -> Result<()> {
    let ctx = Ctx::new(common, "project")?;
    let (header, records) = load_trace(&ctx, args.trace)?;
    let s = ctx.scope();
    let method: String = s.pick(args.method, "method", "pca".into())?;
    let modes = parse_modes(&s.pick(args.mode, "mode", "top_k".into())?)?;
    let [mode] = modes[..] else {
        bail!("project takes a single path mode (top_k or top_1)");
    };
    let encoding: Encoding = s
        .pick(args.encoding, "encoding", Encoding::default().as_str().to_string())?
        .parse()
        .map_err(anyhow::Error::msg)?;
    let max_points = s.pick(args.max_points, "max_points", 2000)?;

    let mut picked: Vec<usize> = if records.len() > max_points {
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        rand::seq::index::sample(&mut rng, records.len(), max_points).into_vec()
    } else {
        (0..records.len()).collect()
    };
    picked.sort_unstable();
    let paths = picked
        .iter()
        .map(|&i| path_vector(&records[i], mode, 0..header.n_layers))
        .collect::<Result<Vec<_>, _>>()?;
    let x = routeprobe::probe::encode_inputs(&paths, encoding, header.n_experts)?;
    let labels: Vec<_> = picked.iter().map(|&i| records[i].upos).collect();

    let mut meta = ctx
        .meta("Routing-path projection")
        .with("model", &header.model_name)
        .with("method", &method)
        .with("mode", mode.as_str())
        .with("encoding", encoding)
        .with("points", picked.len());
    let embedding = match method.as_str() {
        "pca" => pca_2d(&x, &labels)?.embedding,
        "tsne" => {
            let d = TsneConfig::default();
            let cfg = TsneConfig {
                perplexity: s.pick(args.perplexity, "perplexity", d.perplexity)?,
                iterations: s.pick(args.iterations, "iterations", d.iterations)?,
                learning_rate: s.pick(args.learning_rate, "learning_rate", d.learning_rate)?,
                seed: ctx.seed,
                ..d
            };
            let e = tsne_2d(&x, &labels, &cfg)?;
            for (k, v) in &e.params {
                if k != "seed" {
                    meta = meta.clone().with(k.clone(), v);
                }
            }
            e
        }
        other => bail!("unknown projection method {other:?} (expected pca or tsne)"),
    };

    let mut tsv = format!("# {}\n", meta.title);
    for (k, v) in &meta.params {
        tsv.push_str(&format!("# {k}={v}\n"));
    }
    let mut tsv = tsv.into_bytes();
    write_tsv(&embedding, &mut tsv)?;
    ctx.write("scatter.tsv", &tsv)?;
    let title = format!("{} of {} paths, {} (seed {})", method, mode.as_str(), header.model_name, ctx.seed);
    let mut svg = Vec::new();
    write_svg(&embedding, &title, &mut svg)?;
    ctx.write("scatter.svg", &svg)?;
    Ok(())
}
