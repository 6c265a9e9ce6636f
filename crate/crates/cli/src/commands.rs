use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use erlink_core::config::{EmbedderKind, IndexKind, PipelineConfig, ScoringMode};
use erlink_core::eval::{benchmark_methods, emit_report, evaluate_retrieval, EvalCorpus, ReportFormat, RetrievalMethod};
use erlink_core::ground_truth::{generate_corpus, read_truth_csv, write_truth_csv, GroundTruthPair};
use erlink_core::pipeline::{self, StageLog};
use erlink_core::record::{parse_records, serialize_all, write_records_csv, Record, RecordFormat, Source};

use crate::{BenchArgs, Cli, Command, EmbedderArg, EvalArgs, FormatArg, GenerateArgs, GroundTruthArgs, IndexArg, InputArgs, MethodArg, ModeArg, ResolveArgs};

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path).context("config stage failed")?,
        None => PipelineConfig::default(),
    };
    cfg.apply_env();
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.paths.out = Some(out);
    }
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("setup stage failed: cannot size the worker pool")?;
    }
    match cli.command {
        Command::Generate(args) => generate(cfg, args),
        Command::Embed(args) => embed(cfg, args),
        Command::GroundTruth(args) => ground_truth(cfg, args),
        Command::Resolve(args) => resolve(cfg, args),
        Command::EvalRetrieval(args) => eval_retrieval(cfg, args),
        Command::Bench(args) => bench(cfg, args),
    }
}

fn log_stage(log: StageLog) {
    if let Ok(line) = serde_json::to_string(&log) {
        eprintln!("{line}");
    }
}

fn out_dir(cfg: &PipelineConfig) -> Result<PathBuf> {
    let dir = cfg.paths.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).with_context(|| format!("emit stage failed: cannot create {}", dir.display()))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("emit stage failed: cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn validate(cfg: &PipelineConfig) -> Result<()> {
    cfg.validate().context("config stage failed")
}

fn generate(mut cfg: PipelineConfig, args: GenerateArgs) -> Result<()> {
    let g = &mut cfg.generate;
    let overrides = [
        (&mut g.distractor_rate, args.distractor_rate),
        (&mut g.typo_rate, args.typo_rate),
        (&mut g.field_drop_rate, args.field_drop_rate),
        (&mut g.case_flip_rate, args.case_flip_rate),
        (&mut g.swap_adjacent_rate, args.swap_adjacent_rate),
    ];
    for (slot, value) in overrides {
        if let Some(v) = value {
            *slot = v;
        }
    }
    g.m = args.m.unwrap_or(g.m);
    g.n = args.n.unwrap_or(g.n);
    validate(&cfg)?;
    let spec = cfg.corpus_spec().context("generate stage failed")?;
    let corpus = generate_corpus(&spec).context("generate stage failed")?;

    let dir = out_dir(&cfg)?;
    let emit = |name: &str, write: &dyn Fn(BufWriter<File>) -> Result<()>| -> Result<()> {
        let path = dir.join(name);
        write(create(&path)?).with_context(|| format!("emit stage failed: writing {}", path.display()))
    };
    emit("refs.csv", &|w| Ok(write_records_csv(w, &corpus.refs)?))?;
    emit("queries.csv", &|w| Ok(write_records_csv(w, &corpus.queries)?))?;
    emit("truth.csv", &|w| Ok(write_truth_csv(w, &corpus.truth)?))?;
    println!(
        "refs={} queries={} truth={} distractors={} out={}",
        corpus.refs.len(),
        corpus.queries.len(),
        corpus.truth.len(),
        corpus.queries.len() - corpus.truth.len(),
        dir.display()
    );
    Ok(())
}

fn apply_input(cfg: &mut PipelineConfig, args: &InputArgs) {
    if let Some(p) = &args.refs {
        cfg.paths.refs = Some(p.clone());
    }
    if let Some(p) = &args.queries {
        cfg.paths.queries = Some(p.clone());
    }
    if let Some(p) = &args.cache_dir {
        cfg.paths.cache_dir = Some(p.clone());
    }
    if let Some(d) = args.dim {
        cfg.embedder.dim = d;
    }
    if let Some(kind) = args.embedder {
        cfg.embedder.kind = match kind {
            EmbedderArg::HashNgram => EmbedderKind::HashNgram,
            EmbedderArg::Tfidf => EmbedderKind::Tfidf,
            EmbedderArg::Remote => EmbedderKind::Remote,
        };
    }
}

/// Configured path, or `default` inside the output directory.
fn input_path(cfg: &PipelineConfig, configured: &Option<PathBuf>, default: &str) -> PathBuf {
    configured.clone().unwrap_or_else(|| {
        cfg.paths
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from("out"))
            .join(default)
    })
}

fn read_records(path: &Path, source: Source, role: &str) -> Result<Vec<Record>> {
    let file = File::open(path).with_context(|| format!("ingest stage failed: cannot open {role} file {}", path.display()))?;
    parse_records(BufReader::new(file), RecordFormat::from_path(path), source)
        .with_context(|| format!("ingest stage failed: cannot parse {role} file {}", path.display()))
}

fn read_truth(path: &Path) -> Result<Vec<GroundTruthPair>> {
    let file = File::open(path).with_context(|| format!("ingest stage failed: cannot open truth file {}", path.display()))?;
    read_truth_csv(BufReader::new(file))
        .with_context(|| format!("ingest stage failed: cannot parse truth file {}", path.display()))
}

fn load_inputs(cfg: &PipelineConfig) -> Result<(Vec<Record>, Vec<Record>)> {
    let refs = read_records(&input_path(cfg, &cfg.paths.refs, "refs.csv"), Source::Reference, "refs")?;
    let queries = read_records(&input_path(cfg, &cfg.paths.queries, "queries.csv"), Source::Query, "queries")?;
    Ok((refs, queries))
}

fn embed(mut cfg: PipelineConfig, args: InputArgs) -> Result<()> {
    apply_input(&mut cfg, &args);
    if cfg.paths.cache_dir.is_none() {
        cfg.paths.cache_dir = Some(out_dir(&cfg)?.join("cache"));
    }
    validate(&cfg)?;
    let (refs, queries) = load_inputs(&cfg)?;
    pipeline::embed_both(&cfg, &refs, &queries, &mut log_stage)?;
    let dir = cfg.paths.cache_dir.as_deref().expect("set above");
    println!("refs={} queries={} cache={}", refs.len(), queries.len(), dir.display());
    Ok(())
}

fn ground_truth(mut cfg: PipelineConfig, args: GroundTruthArgs) -> Result<()> {
    apply_input(&mut cfg, &args.input);
    if let Some(t) = args.threshold {
        cfg.scoring.ground_truth_threshold = t;
    }
    validate(&cfg)?;
    let (refs, queries) = load_inputs(&cfg)?;
    let out = pipeline::ground_truth(&cfg, &refs, &queries, &mut log_stage)?;
    let path = out_dir(&cfg)?.join("ground_truth.csv");
    write_truth_csv(create(&path)?, &out.pairs).with_context(|| format!("emit stage failed: writing {}", path.display()))?;
    println!("pairs={} comparisons={} out={}", out.pairs.len(), out.comparisons, path.display());
    Ok(())
}

fn resolve(mut cfg: PipelineConfig, args: ResolveArgs) -> Result<()> {
    apply_input(&mut cfg, &args.input);
    if let Some(t) = args.truth {
        cfg.paths.truth = Some(t);
    }
    if let Some(k) = args.k {
        cfg.retrieval.k = k;
    }
    if let Some(t) = args.accept_threshold {
        cfg.scoring.accept_threshold = t;
    }
    if let Some(index) = args.index {
        cfg.retrieval.index = match index {
            IndexArg::Flat => IndexKind::Flat,
            IndexArg::Rpforest => IndexKind::Rpforest,
        };
    }
    if let Some(mode) = args.mode {
        cfg.scoring.mode = match mode {
            ModeArg::Fuzzy => ScoringMode::Fuzzy,
            ModeArg::EmbeddingOnly => ScoringMode::EmbeddingOnly,
        };
    }
    validate(&cfg)?;
    let (refs, queries) = load_inputs(&cfg)?;
    let truth = cfg.paths.truth.as_deref().map(read_truth).transpose()?;
    let outcome = pipeline::resolve(&cfg, &refs, &queries, truth.as_deref(), &mut log_stage)?;

    let dir = out_dir(&cfg)?;
    let path = dir.join("decisions.jsonl");
    pipeline::write_decisions_jsonl(create(&path)?, &outcome.decisions)
        .with_context(|| format!("emit stage failed: writing {}", path.display()))?;
    let accepted = outcome.decisions.iter().filter(|d| d.accepted).count();
    println!("decisions={} accepted={} out={}", outcome.decisions.len(), accepted, path.display());
    if let Some(metrics) = outcome.metrics {
        let path = dir.join("metrics.json");
        let mut w = create(&path)?;
        serde_json::to_writer(&mut w, &metrics)
            .map_err(anyhow::Error::from)
            .and_then(|_| Ok(w.write_all(b"\n")?))
            .with_context(|| format!("emit stage failed: writing {}", path.display()))?;
        println!(
            "precision={:.6} recall={:.6} f1={:.6} accuracy={:.6}",
            metrics.precision, metrics.recall, metrics.f1, metrics.accuracy
        );
    }
    Ok(())
}

fn methods(cfg: &PipelineConfig, args: &[MethodArg]) -> Vec<RetrievalMethod> {
    args.iter()
        .map(|m| match m {
            MethodArg::BruteForce => RetrievalMethod::BruteForce,
            MethodArg::Flat => RetrievalMethod::Flat,
            MethodArg::Rpforest => RetrievalMethod::RpForest {
                params: cfg.forest_params(),
                search_budget: cfg.retrieval.search_budget,
            },
            MethodArg::Lexical => RetrievalMethod::Lexical { dim: cfg.embedder.dim },
        })
        .collect()
}

struct EvalInputs {
    refs: Vec<Record>,
    queries: Vec<Record>,
    truth: Vec<GroundTruthPair>,
}

fn eval_inputs(cfg: &mut PipelineConfig, args: &EvalArgs) -> Result<EvalInputs> {
    apply_input(cfg, &args.input);
    if let Some(t) = &args.truth {
        cfg.paths.truth = Some(t.clone());
    }
    validate(cfg)?;
    let (refs, queries) = load_inputs(cfg)?;
    let truth = read_truth(&input_path(cfg, &cfg.paths.truth, "truth.csv"))?;
    Ok(EvalInputs { refs, queries, truth })
}

fn format_of(arg: FormatArg) -> (ReportFormat, &'static str) {
    match arg {
        FormatArg::Csv => (ReportFormat::Csv, "csv"),
        FormatArg::Jsonl => (ReportFormat::Jsonl, "jsonl"),
    }
}

fn eval_retrieval(mut cfg: PipelineConfig, args: EvalArgs) -> Result<()> {
    let inputs = eval_inputs(&mut cfg, &args)?;
    let corpus = EvalCorpus {
        refs: &inputs.refs,
        queries: &inputs.queries,
        truth: &inputs.truth,
    };
    let weights = cfg.weights()?;
    let provider = cfg.embedder(&serialize_all(&inputs.refs)).context("embed stage failed")?;
    let mut results = Vec::new();
    for method in methods(&cfg, &args.methods) {
        let r = evaluate_retrieval(&method, &corpus, provider.as_ref(), &weights, &args.k_list)
            .with_context(|| format!("eval-retrieval stage failed for {}", method.tag()))?;
        log_stage(StageLog {
            stage: "eval-retrieval",
            wall_ms: r.wall_time.as_secs_f64() * 1e3,
            counters: [("comparisons", r.comparisons_total)].into_iter().collect(),
        });
        results.push(r);
    }
    let (format, ext) = format_of(args.format);
    let path = out_dir(&cfg)?.join(format!("retrieval.{ext}"));
    emit_report(&results, &path, format).with_context(|| format!("emit stage failed: writing {}", path.display()))?;
    for r in &results {
        let recalls: Vec<String> = r.per_k.iter().map(|(k, v)| format!("R@{k}={v:.4}")).collect();
        println!("{} {}", r.method_tag, recalls.join(" "));
    }
    println!("out={}", path.display());
    Ok(())
}

fn bench(mut cfg: PipelineConfig, args: BenchArgs) -> Result<()> {
    let mut method_args = args.eval.methods.clone();
    if !method_args.contains(&MethodArg::BruteForce) {
        method_args.insert(0, MethodArg::BruteForce);
    }
    let inputs = eval_inputs(&mut cfg, &args.eval)?;
    let corpus = EvalCorpus {
        refs: &inputs.refs,
        queries: &inputs.queries,
        truth: &inputs.truth,
    };
    let weights = cfg.weights()?;
    let provider = cfg.embedder(&serialize_all(&inputs.refs)).context("embed stage failed")?;
    let methods = methods(&cfg, &method_args);
    let results = benchmark_methods(&corpus, &methods, provider.as_ref(), &weights, &args.eval.k_list, args.repetitions)
        .context("bench stage failed")?;
    let (format, ext) = format_of(args.eval.format);
    let path = out_dir(&cfg)?.join(format!("bench.{ext}"));
    emit_report(&results, &path, format).with_context(|| format!("emit stage failed: writing {}", path.display()))?;
    for r in &results {
        println!(
            "{:<40} ratio={:>8.2} wall_ms={:>10.3} comparisons={}",
            r.method_tag,
            r.time_ratio.unwrap_or(f64::NAN),
            r.wall_time.as_secs_f64() * 1e3,
            r.comparisons_total
        );
    }
    println!("out={}", path.display());
    Ok(())
}
