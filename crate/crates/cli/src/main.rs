//! molgen: run the active-learning molecular generation loop, or any one
//! of its stages, from the shell. Exit codes: 0 success, 2 invalid
//! input or configuration, 3 stage failure.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use molgen_core::clustering::{kmeans_restarts, select_clustering, Clustering};
use molgen_core::descriptors::{compute_mqn, DescriptorVector, MQN_LEN, MQN_SCHEMA};
use molgen_core::filters::default_motifs;
use molgen_core::generator::{
    generate_unique, Checkpoint, GenerationRequest, GeneratorError, GeneratorModel,
};
use molgen_core::pipeline::{
    finetune_generator, load_checkpoint, prepare_corpus, pretrain_generator, read_score_records,
    read_smiles_lines, report as run_report, run_loop, summarize_scores, write_score_records,
    write_smiles_lines, IterationStats, LoopMode, PipelineError, RunConfig, ScoreSource,
};
use molgen_core::proxy::{project, PcaModel, ProxyPoint};
use molgen_core::sampling::{assemble_al_set, SamplingMethod};
use molgen_core::scoring::{ingest_fingerprints, synthetic_oracle, OracleConfig, WeightTable};
use molgen_core::smiles::parse_smiles;
use molgen_core::{ScoreRecord, Vocabulary};

#[derive(Parser)]
#[command(
    name = "molgen",
    version,
    about = "Active-learning engine for goal-directed molecular generation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Canonicalize a corpus, build its vocabulary, and pretrain a generator
    Pretrain(PretrainArgs),
    /// Sample unique, filtered molecules from a checkpoint
    Generate(GenerateArgs),
    /// Compute graph-count descriptors for a molecule file
    Descriptors(DescriptorsArgs),
    /// K-means cluster descriptor or coordinate rows with restarts
    Cluster(ClusterArgs),
    /// Score molecules with the oracle or ingest a fingerprint table
    Score(ScoreArgs),
    /// Assemble the replica-plus-sampled fine-tuning set from scores
    BuildAlSet(BuildAlSetArgs),
    /// Fine-tune a checkpoint on a training set
    Finetune(FinetuneArgs),
    /// Run the full closed loop into a run directory
    RunLoop(RunLoopArgs),
    /// Summarize a run directory into CSV report tables
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Complete,
    Uniform,
    Naive,
}

impl From<ModeArg> for LoopMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Complete => LoopMode::Complete,
            ModeArg::Uniform => LoopMode::Uniform,
            ModeArg::Naive => LoopMode::Naive,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum MethodArg {
    Uniform,
    Linear,
    Softsub,
    Softdiv,
}

#[derive(Args)]
struct ConfigOpts {
    /// JSON run configuration; defaults to the desk preset
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override the configured rng seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the loop mode
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Override the cluster-to-fraction conversion method
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Softdiv divisor factor; implies --method softdiv
    #[arg(long)]
    divf: Option<f64>,
}

impl ConfigOpts {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => {
                let file = File::open(path)
                    .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
                serde_json::from_reader(BufReader::new(file))
                    .map_err(|e| invalid(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::desk(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(mode) = self.mode {
            config.mode = mode.into();
        }
        match (self.method, self.divf) {
            (Some(MethodArg::Softdiv), divf) => {
                let fallback = match config.method {
                    SamplingMethod::Softdiv { divf } => divf,
                    _ => 1.0,
                };
                config.method = SamplingMethod::Softdiv {
                    divf: divf.unwrap_or(fallback),
                };
            }
            (Some(_), Some(_)) => {
                return Err(invalid("--divf applies only to --method softdiv"))
            }
            (Some(MethodArg::Uniform), None) => config.method = SamplingMethod::Uniform,
            (Some(MethodArg::Linear), None) => config.method = SamplingMethod::Linear,
            (Some(MethodArg::Softsub), None) => config.method = SamplingMethod::Softsub,
            (None, Some(divf)) => config.method = SamplingMethod::Softdiv { divf },
            (None, None) => {}
        }
        config.validate()?;
        Ok(config)
    }
}

struct CliError {
    code: i32,
    message: String,
}

fn invalid(message: impl std::fmt::Display) -> CliError {
    CliError {
        code: 2,
        message: message.to_string(),
    }
}

fn failed(message: impl std::fmt::Display) -> CliError {
    CliError {
        code: 3,
        message: message.to_string(),
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::Config(_) | PipelineError::MissingArtifact(_) => 2,
            _ => 3,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        failed(e)
    }
}

fn generator_error(e: GeneratorError) -> CliError {
    match e {
        GeneratorError::InvalidConfig(_) | GeneratorError::EmptyCorpus => invalid(e),
        other => failed(other),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Pretrain(args) => pretrain(args),
        Command::Generate(args) => generate(args),
        Command::Descriptors(args) => descriptors(args),
        Command::Cluster(args) => cluster(args),
        Command::Score(args) => score(args),
        Command::BuildAlSet(args) => build_al_set(args),
        Command::Finetune(args) => finetune(args),
        Command::RunLoop(args) => run_loop_cmd(args),
        Command::Report(args) => report_cmd(args),
    }
}

fn read_vocab(path: &Path) -> Result<Vocabulary, CliError> {
    let file = File::open(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn read_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let file = File::open(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn write_json_file<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(failed)?;
    w.flush()?;
    Ok(())
}

fn write_checkpoint(path: &Path, model: &GeneratorModel, vocab: &Vocabulary) -> Result<(), CliError> {
    let ckpt = Checkpoint::new(model.clone(), vocab);
    let mut w = BufWriter::new(File::create(path)?);
    ckpt.to_writer(&mut w).map_err(failed)?;
    w.flush()?;
    Ok(())
}

fn backend_name(model: &GeneratorModel) -> &'static str {
    match model {
        GeneratorModel::Gpt(_) => "transformer",
        GeneratorModel::Markov(_) => "markov",
    }
}

/// Rows of a points CSV: an optional header, then a label column (kept
/// when non-numeric) followed by numeric fields.
fn read_points_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let file = File::open(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let mut labels = Vec::new();
    let mut rows = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        let (label, numeric) = match fields[0].parse::<f64>() {
            Ok(_) => (rows.len().to_string(), &fields[..]),
            Err(_) => (fields[0].to_string(), &fields[1..]),
        };
        let values: Result<Vec<f64>, _> = numeric.iter().map(|f| f.parse::<f64>()).collect();
        match values {
            Ok(v) if !v.is_empty() => {
                labels.push(label);
                rows.push(v);
            }
            _ if lineno == 0 => {} // header
            _ => {
                return Err(invalid(format!(
                    "{}:{}: expected numeric fields",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    if rows.is_empty() {
        return Err(invalid(format!("{}: no data rows", path.display())));
    }
    Ok((labels, rows))
}

/// Interpret rows as descriptors when a PCA basis is given (projecting
/// them), or as ready proxy coordinates otherwise.
fn resolve_points(rows: Vec<Vec<f64>>, pca: Option<&Path>) -> Result<Vec<Vec<f64>>, CliError> {
    match pca {
        None => Ok(rows),
        Some(path) => {
            let model: PcaModel = read_json_file(path)?;
            rows.into_iter()
                .map(|row| {
                    let v = DescriptorVector::new(row, MQN_SCHEMA).map_err(invalid)?;
                    project(&model, &v)
                        .map(|p| p.coordinates)
                        .map_err(invalid)
                })
                .collect()
        }
    }
}

fn print_score_summary(records: &[ScoreRecord], threshold: f64) {
    let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
    if let Some(s) = summarize_scores(&scores, threshold) {
        println!(
            "{} scored: {:.1}% >= {threshold}, mean {:.3}, max {:.3}",
            records.len(),
            s.percent_above,
            s.mean,
            s.max
        );
    }
}

#[derive(Args)]
struct PretrainArgs {
    /// Training molecules, one SMILES per line
    #[arg(long, value_name = "FILE")]
    corpus: PathBuf,
    /// Output directory for checkpoint, vocab.json and corpus.smi
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigOpts,
}

fn pretrain(args: PretrainArgs) -> Result<(), CliError> {
    let config = args.cfg.resolve()?;
    let corpus = read_smiles_lines(&args.corpus)?;
    let bundle = prepare_corpus(&corpus, config.vocab_min_count)?;
    std::fs::create_dir_all(&args.out)?;
    write_json_file(&args.out.join("vocab.json"), &bundle.vocab)?;
    write_smiles_lines(&args.out.join("corpus.smi"), &bundle.canonical)?;
    let model = pretrain_generator(
        &config,
        &bundle.vocab,
        bundle.block,
        &bundle.frames,
        config.seed,
        Some(&args.out.join("pretrain_loss.csv")),
    )?;
    write_checkpoint(&args.out.join("checkpoint"), &model, &bundle.vocab)?;
    println!(
        "pretrained {} generator on {} molecules: vocab {}, block {}",
        backend_name(&model),
        bundle.frames.len(),
        bundle.vocab.len(),
        bundle.block
    );
    Ok(())
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator checkpoint to sample from
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Vocabulary the checkpoint was trained with
    #[arg(long, value_name = "FILE")]
    vocab: PathBuf,
    /// Output SMILES file
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Unique molecules to produce (default: configured per-iteration count)
    #[arg(long)]
    count: Option<usize>,
    /// Sampling temperature (0 = greedy)
    #[arg(long)]
    temperature: Option<f64>,
    /// Attempt budget; 0 means 50x the target
    #[arg(long)]
    max_attempts: Option<usize>,
    /// Skip the property-window filter
    #[arg(long)]
    no_admet: bool,
    /// Skip the flagged-motif filter
    #[arg(long)]
    no_motifs: bool,
    #[command(flatten)]
    cfg: ConfigOpts,
}

fn generate(args: GenerateArgs) -> Result<(), CliError> {
    let config = args.cfg.resolve()?;
    let vocab = read_vocab(&args.vocab)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    ckpt.verify_vocab(&vocab).map_err(invalid)?;
    let mut request = GenerationRequest::new(args.count.unwrap_or(config.molecules_per_iteration));
    request.temperature = args.temperature.unwrap_or(config.temperature);
    request.max_attempts = args.max_attempts.unwrap_or(config.max_attempts);
    request.apply_admet = config.apply_admet && !args.no_admet;
    request.apply_motifs = config.apply_motifs && !args.no_motifs;
    let motifs = if request.apply_motifs {
        default_motifs()
    } else {
        &[]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let outcome = generate_unique(&ckpt.model, &vocab, &request, &config.admet, motifs, &mut rng)
        .map_err(generator_error)?;
    write_smiles_lines(&args.out, &outcome.unique)?;
    println!(
        "{} unique molecules in {} attempts (validity {:.3}, uniqueness {:.3}){}",
        outcome.unique.len(),
        outcome.stats.attempts,
        outcome.stats.validity,
        outcome.stats.uniqueness,
        if outcome.reached_target {
            ""
        } else {
            "; attempt budget exhausted before the target"
        }
    );
    Ok(())
}

#[derive(Args)]
struct DescriptorsArgs {
    /// Molecules to describe, one SMILES per line
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Output CSV: smiles plus one column per descriptor
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

fn descriptors(args: DescriptorsArgs) -> Result<(), CliError> {
    let molecules = read_smiles_lines(&args.input)?;
    let mut w = BufWriter::new(File::create(&args.out)?);
    write!(w, "smiles")?;
    for i in 1..=MQN_LEN {
        write!(w, ",mqn{i:02}")?;
    }
    writeln!(w)?;
    let mut written = 0usize;
    let mut skipped = 0usize;
    for s in &molecules {
        match parse_smiles(s) {
            Ok(mol) => {
                write!(w, "{s}")?;
                for v in compute_mqn(&mol).values() {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
                written += 1;
            }
            Err(e) => {
                eprintln!("skipping {s}: {e}");
                skipped += 1;
            }
        }
    }
    w.flush()?;
    if written == 0 {
        return Err(invalid(format!(
            "{}: no parseable molecules",
            args.input.display()
        )));
    }
    println!("wrote {written} descriptor rows ({skipped} skipped)");
    Ok(())
}

#[derive(Args)]
struct ClusterArgs {
    /// Points CSV: descriptor rows, or proxy coordinates without --pca
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// PCA basis JSON; when given, rows are projected before clustering
    #[arg(long, value_name = "FILE")]
    pca: Option<PathBuf>,
    /// Cluster count (default: configured k)
    #[arg(long)]
    k: Option<usize>,
    /// Restarts of the whole fit (default: configured restarts)
    #[arg(long)]
    restarts: Option<usize>,
    /// Output clustering JSON
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigOpts,
}

fn cluster(args: ClusterArgs) -> Result<(), CliError> {
    let config = args.cfg.resolve()?;
    let (_, rows) = read_points_csv(&args.input)?;
    let points = resolve_points(rows, args.pca.as_deref())?;
    let k = args.k.unwrap_or(config.k);
    let restarts = args.restarts.unwrap_or(config.restarts);
    let candidates = kmeans_restarts(&points, k, restarts, config.seed).map_err(invalid)?;
    let best = select_clustering(&candidates);
    write_json_file(&args.out, best)?;
    let sizes = best.cluster_sizes();
    println!(
        "clustered {} points into k={k}: inertia {:.4}, sizes {}..{}",
        points.len(),
        best.inertia,
        sizes.iter().min().unwrap(),
        sizes.iter().max().unwrap()
    );
    Ok(())
}

#[derive(Args)]
struct ScoreArgs {
    /// Labeled points CSV to score with the synthetic oracle
    #[arg(long, value_name = "FILE")]
    points: Option<PathBuf>,
    /// Interaction-fingerprint CSV to ingest instead
    #[arg(long, value_name = "FILE")]
    fingerprints: Option<PathBuf>,
    /// PCA basis JSON for projecting descriptor rows first
    #[arg(long, value_name = "FILE")]
    pca: Option<PathBuf>,
    /// Clustering JSON to tag records with a cluster of origin
    #[arg(long, value_name = "FILE")]
    clustering: Option<PathBuf>,
    /// Output scores CSV
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigOpts,
}

fn score(args: ScoreArgs) -> Result<(), CliError> {
    let config = args.cfg.resolve()?;
    let records = match (&args.points, &args.fingerprints) {
        (Some(points), None) => score_points(&args, &config, points)?,
        (None, Some(fingerprints)) => {
            let file = File::open(fingerprints)
                .map_err(|e| invalid(format!("{}: {e}", fingerprints.display())))?;
            let ingest = ingest_fingerprints(BufReader::new(file), &WeightTable::default())
                .map_err(invalid)?;
            for (label, reason) in &ingest.rejects {
                eprintln!("rejected {label}: {reason}");
            }
            if !ingest.collisions.is_empty() {
                eprintln!(
                    "{} duplicate molecules collapsed to their best score",
                    ingest.collisions.len()
                );
            }
            if ingest.records.is_empty() {
                return Err(invalid(format!(
                    "{}: no usable fingerprint rows",
                    fingerprints.display()
                )));
            }
            ingest.records
        }
        _ => return Err(invalid("pass exactly one of --points or --fingerprints")),
    };
    write_score_records(&args.out, &records)?;
    print_score_summary(&records, config.threshold);
    Ok(())
}

fn score_points(
    args: &ScoreArgs,
    config: &RunConfig,
    points_path: &Path,
) -> Result<Vec<ScoreRecord>, CliError> {
    let oracle: OracleConfig = match &config.score_source {
        ScoreSource::Oracle { config } => config.clone(),
        ScoreSource::Ingest { .. } => {
            return Err(invalid(
                "the configured score source is fingerprint ingest; pass --fingerprints \
                 or configure the oracle",
            ))
        }
    };
    let (labels, rows) = read_points_csv(points_path)?;
    let points = resolve_points(rows, args.pca.as_deref())?;
    let clusters: Option<Clustering> = args
        .clustering
        .as_deref()
        .map(read_json_file)
        .transpose()?;
    if let Some(c) = &clusters {
        if c.assignments.len() != points.len() {
            return Err(invalid(format!(
                "clustering assigns {} points but {} were given",
                c.assignments.len(),
                points.len()
            )));
        }
    }
    Ok(labels
        .into_iter()
        .zip(points)
        .enumerate()
        .map(|(i, (smiles, coordinates))| {
            let score = synthetic_oracle(&ProxyPoint { coordinates }, &oracle);
            ScoreRecord {
                smiles,
                cluster: clusters.as_ref().map(|c| c.assignments[i]),
                fingerprint: None,
                score,
            }
        })
        .collect())
}

#[derive(Args)]
struct BuildAlSetArgs {
    /// Scores CSV from the score stage
    #[arg(long, value_name = "FILE")]
    scores: PathBuf,
    /// Clustering JSON (required except in naive mode)
    #[arg(long, value_name = "FILE")]
    clustering: Option<PathBuf>,
    /// Candidate pool, aligned line-by-line with the clustering assignments
    #[arg(long, value_name = "FILE")]
    pool: PathBuf,
    /// Output SMILES file, replica part first
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigOpts,
}

fn build_al_set(args: BuildAlSetArgs) -> Result<(), CliError> {
    let config = args.cfg.resolve()?;
    let records = read_score_records(&args.scores)?;
    let pool = read_smiles_lines(&args.pool)?;
    let method = match config.mode {
        LoopMode::Complete => Some(config.method),
        LoopMode::Uniform => Some(SamplingMethod::Uniform),
        LoopMode::Naive => None,
    };
    let clustering: Clustering = match (&args.clustering, method) {
        (Some(path), _) => read_json_file(path)?,
        (None, None) => Clustering {
            k: 0,
            centroids: Vec::new(),
            assignments: Vec::new(),
            inertia: 0.0,
            size_variance: 0.0,
        },
        (None, Some(_)) => {
            return Err(invalid("--clustering is required unless --mode naive"))
        }
    };
    if method.is_some() && clustering.assignments.len() != pool.len() {
        return Err(invalid(format!(
            "the pool has {} molecules but the clustering assigns {}",
            pool.len(),
            clustering.assignments.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let al = assemble_al_set(
        &records,
        config.threshold,
        &clustering,
        &pool,
        method,
        config.replica_floor,
        config.sample_target,
        &mut rng,
    )
    .map_err(invalid)?;
    write_smiles_lines(&args.out, &al.molecules)?;
    let sampled = al.molecules.len() - al.passer_count * al.replica_multiplier;
    println!(
        "AL set: {} molecules = {} passers x{} replicas + {} sampled{}",
        al.molecules.len(),
        al.passer_count,
        al.replica_multiplier,
        sampled,
        if al.fell_back_to_uniform {
            " (uniform fallback)"
        } else {
            ""
        }
    );
    Ok(())
}

#[derive(Args)]
struct FinetuneArgs {
    /// Checkpoint to start from
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    /// Vocabulary the checkpoint was trained with
    #[arg(long, value_name = "FILE")]
    vocab: PathBuf,
    /// Training set, used verbatim (replicas count)
    #[arg(long = "al-set", value_name = "FILE")]
    al_set: PathBuf,
    /// Output checkpoint
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Optional per-step loss trace CSV (transformer backend)
    #[arg(long, value_name = "FILE")]
    loss_csv: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigOpts,
}

fn finetune(args: FinetuneArgs) -> Result<(), CliError> {
    let config = args.cfg.resolve()?;
    let vocab = read_vocab(&args.vocab)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    ckpt.verify_vocab(&vocab).map_err(invalid)?;
    let mut model = ckpt.model;
    let block = model.block_size();
    let set = read_smiles_lines(&args.al_set)?;
    let (loss, skipped) = finetune_generator(
        &mut model,
        &set,
        &vocab,
        block,
        &config,
        config.seed,
        args.loss_csv.as_deref(),
    )?;
    write_checkpoint(&args.out, &model, &vocab)?;
    match loss {
        Some(loss) => println!(
            "fine-tuned on {} sequences ({skipped} skipped), final loss {loss:.4}",
            set.len() - skipped
        ),
        None => println!(
            "refit {} backend on {} sequences ({skipped} skipped)",
            backend_name(&model),
            set.len() - skipped
        ),
    }
    Ok(())
}

#[derive(Args)]
struct RunLoopArgs {
    /// Pretraining corpus, one SMILES per line
    #[arg(long, value_name = "FILE")]
    corpus: PathBuf,
    /// Run directory (created; reused to resume)
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Override the configured iteration count
    #[arg(long)]
    iterations: Option<usize>,
    #[command(flatten)]
    cfg: ConfigOpts,
}

fn iteration_line(stats: &IterationStats, threshold: f64) -> String {
    format!(
        "iter {}: generated {}, scored {}, {:.1}% >= {threshold}, mean {:.2}, max {:.2}, al {}",
        stats.iteration,
        stats.unique_generated,
        stats.scored,
        stats.summary.percent_above,
        stats.summary.mean,
        stats.summary.max,
        stats.al_set_size
    )
}

fn run_loop_cmd(args: RunLoopArgs) -> Result<(), CliError> {
    let mut config = args.cfg.resolve()?;
    if let Some(iterations) = args.iterations {
        config.iterations = iterations;
        config.validate()?;
    }
    let corpus = read_smiles_lines(&args.corpus)?;
    let outcome = run_loop(&args.out, &config, &corpus)?;
    if outcome.resumed > 0 {
        println!("resumed {} completed iterations", outcome.resumed);
    }
    for stats in &outcome.stats {
        println!("{}", iteration_line(stats, config.threshold));
    }
    let first = &outcome.stats.first().unwrap().summary;
    let last = &outcome.stats.last().unwrap().summary;
    println!(
        "pass rate {:.1}% -> {:.1}% over {} iterations",
        first.percent_above,
        last.percent_above,
        config.iterations
    );
    Ok(())
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory to summarize
    #[arg(long, value_name = "DIR")]
    run: PathBuf,
    /// Reference molecules for a per-iteration similarity table
    #[arg(long, value_name = "FILE")]
    references: Option<PathBuf>,
}

fn report_cmd(args: ReportArgs) -> Result<(), CliError> {
    let references = args
        .references
        .as_deref()
        .map(read_smiles_lines)
        .transpose()?;
    let files = run_report(&args.run, references.as_deref())?;
    print!("{}", std::fs::read_to_string(&files.table)?);
    println!("covered {} iterations; wrote:", files.iterations);
    for path in [
        Some(&files.table),
        Some(&files.score_histogram),
        Some(&files.cluster_sizes),
        Some(&files.generation),
        files.similarity.as_ref(),
    ]
    .into_iter()
    .flatten()
    {
        println!("  {}", path.display());
    }
    Ok(())
}
