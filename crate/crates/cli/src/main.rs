//! `sentalign` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use sentalign::io::{self, Dtype};
use sentalign::metrics::{avg_pair_cosine, sts_eval};
use sentalign::solvers::{self, FitRequest, LeastSquaresSolver, SgdConfig, SgdInit};
use sentalign::synth::{self, MapKind, SynthSpec};
use sentalign::{
    stack_pooled, AlignmentReport, EmbeddingMatrix, Error, ParallelCorpus, Preprocess,
    TokenEmbeddingMatrix,
};

#[derive(Debug, Parser)]
#[command(
    name = "sentalign",
    version,
    about = "Cross-lingual sentence-embedding alignment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Mean-pool token-embedding matrices into one sentence embedding each.
    Pool(PoolArgs),
    /// Fit a source-to-target projection.
    Fit(FitArgs),
    /// Multiply embeddings by a projection.
    Apply(ApplyArgs),
    /// Average cosine of translated pairs, optionally after projection.
    EvalAlign(EvalAlignArgs),
    /// Cross-lingual STS correlation against gold scores.
    EvalSts(EvalStsArgs),
    /// Generate a synthetic parallel corpus with a planted map.
    Synth(SynthArgs),
    /// Write 2-D PCA coordinates for plotting.
    #[command(name = "export-2d")]
    Export2d(Export2dArgs),
    /// Compare two matrices element-wise.
    Diff(DiffArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DtypeArg {
    F32,
    F64,
}

impl From<DtypeArg> for Dtype {
    fn from(d: DtypeArg) -> Self {
        match d {
            DtypeArg::F32 => Dtype::F32,
            DtypeArg::F64 => Dtype::F64,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Lsq,
    Procrustes,
    Sgd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MapArg {
    Orthogonal,
    General,
    Identity,
}

impl From<MapArg> for MapKind {
    fn from(m: MapArg) -> Self {
        match m {
            MapArg::Orthogonal => MapKind::Orthogonal,
            MapArg::General => MapKind::General,
            MapArg::Identity => MapKind::Identity,
        }
    }
}

#[derive(Debug, Args)]
struct PoolArgs {
    /// Token matrices (SEMB, or TSV when the name ends in .tsv), one per sentence.
    #[arg(long, num_args = 1.., required = true)]
    tokens: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "f32")]
    dtype: DtypeArg,
}

/// Source/target either given directly or through a pair manifest.
#[derive(Debug, Args)]
struct CorpusArgs {
    #[arg(long, requires = "target", conflicts_with = "manifest")]
    source: Option<PathBuf>,
    #[arg(long, requires = "source", conflicts_with = "manifest")]
    target: Option<PathBuf>,
    /// JSON pair manifest instead of --source/--target.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    out: PathBuf,
    /// Ridge λ for least squares; a positive value selects the Gram solver.
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    /// Least squares through Cholesky of the Gram matrix even at λ = 0.
    #[arg(long)]
    gram: bool,
    #[arg(long, default_value_t = sentalign::linalg::DEFAULT_RCOND)]
    rcond: f64,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gaussian initialization with this standard deviation instead of zeros.
    #[arg(long)]
    init_sigma: Option<f64>,
    /// Subtract column means from source and target before fitting.
    #[arg(long)]
    center: bool,
    /// Scale rows to unit norm before fitting.
    #[arg(long)]
    unit_norm: bool,
    #[arg(long, value_enum, default_value = "f32")]
    dtype: DtypeArg,
}

#[derive(Debug, Args)]
struct ApplyArgs {
    #[arg(long)]
    proj: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "f32")]
    dtype: DtypeArg,
}

#[derive(Debug, Args)]
struct EvalAlignArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    proj: Option<PathBuf>,
    #[arg(long)]
    report: PathBuf,
    /// Include every pair's cosine in the report.
    #[arg(long)]
    per_pair: bool,
}

#[derive(Debug, Args)]
struct EvalStsArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Gold scores, one per line; optional when the manifest lists them.
    #[arg(long)]
    gold: Option<PathBuf>,
    #[arg(long)]
    proj: Option<PathBuf>,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    per_pair: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, value_enum)]
    map: MapArg,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    source_scale: f64,
    /// Writes <prefix>.source.semb, .target.semb, .map.semb and .manifest.json.
    #[arg(long)]
    out_prefix: PathBuf,
    #[arg(long, value_enum, default_value = "f32")]
    dtype: DtypeArg,
}

#[derive(Debug, Args)]
struct Export2dArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DiffArgs {
    a: PathBuf,
    b: PathBuf,
    /// Exit with a data error when the Frobenius distance exceeds this.
    #[arg(long)]
    max_frobenius: Option<f64>,
}

enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else if matches!(e, Error::InvalidParameter(_)) {
            Failure::Usage(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

type CmdResult = Result<(), Failure>;

fn read_matrix_any(path: &Path) -> Result<EmbeddingMatrix, Error> {
    if path.extension().is_some_and(|e| e == "tsv") {
        io::read_tsv_matrix(path)
    } else {
        io::read_semb(path)
    }
}

fn load_corpus(args: &CorpusArgs) -> Result<(ParallelCorpus, Option<sentalign::StsGold>), Failure> {
    match (&args.manifest, &args.source, &args.target) {
        (Some(m), _, _) => Ok(io::load_manifest(m)?),
        (None, Some(s), Some(t)) => {
            let corpus = ParallelCorpus::unlabeled(io::read_semb(s)?, io::read_semb(t)?)?;
            Ok((corpus, None))
        }
        _ => Err(Failure::Usage(
            "either --manifest or both --source and --target are required".into(),
        )),
    }
}

fn timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        })
}

fn finish_report(mut report: AlignmentReport, path: &Path, per_pair: bool) -> CmdResult {
    if !per_pair {
        report.per_pair_cosine = None;
    }
    report.timestamp_unix = Some(timestamp());
    io::write_report_json(&report, path)?;
    eprintln!(
        "{}: {} pairs, avg cosine {:.6}",
        report.method, report.n_pairs, report.avg_cosine
    );
    if let (Some(s), Some(p)) = (report.spearman_percent(), report.pearson_percent()) {
        eprintln!("spearman {s:.2} (pearson {p:.2})");
    }
    Ok(())
}

fn cmd_pool(args: PoolArgs) -> CmdResult {
    let mats = args
        .tokens
        .iter()
        .map(|p| read_matrix_any(p).map(TokenEmbeddingMatrix::from))
        .collect::<Result<Vec<_>, _>>()?;
    let pooled = stack_pooled(&mats)?;
    io::write_semb(pooled.as_matrix(), &args.out, args.dtype.into())?;
    eprintln!(
        "pooled {} sentences of dimension {}",
        pooled.rows(),
        pooled.cols()
    );
    Ok(())
}

fn cmd_fit(args: FitArgs) -> CmdResult {
    let (corpus, _) = load_corpus(&args.corpus)?;
    let request = match args.method {
        MethodArg::Lsq if args.gram || args.ridge != 0.0 => {
            FitRequest::LeastSquares(LeastSquaresSolver::Gram { ridge: args.ridge })
        }
        MethodArg::Lsq => FitRequest::LeastSquares(LeastSquaresSolver::Pinv { rcond: args.rcond }),
        MethodArg::Procrustes => FitRequest::Procrustes,
        MethodArg::Sgd => FitRequest::Sgd(SgdConfig {
            learning_rate: args.lr,
            epochs: args.epochs,
            batch_size: args.batch,
            tol: args.tol,
            seed: args.seed,
            init: args
                .init_sigma
                .map_or(SgdInit::Zeros, |sigma| SgdInit::Gaussian { sigma }),
        }),
    };
    let preprocess = Preprocess {
        center: args.center,
        unit_norm: args.unit_norm,
    };
    eprintln!(
        "fitting {:?} on {} pairs, dimension {}",
        args.method,
        corpus.len(),
        corpus.dim()
    );
    let proj = solvers::fit(&corpus, &request, preprocess)?;
    io::write_projection(&proj, &args.out, args.dtype.into())?;
    let diag = json!({
        "method": proj.method().as_str(),
        "dim": proj.dim(),
        "n_pairs": corpus.len(),
        "meta": proj.meta,
    });
    println!("{diag}");
    Ok(())
}

fn cmd_apply(args: ApplyArgs) -> CmdResult {
    let proj = io::read_projection(&args.proj)?;
    let input = io::read_semb(&args.input)?;
    let prepared = proj.meta.preprocess.apply(&input)?;
    let out = solvers::apply_projection(&proj, &prepared)?;
    io::write_semb(out.as_matrix(), &args.out, args.dtype.into())?;
    eprintln!("projected {} rows", out.rows());
    Ok(())
}

fn cmd_eval_align(args: EvalAlignArgs) -> CmdResult {
    let (corpus, _) = load_corpus(&args.corpus)?;
    let proj = args.proj.as_ref().map(io::read_projection).transpose()?;
    let report = avg_pair_cosine(&corpus, proj.as_ref())?;
    finish_report(report, &args.report, args.per_pair)
}

fn cmd_eval_sts(args: EvalStsArgs) -> CmdResult {
    let (corpus, manifest_gold) = load_corpus(&args.corpus)?;
    let gold = match (&args.gold, manifest_gold) {
        (Some(path), _) => io::read_gold_tsv(path)?,
        (None, Some(g)) => g,
        (None, None) => return Err(Failure::Usage("--gold is required".into())),
    };
    let proj = args.proj.as_ref().map(io::read_projection).transpose()?;
    let report = sts_eval(&corpus, &gold, proj.as_ref())?;
    finish_report(report, &args.report, args.per_pair)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_synth(args: SynthArgs) -> CmdResult {
    let spec = SynthSpec {
        n: args.n,
        d: args.d,
        map_kind: args.map.into(),
        noise_sigma: args.noise,
        seed: args.seed,
        source_scale: args.source_scale,
    };
    let (corpus, true_map) = synth::generate(&spec)?;
    let dtype = args.dtype.into();
    let source = with_suffix(&args.out_prefix, ".source.semb");
    let target = with_suffix(&args.out_prefix, ".target.semb");
    let map = with_suffix(&args.out_prefix, ".map.semb");
    io::write_semb(corpus.source().as_matrix(), &source, dtype)?;
    io::write_semb(corpus.target().as_matrix(), &target, dtype)?;
    io::write_semb(&true_map, &map, dtype)?;
    let file_name = |p: &Path| PathBuf::from(p.file_name().expect("prefix has a file name"));
    let manifest = io::PairManifest {
        source_path: file_name(&source),
        target_path: file_name(&target),
        source_lang: corpus.source_lang.clone(),
        target_lang: corpus.target_lang.clone(),
        gold_path: None,
        notes: serde_json::to_string(&spec).expect("spec serializes"),
    };
    io::write_manifest(&manifest, with_suffix(&args.out_prefix, ".manifest.json"))?;
    eprintln!(
        "wrote {} pairs of dimension {} ({} map)",
        spec.n, spec.d, spec.map_kind
    );
    Ok(())
}

fn cmd_export_2d(args: Export2dArgs) -> CmdResult {
    let m = read_matrix_any(&args.input)?;
    io::export_2d(&m, &args.out)?;
    eprintln!("exported {} points", m.rows());
    Ok(())
}

fn cmd_diff(args: DiffArgs) -> CmdResult {
    let (_, a) = io::read_semb_raw(&args.a)?;
    let (_, b) = io::read_semb_raw(&args.b)?;
    if a.shape() != b.shape() {
        return Err(Failure::Data(format!(
            "shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let delta = &a - &b;
    let frob = delta.norm();
    println!("{}", json!({ "frobenius": frob, "max_abs": delta.amax() }));
    match args.max_frobenius {
        Some(limit) if frob > limit => Err(Failure::Data(format!(
            "Frobenius distance {frob:.3e} exceeds {limit:.3e}"
        ))),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Pool(a) => cmd_pool(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Apply(a) => cmd_apply(a),
        Command::EvalAlign(a) => cmd_eval_align(a),
        Command::EvalSts(a) => cmd_eval_sts(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Export2d(a) => cmd_export_2d(a),
        Command::Diff(a) => cmd_diff(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
