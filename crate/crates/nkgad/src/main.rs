//! Command-line interface: train/score/eval on GraphBundle directories plus
//! the anomaly-injection and spectral/similarity diagnostic commands.
//!
//! Exit codes: 0 success, 1 usage or parse failure, 2 numeric failure.
//! Data goes to stdout or `--out`; diagnostics go to stderr.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nkgad::error::{NkError, Result};
use nkgad::eval::{inject_anomalies, run_experiment, write_report_tsv, InjectionSpec};
use nkgad::graph::{
    drop_anomalous_edges, load_graph, save_graph, similarity_histogram, Graph, SpectralBasis,
    DEFAULT_ENERGY_BINS,
};
use nkgad::pipeline::{load_model, save_model, score, train, TrainConfig, Variant};

#[derive(Parser)]
#[command(name = "nkgad", version, about = "Unsupervised graph anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a GraphBundle directory
    Train(TrainArgs),
    /// Score a GraphBundle with a trained model
    Score(ScoreArgs),
    /// Multi-seed, multi-variant AUC evaluation on a labeled GraphBundle
    Eval(EvalArgs),
    /// Inject synthetic structural/contextual anomalies into a GraphBundle
    Inject(InjectArgs),
    /// Spectral energy distribution of the node attributes
    Spectrum(SpectrumArgs),
    /// Per-edge attribute cosine-similarity histograms
    Similarity(SimilarityArgs),
}

#[derive(Args)]
struct ConfigOpts {
    /// Config file of `key = value` lines
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set epochs=50 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Override the training seed
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigOpts {
    fn build(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::from_file(path)?,
            None => TrainConfig::default(),
        };
        for kv in &self.set {
            let Some((key, value)) = kv.split_once('=') else {
                return Err(NkError::contract(format!("--set expects KEY=VALUE, got '{kv}'")));
            };
            cfg.apply_kv(key.trim(), value.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// GraphBundle directory
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    config: ConfigOpts,
    /// Output model file; history.tsv is written next to it
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    data: PathBuf,
    /// Trained model file
    #[arg(long)]
    model: PathBuf,
    /// Output scores.tsv (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    config: ConfigOpts,
    /// Seeds: comma list or inclusive range, e.g. 0,1,2 or 0-9
    #[arg(long, default_value = "0-9")]
    seeds: String,
    /// Variants to evaluate (comma list of full|section|ddagger|dagger)
    #[arg(long, default_value = "full,section,ddagger,dagger")]
    variants: String,
    /// Output report.tsv (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InjectArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output GraphBundle directory
    #[arg(long)]
    out: PathBuf,
    /// Number of injected cliques
    #[arg(long, default_value_t = 2)]
    cliques: usize,
    /// Nodes per injected clique
    #[arg(long, default_value_t = 6)]
    clique_size: usize,
    /// Number of contextual feature swaps
    #[arg(long, default_value_t = 12)]
    swaps: usize,
    /// Candidate pool size per swap
    #[arg(long, default_value_t = 50)]
    pool: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SpectrumArgs {
    #[arg(long)]
    data: PathBuf,
    /// Number of eigenvalue bins over [0, 2]
    #[arg(long, default_value_t = DEFAULT_ENERGY_BINS)]
    bins: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimilarityArgs {
    #[arg(long)]
    data: PathBuf,
    /// Number of cosine-similarity bins over [-1, 1]
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are success; everything else is usage.
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Score(args) => cmd_score(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Inject(args) => cmd_inject(args),
        Command::Spectrum(args) => cmd_spectrum(args),
        Command::Similarity(args) => cmd_similarity(args),
    }
}

fn write_output(out: &Option<PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, content).map_err(|e| NkError::io(path, e)),
        None => {
            print!("{content}");
            std::io::stdout().flush().ok();
            Ok(())
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let g = load_graph(&args.data)?;
    let cfg = args.config.build()?;
    let model = train(&g, &cfg)?;
    save_model(&model, &args.out)?;
    let history_path = args
        .out
        .parent()
        .map(|p| p.join("history.tsv"))
        .unwrap_or_else(|| PathBuf::from("history.tsv"));
    let mut text = String::from("# epoch\tfr\tmu\tsigma\tcov\trec\ttotal\n");
    for (epoch, l) in model.history.iter().enumerate() {
        text.push_str(&format!(
            "{epoch}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            l.fr, l.mu, l.sigma, l.cov, l.rec, l.total
        ));
    }
    fs::write(&history_path, text).map_err(|e| NkError::io(&history_path, e))?;
    eprintln!(
        "trained {} epochs (variant {}); final total loss {}",
        cfg.epochs,
        cfg.variant.as_str(),
        model.final_losses.total
    );
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let g = load_graph(&args.data)?;
    let model = load_model(&args.model)?;
    let report = score(&model, &g)?;
    let mut text = String::new();
    for (node, s) in report.scores.iter().enumerate() {
        text.push_str(&format!("{node}\t{s}\n"));
    }
    write_output(&args.out, &text)
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let spec = spec.trim();
    let bad = || NkError::contract(format!("invalid seed spec '{spec}'"));
    if let Some((lo, hi)) = spec.split_once('-') {
        let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
        if hi < lo {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    spec.split(',')
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect()
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let g = load_graph(&args.data)?;
    let cfg = args.config.build()?;
    let seeds = parse_seeds(&args.seeds)?;
    let variants: Vec<Variant> = args
        .variants
        .split(',')
        .map(|s| Variant::parse(s.trim()))
        .collect::<Result<_>>()?;
    let report = run_experiment(&g, &cfg, &seeds, &variants)?;
    let mut buf = Vec::new();
    write_report_tsv(&report, &mut buf).map_err(|e| NkError::io("report", e))?;
    let text = String::from_utf8(buf).expect("tsv is utf8");
    write_output(&args.out, &text)
}

fn cmd_inject(args: InjectArgs) -> Result<()> {
    let g = load_graph(&args.data)?;
    let spec = InjectionSpec {
        clique_count: args.cliques,
        clique_size: args.clique_size,
        swap_count: args.swaps,
        candidate_pool: args.pool,
        seed: args.seed,
    };
    let (injected_graph, injected) = inject_anomalies(&g, &spec)?;
    save_graph(&injected_graph, &args.out)?;
    eprintln!(
        "injected {} anomalous nodes ({} structural, {} contextual) into {}",
        injected.len(),
        spec.clique_count * spec.clique_size,
        spec.swap_count,
        args.out.display()
    );
    Ok(())
}

/// Per-column spectral energy, averaged over nonzero feature columns.
/// The eigendecomposition is shared across columns.
fn averaged_energy(g: &Graph, bins: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let dim = g.feature_dim();
    let n = g.node_count();
    let mut averaged = vec![0.0; bins];
    let mut edges = Vec::new();
    let mut used = 0usize;
    let basis = SpectralBasis::new(g)?;
    for c in 0..dim {
        let signal: Vec<f64> = (0..n).map(|i| g.features().get(i, c)).collect();
        if signal.iter().all(|&x| x == 0.0) {
            eprintln!("warning: feature column {c} is all zeros; skipped in spectrum");
            continue;
        }
        let report = basis.energy(&signal, bins)?;
        if edges.is_empty() {
            edges = report.bin_edges.clone();
        }
        for (acc, e) in averaged.iter_mut().zip(&report.binned_energy) {
            *acc += e;
        }
        used += 1;
    }
    if used == 0 {
        return Err(NkError::numeric(
            "spectrum",
            "all feature columns are zero signals",
        ));
    }
    for acc in &mut averaged {
        *acc /= used as f64;
    }
    Ok((edges, averaged))
}

fn energy_block(name: &str, g: &Graph, bins: usize) -> Result<String> {
    let (edges, energy) = averaged_energy(g, bins)?;
    let mut text = format!("# group: {name}\n");
    for (b, e) in energy.iter().enumerate() {
        text.push_str(&format!("{}\t{}\t{}\n", edges[b], edges[b + 1], e));
    }
    Ok(text)
}

fn cmd_spectrum(args: SpectrumArgs) -> Result<()> {
    let g = load_graph(&args.data)?;
    let mut text = String::new();
    if g.labels().is_some() {
        text.push_str(&energy_block("with_anomalous_edges", &g, args.bins)?);
        let dropped = drop_anomalous_edges(&g)?;
        text.push_str(&energy_block("without_anomalous_edges", &dropped, args.bins)?);
    } else {
        text.push_str(&energy_block("graph", &g, args.bins)?);
    }
    write_output(&args.out, &text)
}

fn cmd_similarity(args: SimilarityArgs) -> Result<()> {
    let g = load_graph(&args.data)?;
    let histograms = similarity_histogram(&g, args.bins)?;
    let mut text = String::new();
    for h in &histograms {
        text.push_str(&format!("# group: {}\n", h.group));
        for (b, count) in h.counts.iter().enumerate() {
            text.push_str(&format!("{}\t{}\t{}\n", h.bin_edges[b], h.bin_edges[b + 1], count));
        }
    }
    write_output(&args.out, &text)
}
