use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use log::info;

use l2g2g::bench::{
    aggregate, dataset_report, preset, run_ablation, run_benchmark, write_aggregate_csv, write_dataset_report,
    write_runs_csv, BenchFile, EvalMode, Reading, RunRecord,
};
use l2g2g::eval::{evaluate_embedding, sample_non_edges, split_edges, TEST_FRACTION, VAL_FRACTION};
use l2g2g::graph::{load_graph, load_matrix, save_graph, save_matrix};
use l2g2g::partition::{build_patches, cluster_nodes, load_patches, save_patches};
use l2g2g::sync::{write_transforms, SyncPolicy};
use l2g2g::train::{stream_rng, streams, train, train_gae_l2g, train_l2g2g, Regime, TrainConfig};
use l2g2g::{generate_sbm, Error, Graph, Result, SbmConfig};

const EDGES_FILE: &str = "edges.txt";
const FEATURES_FILE: &str = "features.txt";

/// Graph autoencoders with patch synchronization: data generation, training,
/// evaluation and benchmarks.
#[derive(Parser)]
#[command(name = "l2g2g", version)]
struct Cli {
    /// More log output (repeatable); RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a stochastic block model graph with one-hot block features.
    GenerateSbm(GenerateArgs),
    /// Cluster a graph and write its overlapping patches.
    Partition(PartitionArgs),
    /// Train one regime and write the report, embedding and transforms.
    Train(TrainArgs),
    /// Score an embedding on held-out or all edges.
    Evaluate(EvaluateArgs),
    /// Run every regime over several seeds from a config file.
    Bench(BenchArgs),
    /// Sweep the number of patches from a config file.
    Ablate(BenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Named dataset (sbm-small, sbm-large-sparse, sbm-large, sbm-large-dense).
    #[arg(long, conflicts_with_all = ["n_blocks", "block_size", "p_in", "p_out"])]
    preset: Option<String>,
    /// Which probabilities a preset uses: table or stated.
    #[arg(long, default_value = "table", value_parser = parse::<Reading>)]
    reading: Reading,
    #[arg(long, requires_all = ["block_size", "p_in", "p_out"])]
    n_blocks: Option<usize>,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    p_in: Option<f64>,
    #[arg(long)]
    p_out: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for edges.txt and features.txt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GraphArg {
    /// Directory holding edges.txt and features.txt.
    #[arg(long)]
    graph: PathBuf,
}

#[derive(Args)]
struct PartitionArgs {
    #[command(flatten)]
    graph: GraphArg,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 32)]
    min_overlap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Patch file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ModeArgs {
    /// Train on the whole graph and score all edges instead of held-out ones.
    #[arg(long)]
    reconstruct_full: bool,
}

impl ModeArgs {
    fn mode(&self) -> EvalMode {
        if self.reconstruct_full {
            EvalMode::ReconstructFull
        } else {
            EvalMode::HeldOut
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_parser = parse::<Regime>)]
    regime: Regime,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 32)]
    min_overlap: usize,
    #[arg(long, default_value_t = 10)]
    sync_every: usize,
    /// FastGAE subgraph size; defaults to the square root of the node count.
    #[arg(long)]
    sample_size: Option<usize>,
    #[arg(long, default_value = "strict", value_parser = parse::<SyncPolicy>)]
    sync_policy: SyncPolicy,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use this patch file instead of partitioning (patch regimes only).
    #[arg(long)]
    patches: Option<PathBuf>,
    #[command(flatten)]
    graph: GraphArg,
    #[command(flatten)]
    mode: ModeArgs,
    /// Output directory for report.json, embedding.txt and transforms.txt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    graph: GraphArg,
    /// Embedding matrix file, one row per node.
    #[arg(long)]
    embedding: PathBuf,
    /// Seed used for training; it fixes the edge split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    mode: ModeArgs,
    /// Write the scores as JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// key = value config file.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    mode: ModeArgs,
    /// Output directory for runs.csv, aggregate.csv, aggregate.json and datasets.csv.
    #[arg(long)]
    out: PathBuf,
}

fn parse<T: FromStr<Err = Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn read_graph(dir: &Path) -> Result<Graph> {
    let (g, stats) = load_graph(&dir.join(EDGES_FILE), &dir.join(FEATURES_FILE))?;
    info!(
        "loaded {} nodes, {} edges ({} self-loops and {} duplicates dropped)",
        g.n_nodes(),
        g.n_edges(),
        stats.self_loops_dropped,
        stats.duplicates_dropped
    );
    Ok(g)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<()> {
    let cfg = match (&args.preset, args.n_blocks) {
        (Some(name), _) => preset(name)?.config(args.reading, args.seed),
        (None, Some(n_blocks)) => SbmConfig {
            n_blocks,
            block_size: args.block_size.unwrap_or(0),
            p_in: args.p_in.unwrap_or(0.0),
            p_out: args.p_out.unwrap_or(0.0),
            seed: args.seed,
        },
        (None, None) => return Err(Error::Parameter("give --preset or the four block model parameters".into())),
    };
    let g = generate_sbm(&cfg)?;
    fs::create_dir_all(&args.out)?;
    save_graph(&g, &args.out.join(EDGES_FILE), &args.out.join(FEATURES_FILE))?;
    println!("{} nodes, {} edges", g.n_nodes(), g.n_edges());
    Ok(())
}

fn partition(args: PartitionArgs) -> Result<()> {
    let g = read_graph(&args.graph.graph)?;
    let assignment = cluster_nodes(&g, args.k, args.seed)?;
    let (patches, pg) = build_patches(&g, &assignment, args.min_overlap)?;
    save_patches(&patches, &pg, &args.out)?;
    let sizes: Vec<usize> = patches.patches.iter().map(|p| p.len()).collect();
    println!(
        "{} patches, sizes {:?}, {} patch-graph edges, max overlap {}",
        patches.k(),
        sizes,
        pg.edges.len(),
        pg.max_overlap
    );
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let cfg = TrainConfig {
        epochs: args.epochs,
        lr: args.lr,
        k: args.k,
        min_overlap: args.min_overlap,
        sync_every: args.sync_every,
        sample_size: args.sample_size,
        seed: args.seed,
        sync_policy: args.sync_policy,
    };
    cfg.validate()?;
    let g = read_graph(&args.graph.graph)?;
    let g = match args.mode.mode() {
        EvalMode::HeldOut => split_edges(&g, TEST_FRACTION, VAL_FRACTION, args.seed)?.train,
        EvalMode::ReconstructFull => g,
    };
    let report = match (&args.patches, args.regime) {
        (None, regime) => train(regime, &g, &cfg)?,
        (Some(path), Regime::GaeL2g) => {
            let (p, pg) = load_patches(&g, path)?;
            train_gae_l2g(&p, &pg, &cfg)?
        }
        (Some(path), Regime::L2g2g) => {
            let (p, pg) = load_patches(&g, path)?;
            train_l2g2g(&p, &pg, &cfg)?
        }
        (Some(_), regime) => {
            return Err(Error::Parameter(format!("{regime} does not use patches")));
        }
    };
    fs::create_dir_all(&args.out)?;
    write_json(&args.out.join("report.json"), &report)?;
    save_matrix(&report.embedding, &args.out.join("embedding.txt"))?;
    if let Some(t) = &report.transforms {
        let mut w = BufWriter::new(File::create(args.out.join("transforms.txt"))?);
        write_transforms(t, &mut w)?;
        w.flush()?;
    }
    println!(
        "final loss {:.6}, {:.4} s/epoch",
        report.losses.last().copied().unwrap_or(f64::NAN),
        report.mean_epoch_time()
    );
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let g = read_graph(&args.graph.graph)?;
    let z = load_matrix(&args.embedding)?;
    if z.rows() != g.n_nodes() {
        return Err(Error::Contract(format!(
            "embedding has {} rows but the graph has {} nodes",
            z.rows(),
            g.n_nodes()
        )));
    }
    let scores = match args.mode.mode() {
        EvalMode::HeldOut => {
            let split = split_edges(&g, TEST_FRACTION, VAL_FRACTION, args.seed)?;
            evaluate_embedding(&z, &split.test_pos, &split.test_neg)?
        }
        EvalMode::ReconstructFull => {
            let mut rng = stream_rng(args.seed, streams::SPLIT, 0);
            let negatives = sample_non_edges(&g, g.n_edges(), &mut rng)?;
            evaluate_embedding(&z, g.edges(), &negatives)?
        }
    };
    match args.out {
        Some(path) => write_json(&path, &scores)?,
        None => println!("{}", serde_json::to_string(&scores)?),
    }
    Ok(())
}

fn bench(args: BenchArgs, ablate: bool) -> Result<()> {
    let text = fs::read_to_string(&args.config)?;
    let base = args.config.parent().unwrap_or(Path::new("."));
    let mut file = BenchFile::parse(&text, base)?;
    if args.mode.reconstruct_full {
        file.bench.mode = EvalMode::ReconstructFull;
    }
    let g = file.source.load()?;
    info!("{}: {} nodes, {} edges", file.bench.dataset, g.n_nodes(), g.n_edges());
    let runs: Vec<RunRecord> = if ablate {
        run_ablation(&g, &file.bench)?
    } else {
        run_benchmark(&g, &file.bench)?
    };
    let agg = aggregate(&runs);
    fs::create_dir_all(&args.out)?;
    write_runs_csv(&runs, File::create(args.out.join("runs.csv"))?)?;
    write_aggregate_csv(&agg, File::create(args.out.join("aggregate.csv"))?)?;
    write_json(&args.out.join("aggregate.json"), &agg)?;
    write_dataset_report(&dataset_report(), File::create(args.out.join("datasets.csv"))?)?;
    for a in &agg {
        println!(
            "{} {} k={}: auc {:.2} ± {:.2}, ap {:.2} ± {:.2}, {:.4} s/epoch{}",
            a.dataset,
            a.regime,
            a.k,
            a.auc_mean,
            a.auc_std,
            a.ap_mean,
            a.ap_std,
            a.epoch_time_mean,
            if a.complete() { String::new() } else { format!(" ({} failed)", a.failed) }
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::GenerateSbm(a) => generate(a),
        Command::Partition(a) => partition(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Bench(a) => bench(a, false),
        Command::Ablate(a) => bench(a, true),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
