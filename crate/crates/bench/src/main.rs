use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use vqa_fusion::assembly::{toy_trace, ANSWERS_VQA, TOY_LR, TOY_STEPS};
use vqa_fusion::complexity::{FlopConvention, TimingProtocol};
use vqa_fusion::fusion::{FusionKind, Hyper};
use vqa_fusion::gradcheck::{check_spec, small_specs};
use vqa_tradeoff::emit::{self, Format, ReportRow};
use vqa_tradeoff::fixture::{AccuracyFixture, TOY_MARKER};
use vqa_tradeoff::sweep::{parse_fusions, parse_profiles, run_sweep, AttentionChoice, SweepConfig};
use vqa_tradeoff::tradeoff::{join_tradeoff, Axis, Tradeoff};
use vqa_tradeoff::{BenchError, Result};

fn default_table() -> String {
    let mut s = String::from("Default fusion hyperparameters (|A| = answer-set size):\n");
    for kind in FusionKind::ALL {
        let line = match Hyper::defaults(kind, ANSWERS_VQA) {
            Hyper::Linear { inter, .. } => format!("inter {inter}, out |A|"),
            Hyper::Cmlp { hidden, .. } => format!("hidden {hidden} x2, out |A|"),
            Hyper::Mcb { d, normalize } => {
                format!("sketch d {d}, {}", if normalize { "signed sqrt + L2" } else { "raw" })
            }
            Hyper::Mlb { d_z } => format!("d_z {d_z}"),
            Hyper::Mfb { k, d_z } => format!("k {k}, d_z {d_z}"),
            Hyper::Mfh { k, d_z, m } => format!("k {k}, d_z {d_z}, m {m}"),
            Hyper::Mutan { d_pv, d_pq, d_z, rank } => format!("d_pv {d_pv}, d_pq {d_pq}, d_z {d_z}, R {rank}"),
            Hyper::Block { d_pv, d_pq, d_z, rank, n } => {
                format!("d_pv {d_pv}, d_pq {d_pq}, d_z {d_z}, R {rank}, n {n}")
            }
        };
        s.push_str(&format!("  {:<8}{line}\n", kind.label()));
    }
    s.push_str("Co-attention: 2 glimpses, tanh, same fusion kind in both stages.\n");
    s.push_str("Exit codes: 0 ok, 1 configuration, 2 I/O or parse, 3 internal invariant.");
    s
}

#[derive(Parser)]
#[command(
    name = "vqa-tradeoff",
    version,
    about = "Parameter/FLOP sweeps and accuracy trade-off reports for VQA fusion models",
    after_help = default_table()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count parameters and FLOPs over a configuration grid.
    Sweep(GridArgs),
    /// Join a sweep with an accuracy fixture.
    Tradeoff(JoinArgs),
    /// Like `tradeoff`, keeping only the efficiency frontier.
    Frontier(JoinArgs),
    /// Check every operator's backward pass against finite differences.
    Gradcheck(GradArgs),
    /// Train small models on planted synthetic labels.
    Traintoy(ToyArgs),
}

#[derive(Args)]
struct GridArgs {
    /// Comma-separated profiles (e.g. ResNet152, InceptionV4-IL, BU) or all, spatial, image-level.
    #[arg(long, default_value = "all")]
    profiles: String,
    /// Comma-separated fusion kinds or all.
    #[arg(long, default_value = "all")]
    fusions: String,
    /// none, co or both.
    #[arg(long, default_value = "both")]
    attention: String,
    #[arg(long, default_value = "f64")]
    dtype: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// FLOP convention: mac2 (multiply-add = 2) or mac1.
    #[arg(long, default_value = "mac2")]
    convention: String,
    #[arg(long, default_value_t = ANSWERS_VQA)]
    answers: usize,
    /// Time forward passes (serial, single thread); output is then not reproducible byte for byte.
    #[arg(long)]
    time: bool,
    #[arg(long, default_value_t = 64)]
    timing_batch: usize,
    /// Output file; stdout when omitted. A .json extension selects JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or json, overriding the extension.
    #[arg(long)]
    format: Option<String>,
}

#[derive(Args)]
struct JoinArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Bundled table (table1, table2, table4, vqav2, vqa-cpv2, tdiuc) or a CSV path.
    #[arg(long, default_value = "table1")]
    fixture: String,
    /// Dataset inside the fixture; needed when it holds several.
    #[arg(long)]
    dataset: Option<String>,
    /// params or flops.
    #[arg(long, default_value = "params")]
    axis: String,
}

#[derive(Args)]
struct GradArgs {
    #[arg(long, default_value = "all")]
    fusions: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long, default_value = "all")]
    fusions: String,
    #[arg(long, default_value = "both")]
    attention: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Loss traces as CSV; marked so they can never be joined as accuracies.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl GridArgs {
    fn sweep_config(&self) -> Result<SweepConfig> {
        let mut cfg = SweepConfig::new(
            parse_profiles(&self.profiles)?,
            parse_fusions(&self.fusions)?,
            self.attention.parse()?,
        );
        cfg.dtype = self.dtype.parse()?;
        cfg.seed = self.seed;
        cfg.convention = FlopConvention::by_name(&self.convention)?;
        cfg.answers = self.answers;
        if self.time {
            cfg.timing = Some(TimingProtocol {
                batch: self.timing_batch,
                ..TimingProtocol::default()
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn format(&self) -> Result<Format> {
        match &self.format {
            Some(f) => f.parse(),
            None => Ok(Format::for_path(self.out.as_deref())),
        }
    }
}

fn joined(args: &JoinArgs) -> Result<Tradeoff> {
    let axis: Axis = args.axis.parse()?;
    let cfg = args.grid.sweep_config()?;
    let mut fixture = AccuracyFixture::resolve(&args.fixture)?;
    if let Some(d) = &args.dataset {
        fixture = fixture.for_dataset(d)?;
    }
    let records = run_sweep(&cfg)?;
    let t = join_tradeoff(&records, &fixture, axis)?;
    if !t.unmatched_reports.is_empty() || !t.unmatched_fixture.is_empty() {
        info!(
            "{} reports and {} fixture rows unmatched",
            t.unmatched_reports.len(),
            t.unmatched_fixture.len()
        );
    }
    Ok(t)
}

fn gradcheck(args: &GradArgs) -> Result<()> {
    let mut worst_all = 0.0f64;
    for kind in parse_fusions(&args.fusions)? {
        for spec in small_specs(kind, args.seed) {
            let report = check_spec(&spec, 3, 1e-5)?;
            let worst = report.worst();
            worst_all = worst_all.max(worst);
            println!(
                "{:<7} d_v {:>2} d_q {:>2} d_out {:>2}  worst relative error {worst:.3e}",
                kind.label(),
                spec.d_v,
                spec.d_q,
                spec.d_out()
            );
        }
    }
    if worst_all > args.tolerance {
        return Err(BenchError::Invariant(format!(
            "gradient error {worst_all:.3e} above tolerance {:.1e}",
            args.tolerance
        )));
    }
    Ok(())
}

fn traintoy(args: &ToyArgs) -> Result<()> {
    let modes = args.attention.parse::<AttentionChoice>()?.modes();
    let mut csv = format!("{TOY_MARKER}\nfusion,attention,step,loss\n");
    let mut failed = Vec::new();
    for kind in parse_fusions(&args.fusions)? {
        for &mode in modes {
            let trace = toy_trace(kind, mode, args.seed)?;
            let (first, last) = (trace[0], trace[trace.len() - 1]);
            println!(
                "{:<7} {:<4} loss {first:.4} -> {last:.4} ({:.1}% of initial)",
                kind.label(),
                mode.name(),
                100.0 * last / first
            );
            if last >= 0.5 * first {
                failed.push(format!("{kind}/{mode}"));
            }
            for (step, loss) in trace.iter().enumerate() {
                csv.push_str(&format!("{},{},{step},{loss}\n", kind.name(), mode.name()));
            }
        }
    }
    if let Some(p) = &args.out {
        emit::write_text(&csv, Some(p))?;
    }
    if !failed.is_empty() {
        warn!(
            "loss not halved within {TOY_STEPS} steps at lr {TOY_LR}: {}",
            failed.join(", ")
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sweep(args) => {
            let cfg = args.sweep_config()?;
            let rows: Vec<ReportRow> = run_sweep(&cfg)?.into_iter().map(|r| ReportRow::new(r, None)).collect();
            info!("{} configurations counted", rows.len());
            emit::emit_rows(&rows, args.format()?, args.out.as_deref())
        }
        Command::Tradeoff(args) => {
            let t = joined(&args)?;
            emit::emit_tradeoff(&t, args.grid.format()?, args.grid.out.as_deref())
        }
        Command::Frontier(args) => {
            let t = joined(&args)?.frontier();
            emit::emit_tradeoff(&t, args.grid.format()?, args.grid.out.as_deref())
        }
        Command::Gradcheck(args) => gradcheck(&args),
        Command::Traintoy(args) => traintoy(&args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
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
