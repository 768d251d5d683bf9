//! `mscs` — multistage context scheduling toolbox.
//!
//! Subcommands: `orders` (enumerate / optimize / score decoding orders),
//! `masks show` (context-mask inspection), `codec bench` (measured
//! bitstream rates), `pad` (image padding requirements), `simulate`
//! (wavefront latency model, with optional fitting to measured timings).
//!
//! All randomness is seeded (default seed 0); identical invocations print
//! identical bytes. Exit codes: 0 success, 1 internal error, 2 usage error.
//! `MSCS_THREADS` caps worker parallelism (0 = auto).

use std::fmt::Write as _;
use std::io::Write as _;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mscs_core::codec::{decode, encode, measure_rates, Mode, QuantGrid, RateReport};
use mscs_core::field::{sample_field, CovarianceKind, FieldModel, DEFAULT_QUANT_NOISE};
use mscs_core::grid::{pad_image_dims, LatentDims, PatchOrder};
use mscs_core::mask::{four_adjacency_count, stage_mask};
use mscs_core::search::{
    branch_and_bound_search, build_subset_costs, dp_search, exhaustive_search, score_order,
};
use mscs_core::sim::{
    build_schedule, fit_overhead, simulate_latency, FitObjective, LatencyModel, Schedule,
    ScheduleMode,
};

#[derive(Parser)]
#[command(
    name = "mscs",
    version,
    about = "Multistage spatial context scheduling: decoding-order search, context masks, \
             a range-coded codec over synthetic latent fields, and decode-latency simulation",
    after_help = "Environment:\n  MSCS_THREADS  cap worker parallelism (0 = auto)\n\n\
                  CSV schemas:\n  \
                  orders:   order,total_bits,per_stage_bits,method,sigma2,rho,cov\n  \
                  codec:    mode,order,height,width,seeds,sigma2,rho,cov,bits_per_position,\n            \
                  theoretical_bits_per_position,interior_bits_per_position,total_bits,\n            \
                  per_stage_bits,round_trip\n  \
                  simulate: mode,height,width,num_stages,latency\n  \
                  fit input: mode,n,height,width,latency (n blank except multistage)"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Work with patch decoding orders.
    Orders {
        #[command(subcommand)]
        action: OrdersAction,
    },
    /// Inspect per-stage context masks.
    Masks {
        #[command(subcommand)]
        action: MasksAction,
    },
    /// Encode synthetic latent grids and measure real bitrates.
    Codec {
        #[command(subcommand)]
        action: CodecAction,
    },
    /// Padding required to split an image into n×n latent patches.
    Pad(PadArgs),
    /// Wavefront latency model for the decode schedule.
    Simulate(SimulateArgs),
}

#[derive(Subcommand)]
enum OrdersAction {
    /// Score every order of an n×n patch and print the full ranking.
    Enumerate(EnumerateArgs),
    /// Find the best (or worst) decoding order.
    Optimize(OptimizeArgs),
    /// Score one decoding order.
    Score(ScoreArgs),
}

#[derive(Subcommand)]
enum MasksAction {
    /// Render the context mask of one stage.
    Show(MasksShowArgs),
}

#[derive(Subcommand)]
enum CodecAction {
    /// Encode synthetic grids across seeds and report measured rates.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Marginal variance σ² of the latent field.
    #[arg(long, default_value_t = 25.0)]
    sigma2: f64,
    /// Correlation decay ρ ∈ (0, 1).
    #[arg(long, default_value_t = 0.9)]
    rho: f64,
    /// Covariance kind.
    #[arg(long, value_enum, default_value_t = CovArg::Separable)]
    cov: CovArg,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CovArg {
    Separable,
    Isotropic,
}

impl ModelArgs {
    fn model(&self) -> Result<FieldModel, CliError> {
        FieldModel::new(
            self.sigma2,
            self.rho,
            match self.cov {
                CovArg::Separable => CovarianceKind::Separable,
                CovArg::Isotropic => CovarianceKind::Isotropic,
            },
        )
        .map_err(usage)
    }
}

#[derive(Args, Clone)]
struct OutputArgs {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Write to a file instead of stdout.
    #[arg(long)]
    out: Option<std::path::PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Args)]
struct EnumerateArgs {
    /// Patch side (1 or 2; 3 needs --allow-large).
    #[arg(long)]
    n: usize,
    /// Rank worst-first instead of best-first.
    #[arg(long)]
    worst: bool,
    /// Permit the 362 880-order enumeration at n = 3.
    #[arg(long)]
    allow_large: bool,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    /// Subset dynamic programming (exact).
    Dp,
    /// Depth-first search with admissible pruning (exact).
    Dfs,
    /// Score all n²! orders (n ≤ 3).
    Exhaustive,
}

#[derive(Args)]
struct OptimizeArgs {
    /// Patch side (dp/dfs: up to 4; exhaustive: up to 3).
    #[arg(long)]
    n: usize,
    /// Search method.
    #[arg(long, value_enum, default_value_t = Method::Dp)]
    method: Method,
    /// Find the worst order instead of the best (dp or exhaustive only).
    #[arg(long)]
    worst: bool,
    /// Permit the 362 880-order enumeration at n = 3.
    #[arg(long)]
    allow_large: bool,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct ScoreArgs {
    /// Patch side; must match the order length.
    #[arg(long)]
    n: usize,
    /// Decoding order as n² hex digits, row-major.
    #[arg(long)]
    order: String,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct MasksShowArgs {
    /// Patch side; must match the order length.
    #[arg(long)]
    n: usize,
    /// Decoding order as n² hex digits, row-major.
    #[arg(long)]
    order: String,
    /// Stage to render (0-based).
    #[arg(long)]
    stage: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Nocontext,
    Checkerboard,
    Ar,
    Multistage,
}

#[derive(Args)]
struct BenchArgs {
    /// Context model.
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Patch side; optional, must match the order length when given.
    #[arg(long)]
    n: Option<usize>,
    /// Decoding order (required for --mode multistage).
    #[arg(long)]
    order: Option<String>,
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    /// Base seed for the synthetic grids.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of consecutive seeds to average over.
    #[arg(long, default_value_t = 1)]
    seeds_count: u64,
    /// Decode each bitstream and check it reproduces the grid exactly.
    #[arg(long)]
    verify: bool,
    /// Write the base seed's bitstream to a file.
    #[arg(long)]
    out: Option<std::path::PathBuf>,
    /// Report format.
    #[arg(long, value_enum, default_value_t = Format::Text)]
    report: Format,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct PadArgs {
    /// Patch side.
    #[arg(long)]
    n: usize,
    /// Image height in pixels.
    #[arg(long)]
    height: usize,
    /// Image width in pixels.
    #[arg(long)]
    width: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// Context model (ignored with --fit-table).
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Patch side for --mode multistage.
    #[arg(long)]
    n: Option<usize>,
    /// Latent grid height.
    #[arg(long)]
    height: Option<usize>,
    /// Latent grid width.
    #[arg(long)]
    width: Option<usize>,
    /// Parallel lanes P.
    #[arg(long, default_value_t = 1024)]
    lanes: usize,
    /// Per-stage overhead t₀.
    #[arg(long, default_value_t = 1.0)]
    t0: f64,
    /// Per-position cost t₁.
    #[arg(long, default_value_t = 0.001)]
    t1: f64,
    /// Fit (t₀, t₁) to measured latencies from a CSV file
    /// (mode,n,height,width,latency).
    #[arg(long)]
    fit_table: Option<std::path::PathBuf>,
    /// Fit objective for --fit-table.
    #[arg(long, value_enum, default_value_t = FitArg::Lsrel)]
    fit: FitArg,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FitArg {
    /// Ordinary least squares.
    Ls,
    /// Least squares on relative residuals.
    Lsrel,
    /// Minimize the maximum relative error.
    Minimax,
}

enum CliError {
    Usage(String),
    Internal(String),
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

/// User-input mistakes exit 2; anything that indicates a bug exits 1.
fn classify(e: mscs_core::Error) -> CliError {
    use mscs_core::Error::*;
    match e {
        DegenerateModel | ZeroWidthBin { .. } | TruncatedPayload | BadHeader { .. }
        | HeaderModelMismatch { .. } | NonUniformStageMask { .. } => internal(e),
        _ => usage(e),
    }
}

fn main() -> ExitCode {
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("MSCS_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .map_err(|_| format!("MSCS_THREADS must be a non-negative integer, got {raw:?}"))?;
    if threads == 0 {
        return Ok(()); // auto
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| format!("failed to configure thread pool: {e}"))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Orders { action } => match action {
            OrdersAction::Enumerate(args) => cmd_enumerate(args),
            OrdersAction::Optimize(args) => cmd_optimize(args),
            OrdersAction::Score(args) => cmd_score(args),
        },
        Command::Masks { action } => match action {
            MasksAction::Show(args) => cmd_masks_show(args),
        },
        Command::Codec { action } => match action {
            CodecAction::Bench(args) => cmd_codec_bench(args),
        },
        Command::Pad(args) => cmd_pad(args),
        Command::Simulate(args) => cmd_simulate(args),
    }
}

fn emit(output: &OutputArgs, text: String) -> Result<(), CliError> {
    match &output.out {
        None => {
            print!("{text}");
            std::io::stdout().flush().map_err(internal)
        }
        Some(path) => std::fs::write(path, text).map_err(internal),
    }
}

// ---------------------------------------------------------------------------
// orders

struct ScoredRow {
    order: String,
    total_bits: f64,
    per_stage_bits: Vec<f64>,
    method: &'static str,
}

fn orders_report(
    rows: &[ScoredRow],
    model: &ModelArgs,
    format: Format,
    extra_text: &str,
) -> String {
    let cov = match model.cov {
        CovArg::Separable => "separable",
        CovArg::Isotropic => "isotropic",
    };
    match format {
        Format::Csv => {
            let mut s = String::from("order,total_bits,per_stage_bits,method,sigma2,rho,cov\n");
            for r in rows {
                let stages = r
                    .per_stage_bits
                    .iter()
                    .map(|b| b.to_string())
                    .collect::<Vec<_>>()
                    .join(";");
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    r.order, r.total_bits, stages, r.method, model.sigma2, model.rho, cov
                );
            }
            s
        }
        Format::Json => {
            let arr: Vec<serde_json::Value> = rows
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "order": r.order,
                        "total_bits": r.total_bits,
                        "per_stage_bits": r.per_stage_bits,
                        "method": r.method,
                        "sigma2": model.sigma2,
                        "rho": model.rho,
                        "cov": cov,
                    })
                })
                .collect();
            format!("{}\n", serde_json::Value::Array(arr))
        }
        Format::Text => {
            let mut s = String::new();
            for r in rows {
                let stages = r
                    .per_stage_bits
                    .iter()
                    .map(|b| format!("{b:.4}"))
                    .collect::<Vec<_>>()
                    .join(" ");
                let _ = writeln!(
                    s,
                    "{}  total {:.6} bits/position  stages [{}]  ({})",
                    r.order, r.total_bits, stages, r.method
                );
            }
            s.push_str(extra_text);
            s
        }
    }
}

fn row(score: &mscs_core::field::OrderScore, method: &'static str) -> ScoredRow {
    ScoredRow {
        order: score.order_string().to_string(),
        total_bits: score.total_bits_per_position(),
        per_stage_bits: score.per_stage_bits().to_vec(),
        method,
    }
}

fn cmd_enumerate(args: EnumerateArgs) -> Result<(), CliError> {
    let model = args.model.model()?;
    let ranked = exhaustive_search(
        args.n,
        &model,
        DEFAULT_QUANT_NOISE,
        args.worst,
        args.allow_large,
    )
    .map_err(classify)?;
    let rows: Vec<ScoredRow> = ranked.iter().map(|s| row(s, "exhaustive")).collect();
    emit(&args.output, orders_report(&rows, &args.model, args.output.format, ""))
}

fn cmd_optimize(args: OptimizeArgs) -> Result<(), CliError> {
    let model = args.model.model()?;
    let (rows, extra) = match args.method {
        Method::Exhaustive => {
            let ranked = exhaustive_search(
                args.n,
                &model,
                DEFAULT_QUANT_NOISE,
                args.worst,
                args.allow_large,
            )
            .map_err(classify)?;
            (vec![row(&ranked[0], "exhaustive")], String::new())
        }
        Method::Dp => {
            let table = build_subset_costs(args.n, &model, DEFAULT_QUANT_NOISE).map_err(classify)?;
            (vec![row(&dp_search(&table, args.worst), "dp")], String::new())
        }
        Method::Dfs => {
            if args.worst {
                return Err(usage("--worst is not supported with --method dfs"));
            }
            let table = build_subset_costs(args.n, &model, DEFAULT_QUANT_NOISE).map_err(classify)?;
            let outcome = branch_and_bound_search(&table, true);
            let extra = format!(
                "dfs expanded {} prefix nodes (pruning ratio {:.3e})\n",
                outcome.nodes_expanded,
                outcome.pruning_ratio()
            );
            (vec![row(&outcome.score, "dfs")], extra)
        }
    };
    emit(&args.output, orders_report(&rows, &args.model, args.output.format, &extra))
}

fn cmd_score(args: ScoreArgs) -> Result<(), CliError> {
    let order = parse_order_arg(args.n, &args.order)?;
    let model = args.model.model()?;
    let score = score_order(&order, &model, DEFAULT_QUANT_NOISE).map_err(classify)?;
    let rows = vec![row(&score, "score")];
    let mut extra = String::new();
    if order.practicality_warning() {
        let _ = writeln!(
            extra,
            "note: n = {} pads images to multiples of {}, which is rarely practical",
            order.n(),
            mscs_core::grid::required_padding_multiple(order.n())
        );
    }
    emit(&args.output, orders_report(&rows, &args.model, args.output.format, &extra))
}

fn parse_order_arg(n: usize, text: &str) -> Result<PatchOrder, CliError> {
    let order = PatchOrder::parse(text).map_err(usage)?;
    if order.n() != n {
        return Err(usage(format!(
            "--order {text:?} is a {0}x{0} order but --n {n} was given",
            order.n()
        )));
    }
    Ok(order)
}

// ---------------------------------------------------------------------------
// masks

fn cmd_masks_show(args: MasksShowArgs) -> Result<(), CliError> {
    let order = parse_order_arg(args.n, &args.order)?;
    let map = mscs_core::grid::StageMap::from_order(&order);
    let mask = stage_mask(&map, args.stage).map_err(classify)?;
    let offsets = mask.offsets();
    match args.output.format {
        Format::Json => {
            let value = serde_json::json!({
                "order": order.format(),
                "stage": args.stage,
                "available_offsets": offsets,
                "available_count": offsets.len(),
                "four_adjacency_count": four_adjacency_count(&mask),
                "rendered": mask.render(),
            });
            emit(&args.output, format!("{value}\n"))
        }
        _ => {
            let mut s = String::new();
            let _ = writeln!(s, "order {} stage {}", order.format(), args.stage);
            s.push_str(&mask.render());
            s.push('\n');
            let offs = offsets
                .iter()
                .map(|&(dy, dx)| format!("({dy},{dx})"))
                .collect::<Vec<_>>()
                .join(" ");
            let _ = writeln!(s, "available ({}): {}", offsets.len(), offs);
            let _ = writeln!(s, "four-adjacency count: {}", four_adjacency_count(&mask));
            emit(&args.output, s)
        }
    }
}

// ---------------------------------------------------------------------------
// codec

fn cmd_codec_bench(args: BenchArgs) -> Result<(), CliError> {
    let model = args.model.model()?;
    let dims = LatentDims::new(args.height, args.width).map_err(usage)?;
    let mode = match args.mode {
        ModeArg::Nocontext => Mode::NoContext,
        ModeArg::Checkerboard => Mode::Checkerboard,
        ModeArg::Ar => Mode::Ar,
        ModeArg::Multistage => {
            let text = args
                .order
                .as_deref()
                .ok_or_else(|| usage("--mode multistage requires --order"))?;
            let order = match args.n {
                Some(n) => parse_order_arg(n, text)?,
                None => PatchOrder::parse(text).map_err(usage)?,
            };
            Mode::Multistage(order)
        }
    };
    if args.seeds_count == 0 {
        return Err(usage("--seeds-count must be at least 1"));
    }
    let seeds: Vec<u64> = (args.seed..args.seed + args.seeds_count).collect();
    let reports = measure_rates(dims, &model, DEFAULT_QUANT_NOISE, std::slice::from_ref(&mode), &seeds, args.verify)
        .map_err(classify)?;
    let report = &reports[0];
    if report.round_trip_ok == Some(false) {
        return Err(internal("round-trip verification failed"));
    }

    if let Some(path) = &args.out {
        let field = sample_field(&model, dims, args.seed).map_err(classify)?;
        let grid = QuantGrid::quantize(&field, &model);
        let bs = encode(&grid, &mode, &model, DEFAULT_QUANT_NOISE).map_err(classify)?;
        if args.verify {
            let back = decode(&bs, &model).map_err(internal)?;
            if back != grid {
                return Err(internal("bitstream written to --out failed verification"));
            }
        }
        std::fs::write(path, bs.to_bytes()).map_err(internal)?;
    }

    let text = match args.report {
        Format::Csv => codec_csv(&reports),
        Format::Json => format!("{}\n", serde_json::to_value(&reports).map_err(internal)?),
        Format::Text => codec_text(report),
    };
    print!("{text}");
    std::io::stdout().flush().map_err(internal)
}

fn codec_csv(reports: &[RateReport]) -> String {
    let mut s = String::from(
        "mode,order,height,width,seeds,sigma2,rho,cov,bits_per_position,\
         theoretical_bits_per_position,interior_bits_per_position,total_bits,\
         per_stage_bits,round_trip\n",
    );
    for r in reports {
        let stages = r
            .per_stage_bits
            .iter()
            .map(|b| b.to_string())
            .collect::<Vec<_>>()
            .join(";");
        let rt = match r.round_trip_ok {
            Some(true) => "ok",
            Some(false) => "failed",
            None => "unchecked",
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.mode,
            r.order.as_deref().unwrap_or("-"),
            r.height,
            r.width,
            r.seeds,
            r.sigma2,
            r.rho,
            r.cov,
            r.bits_per_position,
            r.theoretical_bits_per_position,
            r.interior_bits_per_position,
            r.total_bits,
            stages,
            rt
        );
    }
    s
}

fn codec_text(r: &RateReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "mode {}{} on {}x{} over {} seed(s), sigma2 {} rho {} {}",
        r.mode,
        r.order.as_deref().map(|o| format!(" ({o})")).unwrap_or_default(),
        r.height,
        r.width,
        r.seeds,
        r.sigma2,
        r.rho,
        r.cov
    );
    let _ = writeln!(s, "measured      {:.6} bits/position", r.bits_per_position);
    let _ = writeln!(
        s,
        "theoretical   {:.6} bits/position (border-aware; interior {:.6})",
        r.theoretical_bits_per_position, r.interior_bits_per_position
    );
    let _ = writeln!(s, "stream total  {:.1} bits (header + payload)", r.total_bits);
    if r.per_stage_bits.len() > 1 {
        let stages = r
            .per_stage_bits
            .iter()
            .map(|b| format!("{b:.0}"))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(s, "per-stage bits [{stages}]");
    }
    let _ = match r.round_trip_ok {
        Some(true) => writeln!(s, "round_trip=ok"),
        Some(false) => writeln!(s, "round_trip=FAILED"),
        None => Ok(()),
    };
    s
}

// ---------------------------------------------------------------------------
// pad

fn cmd_pad(args: PadArgs) -> Result<(), CliError> {
    let padding = pad_image_dims(args.height, args.width, args.n).map_err(usage)?;
    let multiple = mscs_core::grid::required_padding_multiple(args.n);
    match args.output.format {
        Format::Json => {
            let value = serde_json::json!({
                "n": args.n,
                "height": args.height,
                "width": args.width,
                "padded_height": padding.padded_h,
                "padded_width": padding.padded_w,
                "multiple": multiple,
                "overhead": padding.overhead,
            });
            emit(&args.output, format!("{value}\n"))
        }
        Format::Csv => emit(
            &args.output,
            format!(
                "n,height,width,padded_height,padded_width,multiple,overhead\n{},{},{},{},{},{},{}\n",
                args.n, args.height, args.width, padding.padded_h, padding.padded_w, multiple,
                padding.overhead
            ),
        ),
        Format::Text => emit(
            &args.output,
            format!(
                "{}x{} -> {}x{} (multiple of {}), overhead {:.2}%\n",
                args.height,
                args.width,
                padding.padded_h,
                padding.padded_w,
                multiple,
                padding.overhead * 100.0
            ),
        ),
    }
}

// ---------------------------------------------------------------------------
// simulate

fn schedule_mode(mode: ModeArg, n: Option<usize>) -> Result<ScheduleMode, CliError> {
    match mode {
        ModeArg::Ar => Ok(ScheduleMode::Ar),
        ModeArg::Checkerboard => Ok(ScheduleMode::Checkerboard),
        ModeArg::Multistage => {
            let n = n.ok_or_else(|| usage("--mode multistage requires --n"))?;
            Ok(ScheduleMode::Multistage { n })
        }
        ModeArg::Nocontext => Err(usage(
            "the schedule simulator models ar, checkerboard and multistage",
        )),
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    if let Some(path) = &args.fit_table {
        return cmd_simulate_fit(&args, path);
    }
    let mode = schedule_mode(
        args.mode.ok_or_else(|| usage("--mode or --fit-table required"))?,
        args.n,
    )?;
    let (h, w) = (
        args.height.ok_or_else(|| usage("--height required"))?,
        args.width.ok_or_else(|| usage("--width required"))?,
    );
    let dims = LatentDims::new(h, w).map_err(usage)?;
    let schedule = build_schedule(mode, dims).map_err(usage)?;
    let lm = LatencyModel::new(args.lanes, args.t0, args.t1).map_err(usage)?;
    let latency = simulate_latency(&schedule, &lm);

    match args.output.format {
        Format::Json => {
            let value = serde_json::json!({
                "mode": mode.label(),
                "height": h,
                "width": w,
                "num_stages": schedule.num_stages(),
                "positions_per_stage": schedule.positions_per_stage(),
                "lanes": args.lanes,
                "t0": args.t0,
                "t1": args.t1,
                "latency": latency,
            });
            emit(&args.output, format!("{value}\n"))
        }
        Format::Csv => emit(
            &args.output,
            format!(
                "mode,height,width,num_stages,latency\n{},{},{},{},{}\n",
                mode.label(),
                h,
                w,
                schedule.num_stages(),
                latency
            ),
        ),
        Format::Text => emit(
            &args.output,
            format!(
                "{} on {}x{}: {} stages of {} positions; latency {:.4} \
                 (t0 {} + positions*t1 {} / {} lanes per stage)\n",
                mode.label(),
                h,
                w,
                schedule.num_stages(),
                summary_positions(schedule.positions_per_stage()),
                latency,
                args.t0,
                args.t1,
                args.lanes
            ),
        ),
    }
}

fn summary_positions(p: &[usize]) -> String {
    if p.iter().all(|&x| x == p[0]) {
        format!("{}", p[0])
    } else {
        format!("{:?}", p)
    }
}

fn cmd_simulate_fit(args: &SimulateArgs, path: &std::path::Path) -> Result<(), CliError> {
    let contents = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let mut samples: Vec<(Schedule, f64)> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    for (idx, line) in contents.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (idx == 0 && line.starts_with("mode")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(usage(format!(
                "fit table line {}: expected mode,n,height,width,latency",
                idx + 1
            )));
        }
        let mode = match fields[0] {
            "ar" => ScheduleMode::Ar,
            "checkerboard" => ScheduleMode::Checkerboard,
            "multistage" => {
                let n = fields[1]
                    .parse()
                    .map_err(|_| usage(format!("fit table line {}: bad n", idx + 1)))?;
                ScheduleMode::Multistage { n }
            }
            other => return Err(usage(format!("fit table line {}: unknown mode {other:?}", idx + 1))),
        };
        let h: usize = fields[2]
            .parse()
            .map_err(|_| usage(format!("fit table line {}: bad height", idx + 1)))?;
        let w: usize = fields[3]
            .parse()
            .map_err(|_| usage(format!("fit table line {}: bad width", idx + 1)))?;
        let latency: f64 = fields[4]
            .parse()
            .map_err(|_| usage(format!("fit table line {}: bad latency", idx + 1)))?;
        let dims = LatentDims::new(h, w).map_err(usage)?;
        samples.push((build_schedule(mode, dims).map_err(usage)?, latency));
        labels.push(mode.label());
    }

    let objective = match args.fit {
        FitArg::Ls => FitObjective::LeastSquares,
        FitArg::Lsrel => FitObjective::RelativeLeastSquares,
        FitArg::Minimax => FitObjective::MinimaxRelative,
    };
    let fit = fit_overhead(&samples, args.lanes, objective).map_err(usage)?;

    match args.output.format {
        Format::Json => {
            let rows: Vec<serde_json::Value> = samples
                .iter()
                .zip(&labels)
                .zip(fit.predictions.iter().zip(&fit.residual_ratios))
                .map(|(((s, y), label), (pred, ratio))| {
                    serde_json::json!({
                        "mode": label,
                        "num_stages": s.num_stages(),
                        "measured": y,
                        "predicted": pred,
                        "ratio": ratio,
                    })
                })
                .collect();
            let value = serde_json::json!({
                "t0": fit.model.per_stage_overhead,
                "t1": fit.model.per_position_cost,
                "lanes": args.lanes,
                "max_abs_relative_error": fit.max_abs_relative_error,
                "samples": rows,
            });
            emit(&args.output, format!("{value}\n"))
        }
        Format::Csv => {
            let mut s = String::from("mode,num_stages,measured,predicted,ratio\n");
            for ((sample, label), (pred, ratio)) in samples
                .iter()
                .zip(&labels)
                .zip(fit.predictions.iter().zip(&fit.residual_ratios))
            {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{}",
                    label,
                    sample.0.num_stages(),
                    sample.1,
                    pred,
                    ratio
                );
            }
            let _ = writeln!(s, "# t0={} t1={} lanes={}", fit.model.per_stage_overhead, fit.model.per_position_cost, args.lanes);
            emit(&args.output, s)
        }
        Format::Text => {
            let mut s = String::new();
            let _ = writeln!(
                s,
                "fitted t0 = {:.4}, t1 = {:.4} (lanes {}, objective {:?})",
                fit.model.per_stage_overhead, fit.model.per_position_cost, args.lanes, objective
            );
            for ((sample, label), (pred, ratio)) in samples
                .iter()
                .zip(&labels)
                .zip(fit.predictions.iter().zip(&fit.residual_ratios))
            {
                let _ = writeln!(
                    s,
                    "  {:14} measured {:10.2}  predicted {:10.2}  ratio {:.3}",
                    label, sample.1, pred, ratio
                );
            }
            let _ = writeln!(s, "max relative error {:.3}", fit.max_abs_relative_error);
            emit(&args.output, s)
        }
    }
}
