use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ropocop::analyze::{analyze_events, AnalysisReport, AnalyzeOptions};
use ropocop::anticra::try_extract_features;
use ropocop::config::{self, build_gen_spec, DetectorConfig, GenSection};
use ropocop::depplus::DepMode;
use ropocop::eval::{classify_corpus, probe_watermark_divergence, regeneration_check, summarize};
use ropocop::learning::{build_profile, Margins};
use ropocop::ratio::Ratio;
use ropocop::synth;
use ropocop::trace::{TraceReader, TraceWriter, TRACE_FILE_EXT};

const EXIT_CLEAN: u8 = 0;
const EXIT_INPUT_ERROR: u8 = 2;
const EXIT_ALARM: u8 = 3;

/// Execution-trace analysis: code-reuse-attack detectors, threshold
/// learning, and trace synthesis.
#[derive(Parser)]
#[command(name = "ropocop", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the detectors over a trace and emit a JSON report.
    ///
    /// Exit codes: 0 clean, 3 alarm(s) raised, 2 input error.
    Analyze(AnalyzeArgs),
    /// Learn per-program thresholds from a directory of benign traces.
    Learn(LearnArgs),
    /// Generate a synthetic trace.
    Gen(GenArgs),
    /// Classify the embedded evaluation corpus and write the results as CSV.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DetectorArg {
    Anticra,
    Depplus,
}

#[derive(Clone, Copy, ValueEnum)]
enum DepModeArg {
    Full,
    Watermark,
}

impl From<DepModeArg> for DepMode {
    fn from(m: DepModeArg) -> DepMode {
        match m {
            DepModeArg::Full => DepMode::FullScan,
            DepModeArg::Watermark => DepMode::Watermark,
        }
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Trace file to analyze (.rtrc).
    #[arg(long)]
    trace: PathBuf,
    /// Detector config; defaults apply when neither this nor ROPOCOP_CONFIG
    /// is set.
    #[arg(long, env = "ROPOCOP_CONFIG")]
    config: Option<PathBuf>,
    /// Which detectors to run.
    #[arg(long, value_delimiter = ',', default_values = ["anticra", "depplus"])]
    detectors: Vec<DetectorArg>,
    /// Override the configured scan mode.
    #[arg(long)]
    depplus_mode: Option<DepModeArg>,
    /// Stop at the first alarm instead of collecting the full alarm set.
    #[arg(long)]
    fail_fast: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LearnArgs {
    /// Directory containing .rtrc training traces.
    #[arg(long)]
    dir: PathBuf,
    /// Program name recorded in the profile.
    #[arg(long)]
    program: String,
    /// Extra indirect branches allowed beyond the observed maximum.
    #[arg(long)]
    count_margin: Option<u64>,
    /// Average-length backoff below the observed minimum (decimal, e.g. 0.25).
    #[arg(long)]
    avg_margin: Option<Ratio>,
    /// Profile output path (default: <program>.profile.toml).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// benign, pure-rop, pure-jop, two-staged, code-injection, nop-evasion.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Config file providing a [gen] section; flags override it.
    #[arg(long, env = "ROPOCOP_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long)]
    gadget_count: Option<u64>,
    /// Constant gadget length.
    #[arg(long)]
    gadget_len: Option<u64>,
    /// Cyclic gadget lengths, e.g. 2,2,3.
    #[arg(long, value_delimiter = ',')]
    gadget_len_cycle: Option<Vec<u64>>,
    #[arg(long)]
    prelude_gadgets: Option<u64>,
    #[arg(long)]
    padding_gadget_len: Option<u64>,
    #[arg(long)]
    pad_every: Option<u64>,
    #[arg(long)]
    blocks: Option<u64>,
    #[arg(long)]
    max_run: Option<u64>,
    /// Lower bound on windowed averages for benign traces (decimal).
    #[arg(long)]
    min_avg: Option<Ratio>,
    /// Stage the payload above the watermark via an allocation jump.
    #[arg(long)]
    alloc_jump: bool,
    #[arg(long)]
    images: Option<u32>,
    #[arg(long)]
    shellcode_blocks: Option<u64>,
    /// Injected-code address for code-injection traces (0x-prefixed hex).
    #[arg(long)]
    buffer_addr: Option<String>,
    /// Trace output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, env = "ROPOCOP_CONFIG")]
    config: Option<PathBuf>,
    /// CSV output path.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Analyze(args) => cmd_analyze(args),
        Cmd::Learn(args) => cmd_learn(args).map(|_| EXIT_CLEAN),
        Cmd::Gen(args) => cmd_gen(args).map(|_| EXIT_CLEAN),
        Cmd::Eval(args) => cmd_eval(args).map(|_| EXIT_CLEAN),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_INPUT_ERROR)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<DetectorConfig> {
    match path {
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let doc = config::parse_config(&text)
                .with_context(|| format!("parsing config {}", p.display()))?;
            Ok(doc.detector)
        }
        None => Ok(DetectorConfig::default()),
    }
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<u8> {
    let cfg = load_config(args.config.as_deref())?;
    let opts = AnalyzeOptions {
        anticra: args.detectors.contains(&DetectorArg::Anticra),
        depplus: args.detectors.contains(&DetectorArg::Depplus),
        depplus_mode: args.depplus_mode.map_or(cfg.depplus.mode, DepMode::from),
        fail_fast: args.fail_fast,
    };
    let file = File::open(&args.trace)
        .with_context(|| format!("opening trace {}", args.trace.display()))?;
    let reader = TraceReader::new(BufReader::new(file));
    let outcome = analyze_events(reader, &cfg, opts)
        .with_context(|| format!("analyzing {}", args.trace.display()))?;

    let report = AnalysisReport::new(&args.trace.display().to_string(), &opts, &outcome);
    let json = report.to_json_pretty();
    match &args.out {
        Some(path) => {
            fs::write(path, json.as_bytes())
                .with_context(|| format!("writing report {}", path.display()))?;
            println!(
                "{}: {} alarm(s) over {} events (report: {})",
                args.trace.display(),
                outcome.alarms.len(),
                outcome.events,
                path.display()
            );
        }
        None => println!("{json}"),
    }
    Ok(if outcome.alarms.is_empty() {
        EXIT_CLEAN
    } else {
        EXIT_ALARM
    })
}

fn cmd_learn(args: LearnArgs) -> Result<()> {
    let mut paths: Vec<PathBuf> = fs::read_dir(&args.dir)
        .with_context(|| format!("reading directory {}", args.dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == TRACE_FILE_EXT))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!(
            "no .{TRACE_FILE_EXT} traces found in {}",
            args.dir.display()
        );
    }

    let defaults = Margins::default();
    let margins = Margins {
        count_margin: args.count_margin.unwrap_or(defaults.count_margin),
        avg_margin: args.avg_margin.unwrap_or(defaults.avg_margin),
    };
    let cfg = ropocop::anticra::AntiCraConfig::default();
    let mut features = Vec::with_capacity(paths.len());
    for path in &paths {
        let file = File::open(path).with_context(|| format!("opening trace {}", path.display()))?;
        let f = try_extract_features(TraceReader::new(BufReader::new(file)), &cfg)
            .with_context(|| format!("decoding {}", path.display()))?;
        features.push(f);
    }
    let profile = build_profile(&args.program, &features, margins)?;

    let out = args
        .out
        .unwrap_or_else(|| PathBuf::from(format!("{}.profile.toml", args.program)));
    let text = config::profile_toml(&profile, &ropocop::depplus::DepPlusConfig::default());
    fs::write(&out, text).with_context(|| format!("writing profile {}", out.display()))?;

    println!("program: {}", profile.program);
    println!("traces: {}", profile.traces_seen);
    println!(
        "observed max consecutive indirect branches: {}",
        profile.observed_max_consecutive
    );
    match profile.observed_min_window_avg {
        Some(avg) => println!("observed min window average: {avg}"),
        None => println!("observed min window average: none (no run reached warmup)"),
    }
    println!(
        "recommended thresholds: {}@{} / {}@{} / cap {}",
        profile.recommended.band1_max_count,
        profile.recommended.band1_max_avg,
        profile.recommended.band2_max_count,
        profile.recommended.band2_max_avg,
        profile.recommended.hard_cap
    );
    println!("profile written to: {}", out.display());
    Ok(())
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let from_file = match &args.config {
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            config::parse_config(&text)
                .with_context(|| format!("parsing config {}", p.display()))?
                .gen
                .unwrap_or_default()
        }
        None => GenSection::default(),
    };
    let flags = GenSection {
        kind: args.kind,
        seed: args.seed,
        gadget_count: args.gadget_count,
        gadget_len: args.gadget_len,
        gadget_len_cycle: args.gadget_len_cycle,
        prelude_gadgets: args.prelude_gadgets,
        padding_gadget_len: args.padding_gadget_len,
        pad_every: args.pad_every,
        blocks: args.blocks,
        max_run: args.max_run,
        min_avg: args.min_avg,
        alloc_jump: args.alloc_jump.then_some(true),
        images: args.images,
        shellcode_blocks: args.shellcode_blocks,
        buffer_addr: args.buffer_addr,
    };
    let spec = build_gen_spec(&flags.over(from_file))?;
    let events = synth::generate(&spec)?;

    let file =
        File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut writer = TraceWriter::new(BufWriter::new(file));
    for ev in &events {
        writer.write_event(ev)?;
    }
    writer.finish()?;
    println!(
        "wrote {} ({} events, kind {}, seed {})",
        args.out.display(),
        events.len(),
        spec.kind.name(),
        spec.seed
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let rows = classify_corpus(&cfg);

    let mut csv = csv::Writer::from_path(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    csv.write_record(["label", "count", "avg", "expected", "got", "match"])?;
    for row in &rows {
        csv.write_record([
            row.series.as_str(),
            &row.count.to_string(),
            &row.avg.map(|r| r.to_display_string()).unwrap_or_default(),
            row.expected.as_str(),
            row.got.as_str(),
            &row.matches().to_string(),
        ])?;
    }
    csv.flush()?;

    let summary = summarize(&rows);
    let (regen_total, regen_mismatches) =
        regeneration_check(&cfg, 0xEC0).map_err(|e| anyhow!("regenerating traces: {e}"))?;
    let probe =
        probe_watermark_divergence(&cfg, 0..20).map_err(|e| anyhow!("divergence probe: {e}"))?;

    println!(
        "corpus: {} points (csv: {})",
        rows.len(),
        args.out.display()
    );
    println!("{}", summary.headline());
    println!(
        "regenerated traces agreeing with the table: {}/{}",
        regen_total - regen_mismatches.len(),
        regen_total
    );
    for miss in &regen_mismatches {
        println!(
            "  mismatch: {} count {} expected {} got {}",
            miss.point.series.as_str(),
            miss.point.count,
            miss.expected.as_str(),
            miss.got.as_str()
        );
    }
    match probe.first_example {
        Some((seed, event_index)) => println!(
            "watermark divergence probe: {}/{} allocation-jump traces diverge from the full scan (first: seed {seed}, event {event_index})",
            probe.divergent_traces, probe.traces
        ),
        None => println!(
            "watermark divergence probe: no divergence across {} allocation-jump traces",
            probe.traces
        ),
    }
    let _ = std::io::stdout().flush();
    Ok(())
}
