use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use chiplet_sni::harness::{
    self, presets, workload::WorkloadKind, CompareReport, ConfigError, SimConfig, SimReport,
};

const EXIT_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 64;

/// Simulate chiplets on an active interposer whose network interfaces
/// check and rewrite cache-coherence traffic.
#[derive(Parser, Debug)]
#[command(name = "chiplet-sni", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one simulation and write its report.
    Run(RunArgs),
    /// Run a configuration with SNIs off and on and report the latency change.
    Compare(CompareArgs),
    /// Inject every attack template in turn and print the confusion matrix.
    AttackSuite(SuiteArgs),
    /// Check a configuration without running it.
    ValidateConfig(ConfigArgs),
    /// List the bundled presets.
    Presets,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// Bundled configuration to start from.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// uniform, hotspot, sharing or trace.
    #[arg(long)]
    workload: Option<String>,
    /// Trace file for the trace workload.
    #[arg(long)]
    trace_file: Option<PathBuf>,
    #[arg(long)]
    ops_per_core: Option<u64>,
    /// Interposer link width in bits: 64 or 128.
    #[arg(long)]
    link_width: Option<u32>,
    /// Virtual channels per virtual network: 4, 6, 8 or 10.
    #[arg(long)]
    vc_per_vnet: Option<usize>,
    /// Permission map file.
    #[arg(long)]
    permissions: Option<PathBuf>,
    /// Chiplet to strip of all access.
    #[arg(long)]
    observer: Option<usize>,
    /// Interposer cycle budget.
    #[arg(long)]
    max_cycles: Option<u64>,
    /// Disable every SNI.
    #[arg(long)]
    no_sni: bool,
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Directory for report files.
    #[arg(long, env = "SNI_SIM_OUT", default_value = "sni-out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Also write the interposer flit trace.
    #[arg(long)]
    trace: bool,
    /// Leave per-packet records out of the report.
    #[arg(long)]
    no_packets: bool,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Compare two existing reports (SNI off, then SNI on) instead of running.
    #[arg(long, num_args = 2, value_names = ["OFF", "ON"])]
    reports: Option<Vec<PathBuf>>,
}

#[derive(Args, Debug)]
struct SuiteArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Core whose interface injects the messages.
    #[arg(long, default_value_t = 0)]
    core: u8,
    /// Interposer cycle of injection.
    #[arg(long, default_value_t = 100)]
    trigger_cycle: u64,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Io(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

/// Print to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn load_config(a: &ConfigArgs) -> Result<SimConfig, Failure> {
    let mut cfg = match (&a.preset, &a.config) {
        (Some(p), _) => presets::preset(p)?,
        (None, Some(path)) => SimConfig::load(path)?,
        (None, None) => presets::preset("desk-scale")?,
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(w) = &a.workload {
        cfg.workload.kind = WorkloadKind::from_name(w).ok_or_else(|| {
            Failure::Config(format!(
                "unknown workload {w:?} (known: uniform, hotspot, sharing, trace)"
            ))
        })?;
    }
    if let Some(t) = &a.trace_file {
        cfg.workload.trace = Some(t.clone());
        cfg.workload.kind = WorkloadKind::Trace;
    }
    if let Some(n) = a.ops_per_core {
        cfg.workload.ops_per_core = n;
    }
    if let Some(w) = a.link_width {
        cfg.network.link_width = w;
    }
    if let Some(v) = a.vc_per_vnet {
        cfg.network.vc_per_vnet = v;
    }
    if let Some(p) = &a.permissions {
        cfg.permissions.map = Some(p.clone());
        cfg.permissions.preset = None;
    }
    if let Some(o) = a.observer {
        cfg.permissions.observer = Some(o);
    }
    if let Some(m) = a.max_cycles {
        cfg.run.max_cycles = m;
    }
    if a.no_sni {
        cfg.network.sni_enabled = false;
    }
    Ok(cfg)
}

fn stem(cfg: &SimConfig) -> String {
    let name = if cfg.name.is_empty() { "run" } else { &cfg.name };
    format!("{name}-s{}", cfg.seed)
}

fn write(dir: &Path, file: &str, contents: &str) -> Result<PathBuf, Failure> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(file);
    fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

fn cmd_run(a: &RunArgs) -> Result<u8, Failure> {
    let mut cfg = load_config(&a.config)?;
    if a.trace {
        cfg.network.trace = true;
    }
    if a.no_packets {
        cfg.run.packet_records = false;
    }
    let (report, out) = harness::simulate(&cfg)?;
    let stem = stem(&cfg);
    let dir = &a.output.out;
    let json = write(dir, &format!("{stem}.report.json"), &report.to_json())?;
    if cfg.run.packet_records {
        write(dir, &format!("{stem}.packets.csv"), &report.packets_csv())?;
    }
    if a.trace {
        let lines: String = out.fabric.trace().iter().map(|t| t.to_line() + "\n").collect();
        write(dir, &format!("{stem}.trace.txt"), &lines)?;
    }
    emit(&report.summary());
    emit(&format!("report: {}\n", json.display()));
    Ok(report.exit_code as u8)
}

fn read_report(path: &Path) -> Result<SimReport, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Failure::Config(format!("{}: not a report: {e}", path.display())))?;
    let version = value.get("schema_version").and_then(serde_json::Value::as_u64);
    if version != Some(u64::from(harness::SCHEMA_VERSION)) {
        return Err(Failure::Config(format!(
            "{}: report schema version {} is not supported (expected {})",
            path.display(),
            version.map_or("missing".to_string(), |v| v.to_string()),
            harness::SCHEMA_VERSION
        )));
    }
    SimReport::from_json(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn cmd_compare(a: &CompareArgs) -> Result<u8, Failure> {
    let (cmp, off, on) = match &a.reports {
        Some(paths) => {
            let off = read_report(&paths[0])?;
            let on = read_report(&paths[1])?;
            let cmp = CompareReport::new(&off, &on).map_err(Failure::Config)?;
            (cmp, off, on)
        }
        None => {
            let cfg = load_config(&a.config)?;
            let (cmp, off, on) = harness::compare(&cfg)?;
            let stem = stem(&cfg);
            let dir = &a.output.out;
            write(dir, &format!("{stem}.off.report.json"), &off.to_json())?;
            write(dir, &format!("{stem}.on.report.json"), &on.to_json())?;
            write(dir, &format!("{stem}.compare.json"), &cmp.to_json())?;
            write(
                dir,
                &format!("{stem}.compare.csv"),
                &(CompareReport::csv_row_header().to_string() + &cmp.csv_row()),
            )?;
            (cmp, off, on)
        }
    };
    emit(&cmp.summary());
    Ok(off.exit_code.max(on.exit_code) as u8)
}

fn cmd_suite(a: &SuiteArgs) -> Result<u8, Failure> {
    let cfg = load_config(&a.config)?;
    let suite = harness::attack_suite(&cfg, a.core, a.trigger_cycle)?;
    write(&a.output.out, &format!("{}.attack-suite.json", stem(&cfg)), &suite.to_json())?;
    emit(&suite.summary());
    Ok(if suite.diagonal() { 0 } else { EXIT_FAILED })
}

fn cmd_validate(a: &ConfigArgs) -> Result<u8, Failure> {
    let cfg = load_config(a)?;
    let v = cfg.validate()?;
    emit(&format!(
        "ok: {} chiplets x {} cores, {}-bit links, {} VCs per vnet, {} regions, workload {}, {} attack(s)\n",
        v.system.chiplets,
        v.system.cores_per_chiplet,
        cfg.network.link_width,
        cfg.network.vc_per_vnet,
        v.table.geometry().regions,
        cfg.workload.kind.name(),
        cfg.attacks.len()
    ));
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::AttackSuite(a) => cmd_suite(a),
        Command::ValidateConfig(a) => cmd_validate(a),
        Command::Presets => {
            for name in presets::names() {
                emit(&format!("{name}\n"));
            }
            Ok(0)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_FAILED)
        }
    }
}
