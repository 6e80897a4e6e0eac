use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use selfsup::config::{run_experiment, ExperimentConfig};
use selfsup::harness::MetricRow;
use selfsup::suites::{run_suite, Scale};
use selfsup::Error;

/// Output directory override for every command.
const OUT_ENV: &str = "SELFSUP_OUT_DIR";

#[derive(Parser)]
#[command(name = "selfsup", version, about = "Self-supervised losses for inverse problems, checked against Bayesian oracles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and score one experiment described by a JSON config.
    Run { config: PathBuf },
    /// Run a named scenario suite and print its pass/fail table.
    Suite {
        name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "smoke")]
        scale: String,
    },
    /// Merge report or suite JSON files into one CSV.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    /// A suite row failed.
    Check(String),
    Usage(String),
    Diverged(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Diverged(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Check(m) | Failure::Usage(m) | Failure::Diverged(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Divergence(_) => Failure::Diverged(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

fn out_dir(configured: Option<&str>) -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .or_else(|| configured.map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"))
}

/// Write to a sibling temporary file, then rename over the target.
fn write_atomic(path: &Path, contents: &str) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::Usage(format!("cannot write {}: {e}", path.display()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(contents.as_bytes()).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

fn cmd_run(config: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(config).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", config.display())))?;
    let cfg = ExperimentConfig::from_json(&text)?;
    let (_, report) = run_experiment(&cfg)?;
    let dir = out_dir(cfg.output.dir.as_deref());
    let stem = cfg.stem();
    let json = dir.join(format!("{stem}.json"));
    let csv = dir.join(format!("{stem}.curves.csv"));
    write_atomic(&json, &report.to_json()?)?;
    write_atomic(&csv, &report.curves_csv())?;
    println!(
        "{}: loss {} best epoch {} val {:.5e} test mse {:.5e}{}",
        report.scenario,
        report.loss,
        report.best_epoch,
        report.final_val_loss,
        report.test_mse.unwrap_or(f64::NAN),
        report.mmse.map(|m| format!(" (oracle {m:.5e})")).unwrap_or_default()
    );
    println!("wrote {} and {}", json.display(), csv.display());
    Ok(())
}

fn cmd_suite(name: &str, seed: u64, scale: &str) -> Result<(), Failure> {
    let scale: Scale = scale.parse()?;
    let res = run_suite(name, scale, seed)?;
    print!("{}", res.table());
    let scale_name = match scale {
        Scale::Smoke => "smoke",
        Scale::Full => "full",
    };
    let path = out_dir(None).join(format!("suite-{name}-{scale_name}-s{seed}.json"));
    let json = serde_json::to_string_pretty(&res).map_err(|e| Failure::Usage(e.to_string()))? + "\n";
    write_atomic(&path, &json)?;
    println!("wrote {}", path.display());
    match res.failures().first() {
        None => Ok(()),
        Some(r) => Err(Failure::Check(format!(
            "{} failed: {} {} = {:.5e} (se {:.2e}, reference {}) {}",
            res.scenario,
            r.method,
            r.metric,
            r.value,
            r.se,
            r.reference.map(|v| format!("{v:.5e}")).unwrap_or_else(|| "-".into()),
            r.note
        ))),
    }
}

/// The fields shared by experiment reports and suite results.
#[derive(Deserialize)]
struct RowsDoc {
    scenario: String,
    seed: u64,
    rows: Vec<MetricRow>,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn cmd_report(files: &[PathBuf], out: &Path) -> Result<(), Failure> {
    if files.is_empty() {
        return Err(Failure::Usage("report needs at least one input file".into()));
    }
    let mut csv = String::from("scenario,seed,method,metric,value,se,pass\n");
    let mut count = 0;
    for f in files {
        let text = fs::read_to_string(f).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", f.display())))?;
        let doc: RowsDoc = serde_json::from_str(&text)
            .map_err(|e| Failure::Usage(format!("{}: not a report or suite result: {e}", f.display())))?;
        for r in &doc.rows {
            let pass = match (r.pass, r.expected_fail) {
                (_, true) => "expected_fail",
                (Some(true), _) => "true",
                (Some(false), _) => "false",
                (None, _) => "",
            };
            csv.push_str(&format!(
                "{},{},{},{},{:.17e},{:.17e},{}\n",
                csv_field(&doc.scenario),
                doc.seed,
                csv_field(&r.method),
                csv_field(&r.metric),
                r.value,
                r.se,
                pass
            ));
            count += 1;
        }
    }
    write_atomic(out, &csv)?;
    println!("merged {count} rows from {} files into {}", files.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Run { config } => cmd_run(config),
        Command::Suite { name, seed, scale } => cmd_suite(name, *seed, scale),
        Command::Report { files, out } => cmd_report(files, out),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
