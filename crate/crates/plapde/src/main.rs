use clap::{Parser, Subcommand};
use plapde::config::{parse_config, RunConfig};
use plapde::runner::{self, RunArtifact, RunError};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Solve degenerate p-Laplacian evolution problems with zero nonlinear
/// Neumann flux and audit the energy estimates along every trajectory.
#[derive(Parser)]
#[command(name = "plapde", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Unlock the linear p = 2 operator for analytic-reduction diagnostics.
    #[arg(long, global = true)]
    p2_diagnostic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one configured run and write its artifact directory.
    Run { config: PathBuf },
    /// Recompute the audits of an existing artifact from its manifest.
    Audit { artifact: PathBuf },
    /// Compare two artifacts at their shared times.
    Compare { a: PathBuf, b: PathBuf },
    /// Run one configuration several times, varying a single key.
    Sweep {
        config: PathBuf,
        /// key=v1,v2,... applied on top of the base configuration
        #[arg(long)]
        vary: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

fn dispatch(cli: Cli) -> Result<i32, RunError> {
    match cli.command {
        Command::Run { config } => {
            let cfg = load_config(&config, cli.p2_diagnostic)?;
            run_and_report(&cfg)
        }
        Command::Audit { artifact } => {
            let loaded = runner::load_artifact(&artifact)?;
            let mut cfg = loaded.config;
            cfg.p2_diagnostic |= cli.p2_diagnostic;
            // re-derive every report from the manifest, in place
            cfg.out_dir = artifact
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from("."));
            cfg.label = artifact
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "audit".to_string());
            run_and_report(&cfg)
        }
        Command::Compare { a, b } => {
            let la = runner::load_artifact(&a)?;
            let lb = runner::load_artifact(&b)?;
            let diff = runner::compare_runs(&la, &lb)?;
            print!("{diff}");
            Ok(0)
        }
        Command::Sweep { config, vary } => {
            let (key, values) = vary.split_once('=').ok_or_else(|| {
                RunError::Incompatible(format!("--vary expects key=v1,v2,..., got '{vary}'"))
            })?;
            let base_text =
                std::fs::read_to_string(&config).map_err(|source| RunError::Io {
                    path: config.clone(),
                    source,
                })?;
            let mut jobs = Vec::new();
            for (idx, value) in values.split(',').enumerate() {
                let mut text = override_key(&base_text, key, value.trim());
                if cli.p2_diagnostic {
                    text = override_key(&text, "p2_diagnostic", "true");
                }
                let mut cfg = parse_config(&text)?;
                cfg.label = format!("{}_{:02}", cfg.label, idx);
                cfg.validate()?;
                jobs.push((format!("{key}={value}"), cfg));
            }
            // each run writes to its own directory; no shared state
            let results: Vec<(String, String, Result<i32, RunError>)> =
                std::thread::scope(|scope| {
                    let handles: Vec<_> = jobs
                        .iter()
                        .map(|(setting, cfg)| {
                            (
                                cfg.label.clone(),
                                setting.clone(),
                                scope.spawn(move || run_and_report(cfg)),
                            )
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|(label, setting, handle)| {
                            (label, setting, handle.join().expect("sweep worker panicked"))
                        })
                        .collect()
                });
            let mut worst = 0;
            for (label, setting, result) in results {
                let code = result?;
                println!("sweep {label} ({setting}): exit {code}");
                worst = worst.max(code);
            }
            Ok(worst)
        }
    }
}

fn load_config(path: &Path, p2_diagnostic: bool) -> Result<RunConfig, RunError> {
    let mut text = std::fs::read_to_string(path).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if p2_diagnostic {
        // the flag is sugar for the config key and must land before the
        // p-exponent validation runs
        text = override_key(&text, "p2_diagnostic", "true");
    }
    Ok(parse_config(&text)?)
}

fn run_and_report(cfg: &RunConfig) -> Result<i32, RunError> {
    let artifact = runner::run_scenario(cfg)?;
    print_summary(&artifact);
    Ok(if artifact.failed_verdicts.is_empty() {
        0
    } else {
        1
    })
}

fn print_summary(artifact: &RunArtifact) {
    println!(
        "run '{}' finished in {:.3}s -> {}",
        artifact.config.label,
        artifact.wall.as_secs_f64(),
        artifact.dir.display()
    );
    for v in &artifact.report.verdicts {
        println!(
            "  {:<28} {}  (margin {:.3e})",
            v.name,
            if v.pass { "pass" } else { "FAIL" },
            v.margin
        );
    }
}

/// Replace (or append) one `key = value` line in a config document.
fn override_key(text: &str, key: &str, value: &str) -> String {
    let mut out = String::new();
    let mut replaced = false;
    for line in text.lines() {
        let content = line.split('#').next().unwrap_or("");
        let is_key = content
            .split_once('=')
            .map(|(k, _)| k.trim() == key)
            .unwrap_or(false);
        if is_key {
            out.push_str(&format!("{key} = {value}\n"));
            replaced = true;
        } else {
            out.push_str(line);
            out.push('\n');
        }
    }
    if !replaced {
        out.push_str(&format!("{key} = {value}\n"));
    }
    out
}
