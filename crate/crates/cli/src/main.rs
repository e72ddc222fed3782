use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use vns_core::config::SimConfig;
use vns_core::diagnostics::{fit_decay, DecayModel};
use vns_core::{output, scenario, sim, Error};

#[derive(Parser)]
#[command(name = "vns", version, about = "Vlasov-Navier-Stokes simulator and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation and write its artifacts to `output.dir`.
    Run {
        /// TOML configuration layered over the preset.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Named preset used as the base configuration.
        #[arg(long)]
        preset: Option<String>,
        /// Dotted overrides, `--time.dt 1e-4` or `--time.dt=1e-4`.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
        overrides: Vec<String>,
    },
    /// Fit a decay model to one column of a time-series CSV.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "H")]
        column: String,
        /// `exp` or `alg`.
        #[arg(long, default_value = "exp")]
        model: DecayModel,
        /// Fit window `a:b`.
        #[arg(long)]
        window: Option<String>,
    },
    /// Compare particle moments with the phase-space-grid solver.
    CompareOracle {
        /// Homogeneous configuration; the built-in comparison setup when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = scenario::ORACLE_VELOCITY_NODES)]
        velocity_nodes: usize,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
        overrides: Vec<String>,
    },
}

fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, Error> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(key) = arg.strip_prefix("--") else {
            return Err(Error::Config(format!("expected an override `--key value`, got `{arg}`")));
        };
        match key.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| Error::Config(format!("override `--{key}` is missing a value")))?;
                out.push((key.to_string(), v.clone()));
            }
        }
    }
    Ok(out)
}

fn load_config(path: Option<&Path>, preset: Option<&str>, overrides: &[String], default: SimConfig) -> anyhow::Result<SimConfig> {
    let text = path
        .map(|p| std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    let file_preset = text
        .as_deref()
        .and_then(|t| t.parse::<toml::Table>().ok())
        .and_then(|t| t.get("preset").and_then(|v| v.as_str()).map(str::to_string));
    let base = match preset.map(str::to_string).or(file_preset) {
        Some(name) => scenario::preset(&name)?,
        None => default,
    };
    Ok(SimConfig::layered(&base, text.as_deref(), &parse_overrides(overrides)?)?)
}

fn parse_window(s: &str) -> Result<(f64, f64), Error> {
    let bad = || Error::Config(format!("window must be `a:b` with a < b, got `{s}`"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let (a, b): (f64, f64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    if a.partial_cmp(&b) != Some(std::cmp::Ordering::Less) {
        return Err(bad());
    }
    Ok((a, b))
}

fn print_json(text: String) -> std::io::Result<()> {
    writeln!(std::io::stdout().lock(), "{text}")
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            config,
            preset,
            overrides,
        } => {
            if config.is_none() && preset.is_none() {
                return Err(Error::Config("give --config, --preset or both".into()).into());
            }
            let cfg = load_config(config.as_deref(), preset.as_deref(), &overrides, SimConfig::default())?;
            let dir = cfg
                .output
                .dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("runs").join(cfg.preset.as_deref().unwrap_or("run")));
            log::info!("writing to {}", dir.display());
            let summary = output::run_to_dir(cfg, &dir)?;
            print_json(serde_json::to_string_pretty(&summary)?)?;
        }
        Command::Fit {
            input,
            column,
            model,
            window,
        } => {
            let series = output::read_column(&input, &column)?;
            let window = match window {
                Some(w) => parse_window(&w)?,
                None => {
                    let t = series.iter().map(|s| s.0);
                    (t.clone().fold(f64::INFINITY, f64::min), t.fold(f64::NEG_INFINITY, f64::max))
                }
            };
            let fit = fit_decay(&series, model, window)?;
            print_json(serde_json::to_string_pretty(&fit)?)?;
        }
        Command::CompareOracle {
            config,
            velocity_nodes,
            overrides,
        } => {
            let cfg = load_config(config.as_deref(), None, &overrides, scenario::oracle_comparison_config())?;
            let report = sim::compare_with_oracle(&cfg, velocity_nodes)?;
            print_json(serde_json::to_string_pretty(&report)?)?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(
            Error::Config(_)
            | Error::InvalidDistribution(_)
            | Error::InvalidGrid(_)
            | Error::InvalidTimeStep(_)
            | Error::InsufficientSamples { .. },
        ) => 2,
        Some(Error::Io(_) | Error::Json(_)) => 4,
        Some(_) => 3,
        None if err.downcast_ref::<std::io::Error>().is_some() => 4,
        None => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &[&str]) -> Vec<String> {
        s.iter().map(|a| a.to_string()).collect()
    }

    #[test]
    fn overrides_accept_both_forms() {
        let parsed = parse_overrides(&args(&["--time.dt", "1e-4", "--domain.n=32", "--fluid.mean", "[0.5, -1]"])).unwrap();
        assert_eq!(
            parsed,
            [
                ("time.dt".to_string(), "1e-4".to_string()),
                ("domain.n".into(), "32".into()),
                ("fluid.mean".into(), "[0.5, -1]".into()),
            ]
        );
        assert!(matches!(parse_overrides(&args(&["time.dt", "1"])), Err(Error::Config(_))));
        assert!(matches!(parse_overrides(&args(&["--time.dt"])), Err(Error::Config(_))));
    }

    #[test]
    fn windows() {
        assert_eq!(parse_window("2:10").unwrap(), (2.0, 10.0));
        assert_eq!(parse_window(" 0.5 : 1 ").unwrap(), (0.5, 1.0));
        for bad in ["3:1", "1:1", "1", "a:b", "NaN:1"] {
            assert!(parse_window(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn exit_code_classes() {
        assert_eq!(exit_code(&Error::Config("x".into()).into()), 2);
        assert_eq!(exit_code(&Error::InvalidTimeStep(0.0).into()), 2);
        assert_eq!(exit_code(&Error::from(std::io::Error::other("x")).into()), 4);
        assert_eq!(exit_code(&anyhow::Error::from(std::io::Error::other("x")).context("reading")), 4);
        assert_eq!(exit_code(&Error::PressureNonConvergence { iterations: 1, residual: 1.0 }.into()), 3);
    }
}
