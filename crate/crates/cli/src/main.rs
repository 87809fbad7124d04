use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dazzle_core::harness::{self, Command, RunConfig};

/// Rolling-shutter dazzle patterns, visibility thresholds and pulse-train attacks.
///
/// Every option maps onto a flat configuration key; `--set key=value` reaches
/// the rest. Each run writes its outputs and a `manifest.toml` into `--out`,
/// and passing that manifest back as `--config` reproduces the run.
#[derive(Parser, Debug)]
#[command(name = "dazzle", version)]
struct Cli {
    /// Flat key-value config file or a manifest from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// `bundled` or `exec:<command line>`.
    #[arg(long, global = true)]
    classifier: Option<String>,
    /// Override any config key, e.g. `--set alpha=2.5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_key_value)]
    overrides: Vec<(String, String)>,
    #[command(subcommand)]
    command: Cmd,
}

fn parse_key_value(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

#[derive(Args, Debug, Default)]
struct TrainArgs {
    /// Comma-separated active pulse slots.
    #[arg(long, value_delimiter = ',')]
    slots: Option<Vec<usize>>,
    #[arg(long)]
    width_us: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct TargetArgs {
    /// Portable pixmap input (P5/P6).
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    label: Option<usize>,
    /// Bundled-classifier weights written by `train`.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Render the stripe pattern of a pulse train, optionally onto an image.
    Pattern {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        shift: Option<usize>,
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Tabulate the invisible-duty-cycle threshold over viewing angle and background.
    Photopic {
        #[arg(long, value_delimiter = ',')]
        theta: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        l_b: Option<Vec<f64>>,
    },
    /// Optimize a pulse train against one image.
    Attack {
        #[command(flatten)]
        target: TargetArgs,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Attack success over a grid of duty cycles, pulse widths or object sizes.
    Sweep {
        #[arg(long, value_parser = ["duty_cycle", "pulse_width", "fov_fraction"])]
        axis: Option<String>,
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, value_parser = ["reoptimize", "fixed"])]
        mode: Option<String>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Classify images under every (or randomly drawn) shift of a fixed train.
    Evaluate {
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        target: TargetArgs,
        #[arg(long, value_parser = ["exhaustive", "random"])]
        shift_mode: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Train the bundled classifier on the synthetic shapes dataset.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        fov_fraction: Option<f64>,
    },
    /// Estimate the rows exposure constant from a photo of one pulse's stripes.
    #[command(name = "calibrate-rn")]
    CalibrateRn { image: Option<PathBuf> },
}

fn set<T: ToString>(out: &mut Vec<(String, String)>, key: &str, value: Option<T>) {
    if let Some(v) = value {
        out.push((key.to_string(), v.to_string()));
    }
}

fn quoted(p: &std::path::Path) -> String {
    toml::Value::String(p.display().to_string()).to_string()
}

fn list<T: ToString>(v: &[T]) -> String {
    format!("[{}]", v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","))
}

fn float_list(v: &[f64]) -> String {
    // keep integral values floats so they land in float-typed keys
    format!("[{}]", v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(","))
}

impl Cmd {
    fn resolve(&self) -> (Command, Vec<(String, String)>) {
        let mut o = Vec::new();
        let train_args = |o: &mut Vec<(String, String)>, t: &TrainArgs| {
            set(o, "pulse_slots", t.slots.as_deref().map(list));
            set(o, "width_us", t.width_us.map(|w| format!("{w:?}")));
        };
        let target_args = |o: &mut Vec<(String, String)>, t: &TargetArgs| {
            set(o, "image", t.image.as_deref().map(quoted));
            set(o, "label", t.label);
            set(o, "model", t.model.as_deref().map(quoted));
        };
        let command = match self {
            Cmd::Pattern { train, shift, image } => {
                train_args(&mut o, train);
                set(&mut o, "shift", *shift);
                set(&mut o, "image", image.as_deref().map(quoted));
                Command::Pattern
            }
            Cmd::Photopic { theta, l_b } => {
                set(&mut o, "theta_grid", theta.as_deref().map(float_list));
                set(&mut o, "l_b_grid", l_b.as_deref().map(float_list));
                Command::Photopic
            }
            Cmd::Attack { target, budget } => {
                target_args(&mut o, target);
                set(&mut o, "pulse_budget", *budget);
                Command::Attack
            }
            Cmd::Sweep { axis, grid, trials, mode, model } => {
                set(&mut o, "sweep_axis", axis.as_deref().map(|a| format!("\"{a}\"")));
                set(&mut o, "sweep_grid", grid.as_deref().map(float_list));
                set(&mut o, "sweep_trials", *trials);
                set(&mut o, "sweep_mode", mode.as_deref().map(|m| format!("\"{m}\"")));
                set(&mut o, "model", model.as_deref().map(quoted));
                Command::Sweep
            }
            Cmd::Evaluate { train, target, shift_mode, trials } => {
                train_args(&mut o, train);
                target_args(&mut o, target);
                set(&mut o, "shift_mode", shift_mode.as_deref().map(|m| format!("\"{m}\"")));
                set(&mut o, "trials", *trials);
                Command::Evaluate
            }
            Cmd::Train { epochs, fov_fraction } => {
                set(&mut o, "epochs", *epochs);
                set(&mut o, "fov_fraction", fov_fraction.map(|f| format!("{f:?}")));
                Command::Train
            }
            Cmd::CalibrateRn { image } => {
                set(&mut o, "image", image.as_deref().map(quoted));
                Command::CalibrateRn
            }
        };
        (command, o)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (command, mut overrides) = cli.command.resolve();
    set(&mut overrides, "seed", cli.seed);
    set(&mut overrides, "classifier", cli.classifier.as_deref().map(|c| toml::Value::String(c.into()).to_string()));
    overrides.extend(cli.overrides);

    let outcome = cli
        .config
        .as_deref()
        .map(|p| RunConfig::load(p, Some(command.name())))
        .unwrap_or_else(|| Ok(RunConfig::default()))
        .and_then(|base| base.with_overrides(&overrides))
        .and_then(|config| harness::run(command, &config, &cli.out));

    match outcome {
        Ok(manifest) => {
            for (key, value) in &manifest.results {
                match value {
                    toml::Value::String(s) if s.len() > 120 => println!("{key} = ({} chars)", s.len()),
                    v => println!("{key} = {v}"),
                }
            }
            println!("manifest: {}", cli.out.join(harness::MANIFEST_FILE).display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
