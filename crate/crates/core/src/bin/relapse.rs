use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::error;

use relapse_core::config::RunConfig;
use relapse_core::pipeline::{self, SplitChoice};
use relapse_core::Result;

#[derive(Parser, Debug)]
#[command(name = "relapse", version, about = "Synthetic stroke-relapse pipeline: synth, train, sweep, eval, explain, report")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config entry, e.g. `--set train.epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    set: Vec<String>,

    #[arg(long, global = true)]
    seed_synth: Option<u64>,

    #[arg(long, global = true)]
    seed_split: Option<u64>,

    #[arg(long, global = true)]
    seed_train: Option<u64>,

    #[arg(long, value_enum, global = true)]
    variant: Option<Variant>,

    #[arg(long, value_enum, global = true)]
    task: Option<TaskArg>,

    #[arg(long, global = true)]
    beta: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort.
    Synth,
    /// Train the configured variant and task.
    Train,
    /// Choose the decision threshold on the training split.
    Sweep {
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
    },
    /// Evaluate on the test split with the swept threshold.
    Eval,
    /// Modality contributions and occlusion saliency maps.
    Explain,
    /// Consolidate all evaluation and contribution outputs.
    Report,
    /// Print the effective configuration.
    Config,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Variant {
    TabularOnly,
    VisionOnly,
    Multimodal,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TaskArg {
    Classify,
    Regress,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

impl Cli {
    fn overrides(&self) -> Vec<String> {
        let mut o = self.set.clone();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push(format!("{k}={v}"));
            }
        };
        push("synth.seed", self.seed_synth.map(|s| s.to_string()));
        push("selection.split_seed", self.seed_split.map(|s| s.to_string()));
        push("train.seed", self.seed_train.map(|s| s.to_string()));
        push(
            "variant",
            self.variant.map(|v| {
                match v {
                    Variant::TabularOnly => "\"tabular_only\"",
                    Variant::VisionOnly => "\"vision_only\"",
                    Variant::Multimodal => "\"multimodal\"",
                }
                .to_string()
            }),
        );
        push(
            "task",
            self.task.map(|t| {
                match t {
                    TaskArg::Classify => "\"classify\"",
                    TaskArg::Regress => "\"regress\"",
                }
                .to_string()
            }),
        );
        push("beta", self.beta.map(|b| format!("{b:?}")));
        o
    }

    fn run_config(&self) -> Result<RunConfig> {
        let overrides = self.overrides();
        match &self.config {
            Some(path) => RunConfig::load(path, &overrides),
            None => RunConfig::parse("", &overrides),
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.run_config()?;
    match &cli.command {
        Command::Synth => pipeline::run_synth(&cfg),
        Command::Train => pipeline::run_train(&cfg),
        Command::Sweep { split } => pipeline::run_sweep(
            &cfg,
            match split {
                SplitArg::Train => SplitChoice::Train,
                SplitArg::Test => SplitChoice::Test,
            },
        ),
        Command::Eval => pipeline::run_eval(&cfg),
        Command::Explain => pipeline::run_explain(&cfg),
        Command::Report => pipeline::run_report(&cfg),
        Command::Config => {
            print!("{}", cfg.to_canonical());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
