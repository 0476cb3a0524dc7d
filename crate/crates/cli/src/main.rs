//! `egocast`: generate synthetic driving data, train the two forecasting
//! phases, score the benchmark rows, dump per-scene forecasts, and render
//! them as SVG plots.
//!
//! Every subcommand shares the same configuration story — built-in defaults,
//! overlaid with `--config FILE`, overlaid with positional `KEY=VALUE`
//! pairs, overlaid with typed flags — and writes the merged result beside
//! its outputs along with a content-hash manifest, so any artifact can be
//! traced back to exactly what produced it. Failures print one
//! `error: ...` line on stderr and exit nonzero.

mod context;
mod data_cmd;
mod eval_cmd;
mod plot_cmd;
mod svg;
mod train_cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use egocast_core::config::RunConfig;
use egocast_core::error::Result;
use egocast_core::variants::Group;

#[derive(Parser)]
#[command(
    name = "egocast",
    version,
    about = "ego-motion and future-object-localization forecasting on synthetic driving scenes"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the train/val/test scene splits as JSONL.
    GenData(CommonArgs),
    /// Phase one: train the ego-motion forecast variants.
    TrainEgo(TrainArgs),
    /// Phase two: train box-localization variants on top of ego checkpoints.
    TrainJoint(TrainArgs),
    /// Score benchmark rows on the test split and write the report.
    Eval(EvalArgs),
    /// Dump per-scene forecasts for the first few test scenes as JSONL.
    Sample(EvalArgs),
    /// Render SVG plots from forecast dumps.
    Plot(EvalArgs),
}

/// Flags every subcommand understands.
#[derive(Args)]
struct CommonArgs {
    /// TOML config file; anything unset falls back to built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output root (falls back to $EGOCAST_OUT, then ./out).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Shorthand that sets data.master_seed, train.seed, and eval.seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Inline config overrides, e.g. train.ego_epochs=40.
    #[arg(value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl CommonArgs {
    /// The effective config. `typed` holds overrides synthesized from typed
    /// flags; they are applied last so they beat positional KEY=VALUE pairs.
    fn effective(&self, typed: &[String]) -> Result<RunConfig> {
        let mut overrides = self.set.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("data.master_seed={s}"));
            overrides.push(format!("train.seed={s}"));
            overrides.push(format!("eval.seed={s}"));
        }
        overrides.extend_from_slice(typed);
        context::effective_config(self.config.as_deref(), &overrides)
    }

    fn out(&self) -> PathBuf {
        context::out_root(self.out.as_deref())
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Comma-separated variant tags (default: every trained row of this phase).
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,

    /// Epoch count for this phase.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Comma-separated variant tags (default: every benchmark row).
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,

    /// Ego modes / box trajectories sampled per scene.
    #[arg(long)]
    k: Option<usize>,

    /// Monte-Carlo dropout passes fused per prediction.
    #[arg(long)]
    n_dropout: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::GenData(a) => data_cmd::run(a),
        Cmd::TrainEgo(a) => train_cmd::run(a, Group::Ego),
        Cmd::TrainJoint(a) => train_cmd::run(a, Group::Boxes),
        Cmd::Eval(a) => eval_cmd::run(a),
        Cmd::Sample(a) => plot_cmd::sample(a),
        Cmd::Plot(a) => plot_cmd::plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let flat = e.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
            eprintln!("error: {flat}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn the_command_tree_is_well_formed() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn seed_flag_fans_out_to_all_three_seeds() {
        let args = CommonArgs {
            config: None,
            out: None,
            seed: Some(77),
            set: vec![],
        };
        let cfg = args.effective(&[]).unwrap();
        assert_eq!(cfg.data.master_seed, 77);
        assert_eq!(cfg.train.seed, 77);
        assert_eq!(cfg.eval.seed, 77);
    }

    #[test]
    fn typed_flags_beat_positional_overrides() {
        let args = CommonArgs {
            config: None,
            out: None,
            seed: None,
            set: vec!["eval.k=3".into()],
        };
        let cfg = args.effective(&["eval.k=5".into()]).unwrap();
        assert_eq!(cfg.eval.k, 5);
    }

    #[test]
    fn unknown_override_keys_are_rejected_by_name() {
        let args = CommonArgs {
            config: None,
            out: None,
            seed: None,
            set: vec!["eval.knobs=5".into()],
        };
        let err = args.effective(&[]).unwrap_err();
        assert!(err.to_string().contains("knobs"), "{err}");
    }

    #[test]
    fn eval_flags_parse_from_the_command_line() {
        let cli = Cli::parse_from([
            "egocast", "eval", "--variants", "const-vel,rnn", "--k", "4", "--n-dropout", "6",
            "eval.seed=9",
        ]);
        let Cmd::Eval(a) = cli.cmd else { panic!("expected eval") };
        assert_eq!(a.variants, vec!["const-vel", "rnn"]);
        assert_eq!(a.k, Some(4));
        assert_eq!(a.n_dropout, Some(6));
        assert_eq!(a.common.set, vec!["eval.seed=9"]);
    }
}
