//! `eval`: score the selected benchmark rows on the test split and write
//! the human-readable and TSV reports.

use std::fs;
use std::path::Path;

use egocast_core::config::RunConfig;
use egocast_core::error::Result;
use egocast_core::eval::{render_table, render_tsv, run_benchmark, EvalSettings};
use egocast_core::nn::ParamStore;
use egocast_core::variants::{self, VariantCard};

use crate::context::{read_scenes_at, write_effective_config, Manifest};
use crate::EvalArgs;

/// Typed evaluation flags as config overrides, applied after positional
/// KEY=VALUE pairs so the flags win.
pub(crate) fn typed_overrides(args: &EvalArgs) -> Vec<String> {
    let mut typed = Vec::new();
    if let Some(k) = args.k {
        typed.push(format!("eval.k={k}"));
    }
    if let Some(n) = args.n_dropout {
        typed.push(format!("eval.n_dropout={n}"));
    }
    typed
}

/// The rows `--variants` selects (default: the whole registry), each paired
/// with its checkpoint when it needs one.
pub(crate) fn selected_rows(
    out: &Path,
    tags: &[String],
) -> Result<Vec<(VariantCard, Option<ParamStore>)>> {
    let cards =
        if tags.is_empty() { variants::registry() } else { variants::select(tags)? };
    cards
        .into_iter()
        .map(|c| {
            let params = c
                .needs_checkpoint()
                .then(|| crate::train_cmd::load_checkpoint(out, c.tag))
                .transpose()?;
            Ok((c, params))
        })
        .collect()
}

/// A short provenance string for reports: where the scenes came from.
pub(crate) fn dataset_id(cfg: &RunConfig, n_scenes: usize) -> String {
    format!("data/test.jsonl ({n_scenes} scenes, master seed {})", cfg.data.master_seed)
}

pub(crate) fn eval_settings(cfg: &RunConfig, hash: &str, dataset_id: String) -> EvalSettings {
    EvalSettings {
        ego: cfg.ego,
        loc: cfg.loc,
        k: cfg.eval.k,
        n_dropout: cfg.eval.n_dropout,
        seed: cfg.eval.seed,
        dataset_id,
        config_hash: hash.to_string(),
    }
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let cfg = args.common.effective(&typed_overrides(args))?;
    let out = args.common.out();
    fs::create_dir_all(&out)?;
    let mut manifest = Manifest::load(&out)?;
    let hash = write_effective_config(&out, &cfg, &mut manifest)?;

    let rows = selected_rows(&out, &args.variants)?;
    let scenes = read_scenes_at(&out.join("data").join("test.jsonl"))?;
    let settings = eval_settings(&cfg, &hash, dataset_id(&cfg, scenes.len()));

    let report = run_benchmark(&settings, &scenes, &rows)?;
    let table = render_table(&report);
    print!("{table}");

    let txt = out.join("report.txt");
    fs::write(&txt, &table)?;
    manifest.record(&out, &txt)?;
    let tsv = out.join("report.tsv");
    fs::write(&tsv, render_tsv(&report))?;
    manifest.record(&out, &tsv)?;
    manifest.write()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_tags_selects_the_whole_registry_in_order() {
        let dir = tempfile::tempdir().unwrap();
        // Only baseline rows can be built without checkpoints; asking for
        // everything in an empty directory must name the first trained row.
        let err = selected_rows(dir.path(), &[]).unwrap_err();
        assert!(err.to_string().contains("rnn"), "{err}");

        let rows = selected_rows(dir.path(), &["const-vel-box".into(), "const-vel".into()])
            .unwrap();
        let tags: Vec<&str> = rows.iter().map(|(c, _)| c.tag).collect();
        assert_eq!(tags, vec!["const-vel", "const-vel-box"], "registry order, not flag order");
        assert!(rows.iter().all(|(_, p)| p.is_none()));
    }

    #[test]
    fn typed_flags_render_as_eval_overrides() {
        let args = EvalArgs {
            common: crate::CommonArgs { config: None, out: None, seed: None, set: vec![] },
            variants: vec![],
            k: Some(4),
            n_dropout: Some(9),
        };
        assert_eq!(typed_overrides(&args), vec!["eval.k=4", "eval.n_dropout=9"]);
    }
}
