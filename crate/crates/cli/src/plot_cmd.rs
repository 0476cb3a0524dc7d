//! `sample` and `plot`: per-scene forecast dumps and their SVG renderings.
//!
//! `sample` runs the selected variants over the first few test scenes and
//! writes one JSONL dump per variant; `plot` re-reads those dumps, verifies
//! each forecast still matches the scene it claims to describe, and renders
//! the three views per scene.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use egocast_core::dump::{forecast_scenes, read_forecasts, write_forecasts};
use egocast_core::error::{Error, Result};
use egocast_core::synth::Scene;
use egocast_core::variants;

use crate::context::{read_scenes_at, write_effective_config, Manifest};
use crate::{eval_cmd, svg, EvalArgs};

pub fn sample(args: &EvalArgs) -> Result<()> {
    let cfg = args.common.effective(&eval_cmd::typed_overrides(args))?;
    let out = args.common.out();
    fs::create_dir_all(&out)?;
    let mut manifest = Manifest::load(&out)?;
    let hash = write_effective_config(&out, &cfg, &mut manifest)?;

    let rows = eval_cmd::selected_rows(&out, &args.variants)?;
    let scenes = read_scenes_at(&out.join("data").join("test.jsonl"))?;
    let subset = &scenes[..cfg.eval.dump_scenes.min(scenes.len())];
    let settings = eval_cmd::eval_settings(&cfg, &hash, eval_cmd::dataset_id(&cfg, scenes.len()));

    fs::create_dir_all(out.join("forecasts"))?;
    for (card, params) in &rows {
        let forecasts = forecast_scenes(&settings, card, params.as_ref(), subset)?;
        let path = out.join("forecasts").join(format!("{}.jsonl", card.tag));
        write_forecasts(&path, &settings, card.tag, &forecasts)?;
        manifest.record(&out, &path)?;
        println!("[{}] {} scenes -> {}", card.tag, forecasts.len(), path.display());
    }
    manifest.write()?;
    Ok(())
}

pub fn plot(args: &EvalArgs) -> Result<()> {
    let cfg = args.common.effective(&eval_cmd::typed_overrides(args))?;
    let out = args.common.out();
    fs::create_dir_all(&out)?;
    let mut manifest = Manifest::load(&out)?;
    write_effective_config(&out, &cfg, &mut manifest)?;

    let dumps = dump_paths(&out, &args.variants)?;
    let test_path = out.join("data").join("test.jsonl");
    let scenes = read_scenes_at(&test_path)?;
    let by_seed: HashMap<u64, &Scene> = scenes.iter().map(|s| (s.seed, s)).collect();

    for path in dumps {
        let (header, forecasts) = read_forecasts(&path)?;
        let dir = out.join("plots").join(&header.variant);
        fs::create_dir_all(&dir)?;
        for f in &forecasts {
            let scene = by_seed.get(&f.scene_seed).ok_or_else(|| {
                Error::contract(format!(
                    "forecast for scene seed {} has no matching scene in {}",
                    f.scene_seed,
                    test_path.display()
                ))
            })?;
            svg::check_match(f, scene)?;
            for (suffix, doc) in [
                ("odom", svg::ego_odometry_svg(f, scene)),
                ("bev", svg::birdseye_svg(f, scene)),
                ("boxes", svg::boxes_svg(f)),
            ] {
                let file = dir.join(format!("scene-{}-{suffix}.svg", f.scene_seed));
                fs::write(&file, doc)?;
                manifest.record(&out, &file)?;
            }
        }
        println!("[{}] {} scenes -> {}", header.variant, forecasts.len(), dir.display());
    }
    manifest.write()?;
    Ok(())
}

/// The dumps to plot: `--variants` names them directly (each must exist);
/// with no tags, every dump currently in `out/forecasts` is rendered.
fn dump_paths(out: &Path, tags: &[String]) -> Result<Vec<PathBuf>> {
    let dir = out.join("forecasts");
    if !tags.is_empty() {
        let cards = variants::select(tags)?;
        return cards
            .iter()
            .map(|c| {
                let p = dir.join(format!("{}.jsonl", c.tag));
                if p.exists() {
                    Ok(p)
                } else {
                    Err(Error::contract(format!(
                        "no forecast dump for `{}` at {}; run the sample command first",
                        c.tag,
                        p.display()
                    )))
                }
            })
            .collect();
    }
    let mut paths: Vec<PathBuf> = match fs::read_dir(&dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect(),
        Err(_) => Vec::new(),
    };
    paths.sort();
    if paths.is_empty() {
        return Err(Error::contract(format!(
            "no forecast dumps in {}; run the sample command first",
            dir.display()
        )));
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plotting_without_dumps_points_at_the_sample_command() {
        let dir = tempfile::tempdir().unwrap();
        let err = dump_paths(dir.path(), &[]).unwrap_err();
        assert!(err.to_string().contains("sample"), "{err}");

        let err = dump_paths(dir.path(), &["const-vel".into()]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("const-vel") && msg.contains("sample"), "{msg}");
    }

    #[test]
    fn dump_listing_is_sorted_and_ignores_strays() {
        let dir = tempfile::tempdir().unwrap();
        let fc = dir.path().join("forecasts");
        fs::create_dir_all(&fc).unwrap();
        for name in ["rnn.jsonl", "const-vel.jsonl", "notes.txt"] {
            fs::write(fc.join(name), "x").unwrap();
        }
        let paths = dump_paths(dir.path(), &[]).unwrap();
        let names: Vec<_> =
            paths.iter().map(|p| p.file_name().unwrap().to_str().unwrap()).collect();
        assert_eq!(names, vec!["const-vel.jsonl", "rnn.jsonl"]);
    }
}
