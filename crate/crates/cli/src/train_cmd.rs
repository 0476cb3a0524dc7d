//! `train-ego` and `train-joint`: the two training phases, sharing one
//! runner that differs only in which model stack each variant optimizes.

use std::fs;
use std::path::Path;

use egocast_core::ckpt::{load_params, save_params};
use egocast_core::ego::EgoModel;
use egocast_core::error::{Error, Result};
use egocast_core::loc::LocModel;
use egocast_core::nn::ParamStore;
use egocast_core::train::{train_ego, train_joint, TrainOutcome};
use egocast_core::variants::{self, Group, VariantCard};

use crate::context::{read_scenes_at, write_effective_config, Manifest};
use crate::TrainArgs;

pub fn run(args: &TrainArgs, group: Group) -> Result<()> {
    let mut typed = Vec::new();
    if let Some(e) = args.epochs {
        typed.push(match group {
            Group::Ego => format!("train.ego_epochs={e}"),
            Group::Boxes => format!("train.joint_epochs={e}"),
        });
    }
    let cfg = args.common.effective(&typed)?;
    let out = args.common.out();
    fs::create_dir_all(&out)?;
    let mut manifest = Manifest::load(&out)?;
    let hash = write_effective_config(&out, &cfg, &mut manifest)?;

    let cards = phase_cards(&args.variants, group)?;
    let train = read_scenes_at(&out.join("data").join("train.jsonl"))?;
    let val = read_scenes_at(&out.join("data").join("val.jsonl"))?;
    fs::create_dir_all(out.join("ckpt"))?;
    fs::create_dir_all(out.join("curves"))?;

    for card in &cards {
        let variant = card.model_variant().expect("phase_cards keeps only trained rows");
        let outcome = match group {
            Group::Ego => train_ego(&EgoModel::new(cfg.ego), &train, &val, &cfg.train, &variant)?,
            Group::Boxes => {
                let src = card.ego_source.expect("trained box rows name an ego checkpoint");
                let ego_params = load_checkpoint(&out, src)?;
                train_joint(
                    &EgoModel::new(cfg.ego),
                    &LocModel::new(cfg.loc),
                    &ego_params,
                    &train,
                    &val,
                    &cfg.train,
                    &variant,
                )?
            }
        };
        save_outcome(&out, card, &outcome, &mut manifest)?;
    }
    manifest.write()?;
    println!("effective config {hash}");
    Ok(())
}

/// The rows this phase trains: the requested tags, or every trained row of
/// the group when none are given. Baselines and rows of the other phase are
/// rejected by name.
fn phase_cards(tags: &[String], group: Group) -> Result<Vec<VariantCard>> {
    if tags.is_empty() {
        return Ok(variants::registry()
            .into_iter()
            .filter(|c| c.group == group && c.needs_checkpoint())
            .collect());
    }
    let cards = variants::select(tags)?;
    for c in &cards {
        if !c.needs_checkpoint() {
            return Err(Error::contract(format!(
                "variant `{}` is an analytic baseline with nothing to train",
                c.tag
            )));
        }
        if c.group != group {
            let other = match c.group {
                Group::Ego => "train-ego",
                Group::Boxes => "train-joint",
            };
            return Err(Error::contract(format!(
                "variant `{}` belongs to the {} group; use `{other}`",
                c.tag,
                c.group.label()
            )));
        }
    }
    Ok(cards)
}

/// Load `out/ckpt/<tag>.json`, reporting a missing file as a missing
/// checkpoint rather than a bare IO error.
pub(crate) fn load_checkpoint(out: &Path, tag: &str) -> Result<ParamStore> {
    let path = out.join("ckpt").join(format!("{tag}.json"));
    if !path.exists() {
        return Err(Error::MissingCheckpoint(tag.to_string()));
    }
    load_params(&path)
}

fn save_outcome(
    out: &Path,
    card: &VariantCard,
    outcome: &TrainOutcome,
    manifest: &mut Manifest,
) -> Result<()> {
    let ckpt = out.join("ckpt").join(format!("{}.json", card.tag));
    save_params(&ckpt, &outcome.best_params)?;
    manifest.record(out, &ckpt)?;

    let mut curve = String::from("epoch\tlr\ttrain_loss\tval_loss\n");
    for row in &outcome.curve {
        curve.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            row.epoch, row.lr, row.train_loss, row.val_loss
        ));
    }
    let curve_path = out.join("curves").join(format!("{}.tsv", card.tag));
    fs::write(&curve_path, curve)?;
    manifest.record(out, &curve_path)?;

    let best_val = outcome
        .curve
        .iter()
        .find(|r| r.epoch == outcome.best_epoch)
        .map(|r| format!("{:.6}", r.val_loss))
        .unwrap_or_else(|| "-".to_string());
    println!("[{}] best epoch {} val loss {best_val}", card.tag, outcome.best_epoch);
    Ok(())
}
