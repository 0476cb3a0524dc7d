//! Documentation rendered from the variant registry.
//!
//! The committed `docs/` tree is generated here, from the same registry the
//! benchmark, the trainer, and the CLI consume, so the documentation cannot
//! drift from the code: every registry row must have exactly one hand-written
//! card (config delta plus the orderings the benchmark is expected to show),
//! and rendering fails on a missing or stale card. A golden test compares
//! the committed files against a fresh render;
//! `cargo run -p egocast-core --example render_docs` refreshes them.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::train::{PriorSource, UncMode};
use crate::variants::{registry, Group, VariantCard, OUT_OF_SCOPE_NOTE};

/// Hand-written half of a row's documentation. The machine-readable half
/// (group, training recipe, warm start) comes from the registry itself.
struct CardNotes {
    tag: &'static str,
    /// How the row's configuration differs from its group's full model.
    delta: &'static str,
    /// Orderings the benchmark is expected to reproduce; the acceptance
    /// tests check the starred ones.
    expect: &'static str,
}

const EGO_REFERENCE: &str = "rnn-ae";
const BOX_REFERENCE: &str = "rnn-box-ae";

const NOTES: &[CardNotes] = &[
    CardNotes {
        tag: "const-vel",
        delta: "no learned parameters: the last observed speed and yaw rate are held for the \
                whole horizon.",
        expect: "strong on straight scenes, weak on turning and stopping scenes; the trained \
                 rows must beat it on ADE/FDE over a mixed test split (*).",
    },
    CardNotes {
        tag: "rnn",
        delta: "squared-error objective; variance heads unused at inference; dropout off; a \
                single deterministic forecast (k_used = 1).",
        expect: "beats `const-vel` on ADE/FDE whenever the split contains maneuvers (*).",
    },
    CardNotes {
        tag: "rnn-a",
        delta: "likelihood objective so the variance heads are trained, but dropout stays off \
                at inference; samples draw from the head variance only.",
        expect: "mean accuracy close to `rnn`; sampled modes cluster tightly around the mean.",
    },
    CardNotes {
        tag: "rnn-e",
        delta: "squared-error objective like `rnn`, but dropout stays on at inference; the \
                untrained head variance is excluded and samples draw from the spread across \
                passes.",
        expect: "spread grows with model disagreement, so best-of-k improves most on \
                 ambiguous (turn-or-not) scenes.",
    },
    CardNotes {
        tag: "rnn-ae",
        delta: "the group's full model and the reference for every delta above: likelihood \
                objective, dropout on at inference, head variance fused with the spread \
                across passes.",
        expect: "best-of-10 ADE at or below the deterministic `rnn` ADE (*); the widest and \
                 best-calibrated mode spread of the ego rows.",
    },
    CardNotes {
        tag: "const-vel-box",
        delta: "no learned parameters: the mean observed center flow is extrapolated; box \
                dimensions stay frozen at the last observation.",
        expect: "final-IoU suffers on approaching or receding targets whose scale changes.",
    },
    CardNotes {
        tag: "const-vel-box-scaled",
        delta: "like `const-vel-box` plus linear extrapolation of width and height.",
        expect: "beats `const-vel-box` on final-IoU (*); center metrics stay similar.",
    },
    CardNotes {
        tag: "rnn-np",
        delta: "no ego prior: the decoder is conditioned on zeros; squared-error objective; \
                deterministic rollout.",
        expect: "the weakest trained box row on final-IoU; the gap to `rnn-p` isolates the \
                 value of the ego prior (*).",
    },
    CardNotes {
        tag: "rnn-p",
        delta: "conditioned on the ego stream's predicted mean odometry (one mode); \
                squared-error objective; deterministic rollout.",
        expect: "beats `rnn-np` on final-IoU (*); single mode, so best-of-k equals k = 1.",
    },
    CardNotes {
        tag: "rnn-box-a",
        delta: "mean ego prior; likelihood objective; rollouts sample from the trained head \
                variance, dropout off.",
        expect: "per-step spread reflects track noise; modest best-of-k gains.",
    },
    CardNotes {
        tag: "rnn-box-e",
        delta: "mean ego prior; squared-error objective; rollouts keep dropout on and sample \
                from the spread across passes, head variance excluded.",
        expect: "spread concentrates where passes disagree (late horizon, crossing targets).",
    },
    CardNotes {
        tag: "rnn-ap",
        delta: "like `rnn-box-a` but conditioned on sampled ego modes instead of the single \
                mean mode.",
        expect: "best-of-k improves over `rnn-box-a` on scenes whose ego motion is ambiguous.",
    },
    CardNotes {
        tag: "rnn-ep",
        delta: "like `rnn-box-e` but conditioned on sampled ego modes instead of the single \
                mean mode.",
        expect: "best-of-k improves over `rnn-box-e` on scenes whose ego motion is ambiguous.",
    },
    CardNotes {
        tag: "rnn-box-ae",
        delta: "the group's full model and the reference for every delta above: sampled ego \
                modes, likelihood objective, dropout on, head variance fused with the spread.",
        expect: "at or above `rnn-p` on best-of-k ADE, FDE, and final-IoU (*).",
    },
];

fn notes_for(tag: &str) -> Option<&'static CardNotes> {
    NOTES.iter().find(|n| n.tag == tag)
}

fn unc_label(unc: UncMode) -> &'static str {
    match unc {
        UncMode::Mse => "none (squared error)",
        UncMode::Aleatoric => "head variance",
        UncMode::Epistemic => "MC-dropout spread",
        UncMode::AleatoricEpistemic => "head variance + MC-dropout spread",
    }
}

fn prior_label(prior: PriorSource) -> &'static str {
    match prior {
        PriorSource::None => "none (zeros)",
        PriorSource::GroundTruth => "clean future odometry",
        PriorSource::PredictedMean => "predicted mean odometry",
        PriorSource::PredictedSampled => "sampled ego modes",
    }
}

/// The whole documentation tree as (repo-relative path, content) pairs.
pub fn render_docs() -> Result<Vec<(&'static str, String)>> {
    Ok(vec![
        ("docs/runbook.md", runbook()),
        ("docs/variants.md", variant_pages(&registry())?),
    ])
}

/// The per-row documentation page. Fails if any row lacks a card or any
/// card has lost its row.
pub fn variant_pages(cards: &[VariantCard]) -> Result<String> {
    for card in cards {
        if notes_for(card.tag).is_none() {
            return Err(Error::contract(format!(
                "no documentation card for benchmark row `{}`",
                card.tag
            )));
        }
    }
    for note in NOTES {
        if !cards.iter().any(|c| c.tag == note.tag) {
            return Err(Error::contract(format!(
                "stale documentation card `{}` has no benchmark row",
                note.tag
            )));
        }
    }

    let mut s = String::new();
    s.push_str("# Benchmark rows\n\n");
    s.push_str(
        "Both benchmark groups come from the variant registry \
         (`egocast_core::variants`), which fixes the report order, the checkpoint names, \
         and each row's training recipe. This page is rendered from that same registry \
         (`cargo run -p egocast-core --example render_docs`), and a test fails whenever \
         the two drift apart. Orderings marked (*) are enforced by the acceptance tests.\n\n",
    );

    for (group, title, reference) in [
        (Group::Ego, "Ego-motion group", EGO_REFERENCE),
        (Group::Boxes, "Localization group", BOX_REFERENCE),
    ] {
        let rows: Vec<&VariantCard> = cards.iter().filter(|c| c.group == group).collect();
        if rows.is_empty() {
            continue;
        }
        let _ = writeln!(s, "## {title}\n");
        let _ = writeln!(
            s,
            "| tag | trained | uncertainty | ego prior | warm start |\n\
             |-----|---------|-------------|-----------|------------|"
        );
        for c in &rows {
            let (unc, prior) = match c.trained {
                Some((u, p)) => (unc_label(u), prior_label(p)),
                None => ("—", "—"),
            };
            let _ = writeln!(
                s,
                "| `{}` | {} | {} | {} | {} |",
                c.tag,
                if c.needs_checkpoint() { "yes" } else { "no" },
                unc,
                if c.group == Group::Boxes { prior } else { "—" },
                c.ego_source.map(|t| format!("`{t}`")).unwrap_or_else(|| "—".to_string()),
            );
        }
        s.push('\n');

        for c in &rows {
            let notes = notes_for(c.tag).expect("checked above");
            let _ = writeln!(s, "### `{}`\n", c.tag);
            let _ = writeln!(s, "{}.\n", c.summary);
            if c.tag == reference {
                let _ = writeln!(s, "- **Role:** {}", notes.delta);
            } else {
                let _ = writeln!(s, "- **Delta from `{reference}`:** {}", notes.delta);
            }
            let _ = writeln!(s, "- **Expected orderings:** {}\n", notes.expect);
        }
    }

    s.push_str("## Out of scope\n\n");
    s.push_str(OUT_OF_SCOPE_NOTE);
    s.push('\n');
    Ok(s)
}

/// The reproduction runbook: commands, artifact layout, component map.
fn runbook() -> String {
    let mut s = String::new();
    s.push_str("# Runbook\n\n");
    s.push_str(
        "Everything below is deterministic given `--seed`: rerunning a command with the \
         same inputs reproduces its artifacts byte for byte. Every command writes the \
         merged configuration it actually used to `<out>/effective-config.toml` \
         (precedence: typed flags > positional `key.path=value` overrides > `--config` \
         file > built-in defaults) and appends SHA-256 digests of its outputs to \
         `<out>/manifest.tsv`. The output root is `--out`, else `$EGOCAST_OUT`, else \
         `./out`.\n\n",
    );

    s.push_str("## Pipeline\n\n");
    s.push_str(
        "```sh\n\
         # 1. synthesize the balanced scene splits\n\
         cargo run --release -p egocast-cli -- gen-data --out out --seed 7\n\n\
         # 2. phase one: every trained ego-motion row (or --variants tag,tag)\n\
         cargo run --release -p egocast-cli -- train-ego --out out --seed 7\n\n\
         # 3. phase two: every trained localization row, warm-started from phase one\n\
         cargo run --release -p egocast-cli -- train-joint --out out --seed 7\n\n\
         # 4. score all benchmark rows on the test split\n\
         cargo run --release -p egocast-cli -- eval --out out --seed 7 --k 10 --n-dropout 20\n\n\
         # 5. dump per-scene forecasts, then render the three views per scene\n\
         cargo run --release -p egocast-cli -- sample --out out --seed 7\n\
         cargo run --release -p egocast-cli -- plot --out out --seed 7\n\
         ```\n\n",
    );
    s.push_str(
        "Artifacts land under the output root: `data/{train,val,test}.jsonl`, \
         `ckpt/<tag>.json`, `curves/<tag>.tsv`, `report.txt` / `report.tsv`, \
         `forecasts/<tag>.jsonl`, and `plots/<tag>/scene-<seed>-{odom,bev,boxes}.svg`. \
         `eval --variants a,b` scores exactly those rows; training commands reject rows \
         of the other phase by name.\n\n",
    );

    s.push_str("## Verification\n\n");
    s.push_str(
        "```sh\n\
         cargo test --workspace            # unit, property, and end-to-end tests\n\
         cargo test -p egocast-cli --test acceptance -- --nocapture\n\
         cargo bench -p egocast-bench      # criterion benchmarks of the hot paths\n\
         ```\n\n\
         The acceptance suite prints one pass/fail line per criterion: gradient checks, \
         fusion against a brute-force oracle, dead-reckoning closure, sampler moments, \
         metric oracles, benchmark orderings, multi-modality, and byte-level \
         reproducibility of the CLI artifacts.\n\n",
    );

    s.push_str("## Component map\n\n");
    s.push_str(
        "| concern | module |\n\
         |---------|--------|\n\
         | scene synthesis (maneuvers, targets, camera) | `egocast_core::synth` |\n\
         | dataset JSONL + balanced splits | `egocast_core::dataset` |\n\
         | reverse-mode autodiff tape | `egocast_core::graph` |\n\
         | shape-checked tensors | `egocast_core::tensor` |\n\
         | GRU / MLP blocks, dropout | `egocast_core::nn` |\n\
         | ego forecaster + dead reckoning | `egocast_core::ego` |\n\
         | box forecaster + pixel geometry | `egocast_core::loc` |\n\
         | Gaussian heads, MC fusion, mode sampling | `egocast_core::uncertainty` |\n\
         | two-phase training loop | `egocast_core::train` |\n\
         | gradient checking | `egocast_core::gradcheck` |\n\
         | metrics + benchmark runner | `egocast_core::eval` |\n\
         | benchmark row registry | `egocast_core::variants` |\n\
         | forecast dumps (JSONL) | `egocast_core::dump` |\n\
         | checkpoint serialization | `egocast_core::ckpt` |\n\
         | run configuration + hashing | `egocast_core::config` |\n\
         | command-line front end + SVG plots | `egocast-cli` |\n",
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendering_is_deterministic() {
        assert_eq!(render_docs().unwrap(), render_docs().unwrap());
    }

    #[test]
    fn every_registry_row_gets_a_card_and_the_scope_note_is_present() {
        let page = variant_pages(&registry()).unwrap();
        for card in registry() {
            assert!(page.contains(&format!("### `{}`", card.tag)), "missing card {}", card.tag);
        }
        assert!(page.contains(OUT_OF_SCOPE_NOTE));
    }

    #[test]
    fn unmapped_rows_fail_the_build() {
        let mut cards = registry();
        cards[0].tag = "martian";
        let err = variant_pages(&cards).unwrap_err();
        assert!(err.to_string().contains("martian"), "{err}");
    }

    #[test]
    fn stale_cards_fail_the_build() {
        let cards = vec![registry().remove(0)];
        let err = variant_pages(&cards).unwrap_err();
        assert!(err.to_string().contains("stale"), "{err}");
    }

    #[test]
    fn committed_docs_match_a_fresh_render() {
        let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
        for (rel, content) in render_docs().unwrap() {
            let path = root.join(rel);
            let on_disk = std::fs::read_to_string(&path).unwrap_or_else(|_| {
                panic!("{rel} is missing; run `cargo run -p egocast-core --example render_docs`")
            });
            assert_eq!(
                on_disk, content,
                "{rel} is stale; run `cargo run -p egocast-core --example render_docs`"
            );
        }
    }
}
