//! Registry of benchmark variants.
//!
//! Every row the evaluation harness can score is described here once, keyed
//! by a stable tag that also names the variant's checkpoint file. Reports,
//! training commands, and generated documentation all read this registry,
//! so a row cannot drift between what is trained, what is scored, and what
//! is documented.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::{ModelVariant, PriorSource, UncMode};

/// Which benchmark a row belongs to: future ego motion or future box
/// localization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Group {
    Ego,
    Boxes,
}

impl Group {
    pub fn label(self) -> &'static str {
        match self {
            Group::Ego => "ego",
            Group::Boxes => "box",
        }
    }
}

/// One benchmark row: its tag, what it forecasts, and — for trained rows —
/// the uncertainty treatment and ego-prior conditioning it uses.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantCard {
    /// Stable identifier; also the checkpoint file stem for trained rows.
    pub tag: &'static str,
    pub group: Group,
    /// `None` marks an analytic constant-velocity baseline.
    pub trained: Option<(UncMode, PriorSource)>,
    /// Constant-velocity box baselines only: extrapolate dimensions too.
    pub scaled_baseline: bool,
    /// Ego-group tag whose checkpoint warm-starts this row's joint
    /// training. `None` for ego rows and analytic baselines.
    pub ego_source: Option<&'static str>,
    /// One-line behavioral description, rendered into reports and docs.
    pub summary: &'static str,
}

impl VariantCard {
    pub fn needs_checkpoint(&self) -> bool {
        self.trained.is_some()
    }

    /// The training-time description of this row, if it is trained at all.
    pub fn model_variant(&self) -> Option<ModelVariant> {
        self.trained.map(|(unc, prior)| ModelVariant::new(self.tag, unc, prior))
    }
}

/// All rows, in fixed report order.
pub fn registry() -> Vec<VariantCard> {
    use PriorSource::*;
    use UncMode::*;
    vec![
        VariantCard {
            tag: "const-vel",
            group: Group::Ego,
            trained: Option::None,
            scaled_baseline: false,
            ego_source: Option::None,
            summary: "holds the last observed speed and yaw rate for the whole horizon",
        },
        VariantCard {
            tag: "rnn",
            group: Group::Ego,
            trained: Some((Mse, None)),
            scaled_baseline: false,
            ego_source: Option::None,
            summary: "encoder-decoder trained on squared error; a single mean forecast",
        },
        VariantCard {
            tag: "rnn-a",
            group: Group::Ego,
            trained: Some((Aleatoric, None)),
            scaled_baseline: false,
            ego_source: Option::None,
            summary: "bivariate Gaussian heads trained by likelihood; samples draw from the head variance",
        },
        VariantCard {
            tag: "rnn-e",
            group: Group::Ego,
            trained: Some((Epistemic, None)),
            scaled_baseline: false,
            ego_source: Option::None,
            summary: "squared-error training, dropout kept on at inference; samples draw from the spread across passes",
        },
        VariantCard {
            tag: "rnn-ae",
            group: Group::Ego,
            trained: Some((AleatoricEpistemic, None)),
            scaled_baseline: false,
            ego_source: Option::None,
            summary: "likelihood training plus inference-time dropout; head and cross-pass variances fused",
        },
        VariantCard {
            tag: "const-vel-box",
            group: Group::Boxes,
            trained: Option::None,
            scaled_baseline: false,
            ego_source: Option::None,
            summary: "extrapolates the box center linearly, dimensions frozen",
        },
        VariantCard {
            tag: "const-vel-box-scaled",
            group: Group::Boxes,
            trained: Option::None,
            scaled_baseline: true,
            ego_source: Option::None,
            summary: "extrapolates the box center linearly and the dimensions with it",
        },
        VariantCard {
            tag: "rnn-np",
            group: Group::Boxes,
            trained: Some((Mse, None)),
            scaled_baseline: false,
            ego_source: Some("rnn"),
            summary: "no ego prior: the box decoder is conditioned on zeros",
        },
        VariantCard {
            tag: "rnn-p",
            group: Group::Boxes,
            trained: Some((Mse, PredictedMean)),
            scaled_baseline: false,
            ego_source: Some("rnn"),
            summary: "box decoder conditioned on the predicted mean ego motion",
        },
        VariantCard {
            tag: "rnn-box-a",
            group: Group::Boxes,
            trained: Some((Aleatoric, PredictedMean)),
            scaled_baseline: false,
            ego_source: Some("rnn-a"),
            summary: "likelihood-trained box heads, mean ego prior; samples draw from the head variance",
        },
        VariantCard {
            tag: "rnn-box-e",
            group: Group::Boxes,
            trained: Some((Epistemic, PredictedMean)),
            scaled_baseline: false,
            ego_source: Some("rnn-e"),
            summary: "dropout kept on at inference over a mean ego prior; samples draw from the cross-pass spread",
        },
        VariantCard {
            tag: "rnn-ap",
            group: Group::Boxes,
            trained: Some((Aleatoric, PredictedSampled)),
            scaled_baseline: false,
            ego_source: Some("rnn-a"),
            summary: "one box rollout per ego mode sampled from the head variance of the ego stream",
        },
        VariantCard {
            tag: "rnn-ep",
            group: Group::Boxes,
            trained: Some((Epistemic, PredictedSampled)),
            scaled_baseline: false,
            ego_source: Some("rnn-e"),
            summary: "one box rollout per ego mode sampled from the dropout spread of the ego stream",
        },
        VariantCard {
            tag: "rnn-box-ae",
            group: Group::Boxes,
            trained: Some((AleatoricEpistemic, PredictedSampled)),
            scaled_baseline: false,
            ego_source: Some("rnn-ae"),
            summary: "full model: fused ego uncertainty, one stochastic box rollout per sampled ego mode",
        },
    ]
}

/// A conditioning source we deliberately do not cover: priors derived from
/// monocular visual odometry. Without an image stream there is nothing to
/// run a feature tracker on, and monocular translation is only known up to
/// scale, so such a row would not be comparable anyway.
pub const OUT_OF_SCOPE_NOTE: &str = "priors from monocular visual odometry (translation known only up \
     to scale; this pipeline carries no image stream)";

/// Look a row up by tag.
pub fn find(tag: &str) -> Option<VariantCard> {
    registry().into_iter().find(|c| c.tag == tag)
}

/// Resolve a list of tags into cards, preserving registry order. Unknown
/// tags are contract violations naming the offender.
pub fn select(tags: &[String]) -> Result<Vec<VariantCard>> {
    for t in tags {
        if find(t).is_none() {
            return Err(Error::contract(format!("no variant named `{t}`")));
        }
    }
    Ok(registry().into_iter().filter(|c| tags.iter().any(|t| t == c.tag)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_rows_are_fixed_and_unique() {
        let tags: Vec<&str> = registry().iter().map(|c| c.tag).collect();
        assert_eq!(
            tags,
            vec![
                "const-vel",
                "rnn",
                "rnn-a",
                "rnn-e",
                "rnn-ae",
                "const-vel-box",
                "const-vel-box-scaled",
                "rnn-np",
                "rnn-p",
                "rnn-box-a",
                "rnn-box-e",
                "rnn-ap",
                "rnn-ep",
                "rnn-box-ae",
            ]
        );
        let mut sorted = tags.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), tags.len(), "tags must be unique");
    }

    #[test]
    fn baselines_need_no_checkpoint_and_trained_rows_do() {
        for card in registry() {
            assert_eq!(card.needs_checkpoint(), card.trained.is_some());
            if card.trained.is_none() {
                assert!(card.model_variant().is_none());
                assert!(card.ego_source.is_none());
            }
        }
    }

    #[test]
    fn scaling_flag_only_on_the_scaled_baseline() {
        for card in registry() {
            assert_eq!(card.scaled_baseline, card.tag == "const-vel-box-scaled");
        }
    }

    #[test]
    fn every_trained_box_row_warm_starts_from_a_matching_ego_row() {
        for card in registry() {
            if card.group != Group::Boxes {
                continue;
            }
            let Some((unc, _)) = card.trained else { continue };
            let src = card.ego_source.expect("trained box rows name an ego source");
            let ego = find(src).expect("ego source must be a registered row");
            assert_eq!(ego.group, Group::Ego, "{}: source {src} is not an ego row", card.tag);
            let (ego_unc, _) = ego.trained.expect("ego source must be trained");
            assert_eq!(ego_unc, unc, "{}: uncertainty mismatch with its ego source", card.tag);
        }
    }

    #[test]
    fn selection_preserves_registry_order_and_rejects_unknown_tags() {
        let picked =
            select(&["rnn-ae".to_string(), "const-vel".to_string()]).expect("both tags exist");
        let tags: Vec<&str> = picked.iter().map(|c| c.tag).collect();
        assert_eq!(tags, vec!["const-vel", "rnn-ae"]);

        let err = select(&["warp-drive".to_string()]).unwrap_err();
        assert!(err.to_string().contains("warp-drive"), "error names the tag: {err}");
    }

    #[test]
    fn model_variants_carry_the_row_tag() {
        let card = find("rnn-box-ae").unwrap();
        let mv = card.model_variant().unwrap();
        assert_eq!(mv.tag, "rnn-box-ae");
        assert_eq!(mv.unc, UncMode::AleatoricEpistemic);
        assert_eq!(mv.prior, PriorSource::PredictedSampled);
    }
}
