//! Prompt catalogue.
//!
//! Each [`Strategy`] owns exactly one template. Templates are substituted in
//! a single pass, so braces inside item text are never re-interpreted.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Item, Source};

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("strategy {strategy} needs an image but item {item_id} has none")]
    MissingImage { strategy: Strategy, item_id: String },
    #[error("strategy {0} needs the text and image intermediate responses")]
    MissingIntermediate(Strategy),
    #[error("strategy {0} is not a cross-reflection prompt")]
    InvalidStrategy(Strategy),
    #[error("unknown strategy tag {0:?}")]
    UnknownTag(String),
    #[error("category name must not be empty")]
    EmptyCategory,
    #[error("no scenario-specific factors configured for KAR prompts")]
    NoKarFactors,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Kar,
    KarFactors,
    LlmRec,
    RecGpt4v,
    Cot,
    VisualOnly,
    VisualTextual,
    XrSeparateFuse,
    XrCombined,
    XrKeywordSeparate,
    XrKeywordCombined,
}

impl Strategy {
    pub const ALL: [Strategy; 11] = [
        Strategy::Kar,
        Strategy::KarFactors,
        Strategy::LlmRec,
        Strategy::RecGpt4v,
        Strategy::Cot,
        Strategy::VisualOnly,
        Strategy::VisualTextual,
        Strategy::XrSeparateFuse,
        Strategy::XrCombined,
        Strategy::XrKeywordSeparate,
        Strategy::XrKeywordCombined,
    ];

    /// Stable CLI-facing tag.
    pub fn tag(self) -> &'static str {
        match self {
            Strategy::Kar => "kar",
            Strategy::KarFactors => "kar_factors",
            Strategy::LlmRec => "llm_rec",
            Strategy::RecGpt4v => "rec_gpt4v",
            Strategy::Cot => "cot",
            Strategy::VisualOnly => "visual_only",
            Strategy::VisualTextual => "visual_textual",
            Strategy::XrSeparateFuse => "xr_separate_fuse",
            Strategy::XrCombined => "xr_combined",
            Strategy::XrKeywordSeparate => "xr_keyword_separate",
            Strategy::XrKeywordCombined => "xr_keyword_combined",
        }
    }

    pub fn requires_image(self) -> bool {
        matches!(
            self,
            Strategy::RecGpt4v
                | Strategy::Cot
                | Strategy::VisualOnly
                | Strategy::VisualTextual
                | Strategy::XrCombined
                | Strategy::XrKeywordCombined
        )
    }

    pub fn is_cross_reflection(self) -> bool {
        matches!(
            self,
            Strategy::XrSeparateFuse
                | Strategy::XrCombined
                | Strategy::XrKeywordSeparate
                | Strategy::XrKeywordCombined
        )
    }

    /// Strategies whose final prompt is built from stage-one responses.
    pub fn is_separate(self) -> bool {
        matches!(self, Strategy::XrSeparateFuse | Strategy::XrKeywordSeparate)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Strategy {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.tag() == s)
            .ok_or_else(|| PromptError::UnknownTag(s.to_string()))
    }
}

pub const KAR_TEMPLATE: &str = "Introduce {item}, {item description} and describe its attributes precisely (including but not limited to {scenario-specific factors})";
pub const KAR_FACTORS_TEMPLATE: &str = "List the importance factors or features that determine whether a user will be interested in {item}.";
pub const LLM_REC_TEMPLATE: &str = "The description of an item is as follows: {item description}, what else should I say if I want to recommend it to others?";
pub const REC_GPT4V_TEMPLATE: &str = "What's in this image?";
pub const COT_TEMPLATE: &str = "The item description is as follows: {item description}. Please think step by step and describe this item based on both the description and the input image. Your response should highlight how combining both the text and image provides a comprehensive understanding of the item.";
pub const VISUAL_ONLY_TEMPLATE: &str = "Describe the image.";
pub const VISUAL_TEXTUAL_TEMPLATE: &str = "The item description is as follows: {item description}. Please describe this item based on both the description and the input image. Your response should highlight how combining both the text and image provides a comprehensive understanding of the item.";
pub const XR_SEPARATE_TEMPLATE: &str = "This is the item description: {R_text}. This is the description of the item image: {R_image}. Evaluate whether the information presented in the item description and the image description are supportive of each other or if there are any discrepancies. If any conflicts are identified, please address these conflicts.";
pub const XR_COMBINED_TEMPLATE: &str = "Please provide a summary of the item characteristics based on the provided text description and image. The item description is as follows: {text description}. Evaluate whether the information presented in the text and the image are supportive of each other or if there are any discrepancies. If any conflicts are identified, please address these conflicts.";

/// Sentence prefix shared by every cross-reflection prompt.
pub const CROSS_REFLECTION_MARKER: &str = "Evaluate whether the information presented in the";
pub const KEYWORD_INSTRUCTION: &str = "Respond with unique keywords only.";

/// Scenario-specific factors used for the software catalogue.
pub const SOFTWARE_KAR_FACTORS: [&str; 14] = [
    "functionality",
    "user interface",
    "user experience",
    "performance",
    "compatibility",
    "cost",
    "security",
    "support and documentation",
    "customizability",
    "scalability",
    "reliability",
    "updates and maintenance",
    "reputation and reviews",
    "accessibility",
];

/// Per-dataset rendering options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    /// Category phrase for the factor-discovery prompt, e.g. `software`.
    pub category: String,
    /// Scenario-specific factors listed in KAR item prompts.
    pub kar_factors: Vec<String>,
    /// Use the raw description as the text-stage response of separate
    /// prompting instead of querying a text model.
    pub omit_l_text: bool,
}

impl PromptConfig {
    pub fn for_source(source: Source) -> Self {
        match source {
            Source::Amazon => PromptConfig {
                category: "software".into(),
                kar_factors: SOFTWARE_KAR_FACTORS.iter().map(|s| s.to_string()).collect(),
                omit_l_text: true,
            },
            Source::Movielens | Source::Synthetic => PromptConfig {
                category: "a movie".into(),
                kar_factors: Vec::new(),
                omit_l_text: true,
            },
        }
    }
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig::for_source(Source::Movielens)
    }
}

/// Stage-one responses consumed by the separate fuse prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct Intermediates {
    pub r_text: String,
    pub r_image: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub strategy: Strategy,
    pub text: String,
    pub image_ref: Option<String>,
    pub placeholders_resolved: bool,
}

/// Text stage of separate prompting.
#[derive(Debug, Clone, PartialEq)]
pub enum TextStage {
    /// The text model is skipped; the description is used as is.
    Passthrough(String),
    Prompt(RenderedPrompt),
}

/// Single-pass `{name}` substitution over a template.
fn fill(template: &str, values: &[(&str, &str)]) -> (String, bool) {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    let mut resolved = true;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open..];
        match after.find('}') {
            Some(close) => {
                let name = &after[1..close];
                match values.iter().find(|(k, _)| *k == name) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        resolved = false;
                        out.push_str(&after[..=close]);
                    }
                }
                rest = &after[close + 1..];
            }
            None => {
                out.push_str(after);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    (out, resolved)
}

/// `a, b, and c` style list.
fn join_factors(factors: &[String]) -> String {
    match factors {
        [] => String::new(),
        [one] => one.clone(),
        [a, b] => format!("{a} and {b}"),
        [init @ .., last] => format!("{}, and {last}", init.join(", ")),
    }
}

fn template(strategy: Strategy) -> &'static str {
    match strategy {
        Strategy::Kar => KAR_TEMPLATE,
        Strategy::KarFactors => KAR_FACTORS_TEMPLATE,
        Strategy::LlmRec => LLM_REC_TEMPLATE,
        Strategy::RecGpt4v => REC_GPT4V_TEMPLATE,
        Strategy::Cot => COT_TEMPLATE,
        Strategy::VisualOnly => VISUAL_ONLY_TEMPLATE,
        Strategy::VisualTextual => VISUAL_TEXTUAL_TEMPLATE,
        Strategy::XrSeparateFuse | Strategy::XrKeywordSeparate => XR_SEPARATE_TEMPLATE,
        Strategy::XrCombined | Strategy::XrKeywordCombined => XR_COMBINED_TEMPLATE,
    }
}

/// Renders the prompt for `strategy` on `item`.
pub fn render(
    strategy: Strategy,
    item: &Item,
    intermediates: Option<&Intermediates>,
    config: &PromptConfig,
) -> Result<RenderedPrompt, PromptError> {
    let image_ref = if strategy.requires_image() {
        Some(item.image_ref.clone().ok_or_else(|| PromptError::MissingImage {
            strategy,
            item_id: item.item_id.clone(),
        })?)
    } else {
        None
    };
    let description = item.description.trim();
    let title = if item.title.trim().is_empty() {
        item.item_id.as_str()
    } else {
        item.title.trim()
    };

    let (text, resolved) = match strategy {
        Strategy::Kar => {
            if config.kar_factors.is_empty() {
                return Err(PromptError::NoKarFactors);
            }
            let factors = join_factors(&config.kar_factors);
            fill(
                KAR_TEMPLATE,
                &[
                    ("item", title),
                    ("item description", description),
                    ("scenario-specific factors", &factors),
                ],
            )
        }
        Strategy::KarFactors => {
            return kar_factor_prompt(&config.category);
        }
        Strategy::XrSeparateFuse | Strategy::XrKeywordSeparate => {
            let im = intermediates.ok_or(PromptError::MissingIntermediate(strategy))?;
            fill(
                XR_SEPARATE_TEMPLATE,
                &[("R_text", im.r_text.trim()), ("R_image", im.r_image.trim())],
            )
        }
        Strategy::XrCombined | Strategy::XrKeywordCombined => {
            fill(XR_COMBINED_TEMPLATE, &[("text description", description)])
        }
        other => fill(template(other), &[("item description", description)]),
    };
    let prompt = RenderedPrompt {
        strategy,
        text,
        image_ref,
        placeholders_resolved: resolved,
    };
    match strategy {
        Strategy::XrKeywordSeparate | Strategy::XrKeywordCombined => keyword_variant(&prompt),
        _ => Ok(prompt),
    }
}

/// Stage-one prompts of separate prompting: the text augmentation (or a
/// pass-through of the description) and the image description prompt.
pub fn render_separate_stage1(
    item: &Item,
    config: &PromptConfig,
) -> Result<(TextStage, RenderedPrompt), PromptError> {
    let image = render(Strategy::VisualOnly, item, None, config)?;
    let text = if config.omit_l_text {
        TextStage::Passthrough(item.description.trim().to_string())
    } else {
        TextStage::Prompt(render(Strategy::LlmRec, item, None, config)?)
    };
    Ok((text, image))
}

/// Turns a cross-reflection prompt into its keyword-only variant.
///
/// The cross-reflection sentences are kept; the keyword instruction is
/// appended once.
pub fn keyword_variant(prompt: &RenderedPrompt) -> Result<RenderedPrompt, PromptError> {
    let strategy = match prompt.strategy {
        Strategy::XrSeparateFuse | Strategy::XrKeywordSeparate => Strategy::XrKeywordSeparate,
        Strategy::XrCombined | Strategy::XrKeywordCombined => Strategy::XrKeywordCombined,
        other => return Err(PromptError::InvalidStrategy(other)),
    };
    let text = if prompt.text.ends_with(KEYWORD_INSTRUCTION) {
        prompt.text.clone()
    } else {
        format!("{} {KEYWORD_INSTRUCTION}", prompt.text)
    };
    Ok(RenderedPrompt {
        strategy,
        text,
        ..prompt.clone()
    })
}

/// Factor-discovery prompt for a catalogue category.
pub fn kar_factor_prompt(category_name: &str) -> Result<RenderedPrompt, PromptError> {
    let category = category_name.trim();
    if category.is_empty() {
        return Err(PromptError::EmptyCategory);
    }
    let (text, resolved) = fill(KAR_FACTORS_TEMPLATE, &[("item", category)]);
    Ok(RenderedPrompt {
        strategy: Strategy::KarFactors,
        text,
        image_ref: None,
        placeholders_resolved: resolved,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item() -> Item {
        Item {
            item_id: "42".into(),
            title: "Widget".into(),
            description: "A {braced} gadget".into(),
            image_ref: Some("http://img/42.jpg".into()),
            source: Source::Amazon,
        }
    }

    #[test]
    fn verbatim_image_prompts() {
        let cfg = PromptConfig::default();
        let p = render(Strategy::RecGpt4v, &item(), None, &cfg).unwrap();
        assert_eq!(p.text, "What's in this image?");
        assert_eq!(p.image_ref.as_deref(), Some("http://img/42.jpg"));
        let p = render(Strategy::VisualOnly, &item(), None, &cfg).unwrap();
        assert_eq!(p.text, "Describe the image.");
    }

    #[test]
    fn separate_fuse_prefix() {
        let im = Intermediates {
            r_text: "A".into(),
            r_image: "B".into(),
        };
        let p = render(Strategy::XrSeparateFuse, &item(), Some(&im), &PromptConfig::default()).unwrap();
        assert!(p
            .text
            .starts_with("This is the item description: A. This is the description of the item image: B. Evaluate whether"));
        assert!(p.image_ref.is_none());
        assert_eq!(
            render(Strategy::XrSeparateFuse, &item(), None, &PromptConfig::default()),
            Err(PromptError::MissingIntermediate(Strategy::XrSeparateFuse))
        );
    }

    #[test]
    fn braces_in_item_text_are_literal() {
        let p = render(Strategy::LlmRec, &item(), None, &PromptConfig::default()).unwrap();
        assert!(p.text.contains("A {braced} gadget,"));
        assert!(p.placeholders_resolved);
    }

    #[test]
    fn missing_image() {
        let mut it = item();
        it.image_ref = None;
        for s in Strategy::ALL.into_iter().filter(|s| s.requires_image()) {
            assert!(matches!(
                render(s, &it, None, &PromptConfig::default()),
                Err(PromptError::MissingImage { .. })
            ));
        }
        assert!(matches!(
            render_separate_stage1(&it, &PromptConfig::default()),
            Err(PromptError::MissingImage { .. })
        ));
    }

    #[test]
    fn stage1_modes() {
        let mut cfg = PromptConfig::default();
        let (text, image) = render_separate_stage1(&item(), &cfg).unwrap();
        assert_eq!(text, TextStage::Passthrough("A {braced} gadget".into()));
        assert_eq!(image.strategy, Strategy::VisualOnly);
        cfg.omit_l_text = false;
        let (text, _) = render_separate_stage1(&item(), &cfg).unwrap();
        match text {
            TextStage::Prompt(p) => assert_eq!(p.strategy, Strategy::LlmRec),
            other => panic!("expected prompt, got {other:?}"),
        }
    }

    #[test]
    fn keyword_variant_rules() {
        let cfg = PromptConfig::default();
        let p = render(Strategy::XrCombined, &item(), None, &cfg).unwrap();
        let k = keyword_variant(&p).unwrap();
        assert_eq!(k.strategy, Strategy::XrKeywordCombined);
        assert!(k.text.starts_with(&p.text));
        assert!(k.text.contains(CROSS_REFLECTION_MARKER));
        assert!(k.text.ends_with(KEYWORD_INSTRUCTION));
        assert_eq!(keyword_variant(&k).unwrap(), k);
        let kar = render(Strategy::Kar, &item(), None, &PromptConfig::for_source(Source::Amazon)).unwrap();
        assert_eq!(keyword_variant(&kar), Err(PromptError::InvalidStrategy(Strategy::Kar)));
    }

    #[test]
    fn factor_prompt() {
        assert_eq!(
            kar_factor_prompt("software").unwrap().text,
            "List the importance factors or features that determine whether a user will be interested in software."
        );
        assert_eq!(
            kar_factor_prompt("a movie").unwrap().text,
            "List the importance factors or features that determine whether a user will be interested in a movie."
        );
        assert_eq!(kar_factor_prompt(""), Err(PromptError::EmptyCategory));
    }

    #[test]
    fn kar_needs_factors() {
        assert_eq!(
            render(Strategy::Kar, &item(), None, &PromptConfig::default()),
            Err(PromptError::NoKarFactors)
        );
    }

    #[test]
    fn tags_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.tag().parse::<Strategy>().unwrap(), s);
        }
        assert!("nope".parse::<Strategy>().is_err());
    }
}
