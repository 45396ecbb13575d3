use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::VlmError;

/// The two evaluation axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptAxis {
    Information,
    Artifact,
}

pub const INFORMATION_PROMPTS: [&str; 20] = [
    "What is the digit in this image?",
    "Can you identify the number?",
    "Which number is shown here?",
    "Please read the digit.",
    "What number is visible?",
    "Can you tell which number appears?",
    "Read the digit from the image.",
    "Identify the number in this picture.",
    "What does the digit look like?",
    "What is written in the image?",
    "Is there a digit shown here?",
    "Recognize the number in this image.",
    "What number can you see?",
    "What digit does the image contain?",
    "Tell me the number you observe.",
    "What's the printed number?",
    "Do you recognize a digit?",
    "Read the numeral in this image.",
    "What digit do you detect?",
    "State the digit shown in the image.",
];

pub const ARTIFACT_PROMPTS: [&str; 20] = [
    "Does this image contain visual artifacts?",
    "Is the image clean and artifact-free?",
    "Can you spot any distortions?",
    "Are there imperfections in this image?",
    "How clean is the image?",
    "Does this image look realistic?",
    "Rate the visual clarity of the image.",
    "Is the output free of compression artifacts?",
    "Do you notice any artifacts?",
    "Are there visible distortions or glitches?",
    "Comment on the image\u{2019}s realism.",
    "Does the image appear sharp and clear?",
    "Is this image blurry or distorted?",
    "Does the output seem natural and artifact-free?",
    "Are there distracting visual flaws?",
    "Is the image degraded in any way?",
    "How visually appealing is this image?",
    "Are there any unwanted textures or glitches?",
    "Would you consider this image clean?",
    "Is this result free of visual anomalies?",
];

/// Follow-up used by the confidence filter; `{label}` is substituted.
pub const CONFIDENCE_TEMPLATE: &str =
    "On a scale of 1 to 100, how certain are you that this number is a {label}?";

/// Opening message of a batched ranking session; `{total}` and `{batches}`
/// are substituted.
pub const BATCH_SESSION_TEMPLATE: &str = "I will provide a total of {total} images in {batches} batches. For each batch, provide detailed explanations on the appearance of the images. Assess whether they contain artifacts, and determine if they are clear enough to be considered natural-looking by human perception. After reviewing all of the images, select the top-5 and top-1 best-looking images, prioritizing those with fewer artifacts. Also, provide the batch and image number of each selection. Finally, identify the worst-quality image and specify its batch and image number";

/// Appended to the last batch so the reply carries a machine-readable order.
pub const RANKING_INSTRUCTION: &str = "This was the final batch. End your answer with one line of the form `RANKING: b-i, b-i, ...` that lists every image you were shown as batch-image pairs, best first.";

pub fn confidence_prompt(label: &str) -> String {
    CONFIDENCE_TEMPLATE.replace("{label}", label)
}

pub fn batch_session_prompt(total: usize, batches: usize) -> String {
    BATCH_SESSION_TEMPLATE
        .replace("{total}", &total.to_string())
        .replace("{batches}", &batches.to_string())
}

/// An ordered list of equivalent phrasings for one axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptPool {
    axis: PromptAxis,
    prompts: Vec<String>,
}

impl PromptPool {
    pub fn information() -> Self {
        Self::builtin(PromptAxis::Information)
    }

    pub fn artifact() -> Self {
        Self::builtin(PromptAxis::Artifact)
    }

    pub fn builtin(axis: PromptAxis) -> Self {
        let src: &[&str] = match axis {
            PromptAxis::Information => &INFORMATION_PROMPTS,
            PromptAxis::Artifact => &ARTIFACT_PROMPTS,
        };
        Self {
            axis,
            prompts: src.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// A user pool; must be non-empty with unique, non-blank entries.
    pub fn custom(axis: PromptAxis, prompts: Vec<String>) -> Result<Self, VlmError> {
        if prompts.is_empty() {
            return Err(VlmError::InvalidConfig("prompt pool is empty".into()));
        }
        let mut seen = HashSet::new();
        for p in &prompts {
            if p.trim().is_empty() {
                return Err(VlmError::InvalidConfig("blank prompt in pool".into()));
            }
            if !seen.insert(p.as_str()) {
                return Err(VlmError::InvalidConfig(format!("duplicate prompt {p:?}")));
            }
        }
        Ok(Self { axis, prompts })
    }

    /// One prompt per non-empty line, or a JSON array of strings.
    pub fn load(axis: PromptAxis, path: impl AsRef<Path>) -> Result<Self, VlmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| VlmError::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        let prompts = if text.trim_start().starts_with('[') {
            serde_json::from_str::<Vec<String>>(&text)
                .map_err(|e| VlmError::InvalidConfig(format!("bad prompt list: {e}")))?
        } else {
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect()
        };
        Self::custom(axis, prompts)
    }

    pub fn axis(&self) -> PromptAxis {
        self.axis
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub(crate) fn require(&self, axis: PromptAxis) -> Result<(), VlmError> {
        if self.axis != axis {
            return Err(VlmError::InvalidConfig(format!(
                "expected a {axis:?} pool, got {:?}",
                self.axis
            )));
        }
        Ok(())
    }
}
