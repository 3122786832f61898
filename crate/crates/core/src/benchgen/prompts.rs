//! Class-conditioned prompt sets.

use crate::error::{Error, Result};

/// Produces candidate prompts for a class name. Candidates may repeat; only
/// distinct ones count.
pub trait PromptSource {
    fn candidates(&self, class_name: &str, wanted: usize) -> Vec<String>;
}

/// Fills `{}` in each template with the class name.
#[derive(Clone, Debug)]
pub struct TemplateSource {
    pub templates: Vec<String>,
}

impl TemplateSource {
    pub fn new(templates: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            templates: templates.into_iter().map(Into::into).collect(),
        }
    }

    /// Sentence templates built from a style list crossed with a scene list.
    pub fn standard() -> Self {
        const STYLES: [&str; 12] = [
            "a photo of",
            "a close-up photo of",
            "a blurry photo of",
            "a bright photo of",
            "a dark photo of",
            "a cropped photo of",
            "a low-resolution photo of",
            "a high-quality photo of",
            "a snapshot of",
            "an outdoor photo of",
            "a centered photo of",
            "a grainy photo of",
        ];
        const SCENES: [&str; 20] = [
            "",
            " in the morning",
            " at night",
            " in the rain",
            " on a sunny day",
            " in the snow",
            " against a plain background",
            " in a city street",
            " in a field",
            " near the water",
            " indoors",
            " in the shade",
            " under bright light",
            " from far away",
            " from above",
            " from the side",
            " in motion",
            " in a crowd",
            " at dusk",
            " in fog",
        ];
        Self::new(
            STYLES
                .iter()
                .flat_map(|s| SCENES.iter().map(move |c| format!("{s} a {{}}{c}."))),
        )
    }
}

impl PromptSource for TemplateSource {
    fn candidates(&self, class_name: &str, _wanted: usize) -> Vec<String> {
        self.templates.iter().map(|t| t.replace("{}", class_name)).collect()
    }
}

/// `M` distinct prompts per class, each containing the class name, in
/// source order. Classes whose source falls short are all reported.
pub fn build_prompt_set(class_names: &[String], m: usize, source: &dyn PromptSource) -> Result<Vec<Vec<String>>> {
    if class_names.is_empty() || m == 0 {
        return Err(Error::Precondition("need at least one class and M >= 1".into()));
    }
    let mut out = Vec::with_capacity(class_names.len());
    let mut deficient = Vec::new();
    for name in class_names {
        let mut set: Vec<String> = Vec::with_capacity(m);
        for p in source.candidates(name, m) {
            if set.len() == m {
                break;
            }
            if p.contains(name.as_str()) && !set.contains(&p) {
                set.push(p);
            }
        }
        if set.len() < m {
            deficient.push(name.clone());
        }
        out.push(set);
    }
    if !deficient.is_empty() {
        return Err(Error::InsufficientPrompts(deficient));
    }
    Ok(out)
}
