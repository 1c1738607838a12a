//! Versioned prompt templates shipped with the crate.

use crate::error::{Error, Result};
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub name: &'static str,
    pub version: u32,
    pub body: &'static str,
    pub slots: &'static [&'static str],
}

pub const GRAMMAR_CLEAN: Template = Template {
    name: "grammar_clean",
    version: 1,
    body: include_str!("../resources/prompts/grammar_clean.v1.txt"),
    slots: &["LANGUAGE", "SAMPLE"],
};

pub const STORY_REFERENCE_CLEAN: Template = Template {
    name: "story_reference_clean",
    version: 1,
    body: include_str!("../resources/prompts/story_reference_clean.v1.txt"),
    slots: &["LANGUAGE", "SAMPLE"],
};

pub const TRANSLATE: Template = Template {
    name: "translate",
    version: 1,
    body: include_str!("../resources/prompts/translate.v1.txt"),
    slots: &["origin_lang", "target_lang", "TEXT"],
};

pub const MORAL_GENERATION: Template = Template {
    name: "moral_generation",
    version: 1,
    body: include_str!("../resources/prompts/moral_generation.v1.txt"),
    slots: &["LANGUAGE", "COUNTRY", "PASSAGE"],
};

pub const MOVA_VALUES: Template = Template {
    name: "mova_values",
    version: 1,
    body: include_str!("../resources/prompts/mova_values.v1.txt"),
    slots: &["TEXT"],
};

pub const ALL: [Template; 5] = [
    GRAMMAR_CLEAN,
    STORY_REFERENCE_CLEAN,
    TRANSLATE,
    MORAL_GENERATION,
    MOVA_VALUES,
];

impl Template {
    /// Fills every declared slot. Values are inserted verbatim; braces that
    /// are not declared slots (e.g. a JSON example) are left untouched.
    pub fn render(&self, values: &[(&str, &str)]) -> Result<String> {
        let mut out = self.body.trim_end_matches('\n').to_string();
        for slot in self.slots {
            let v = values
                .iter()
                .find(|(k, _)| k == slot)
                .map(|(_, v)| *v)
                .ok_or_else(|| {
                    Error::Template(format!("{} v{}: no value for {{{slot}}}", self.name, self.version))
                })?;
            out = out.replace(&format!("{{{slot}}}"), v);
        }
        Ok(out)
    }

    /// Text before the first occurrence of `{slot}`.
    pub fn prefix_before(&self, slot: &str) -> Option<&'static str> {
        self.body.find(&format!("{{{slot}}}")).map(|i| &self.body[..i])
    }

    pub fn id(&self) -> String {
        format!("{}.v{}", self.name, self.version)
    }

    /// Hash of the template body, recorded alongside completions.
    pub fn hash(&self) -> String {
        text::sha256_hex(self.body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_slot_is_present_in_its_template() {
        for t in ALL {
            for s in t.slots {
                assert!(t.body.contains(&format!("{{{s}}}")), "{} lacks {s}", t.name);
            }
        }
    }

    #[test]
    fn missing_value_is_an_error() {
        assert!(TRANSLATE.render(&[("origin_lang", "English")]).is_err());
    }

    #[test]
    fn mova_json_braces_survive() {
        let p = MOVA_VALUES.render(&[("TEXT", "Be kind.")]).unwrap();
        assert!(p.contains("\"Security\":\n}"));
        assert!(p.contains("Be kind."));
    }
}
