//! The fourteen language–culture pairs and source novels of the reference
//! corpus.

use super::{LanguageCulturePair, Story};

pub const LANGUAGE_COUNT: usize = 14;
pub const HUMAN_MORALS_PER_CELL: usize = 3;

/// (language code, country code, language name, country name, story id, title)
const ROWS: [(&str, &str, &str, &str, &str, &str); LANGUAGE_COUNT] = [
    ("it", "IT", "Italian", "Italy", "Q3822099", "La donna dei fiori di carta"),
    ("de", "DE", "German", "Germany", "Q1197714", "Der Untergang"),
    ("fr", "FR", "French", "France", "Q1741761", "Les Petits Enfants du siècle"),
    ("pl", "PL", "Polish", "Poland", "Q931113", "Astronauci"),
    ("ja", "JP", "Japanese", "Japan", "Q6455599", "The Woman in the Dunes"),
    ("he", "IL", "Hebrew", "Israel", "Q5708155", "Murder on the Way to Bethlehem"),
    ("pt", "BR", "Portuguese", "Brazil", "Q6520356", "Leite Derramado"),
    ("sv", "SE", "Swedish", "Sweden", "Q10541297", "Juloratoriet"),
    ("nl", "NL", "Dutch", "Netherlands", "Q2396544", "De Cock en een strop voor Bobby"),
    ("cs", "CZ", "Czech", "Czech Republic", "Q12030020", "Konec punku v Helsinkách"),
    ("ar", "EG", "Arabic", "Egypt", "Q8134681", "Azazel"),
    ("hu", "HU", "Hungarian", "Hungary", "Q480270", "Abigél"),
    ("ko", "KR", "Korean", "Korea", "Q18880605", "The Hen Who Dreamed She Could Fly"),
    ("en", "US", "English", "United States", "Q2666125", "Time for the Stars"),
];

pub fn languages() -> Vec<LanguageCulturePair> {
    ROWS.iter()
        .map(|r| LanguageCulturePair {
            language_code: r.0.into(),
            country_code: r.1.into(),
            display_name: r.2.into(),
            country_name: r.3.into(),
        })
        .collect()
}

pub fn stories() -> Vec<Story> {
    let langs = languages();
    ROWS.iter()
        .zip(langs)
        .map(|(r, origin)| Story {
            story_id: r.4.into(),
            origin,
            title: r.5.into(),
        })
        .collect()
}

/// Default model identifiers for the seven generators.
pub const MODEL_IDS: [&str; 7] = [
    "gpt-4o",
    "gemini-2.5-flash",
    "gemma3-8b",
    "phi3-8b",
    "aya-8b",
    "aya-35b",
    "qwen3-8b",
];

/// Default embedder identifiers: two multilingual encoders and one English-only encoder.
pub const EMBEDDER_IDS: [(&str, bool); 3] = [
    ("LaBSE", true),
    ("paraphrase-multilingual-MiniLM-L12-v2", true),
    ("all-mpnet-base-v2", false),
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fourteen_distinct_pairs() {
        let l = languages();
        assert_eq!(l.len(), 14);
        let mut codes: Vec<_> = l.iter().map(|x| x.language_code.clone()).collect();
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), 14);
        assert_eq!(stories().len(), 14);
    }
}
