//! Seeded synthetic corpora shaped like the reference design. Used by tests,
//! benchmarks and the offline demo pipeline; texts are English-like filler
//! drawn from a small vocabulary so that similarities vary in a plausible way.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    reference, Corpus, Manifest, Moral, MoralSource, Passage, PromptVariant, Provenance, Story,
    SCHEMA_VERSION,
};

#[derive(Debug, Clone)]
pub struct FixtureSpec {
    pub stories: usize,
    pub languages: usize,
    pub human_per_cell: usize,
    /// Build every (story, language) passage; otherwise originals only.
    pub full_grid: bool,
    /// Model ids that get one moral per passage.
    pub models: Vec<String>,
    /// Extra discarded human morals per cell.
    pub discarded_per_cell: usize,
    pub seed: u64,
}

impl FixtureSpec {
    pub fn grid(stories: usize, languages: usize) -> Self {
        FixtureSpec {
            stories,
            languages,
            human_per_cell: 3,
            full_grid: true,
            models: Vec::new(),
            discarded_per_cell: 0,
            seed: 7,
        }
    }

    /// 14 stories × 14 languages × 3 human morals.
    pub fn reference_shaped(seed: u64) -> Self {
        FixtureSpec {
            stories: reference::LANGUAGE_COUNT,
            languages: reference::LANGUAGE_COUNT,
            human_per_cell: reference::HUMAN_MORALS_PER_CELL,
            full_grid: true,
            models: Vec::new(),
            discarded_per_cell: 0,
            seed,
        }
    }

    pub fn with_models(mut self, models: &[&str]) -> Self {
        self.models = models.iter().map(|s| s.to_string()).collect();
        self
    }
}

const THEMES: [&[&str]; 14] = [
    &["love", "loss", "memory", "flowers", "regret"],
    &["power", "downfall", "loyalty", "war", "pride"],
    &["childhood", "family", "poverty", "dreams", "belonging"],
    &["science", "humanity", "peace", "conflict", "progress"],
    &["freedom", "struggle", "acceptance", "endurance", "isolation"],
    &["justice", "faith", "truth", "suspicion", "courage"],
    &["jealousy", "prejudice", "decline", "legacy", "regret"],
    &["grief", "music", "hope", "love", "time"],
    &["justice", "mistake", "truth", "evil", "protection"],
    &["youth", "rebellion", "friendship", "change", "identity"],
    &["truth", "faith", "temptation", "freedom", "courage"],
    &["friendship", "secrecy", "loyalty", "trust", "growth"],
    &["sacrifice", "love", "fate", "motherhood", "freedom"],
    &["family", "time", "distance", "loyalty", "choice"],
];

const GENERIC: [&str; 12] = [
    "life", "people", "others", "kindness", "patience", "honesty", "strength", "wisdom", "hardship",
    "change", "trust", "hope",
];

const HUMAN_TEMPLATES: [&str; 6] = [
    "{a} and {b} shape {c}.",
    "Without {a} there is no {b}.",
    "{a} always finds a way through {c}.",
    "Sometimes {a} matters more than {b}.",
    "True {a} requires {b} and {c}.",
    "{a} can destroy {c} if we ignore {b}.",
];

const MODEL_TEMPLATES: [&str; 2] = [
    "{a} and {b} ultimately prevail over {c}.",
    "True {a} requires {b}, even in the face of {c}.",
];

fn fill(template: &str, a: &str, b: &str, c: &str) -> String {
    let s = template.replace("{a}", a).replace("{b}", b).replace("{c}", c);
    crate::text::capitalize_first(&s)
}

pub fn fixture_corpus(spec: &FixtureSpec) -> Corpus {
    assert!(spec.languages >= 1 && spec.languages <= reference::LANGUAGE_COUNT);
    assert!(spec.stories >= 1 && spec.stories <= reference::LANGUAGE_COUNT);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let languages: Vec<_> = reference::languages().into_iter().take(spec.languages).collect();
    let stories: Vec<Story> = reference::stories()
        .into_iter()
        .take(spec.stories)
        .enumerate()
        .map(|(i, mut s)| {
            s.origin = languages[i % languages.len()].clone();
            s
        })
        .collect();

    let mut passages = Vec::new();
    for s in &stories {
        for l in &languages {
            let original = l.language_code == s.origin.language_code;
            if !original && !spec.full_grid {
                continue;
            }
            passages.push(Passage {
                story_id: s.story_id.clone(),
                language_code: l.language_code.clone(),
                text: format!(
                    "[{}] Plot summary of {}. The narrative follows its characters through {}.",
                    l.language_code,
                    s.title,
                    theme_of(s, &stories).join(", ")
                ),
                is_original: original,
                provenance: if original {
                    Provenance::Original
                } else {
                    Provenance::MachineTranslated
                },
                mt_provider: if original { None } else { Some("fixture".into()) },
            });
        }
    }

    let mut morals = Vec::new();
    for s in &stories {
        let theme = theme_of(s, &stories);
        for l in &languages {
            let total = spec.human_per_cell + spec.discarded_per_cell;
            for k in 0..total {
                let t = HUMAN_TEMPLATES.choose(&mut rng).unwrap();
                let a = theme.choose(&mut rng).unwrap();
                let b = if rng.random_bool(0.5) {
                    theme.choose(&mut rng).unwrap()
                } else {
                    GENERIC.choose(&mut rng).unwrap()
                };
                let c = GENERIC.choose(&mut rng).unwrap();
                let discarded = k >= spec.human_per_cell;
                morals.push(Moral {
                    moral_id: format!("h:{}:{}:{}", s.story_id, l.language_code, k),
                    story_id: s.story_id.clone(),
                    passage_language: l.language_code.clone(),
                    text: fill(t, a, b, c),
                    source: MoralSource::Human {
                        annotator_id: format!("ann-{}-{}-{}", l.language_code, s.story_id, k),
                    },
                    cleaned: true,
                    discarded,
                    discard_reason: discarded.then(|| "similar to model output".to_string()),
                    prompt_hash: None,
                });
            }
            for (mi, model) in spec.models.iter().enumerate() {
                let t = MODEL_TEMPLATES[mi % MODEL_TEMPLATES.len()];
                // models reuse the story's leading theme words across languages
                let a = theme[mi % 2];
                let b = if rng.random_bool(0.8) { theme[2] } else { *theme.choose(&mut rng).unwrap() };
                let c = GENERIC[mi % GENERIC.len()];
                morals.push(Moral {
                    moral_id: format!(
                        "m:{}:{}:{}:{}",
                        model,
                        PromptVariant::SocioDemographicEnglish,
                        s.story_id,
                        l.language_code
                    ),
                    story_id: s.story_id.clone(),
                    passage_language: l.language_code.clone(),
                    text: fill(t, a, b, c),
                    source: MoralSource::Model {
                        model_id: model.clone(),
                        prompt_variant: PromptVariant::SocioDemographicEnglish,
                    },
                    cleaned: true,
                    discarded: false,
                    discard_reason: None,
                    prompt_hash: None,
                });
            }
        }
    }

    Corpus::from_parts(
        Manifest {
            schema_version: SCHEMA_VERSION,
            languages,
        },
        stories,
        passages,
        morals,
    )
    .expect("synthetic corpus is well formed")
}

fn theme_of(s: &Story, stories: &[Story]) -> &'static [&'static str] {
    let idx = reference::stories()
        .iter()
        .position(|r| r.story_id == s.story_id)
        .unwrap_or_else(|| stories.iter().position(|x| x.story_id == s.story_id).unwrap_or(0));
    THEMES[idx % THEMES.len()]
}
