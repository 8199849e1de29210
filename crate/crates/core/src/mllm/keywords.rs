//! Preference keywords bucketed into the five-way rubric.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_PER_CATEGORY: usize = 8;
pub const MAX_KEYWORD_WORDS: usize = 5;

/// Rubric categories, in serialization order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    ArtisticStyle,
    EmotionalAtmospheric,
    Thematic,
    VisualElements,
    Other,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::ArtisticStyle,
        Category::EmotionalAtmospheric,
        Category::Thematic,
        Category::VisualElements,
        Category::Other,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Category::ArtisticStyle => "Artistic Style",
            Category::EmotionalAtmospheric => "Emotional/Atmospheric",
            Category::Thematic => "Thematic",
            Category::VisualElements => "Visual Elements",
            Category::Other => "Others",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Category::ArtisticStyle => "artistic_style",
            Category::EmotionalAtmospheric => "emotional_atmospheric",
            Category::Thematic => "thematic",
            Category::VisualElements => "visual_elements",
            Category::Other => "other",
        }
    }

    pub fn from_slug(slug: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.slug() == slug)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeywordError {
    #[error("keyword `{0}` must be 1 to {MAX_KEYWORD_WORDS} words")]
    BadLength(String),
    #[error("category {0:?} holds more than {MAX_PER_CATEGORY} keywords")]
    TooMany(Category),
    #[error("duplicate keyword `{1}` in category {0:?}")]
    Duplicate(Category, String),
    #[error("keyword set is empty")]
    Empty,
}

/// Trims, strips trailing sentence punctuation and collapses inner whitespace.
/// Returns `None` when nothing (or too many words) remains.
pub fn normalize_keyword(raw: &str) -> Option<String> {
    let trimmed = raw
        .trim()
        .trim_matches(|c: char| matches!(c, '.' | ';' | '"' | '\'' | '*' | '`'))
        .trim();
    let words: Vec<&str> = trimmed.split_whitespace().collect();
    if words.is_empty() || words.len() > MAX_KEYWORD_WORDS {
        return None;
    }
    Some(words.join(" "))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSet {
    #[serde(default)]
    pub artistic_style: Vec<String>,
    #[serde(default)]
    pub emotional_atmospheric: Vec<String>,
    #[serde(default)]
    pub thematic: Vec<String>,
    #[serde(default)]
    pub visual_elements: Vec<String>,
    #[serde(default)]
    pub other: Vec<String>,
}

impl KeywordSet {
    pub fn get(&self, category: Category) -> &[String] {
        match category {
            Category::ArtisticStyle => &self.artistic_style,
            Category::EmotionalAtmospheric => &self.emotional_atmospheric,
            Category::Thematic => &self.thematic,
            Category::VisualElements => &self.visual_elements,
            Category::Other => &self.other,
        }
    }

    fn get_mut(&mut self, category: Category) -> &mut Vec<String> {
        match category {
            Category::ArtisticStyle => &mut self.artistic_style,
            Category::EmotionalAtmospheric => &mut self.emotional_atmospheric,
            Category::Thematic => &mut self.thematic,
            Category::VisualElements => &mut self.visual_elements,
            Category::Other => &mut self.other,
        }
    }

    /// Adds a keyword after normalization. Duplicates (case-insensitive),
    /// overlong keywords and overflow past the per-category cap are dropped;
    /// returns whether the keyword was kept.
    pub fn insert(&mut self, category: Category, raw: &str) -> bool {
        let Some(kw) = normalize_keyword(raw) else {
            return false;
        };
        let bucket = self.get_mut(category);
        if bucket.len() >= MAX_PER_CATEGORY
            || bucket.iter().any(|k| k.eq_ignore_ascii_case(&kw))
        {
            return false;
        }
        bucket.push(kw);
        true
    }

    pub fn len(&self) -> usize {
        Category::ALL.iter().map(|c| self.get(*c).len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All keywords in rubric order.
    pub fn iter(&self) -> impl Iterator<Item = (Category, &str)> {
        Category::ALL
            .into_iter()
            .flat_map(move |c| self.get(c).iter().map(move |k| (c, k.as_str())))
    }

    /// The preference text that gets encoded: every keyword, rubric order, comma-joined.
    pub fn preference_text(&self) -> String {
        self.iter().map(|(_, k)| k).collect::<Vec<_>>().join(", ")
    }

    pub fn validate(&self) -> Result<(), KeywordError> {
        for category in Category::ALL {
            let bucket = self.get(category);
            if bucket.len() > MAX_PER_CATEGORY {
                return Err(KeywordError::TooMany(category));
            }
            for (i, kw) in bucket.iter().enumerate() {
                if normalize_keyword(kw).as_deref() != Some(kw.as_str()) {
                    return Err(KeywordError::BadLength(kw.clone()));
                }
                if bucket[..i].iter().any(|k| k.eq_ignore_ascii_case(kw)) {
                    return Err(KeywordError::Duplicate(category, kw.clone()));
                }
            }
        }
        if self.is_empty() {
            return Err(KeywordError::Empty);
        }
        Ok(())
    }
}

// Seed terms per category, lowercase. Matching is on whole keyword first,
// then on any contained word sequence, in rubric order.
const ARTISTIC: &[&str] = &[
    "expressionism", "post-impressionism", "impressionism", "surrealism", "cubism",
    "abstract expressionism", "romanticism", "fauvism", "realism", "baroque", "renaissance",
    "art nouveau", "art deco", "pop art", "minimalism", "pointillism", "ukiyo-e", "dadaism",
    "futurism", "bauhaus", "oil painting", "watercolor", "acrylics", "acrylic", "tempera",
    "fresco", "impasto", "digital painting", "digital art", "sculpture", "mixed media",
    "graffiti", "ink wash", "charcoal", "pastel", "gouache", "photorealism", "concept art",
    "cyberpunk aesthetic", "cyberpunk", "anime", "pixel art", "woodblock print", "engraving",
    "illustration", "painting",
];

const EMOTIONAL: &[&str] = &[
    "sadness", "joy", "nostalgia", "anger", "fear", "love", "peace", "mystery", "serenity",
    "tension", "elegance", "melancholy", "gloom", "gloomy", "calm", "hope", "loneliness",
    "solitude", "dread", "awe", "wonder", "warmth", "warm mood", "romantic", "whimsy",
    "playful", "dreamy", "eerie", "ominous", "tranquil", "tranquility", "euphoria",
    "excitement", "intensity", "intense", "longing", "grief", "passion", "cozy", "somber",
    "haunting", "uplifting",
];

const THEMATIC: &[&str] = &[
    "time", "transience", "cycles of nature", "survival", "decay", "transformation",
    "greek mythology", "christianity", "hinduism", "buddhism", "ancient egypt", "judaism",
    "norse mythology", "christian allegory", "astrological symbols", "urbanization",
    "nature", "industrialization", "war", "rebirth", "mortality", "sci-fi", "science fiction",
    "futuristic", "fantasy", "mythology", "folklore", "religion", "space exploration",
    "dystopia", "utopia", "rome", "heritage", "childhood", "pastoral", "maritime",
    "night sky", "cosmos", "memory", "identity",
];

const VISUAL: &[&str] = &[
    "symmetry", "asymmetry", "rule of thirds", "warm", "cool", "rough", "smooth", "glossy",
    "straight lines", "curved lines", "organic lines", "high contrast", "low contrast",
    "swirling brushstrokes", "brushstrokes", "bold colors", "vivid colors", "muted colors",
    "pastel colors", "neon", "neon lights", "monochrome", "golden light", "soft lighting",
    "dramatic lighting", "chiaroscuro", "geometric shapes", "texture", "thick texture",
    "depth of field", "vanishing point", "leading lines", "diagonal composition",
    "central composition", "negative space", "vignette", "blue palette", "warm palette",
    "cool palette", "fog", "haze", "grain",
];

pub(crate) fn lexicon(category: Category) -> &'static [&'static str] {
    match category {
        Category::ArtisticStyle => ARTISTIC,
        Category::EmotionalAtmospheric => EMOTIONAL,
        Category::Thematic => THEMATIC,
        Category::VisualElements => VISUAL,
        Category::Other => &[],
    }
}

fn contains_phrase(haystack: &[&str], phrase: &str) -> bool {
    let needle: Vec<&str> = phrase.split_whitespace().collect();
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle.as_slice())
}

/// Assigns a keyword to exactly one category. Pure and total: anything the
/// lexicon does not recognise lands in [`Category::Other`].
pub fn classify_keyword(keyword: &str) -> Category {
    let lower = keyword.to_lowercase();
    let lexed = [
        Category::ArtisticStyle,
        Category::EmotionalAtmospheric,
        Category::Thematic,
        Category::VisualElements,
    ];
    if let Some(c) = lexed.into_iter().find(|c| lexicon(*c).contains(&lower.as_str())) {
        return c;
    }
    let words: Vec<&str> = lower
        .split(|ch: char| ch.is_whitespace() || ch == '/')
        .filter(|w| !w.is_empty())
        .collect();
    lexed
        .into_iter()
        .find(|c| lexicon(*c).iter().any(|term| contains_phrase(&words, term)))
        .unwrap_or(Category::Other)
}
