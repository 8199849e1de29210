//! Instruction templates for the three MLLM stages and their in-context
//! examples. The keyword-extraction instruction for artistic style and the
//! enrichment/planning instructions are kept word-for-word; the remaining
//! extraction categories reuse the same skeleton with their rubric swapped in.

use super::group::Entity;
use super::keywords::{Category, KeywordSet};
use super::parse::{
    render_enrichment, render_entity_list, render_plan, EnrichmentResponse,
    RawPlacement,
};

const STYLE_EXTRACTION: &str = "Your role is to accurately identify and summarize the artistic style of images, focusing on the art movements and visual techniques. You are familiar with a wide range of traditional and modern art movements (such as Expressionism, Surrealism, Cubism, etc.) and visual techniques (like oil painting, watercolor, digital painting, sculpture, etc.). Your task is to carefully examine images, identify relevant art movements and visual techniques, and generate a list of keywords that succinctly capture the artistic style. You should rely on both your deep understanding of art history and your ability to analyze the visual elements of the image to provide an informed and precise response as follows: 1.Begin by identifying whether the image aligns with any known art movements (e.g., Expressionism, Cubism, Abstract Expressionism, Surrealism, etc.). Look for visual cues such as emotional expression, color contrast, abstraction, or symbolic elements that may indicate a specific movement. 2.focus on the techniques used to create the image. Check for traditional techniques (like oil painting, fresco, or watercolor) or modern ones (such as digital painting, mixed media, or graffiti). 3.Based on the art movements and visual techniques identified, provide 5 summary keywords. If the image corresponds to one of the listed art movements or techniques (e.g., Expressionism, Oil Painting), include those. If there are no direct matches, use your knowledge to suggest relevant keywords based on the visual characteristics you observed. If you are unable to identify enough matches to reach 5 keywords, provide as many relevant keywords as possible, even if the total is fewer than 5. The output should follow the format of the examples below:
Example 1 (Van Gogh's Starry Night):
Keywords: Expressionism, Oil Painting, Impasto, Post-Impressionism
Example 2 (Digital Concept Art):
Keywords: Surrealism, Digital Painting, Neon Sculpture, Cyberpunk Aesthetic.";

const ENRICHMENT: &str = "You are a creative conceptual artist skilled in multimodal narrative design.
You need to expand the simple prompt based on these preference categories of keywords: Artistic Style, Emotional/Atmospheric Preferences, Thematic Preferences, Visual Elements preferences, and other Preferences and the preference signals expressed in the provided image.
Please rearrange the simple prompt as follows: 1.Identify the main objects or key elements and their attributes in the simple input prompt that you will focus on expanding. Note any specific objects, emotions, or concepts that are already part of the original prompt. 2.Based on the preferences given (Artistic Style, Emotional/Atmospheric, Thematic, Visual Elements, and Others), determine 2-4 objects or elements that should be added to the scene to better align the final image with the given preferences. You can add objects that reflect the theme, mood, and other preferences described. For Example: (1)Emotional/Atmospheric: Tension and Gloom suggest solitary figures, dark ocean, foggy landscapes, or dramatic weather conditions. (2)Thematic: Urbanization suggests incorporating elements like decaying buildings, roads, and vehicles.
(3)Others: If there are any specific objects (like a special cat), integrate them into the scene description, ensuring they are contextually and visually aligned with the other preferences. 3. For each object, whether from the original prompt or newly added, provide a detailed objective description based on the preferences. Keep each description under 30 words. 4. Merge the original simple prompt with the objects and their descriptions to form a more complex, concise prompt that reflects all the preferences. Ensure that the added elements naturally flow and integrate with the original context and preferences (40 words at most). And create a simple background prompt (10 words) that encapsulates the preferences but does not include any specific objects mentioned previously.
 The output should follow the format of the examples below:";

const PLANNING: &str = "You are an expert in image composition, skilled in interpreting complex scene descriptions and creating spatial arrangements based on detailed prompts and preference keywords. Your task is to:
1.Identity the key objects from the detailed object prompt.
2.Assign spatial positions for each object. This layout assignment should strictly follow the rules below. (1) Basic rules: (a). The image coordinates are based on a system where the top-left corner is [0, 0] and the bottom-right corner is [1, 1]. (b). Assign each object a rectangular space in the image, represented in the format: [top-left x, top-left y, bottom-right x, bottom-right y]. (c). Each object should be assigned a distinct space that doesn't overlap with other objects. (d). Use the visual elements preference keywords that relate to the layout (e.g., Asymmetry, Geometric shapes, High contrast, rule of thirds) to determine how to position the objects within the image. These keywords will guide your decision on object placement in terms of layout.
(2) Layout rules for each object: (a). When assigning spaces to each object, place them in a logical, left-to-right, top-to-bottom manner. (b). No object should exceed the boundaries of the image (i.e., all coordinates should stay within [0, 0] to [1, 1]). (c). Each area should be dedicated to a single object.
3. Finally, in each detailed object prompt, add the location description of that specific object into the original prompt(e.g., on the top, in the left, stay in the center). The output should follow the format of the examples below:";

/// Which stage a chat request belongs to. Also the prefix of fixture keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateKind {
    Extract(Category),
    Enrich,
    Plan,
}

impl TemplateKind {
    pub fn key(self) -> String {
        match self {
            TemplateKind::Extract(c) => format!("extract.{}", c.slug()),
            TemplateKind::Enrich => "enrich".to_string(),
            TemplateKind::Plan => "plan".to_string(),
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        match key {
            "enrich" => Some(TemplateKind::Enrich),
            "plan" => Some(TemplateKind::Plan),
            _ => key
                .strip_prefix("extract.")
                .and_then(Category::from_slug)
                .map(TemplateKind::Extract),
        }
    }
}

struct CategoryBrief {
    focus: &'static str,
    expertise: &'static str,
    steps: &'static str,
    examples: [(&'static str, &'static str); 2],
}

fn brief(category: Category) -> CategoryBrief {
    match category {
        Category::ArtisticStyle => unreachable!("artistic style uses the full template"),
        Category::EmotionalAtmospheric => CategoryBrief {
            focus: "the emotional and atmospheric resonance of images, focusing on the mood and feeling they evoke",
            expertise: "You are familiar with a wide range of emotional tones (such as Sadness, Joy, Nostalgia, Fear, Serenity, Tension, Melancholy, etc.) and atmospheres (like mysterious, tranquil, ominous, cozy, etc.).",
            steps: "1.Begin by identifying the dominant emotional tone of the image. Look for visual cues such as lighting, color temperature, facial expressions, weather, or pacing that may indicate a specific mood. 2.focus on the general atmosphere of the scene, such as whether it feels calm, tense, dreamy, or oppressive.",
            examples: [
                ("Van Gogh's Starry Night", "Turbulence, Awe, Melancholy, Longing"),
                ("Foggy Harbor Photograph", "Tension, Gloom, Solitude, Mystery"),
            ],
        },
        Category::Thematic => CategoryBrief {
            focus: "the themes of images, focusing on their subjects, narratives, and cultural references",
            expertise: "You are familiar with a wide range of conceptual themes (such as Transience, Cycles of Nature, Survival, Decay, Transformation, etc.) and cultural references (like Greek Mythology, Buddhism, Ancient Egypt, Norse Mythology, etc.).",
            steps: "1.Begin by identifying the subjects and the story the image suggests. Look for symbols, settings, and recurring motifs that may indicate a specific theme. 2.focus on cultural, religious, or historical references that the image draws upon.",
            examples: [
                ("Van Gogh's Starry Night", "Cosmos, Night Sky, Rural Village, Spirituality"),
                ("Abandoned Factory Painting", "Urbanization, Decay, Industrialization"),
            ],
        },
        Category::VisualElements => CategoryBrief {
            focus: "the visual elements of images, focusing on composition, lines, colors, and textures",
            expertise: "You are familiar with a wide range of compositional structures (such as Symmetry, Asymmetry, Rule of thirds, etc.) and formal qualities (like warm or cool palettes, rough or glossy textures, curved or straight lines, high or low contrast, etc.).",
            steps: "1.Begin by identifying how the image is composed. Look for the placement of the main subject, balance, leading lines, and use of space. 2.focus on the color palette, contrast, and surface texture of the image.",
            examples: [
                ("Van Gogh's Starry Night", "Swirling Brushstrokes, Curved lines, Blue Palette, High contrast"),
                ("Minimalist Poster", "Symmetry, Geometric shapes, Low contrast, Smooth"),
            ],
        },
        Category::Other => CategoryBrief {
            focus: "any other preference signals in images that do not fit artistic style, emotion, theme, or visual elements, focusing on specific objects, characters, or details",
            expertise: "You are attentive to distinctive objects, creatures, props, or recurring details (such as a special cat, a red umbrella, a vintage car, etc.) that a viewer may want to see again.",
            steps: "1.Begin by listing distinctive objects or characters in the image that carry personal or memorable significance. 2.focus on small but characteristic details that the other preference categories would not capture.",
            examples: [
                ("Van Gogh's Starry Night", "Cypress Tree, Church Steeple, Crescent Moon"),
                ("Cat Portrait", "Ginger Cat, Knitted Scarf"),
            ],
        },
    }
}

fn rubric() -> String {
    let mut out = String::from(
        "Preference categories considered across all requests:\n",
    );
    let lines = [
        (Category::ArtisticStyle, "artistic movements and techniques, e.g., Expressionism, Fauvism, Oil Painting, Watercolor, Impasto"),
        (Category::EmotionalAtmospheric, "the mood or feeling evoked, e.g., Nostalgia, Serenity, Tension, Melancholy"),
        (Category::Thematic, "subjects, narratives and cultural references, e.g., Transience, Decay, Greek Mythology"),
        (Category::VisualElements, "composition, lines, colors and textures, e.g., Symmetry, Rule of thirds, Warm, High contrast"),
        (Category::Other, "hard-to-classify preferences such as specific objects, e.g., a special cat"),
    ];
    for (c, desc) in lines {
        out.push_str(&format!("- {}: {desc}\n", c.label()));
    }
    out
}

/// System instruction for one extraction request.
pub fn extraction_instruction(category: Category) -> String {
    let body = match category {
        Category::ArtisticStyle => STYLE_EXTRACTION.to_string(),
        other => {
            let b = brief(other);
            let name = other.label().to_lowercase();
            format!(
                "Your role is to accurately identify and summarize {focus}. {expertise} Your task is to carefully examine images, identify relevant {name} cues, and generate a list of keywords that succinctly capture the {name} of the image. You should rely on your ability to analyze the visual elements of the image to provide an informed and precise response as follows: {steps} 3.Based on the cues identified, provide 5 summary keywords. If you are unable to identify enough matches to reach 5 keywords, provide as many relevant keywords as possible, even if the total is fewer than 5. The output should follow the format of the examples below:\nExample 1 ({e1}):\n{KW}: {k1}\nExample 2 ({e2}):\n{KW}: {k2}",
                focus = b.focus,
                expertise = b.expertise,
                steps = b.steps,
                e1 = b.examples[0].0,
                k1 = b.examples[0].1,
                e2 = b.examples[1].0,
                k2 = b.examples[1].1,
                KW = super::parse::KEYWORDS_LABEL,
            )
        }
    };
    format!("{}\nYou are handling the \"{}\" category.\n\n{body}", rubric(), category.label())
}

pub fn extraction_corrective() -> String {
    "Your previous reply did not follow the required output format. End your reply with exactly one line of the form `Keywords: keyword1, keyword2, keyword3`.".to_string()
}

fn example_keywords() -> KeywordSet {
    KeywordSet {
        artistic_style: vec!["Romanticism".into(), "Oil Painting".into()],
        emotional_atmospheric: vec!["Tension".into(), "Gloom".into()],
        thematic: vec!["Survival".into()],
        visual_elements: vec!["Low contrast".into(), "Asymmetry".into()],
        other: vec![],
    }
}

fn example_enrichment() -> EnrichmentResponse {
    EnrichmentResponse {
        entities: vec![
            Entity {
                name: "lighthouse".into(),
                sub_prompt: "a lone weathered lighthouse, oil painted with heavy strokes, its beam struggling through the murk".into(),
            },
            Entity {
                name: "storm waves".into(),
                sub_prompt: "towering dark storm waves crashing against black rocks, romantic oil painting".into(),
            },
            Entity {
                name: "solitary figure".into(),
                sub_prompt: "a small solitary figure in a long coat bracing against the wind".into(),
            },
        ],
        complex_prompt: "A romantic oil painting of a lone lighthouse battered by towering storm waves, a solitary figure bracing against the wind, tense and gloomy atmosphere".into(),
        background_prompt: "stormy grey sea under a heavy brooding sky".into(),
    }
}

fn example_plan() -> Vec<RawPlacement> {
    vec![
        RawPlacement {
            entity: "lighthouse".into(),
            raw_box: [0.05, 0.1, 0.4, 0.9],
            located_sub_prompt: "a lone weathered lighthouse, oil painted with heavy strokes, its beam struggling through the murk, on the left".into(),
        },
        RawPlacement {
            entity: "storm waves".into(),
            raw_box: [0.4, 0.5, 1.0, 1.0],
            located_sub_prompt: "towering dark storm waves crashing against black rocks, romantic oil painting, in the bottom right".into(),
        },
        RawPlacement {
            entity: "solitary figure".into(),
            raw_box: [0.55, 0.2, 0.75, 0.5],
            located_sub_prompt: "a small solitary figure in a long coat bracing against the wind, in the upper center right".into(),
        },
    ]
}

pub fn render_keyword_block(keywords: &KeywordSet) -> String {
    let mut out = String::new();
    for c in Category::ALL {
        let list = keywords.get(c);
        out.push_str(&format!(
            "{}: {}\n",
            c.label(),
            if list.is_empty() { "(none)".to_string() } else { list.join(", ") }
        ));
    }
    out
}

pub fn enrichment_instruction() -> String {
    format!(
        "{ENRICHMENT}\nExample input:\nSimple prompt: a lighthouse by the sea\nPreference keywords:\n{}Example output:\n{}",
        render_keyword_block(&example_keywords()),
        render_enrichment(&example_enrichment())
    )
}

pub fn enrichment_user_text(base_prompt: &str, keywords: &KeywordSet) -> String {
    format!(
        "Simple prompt: {base_prompt}\nPreference keywords:\n{}",
        render_keyword_block(keywords)
    )
}

pub fn enrichment_corrective() -> String {
    "Your previous reply did not follow the required output format. Reply with an `Objects:` list (one `N. name: description` line per object), then a `Complex prompt:` line, then a `Background prompt:` line that names none of the objects.".to_string()
}

pub fn planning_instruction() -> String {
    let example = example_enrichment();
    format!(
        "{PLANNING}\nExample input:\nPreference keywords:\n{}Detailed object prompts:\n{}Example output:\n{}",
        render_keyword_block(&example_keywords()),
        render_entity_list(&example.entities),
        render_plan(&example_plan())
    )
}

pub fn planning_user_text(entities: &[Entity], keywords: &KeywordSet) -> String {
    format!(
        "Preference keywords:\n{}Detailed object prompts:\n{}",
        render_keyword_block(keywords),
        render_entity_list(entities)
    )
}

pub fn planning_corrective() -> String {
    "Your previous reply did not follow the required output format. Reply with a `Layout:` list containing exactly one `N. name: [x_left, y_top, x_right, y_bottom] | prompt with location` line for every object, using the object names exactly as given.".to_string()
}
