//! Parsers and renderers for the three response formats.
//!
//! Every parser anchors on the last occurrence of its labelled line, since
//! chain-of-thought preambles tend to repeat the labels before the answer.

use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use super::group::Entity;
use super::keywords::{classify_keyword, normalize_keyword, KeywordSet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no `{0}` line in response")]
    MissingLabel(&'static str),
    #[error("`{0}` section is empty")]
    Empty(&'static str),
    #[error("bad layout line: {0}")]
    BadBox(String),
}

pub const KEYWORDS_LABEL: &str = "Keywords";
pub const OBJECTS_LABEL: &str = "Objects";
pub const COMPLEX_LABEL: &str = "Complex prompt";
pub const BACKGROUND_LABEL: &str = "Background prompt";
pub const LAYOUT_LABEL: &str = "Layout";

/// If `line` starts with `label:` (case-insensitive, tolerating markdown
/// emphasis and heading marks), returns the remainder.
fn label_value<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let body = line.trim_start().trim_start_matches(['*', '#', '_', ' ']);
    let head = body.get(..label.len())?;
    if !head.eq_ignore_ascii_case(label) {
        return None;
    }
    let rest = body[label.len()..].trim_start_matches(['*', '_']);
    let rest = rest.strip_prefix(':')?;
    Some(rest.trim_start_matches(['*', '_']).trim().trim_end_matches(['*', '_']).trim())
}

fn last_labelled<'a>(lines: &[&'a str], label: &str) -> Option<(usize, &'a str)> {
    lines
        .iter()
        .enumerate()
        .rev()
        .find_map(|(i, l)| label_value(l, label).map(|v| (i, v)))
}

fn is_any_label(line: &str) -> bool {
    [KEYWORDS_LABEL, OBJECTS_LABEL, COMPLEX_LABEL, BACKGROUND_LABEL, LAYOUT_LABEL]
        .iter()
        .any(|l| label_value(line, l).is_some())
}

/// The flat keyword list from the last `Keywords:` line, normalized and
/// de-duplicated case-insensitively. Over-long entries are dropped.
pub fn parse_keyword_list(text: &str) -> Result<Vec<String>, ParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let (_, value) =
        last_labelled(&lines, KEYWORDS_LABEL).ok_or(ParseError::MissingLabel(KEYWORDS_LABEL))?;
    let mut out: Vec<String> = Vec::new();
    for raw in value.split(',') {
        match normalize_keyword(raw) {
            Some(kw) if !out.iter().any(|k| k.eq_ignore_ascii_case(&kw)) => out.push(kw),
            Some(_) => {}
            None if raw.trim().is_empty() => {}
            None => log::warn!("dropping over-long keyword `{}`", raw.trim()),
        }
    }
    if out.is_empty() {
        return Err(ParseError::Empty(KEYWORDS_LABEL));
    }
    Ok(out)
}

/// Parses a flat keyword response and buckets each keyword with the lexicon
/// classifier.
pub fn parse_keyword_response(text: &str) -> Result<KeywordSet, ParseError> {
    let mut set = KeywordSet::default();
    for kw in parse_keyword_list(text)? {
        set.insert(classify_keyword(&kw), &kw);
    }
    if set.is_empty() {
        return Err(ParseError::Empty(KEYWORDS_LABEL));
    }
    Ok(set)
}

pub fn render_keyword_line(keywords: &[String]) -> String {
    format!("{KEYWORDS_LABEL}: {}", keywords.join(", "))
}

static ITEM_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*(?:\d+\s*[.)]|[-*•])\s*(?:\*\*)?(?P<name>[^:\[\]]+?)(?:\*\*)?\s*:\s*(?P<rest>.+?)\s*$")
        .unwrap()
});

fn item_lines<'a>(lines: &[&'a str], after: usize) -> Vec<(String, &'a str)> {
    let mut items = Vec::new();
    for line in &lines[after + 1..] {
        if line.trim().is_empty() {
            continue;
        }
        if is_any_label(line) {
            break;
        }
        match ITEM_RE.captures(line) {
            Some(caps) => {
                let name = caps.name("name").unwrap().as_str().trim().to_string();
                items.push((name, caps.name("rest").unwrap().as_str()));
            }
            None if items.is_empty() => continue,
            None => break,
        }
    }
    items
}

/// Parsed enrichment output (base prompt is supplied by the caller).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnrichmentResponse {
    pub entities: Vec<Entity>,
    pub complex_prompt: String,
    pub background_prompt: String,
}

pub fn parse_entity_list(text: &str) -> Result<Vec<Entity>, ParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let (at, _) =
        last_labelled(&lines, OBJECTS_LABEL).ok_or(ParseError::MissingLabel(OBJECTS_LABEL))?;
    Ok(item_lines(&lines, at)
        .into_iter()
        .map(|(name, rest)| Entity { name, sub_prompt: rest.trim().to_string() })
        .collect())
}

pub fn parse_enrichment(text: &str) -> Result<EnrichmentResponse, ParseError> {
    let entities = parse_entity_list(text)?;
    let lines: Vec<&str> = text.lines().collect();
    let (_, complex) =
        last_labelled(&lines, COMPLEX_LABEL).ok_or(ParseError::MissingLabel(COMPLEX_LABEL))?;
    let (_, background) = last_labelled(&lines, BACKGROUND_LABEL)
        .ok_or(ParseError::MissingLabel(BACKGROUND_LABEL))?;
    if complex.is_empty() {
        return Err(ParseError::Empty(COMPLEX_LABEL));
    }
    if background.is_empty() {
        return Err(ParseError::Empty(BACKGROUND_LABEL));
    }
    Ok(EnrichmentResponse {
        entities,
        complex_prompt: complex.to_string(),
        background_prompt: background.to_string(),
    })
}

pub fn render_entity_list(entities: &[Entity]) -> String {
    let mut out = format!("{OBJECTS_LABEL}:\n");
    for (i, e) in entities.iter().enumerate() {
        out.push_str(&format!("{}. {}: {}\n", i + 1, e.name, e.sub_prompt));
    }
    out
}

pub fn render_enrichment(response: &EnrichmentResponse) -> String {
    format!(
        "{}{COMPLEX_LABEL}: {}\n{BACKGROUND_LABEL}: {}",
        render_entity_list(&response.entities),
        response.complex_prompt,
        response.background_prompt
    )
}

/// One planned region exactly as the model proposed it, before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPlacement {
    pub entity: String,
    pub raw_box: [f64; 4],
    pub located_sub_prompt: String,
}

static PLACEMENT_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\[(?P<nums>[^\]]*)\]\s*\|\s*(?P<prompt>.+)$").unwrap()
});

pub fn parse_plan(text: &str) -> Result<Vec<RawPlacement>, ParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let (at, _) =
        last_labelled(&lines, LAYOUT_LABEL).ok_or(ParseError::MissingLabel(LAYOUT_LABEL))?;
    let items = item_lines(&lines, at);
    if items.is_empty() {
        return Err(ParseError::Empty(LAYOUT_LABEL));
    }
    items
        .into_iter()
        .map(|(entity, rest)| {
            let caps = PLACEMENT_RE
                .captures(rest.trim())
                .ok_or_else(|| ParseError::BadBox(rest.to_string()))?;
            let nums: Vec<f64> = caps["nums"]
                .split(',')
                .map(|n| n.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| ParseError::BadBox(rest.to_string()))?;
            let raw_box: [f64; 4] = nums
                .try_into()
                .map_err(|_| ParseError::BadBox(rest.to_string()))?;
            if raw_box.iter().any(|v| !v.is_finite()) {
                return Err(ParseError::BadBox(rest.to_string()));
            }
            Ok(RawPlacement {
                entity,
                raw_box,
                located_sub_prompt: caps["prompt"].trim().to_string(),
            })
        })
        .collect()
}

pub fn render_plan(placements: &[RawPlacement]) -> String {
    let mut out = format!("{LAYOUT_LABEL}:\n");
    for (i, p) in placements.iter().enumerate() {
        let [l, t, r, b] = p.raw_box;
        out.push_str(&format!(
            "{}. {}: [{l}, {t}, {r}, {b}] | {}\n",
            i + 1,
            p.entity,
            p.located_sub_prompt
        ));
    }
    out
}
