//! Tagged transcript parsing.
//!
//! A transcript is well formed when every schema section appears exactly
//! once, in schema order, as `<name> ... </name>`, with nothing but
//! whitespace between sections. Tags whose names are not in the schema are
//! treated as plain text, so a transcript written for a different schema is
//! rejected.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::{Error, Result};

/// Ordered section names plus the section that carries the rating.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TagSchema {
    sections: Vec<String>,
    answer_section: String,
}

impl TagSchema {
    pub fn new<I, S>(sections: I, answer_section: &str) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let sections: Vec<String> = sections.into_iter().map(Into::into).collect();
        if sections.is_empty() {
            return Err(Error::Config("tag schema has no sections".into()));
        }
        for (i, s) in sections.iter().enumerate() {
            if s.is_empty() || !s.chars().all(is_tag_char) {
                return Err(Error::Config(format!("invalid section name {s:?}")));
            }
            if sections[..i].contains(s) {
                return Err(Error::Config(format!("duplicate section name {s:?}")));
            }
        }
        if !sections.iter().any(|s| s == answer_section) {
            return Err(Error::Config(format!(
                "answer section {answer_section:?} is not one of the schema sections"
            )));
        }
        Ok(Self {
            sections,
            answer_section: answer_section.to_string(),
        })
    }

    /// `<caption> <think> <answer>`, the image-conditioned template.
    pub fn caption_think_answer() -> Self {
        Self::new(["caption", "think", "answer"], "answer").expect("valid preset")
    }

    /// `<think> <answer>`, used for caption-only inference.
    pub fn think_answer() -> Self {
        Self::new(["think", "answer"], "answer").expect("valid preset")
    }

    /// `<subject> <advantage> <flaw> <think> <answer>`.
    pub fn detailed() -> Self {
        Self::new(["subject", "advantage", "flaw", "think", "answer"], "answer")
            .expect("valid preset")
    }

    pub fn sections(&self) -> &[String] {
        &self.sections
    }

    pub fn answer_section(&self) -> &str {
        &self.answer_section
    }

    pub fn contains(&self, name: &str) -> bool {
        self.sections.iter().any(|s| s == name)
    }
}

fn is_tag_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-'
}

/// Result of parsing a transcript against a [`TagSchema`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StructuredOutput {
    /// Section texts, trimmed at the edges. Malformed transcripts keep
    /// whatever sections could still be located.
    pub sections: BTreeMap<String, String>,
    pub well_formed: bool,
    /// First number found in the answer section.
    pub rating: Option<f64>,
}

impl StructuredOutput {
    pub fn section(&self, name: &str) -> Option<&str> {
        self.sections.get(name).map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy)]
struct TagHit<'a> {
    start: usize,
    end: usize,
    name: &'a str,
    close: bool,
}

/// Finds every `<name>` / `</name>` whose name belongs to the schema.
fn structural_tags<'a>(raw: &'a str, schema: &TagSchema) -> Vec<TagHit<'a>> {
    let bytes = raw.as_bytes();
    let mut hits = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'<' {
            i += 1;
            continue;
        }
        let close = bytes.get(i + 1) == Some(&b'/');
        let name_start = i + 1 + usize::from(close);
        let mut j = name_start;
        while j < bytes.len() && is_tag_char(bytes[j] as char) {
            j += 1;
        }
        if j > name_start && bytes.get(j) == Some(&b'>') {
            let name = &raw[name_start..j];
            if schema.contains(name) {
                hits.push(TagHit {
                    start: i,
                    end: j + 1,
                    name,
                    close,
                });
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    hits
}

/// Parses `raw` against `schema`. Never fails; malformed input yields
/// `well_formed == false`.
pub fn parse_output(raw: &str, schema: &TagSchema) -> StructuredOutput {
    let hits = structural_tags(raw, schema);

    let mut well_formed = hits.len() == 2 * schema.sections.len();
    if well_formed {
        let mut cursor = 0;
        for (k, name) in schema.sections.iter().enumerate() {
            let open = hits[2 * k];
            let close = hits[2 * k + 1];
            if open.close || open.name != name || !close.close || close.name != name {
                well_formed = false;
                break;
            }
            if !raw[cursor..open.start].trim().is_empty() {
                well_formed = false;
                break;
            }
            cursor = close.end;
        }
        if well_formed && !raw[cursor..].trim().is_empty() {
            well_formed = false;
        }
    }

    // Locate sections independently so malformed transcripts still expose
    // what they contain: first opening tag paired with the next closing tag
    // of the same name.
    let mut sections = BTreeMap::new();
    for name in &schema.sections {
        let Some(oi) = hits.iter().position(|h| !h.close && h.name == name) else {
            continue;
        };
        if let Some(ci) = hits[oi + 1..]
            .iter()
            .position(|h| h.close && h.name == name)
        {
            let body = &raw[hits[oi].end..hits[oi + 1 + ci].start];
            sections.insert(name.clone(), body.trim().to_string());
        }
    }

    let rating = sections
        .get(schema.answer_section())
        .and_then(|a| extract_rating(a));

    StructuredOutput {
        sections,
        well_formed,
        rating,
    }
}

/// Returns the first maximal decimal number (`-?digits(.digits)?`) in `text`.
pub fn extract_rating(text: &str) -> Option<f64> {
    let bytes = text.as_bytes();
    let start = bytes.iter().position(u8::is_ascii_digit)?;
    let mut begin = start;
    if start > 0 && bytes[start - 1] == b'-' {
        let before = start.checked_sub(2).map(|k| bytes[k]);
        if !before.is_some_and(|b| b.is_ascii_alphanumeric()) {
            begin = start - 1;
        }
    }
    let mut end = start;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end + 1 < bytes.len() && bytes[end] == b'.' && bytes[end + 1].is_ascii_digit() {
        end += 1;
        while end < bytes.len() && bytes[end].is_ascii_digit() {
            end += 1;
        }
    }
    text[begin..end].parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Renders sections back into tagged text in schema order.
pub fn render(sections: &BTreeMap<String, String>, schema: &TagSchema) -> String {
    let mut out = String::new();
    for name in &schema.sections {
        let body = sections.get(name).map(String::as_str).unwrap_or("");
        out.push_str(&format!("<{name}>{body}</{name}>"));
    }
    out
}
