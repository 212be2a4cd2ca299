use regex::Regex;

use super::{RawDocument, RawSection};

/// Line filters and codepoint stripping applied to every paragraph.
#[derive(Debug, Clone)]
pub struct CleanupRules {
    /// Lines matching any of these and not ending in a period are treated
    /// as figure/table captions.
    pub caption_patterns: Vec<Regex>,
    /// Lines matching any of these are treated as code. Empty by default.
    pub code_patterns: Vec<Regex>,
    pub strip_invisible: bool,
}

impl Default for CleanupRules {
    fn default() -> Self {
        Self {
            caption_patterns: vec![
                Regex::new(r"^(?:Figure|Table)\s+[A-Z]?\d[\w.\-]*(?:[\s:\u{2013}]|$)").expect("static regex"),
            ],
            code_patterns: Vec::new(),
            strip_invisible: true,
        }
    }
}

impl CleanupRules {
    pub fn with_code_patterns(mut self, patterns: Vec<Regex>) -> Self {
        self.code_patterns = patterns;
        self
    }

    fn drops_line(&self, line: &str) -> bool {
        (!line.ends_with('.') && self.caption_patterns.iter().any(|re| re.is_match(line)))
            || self.code_patterns.iter().any(|re| re.is_match(line))
    }
}

/// Zero-width characters, BOM, soft hyphen, private-use codepoints, and
/// control characters other than newline and tab.
fn is_removable(c: char) -> bool {
    matches!(c, '\u{200B}' | '\u{200C}' | '\u{200D}' | '\u{2060}' | '\u{FEFF}' | '\u{00AD}')
        || matches!(c, '\u{E000}'..='\u{F8FF}' | '\u{F0000}'..='\u{FFFFD}' | '\u{100000}'..='\u{10FFFD}')
        || (c.is_control() && c != '\n' && c != '\t')
}

fn clean_paragraph(paragraph: &str, rules: &CleanupRules) -> String {
    let normalized = paragraph.replace("\r\n", "\n").replace('\r', "\n");
    let stripped: String = if rules.strip_invisible {
        normalized.chars().filter(|&c| !is_removable(c)).collect()
    } else {
        normalized
    };
    stripped
        .lines()
        .map(crate::text::collapse_whitespace)
        .filter(|line| !line.is_empty() && !rules.drops_line(line))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Cleans every paragraph and section title. Paragraphs that end up empty
/// are dropped; sections are kept even when they lose all paragraphs.
pub fn preprocess(doc: RawDocument, rules: &CleanupRules) -> RawDocument {
    let sections = doc
        .sections
        .into_iter()
        .map(|section| RawSection {
            section_title: {
                let t = crate::text::collapse_whitespace(
                    &section.section_title.chars().filter(|&c| !is_removable(c)).collect::<String>(),
                );
                if t.is_empty() {
                    super::UNTITLED_SECTION.to_string()
                } else {
                    t
                }
            },
            paragraphs: section
                .paragraphs
                .iter()
                .map(|p| clean_paragraph(p, rules))
                .filter(|p| !p.is_empty())
                .collect(),
        })
        .collect();
    RawDocument { sections, ..doc }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(p: &str) -> Vec<String> {
        let doc = RawDocument {
            spec_id: "TS".into(),
            title: "t".into(),
            sections: vec![RawSection {
                section_title: "S".into(),
                paragraphs: vec![p.to_string()],
            }],
        };
        preprocess(doc, &CleanupRules::default()).sections[0].paragraphs.clone()
    }

    #[test]
    fn whitespace_collapse() {
        assert_eq!(one("A  \t B"), vec!["A B"]);
        assert_eq!(one("line one\r\nline  two"), vec!["line one line two"]);
    }

    #[test]
    fn captions_dropped() {
        assert!(one("Figure 3: System architecture").is_empty());
        assert!(one("Table 6.5-1: QoS rule information").is_empty());
        assert!(one("Figure 4").is_empty());
        assert_eq!(one("Table 6.5 lists the mandatory fields."), vec!["Table 6.5 lists the mandatory fields."]);
        assert_eq!(one("Figures are omitted"), vec!["Figures are omitted"]);
        assert_eq!(one("Figure 2: arch\nReal text."), vec!["Real text."]);
    }

    #[test]
    fn invisible_codepoints_removed() {
        assert_eq!(one("zero\u{200B}width"), vec!["zerowidth"]);
        assert_eq!(one("\u{FEFF}bom soft\u{00AD}hyphen\u{E001}"), vec!["bom softhyphen"]);
        assert_eq!(one("bell\u{0007} and \u{0085}c1"), vec!["bell and c1"]);
        assert!(one("\u{200B}\u{200B}").is_empty());
    }

    #[test]
    fn code_filter_is_opt_in() {
        let rules = CleanupRules::default().with_code_patterns(vec![Regex::new(r"^\s*(let|fn|#include)\b").unwrap()]);
        assert_eq!(clean_paragraph("#include <x>\nprose", &rules), "prose");
        assert_eq!(clean_paragraph("#include <x>\nprose", &CleanupRules::default()), "#include <x> prose");
    }
}
