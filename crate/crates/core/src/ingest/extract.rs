use std::io::{Cursor, Read};

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use zip::ZipArchive;

use super::{IngestError, RawDocument, RawSection, Result, UNTITLED_SECTION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentFormat {
    Docx,
    StructuredText,
}

impl DocumentFormat {
    /// Guesses the format from a file extension.
    pub fn from_extension(ext: &str) -> Option<Self> {
        match ext.to_ascii_lowercase().as_str() {
            "docx" => Some(Self::Docx),
            "txt" | "md" => Some(Self::StructuredText),
            _ => None,
        }
    }
}

/// Extracts sections and paragraphs from a single document.
///
/// `spec_id` identifies the document in citations and error messages.
pub fn extract_document(bytes: &[u8], format: DocumentFormat, spec_id: &str) -> Result<RawDocument> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Err(IngestError::EmptyDocument);
    }
    match format {
        DocumentFormat::StructuredText => {
            let text = std::str::from_utf8(bytes).map_err(|e| IngestError::Parse {
                file: spec_id.to_string(),
                offset: e.valid_up_to() as u64,
                message: "invalid utf-8".into(),
            })?;
            Ok(parse_structured_text(text, spec_id))
        }
        DocumentFormat::Docx => parse_docx(bytes, spec_id),
    }
}

/// `## ` lines open a section, a leading `# ` line names the document, and
/// blank lines separate paragraphs.
fn parse_structured_text(text: &str, spec_id: &str) -> RawDocument {
    let mut title = spec_id.to_string();
    let mut builder = SectionBuilder::default();
    let mut paragraph: Vec<&str> = Vec::new();
    let mut seen_content = false;

    for line in text.lines() {
        if let Some(heading) = line.strip_prefix("## ") {
            builder.push_paragraph(paragraph.join("\n"));
            paragraph.clear();
            builder.open(heading.trim());
            seen_content = true;
        } else if let Some(doc_title) = line.strip_prefix("# ").filter(|_| !seen_content) {
            title = doc_title.trim().to_string();
            seen_content = true;
        } else if line.trim().is_empty() {
            builder.push_paragraph(paragraph.join("\n"));
            paragraph.clear();
        } else {
            paragraph.push(line);
            seen_content = true;
        }
    }
    builder.push_paragraph(paragraph.join("\n"));

    RawDocument {
        spec_id: spec_id.to_string(),
        title,
        sections: builder.finish(),
    }
}

#[derive(Default)]
struct SectionBuilder {
    sections: Vec<RawSection>,
}

impl SectionBuilder {
    fn open(&mut self, title: &str) {
        let title = if title.is_empty() { UNTITLED_SECTION } else { title };
        self.sections.push(RawSection {
            section_title: title.to_string(),
            paragraphs: Vec::new(),
        });
    }

    fn push_paragraph(&mut self, paragraph: String) {
        if paragraph.trim().is_empty() {
            return;
        }
        if self.sections.is_empty() {
            self.open(UNTITLED_SECTION);
        }
        self.sections.last_mut().unwrap().paragraphs.push(paragraph);
    }

    fn finish(mut self) -> Vec<RawSection> {
        if self.sections.is_empty() {
            self.open(UNTITLED_SECTION);
        }
        self.sections
    }
}

fn parse_docx(bytes: &[u8], spec_id: &str) -> Result<RawDocument> {
    let zip_err = |e: zip::result::ZipError| IngestError::Parse {
        file: spec_id.to_string(),
        offset: 0,
        message: format!("malformed docx archive: {e}"),
    };
    let mut archive = ZipArchive::new(Cursor::new(bytes)).map_err(zip_err)?;
    let document_xml = read_entry(&mut archive, "word/document.xml", spec_id)?
        .ok_or_else(|| IngestError::Parse {
            file: spec_id.to_string(),
            offset: 0,
            message: "archive has no word/document.xml".into(),
        })?;
    let title = match read_entry(&mut archive, "docProps/core.xml", spec_id)? {
        Some(core) => core_title(&core),
        None => None,
    }
    .unwrap_or_else(|| spec_id.to_string());

    let paragraphs = docx_paragraphs(&document_xml, spec_id)?;
    let mut builder = SectionBuilder::default();
    for p in paragraphs {
        if p.heading {
            builder.open(p.text.trim());
        } else {
            builder.push_paragraph(p.text);
        }
    }
    Ok(RawDocument {
        spec_id: spec_id.to_string(),
        title,
        sections: builder.finish(),
    })
}

fn read_entry(
    archive: &mut ZipArchive<Cursor<&[u8]>>,
    name: &str,
    spec_id: &str,
) -> Result<Option<String>> {
    let mut entry = match archive.by_name(name) {
        Ok(entry) => entry,
        Err(zip::result::ZipError::FileNotFound) => return Ok(None),
        Err(e) => {
            return Err(IngestError::Parse {
                file: spec_id.to_string(),
                offset: 0,
                message: format!("cannot open {name}: {e}"),
            })
        }
    };
    let mut out = String::new();
    entry
        .read_to_string(&mut out)
        .map_err(|e| IngestError::Parse {
            file: spec_id.to_string(),
            offset: 0,
            message: format!("cannot read {name}: {e}"),
        })?;
    Ok(Some(out))
}

#[derive(Debug)]
struct DocxParagraph {
    text: String,
    heading: bool,
}

#[derive(Default)]
struct ParagraphState {
    text: String,
    heading: bool,
}

fn is_heading_style(style: &str) -> bool {
    let style = style.to_ascii_lowercase();
    style.starts_with("heading")
        || style == "title"
        || (style.len() == 2 && style.starts_with('h') && style.as_bytes()[1].is_ascii_digit())
}

fn attr_val(e: &BytesStart<'_>) -> Option<String> {
    e.attributes()
        .flatten()
        .find(|a| a.key.local_name().as_ref() == b"val")
        .and_then(|a| a.unescape_value().ok().map(|v| v.into_owned()))
}

/// Walks `word/document.xml` and returns every paragraph in document order,
/// with table cell paragraphs treated as ordinary paragraphs.
fn docx_paragraphs(xml: &str, spec_id: &str) -> Result<Vec<DocxParagraph>> {
    let mut reader = Reader::from_str(xml);
    let mut out = Vec::new();
    let mut stack: Vec<ParagraphState> = Vec::new();
    let mut in_text = false;

    let parse_err = |reader: &Reader<&[u8]>, message: String| IngestError::Parse {
        file: format!("{spec_id} (word/document.xml)"),
        offset: reader.buffer_position(),
        message,
    };

    loop {
        let event = reader
            .read_event()
            .map_err(|e| parse_err(&reader, e.to_string()))?;
        match event {
            Event::Start(e) => match e.local_name().as_ref() {
                b"p" => stack.push(ParagraphState::default()),
                b"t" => in_text = true,
                _ => {}
            },
            Event::Empty(e) => match e.local_name().as_ref() {
                b"pStyle" => {
                    if let (Some(p), Some(style)) = (stack.last_mut(), attr_val(&e)) {
                        p.heading |= is_heading_style(&style);
                    }
                }
                b"outlineLvl" => {
                    if let Some(p) = stack.last_mut() {
                        p.heading = true;
                    }
                }
                b"tab" | b"br" | b"cr" => {
                    if let Some(p) = stack.last_mut() {
                        p.text.push(' ');
                    }
                }
                b"p" => {}
                _ => {}
            },
            Event::End(e) => match e.local_name().as_ref() {
                b"p" => {
                    if let Some(p) = stack.pop() {
                        out.push(DocxParagraph {
                            text: p.text,
                            heading: p.heading,
                        });
                    }
                }
                b"t" => in_text = false,
                _ => {}
            },
            Event::Text(t) if in_text => {
                let s = t.decode().map_err(|e| parse_err(&reader, e.to_string()))?;
                if let Some(p) = stack.last_mut() {
                    p.text.push_str(&s);
                }
            }
            Event::GeneralRef(r) if in_text => {
                let resolved = match r.resolve_char_ref() {
                    Ok(Some(c)) => c.to_string(),
                    Ok(None) => {
                        let name = r.decode().map_err(|e| parse_err(&reader, e.to_string()))?;
                        quick_xml::escape::resolve_predefined_entity(&name)
                            .ok_or_else(|| parse_err(&reader, format!("unknown entity &{name};")))?
                            .to_string()
                    }
                    Err(e) => return Err(parse_err(&reader, e.to_string())),
                };
                if let Some(p) = stack.last_mut() {
                    p.text.push_str(&resolved);
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if !stack.is_empty() {
        return Err(parse_err(&reader, "unclosed paragraph at end of document".into()));
    }
    Ok(out)
}

fn core_title(core_xml: &str) -> Option<String> {
    let mut reader = Reader::from_str(core_xml);
    let mut in_title = false;
    let mut title = String::new();
    loop {
        match reader.read_event().ok()? {
            Event::Start(e) if e.local_name().as_ref() == b"title" => in_title = true,
            Event::End(e) if e.local_name().as_ref() == b"title" => break,
            Event::Text(t) if in_title => title.push_str(&t.decode().ok()?),
            Event::GeneralRef(r) if in_title => {
                let name = r.decode().ok()?;
                title.push_str(quick_xml::escape::resolve_predefined_entity(&name)?);
            }
            Event::Eof => break,
            _ => {}
        }
    }
    let title = title.trim();
    (!title.is_empty()).then(|| title.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(text: &str) -> Result<RawDocument> {
        extract_document(text.as_bytes(), DocumentFormat::StructuredText, "TS 1")
    }

    #[test]
    fn structured_text_sections_and_paragraphs() {
        let doc = st("## Intro\nA.\n\nB.\n## Scope\nC.").unwrap();
        assert_eq!(doc.sections.len(), 2);
        assert_eq!(doc.sections[0].section_title, "Intro");
        assert_eq!(doc.sections[0].paragraphs, vec!["A.", "B."]);
        assert_eq!(doc.sections[1].section_title, "Scope");
        assert_eq!(doc.sections[1].paragraphs, vec!["C."]);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(matches!(st(""), Err(IngestError::EmptyDocument)));
        assert!(matches!(st(" \n\n "), Err(IngestError::EmptyDocument)));
    }

    #[test]
    fn headingless_text_gets_untitled_section() {
        let doc = st("# My spec\nsome text\nmore\n\nsecond").unwrap();
        assert_eq!(doc.title, "My spec");
        assert_eq!(doc.sections.len(), 1);
        assert_eq!(doc.sections[0].section_title, UNTITLED_SECTION);
        assert_eq!(doc.sections[0].paragraphs, vec!["some text\nmore", "second"]);
    }

    #[test]
    fn garbage_docx_names_file() {
        let err = extract_document(b"not a zip", DocumentFormat::Docx, "TS 38.211").unwrap_err();
        match err {
            IngestError::Parse { file, .. } => assert_eq!(file, "TS 38.211"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn broken_xml_reports_offset() {
        let xml = r#"<w:document xmlns:w="x"><w:body><w:p><w:r><w:t>hi</w:x></w:r></w:p></w:body></w:document>"#;
        let err = docx_paragraphs(xml, "TS 9").unwrap_err();
        match err {
            IngestError::Parse { offset, file, .. } => {
                assert!(offset > 0);
                assert!(file.contains("TS 9"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn docx_xml_entities_and_runs() {
        let xml = r#"<w:document xmlns:w="x"><w:body>
            <w:p><w:pPr><w:pStyle w:val="Heading1"/></w:pPr><w:r><w:t>5.1 QoS</w:t></w:r></w:p>
            <w:p><w:r><w:t xml:space="preserve">A &amp; </w:t></w:r><w:r><w:t>B</w:t></w:r></w:p>
            </w:body></w:document>"#;
        let paras = docx_paragraphs(xml, "TS").unwrap();
        assert_eq!(paras.len(), 2);
        assert!(paras[0].heading);
        assert_eq!(paras[1].text, "A & B");
    }
}
