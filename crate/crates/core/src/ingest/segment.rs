use super::{render_source, Chunk, ChunkOrigin, RawDocument, SegmentStrategy, SegmenterConfig};
use crate::text::word_count;

/// Splits a preprocessed document into source-attributed chunks.
///
/// Section-aware packing never crosses a section boundary and keeps
/// paragraphs whole; a paragraph longer than `n_words` is packed sentence by
/// sentence, and a lone sentence longer than `n_words` becomes its own chunk.
pub fn segment(doc: &RawDocument, cfg: &SegmenterConfig) -> Vec<Chunk> {
    match cfg.strategy {
        SegmentStrategy::SectionAware => section_aware(doc, cfg.n_words),
        SegmentStrategy::FixedOverlap => fixed_overlap(doc, cfg.fixed_chunk_words, cfg.fixed_overlap_words),
    }
}

/// Splits a single-spaced paragraph after `.`, `?`, `!`, or `;` when followed
/// by whitespace or the end of the text.
pub fn split_sentences(paragraph: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = paragraph.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '?' | '!' | ';') {
            let end = i + c.len_utf8();
            match chars.peek() {
                None => {}
                Some(&(_, next)) if next.is_whitespace() => {
                    out.push(paragraph[start..end].trim());
                    start = end;
                }
                _ => {}
            }
        }
    }
    let tail = paragraph[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

/// Greedily packs `units` into groups whose word total stays within `budget`.
/// A unit larger than the budget always starts and ends its own group.
fn pack<'a>(units: &[&'a str], budget: usize) -> Vec<Vec<&'a str>> {
    let mut groups = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let mut words = 0;
    for &unit in units {
        let w = word_count(unit);
        if !current.is_empty() && words + w > budget {
            groups.push(std::mem::take(&mut current));
            words = 0;
        }
        current.push(unit);
        words += w;
    }
    if !current.is_empty() {
        groups.push(current);
    }
    groups
}

fn section_aware(doc: &RawDocument, n_words: usize) -> Vec<Chunk> {
    let mut chunks = Vec::new();
    for (si, section) in doc.sections.iter().enumerate() {
        let source = render_source(&doc.spec_id, &section.section_title);
        let mut bodies: Vec<String> = Vec::new();
        let mut run: Vec<&str> = Vec::new();

        let flush_run = |run: &mut Vec<&str>, bodies: &mut Vec<String>| {
            for group in pack(run, n_words) {
                bodies.push(group.join("\n\n"));
            }
            run.clear();
        };

        for paragraph in &section.paragraphs {
            if word_count(paragraph) > n_words {
                flush_run(&mut run, &mut bodies);
                let sentences = split_sentences(paragraph);
                for group in pack(&sentences, n_words) {
                    bodies.push(group.join(" "));
                }
            } else {
                run.push(paragraph);
            }
        }
        flush_run(&mut run, &mut bodies);

        for (part, body) in bodies.iter().enumerate() {
            chunks.push(Chunk::new(
                format!("{}/{:04}/{:03}", doc.spec_id, si, part),
                body,
                &doc.spec_id,
                &section.section_title,
                source.clone(),
                ChunkOrigin::Document,
            ));
        }
    }
    chunks
}

fn fixed_overlap(doc: &RawDocument, window: usize, overlap: usize) -> Vec<Chunk> {
    // (word, section index) across the whole document.
    let words: Vec<(&str, usize)> = doc
        .sections
        .iter()
        .enumerate()
        .flat_map(|(si, s)| {
            s.paragraphs
                .iter()
                .flat_map(move |p| p.split_whitespace().map(move |w| (w, si)))
        })
        .collect();

    let stride = window.saturating_sub(overlap).max(1);
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < words.len() {
        let end = (start + window).min(words.len());
        let section = &doc.sections[words[start].1];
        let body = words[start..end].iter().map(|(w, _)| *w).collect::<Vec<_>>().join(" ");
        chunks.push(Chunk::new(
            format!("{}/w{:05}", doc.spec_id, chunks.len()),
            &body,
            &doc.spec_id,
            &section.section_title,
            render_source(&doc.spec_id, &section.section_title),
            ChunkOrigin::Document,
        ));
        if end == words.len() {
            break;
        }
        start += stride;
    }
    chunks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::RawSection;

    fn words(n: usize, tag: &str) -> String {
        (0..n).map(|i| format!("{tag}{i}")).collect::<Vec<_>>().join(" ")
    }

    fn doc(paragraphs: Vec<String>) -> RawDocument {
        RawDocument {
            spec_id: "TS 38.300".into(),
            title: "NR".into(),
            sections: vec![RawSection {
                section_title: "5.1 Numerology".into(),
                paragraphs,
            }],
        }
    }

    fn bodies(chunks: &[Chunk]) -> Vec<usize> {
        chunks.iter().map(|c| word_count(c.body())).collect()
    }

    #[test]
    fn greedy_paragraph_packing() {
        let d = doc(vec![words(200, "a"), words(200, "b"), words(100, "c")]);
        let chunks = segment(&d, &SegmenterConfig::default());
        assert_eq!(bodies(&chunks), vec![200, 300]);
        assert_eq!(chunks[1].body(), format!("{}\n\n{}", words(200, "b"), words(100, "c")));
        assert!(chunks[0].text.ends_with("\nSource: TS 38.300 5.1 Numerology"));
    }

    #[test]
    fn small_section_is_one_chunk() {
        let d = doc(vec![words(50, "a")]);
        let chunks = segment(&d, &SegmenterConfig::default());
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].body(), words(50, "a"));
    }

    #[test]
    fn oversized_paragraph_splits_at_sentences() {
        let sentences: Vec<String> = (0..10).map(|i| format!("{}.", words(40, &format!("s{i}w")))).collect();
        let d = doc(vec![sentences.join(" ")]);
        let chunks = segment(&d, &SegmenterConfig::default());
        assert_eq!(bodies(&chunks), vec![360, 40]);
        assert_eq!(chunks[1].body(), sentences[9]);
    }

    #[test]
    fn oversized_sentence_kept_whole() {
        let d = doc(vec![words(30, "x"), format!("{} end.", words(500, "y")), words(10, "z")]);
        let chunks = segment(&d, &SegmenterConfig::default());
        assert_eq!(bodies(&chunks), vec![30, 501, 10]);
    }

    #[test]
    fn sentences_split_only_before_whitespace() {
        assert_eq!(split_sentences("Version 16.2.0 applies. Next; last!"), vec!["Version 16.2.0 applies.", "Next;", "last!"]);
        assert_eq!(split_sentences("no terminator"), vec!["no terminator"]);
    }

    #[test]
    fn fixed_overlap_windows() {
        let d = RawDocument {
            spec_id: "TS".into(),
            title: "t".into(),
            sections: vec![
                RawSection { section_title: "A".into(), paragraphs: vec![words(1500, "a")] },
                RawSection { section_title: "B".into(), paragraphs: vec![words(1000, "b")] },
            ],
        };
        let cfg = SegmenterConfig { strategy: SegmentStrategy::FixedOverlap, ..Default::default() };
        let chunks = segment(&d, &cfg);
        // starts at 0, 900, 1800; the third window reaches the end (2500)
        assert_eq!(bodies(&chunks), vec![1000, 1000, 700]);
        assert_eq!(chunks[0].section_title, "A");
        assert_eq!(chunks[1].section_title, "A");
        assert_eq!(chunks[2].section_title, "B");
        for pair in chunks.windows(2) {
            let a: Vec<&str> = pair[0].body().split_whitespace().collect();
            let b: Vec<&str> = pair[1].body().split_whitespace().collect();
            assert_eq!(&a[a.len() - 100..], &b[..100]);
        }
    }

    #[test]
    fn chunk_ids_are_unique_and_ordered() {
        let d = doc(vec![words(300, "a"), words(300, "b"), words(300, "c")]);
        let ids: Vec<String> = segment(&d, &SegmenterConfig::default()).into_iter().map(|c| c.chunk_id).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(ids, sorted);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use crate::ingest::RawSection;
    use proptest::prelude::*;

    fn sentence() -> impl Strategy<Value = String> {
        (prop::collection::vec("[a-z]{1,6}", 1..25), prop::sample::select(vec!['.', '?', '!', ';']))
            .prop_map(|(w, end)| format!("{}{end}", w.join(" ")))
    }

    fn paragraph() -> impl Strategy<Value = String> {
        prop::collection::vec(sentence(), 1..12).prop_map(|s| s.join(" "))
    }

    fn document() -> impl Strategy<Value = RawDocument> {
        prop::collection::vec(prop::collection::vec(paragraph(), 1..5), 1..4).prop_map(|sections| RawDocument {
            spec_id: "P".into(),
            title: "p".into(),
            sections: sections
                .into_iter()
                .enumerate()
                .map(|(i, paragraphs)| RawSection {
                    section_title: format!("s{i}"),
                    paragraphs,
                })
                .collect(),
        })
    }

    fn section_bodies(chunks: &[Chunk], si: usize) -> Vec<&str> {
        let prefix = format!("P/{si:04}/");
        chunks.iter().filter(|c| c.chunk_id.starts_with(&prefix)).map(|c| c.body()).collect()
    }

    proptest! {
        #[test]
        fn section_aware_bounds_and_reconstructs(doc in document(), n_words in 5usize..80) {
            let cfg = SegmenterConfig { n_words, ..Default::default() };
            let chunks = segment(&doc, &cfg);
            for (si, section) in doc.sections.iter().enumerate() {
                let bodies = section_bodies(&chunks, si);
                prop_assert!(!bodies.is_empty());
                let text = section.text();
                let mut cursor = 0;
                for (i, body) in bodies.iter().enumerate() {
                    prop_assert!(word_count(body) <= n_words || split_sentences(body).len() == 1);
                    prop_assert!(text[cursor..].starts_with(body));
                    cursor += body.len();
                    if i + 1 < bodies.len() {
                        let rest = &text[cursor..];
                        prop_assert!(rest.starts_with("\n\n") || rest.starts_with(' '));
                        cursor += if rest.starts_with("\n\n") { 2 } else { 1 };
                    }
                }
                prop_assert_eq!(cursor, text.len());
            }
        }

        #[test]
        fn fixed_overlap_covers_every_word(doc in document(), window in 2usize..60, overlap_frac in 0.0f64..0.9) {
            let overlap = ((window as f64 * overlap_frac) as usize).min(window - 1);
            let cfg = SegmenterConfig {
                strategy: SegmentStrategy::FixedOverlap,
                fixed_chunk_words: window,
                fixed_overlap_words: overlap,
                ..Default::default()
            };
            let all: Vec<String> = doc
                .sections
                .iter()
                .flat_map(|s| s.paragraphs.iter().flat_map(|p| p.split_whitespace().map(str::to_string)))
                .collect();
            let mut rebuilt: Vec<String> = Vec::new();
            for c in segment(&doc, &cfg) {
                let w: Vec<String> = c.body().split_whitespace().map(str::to_string).collect();
                prop_assert!(w.len() <= window);
                let skip = if rebuilt.is_empty() { 0 } else { overlap };
                prop_assert_eq!(&w[..skip], &rebuilt[rebuilt.len() - skip..]);
                rebuilt.extend_from_slice(&w[skip..]);
            }
            prop_assert_eq!(rebuilt, all);
        }
    }
}
