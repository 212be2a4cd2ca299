//! Seeded synthetic inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specsynth_core::{Chunk, ChunkOrigin, RawDocument, RawSection};

fn vocabulary(rng: &mut ChaCha8Rng, size: usize) -> Vec<String> {
    (0..size)
        .map(|_| {
            let len = rng.random_range(3..10);
            (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect()
        })
        .collect()
}

fn sentence(rng: &mut ChaCha8Rng, vocab: &[String], words: usize) -> String {
    let body: Vec<&str> = (0..words).map(|_| vocab[rng.random_range(0..vocab.len())].as_str()).collect();
    format!("{}.", body.join(" "))
}

/// `n` chunks of 40 to 200 words drawn from a 5000-word vocabulary.
pub fn chunks(n: usize, seed: u64) -> Vec<Chunk> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = vocabulary(&mut rng, 5000);
    (0..n)
        .map(|i| {
            let words = rng.random_range(40..200);
            let body = sentence(&mut rng, &vocab, words);
            Chunk::new(
                format!("BENCH/{i:06}/000"),
                &body,
                "BENCH",
                &format!("{i}"),
                format!("BENCH {i}"),
                ChunkOrigin::Document,
            )
        })
        .collect()
}

/// A document of `sections` sections, each with a few paragraphs of short
/// sentences and the occasional paragraph longer than 360 words.
pub fn document(sections: usize, seed: u64) -> RawDocument {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = vocabulary(&mut rng, 2000);
    RawDocument {
        spec_id: "BENCH".into(),
        title: "bench".into(),
        sections: (0..sections)
            .map(|s| RawSection {
                section_title: format!("{s}"),
                paragraphs: (0..rng.random_range(1..6))
                    .map(|_| {
                        let n = if rng.random_bool(0.2) { 40 } else { rng.random_range(1..6) };
                        (0..n)
                            .map(|_| {
                                let w = rng.random_range(5..25);
                                sentence(&mut rng, &vocab, w)
                            })
                            .collect::<Vec<_>>()
                            .join(" ")
                    })
                    .collect(),
            })
            .collect(),
    }
}

/// A (candidate, reference) pair of roughly `words` words sharing about
/// half their tokens.
pub fn text_pair(words: usize, seed: u64) -> (String, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = vocabulary(&mut rng, 400);
    let reference = sentence(&mut rng, &vocab, words);
    let candidate: Vec<String> = reference
        .split(' ')
        .map(|w| {
            if rng.random_bool(0.5) {
                w.to_string()
            } else {
                vocab[rng.random_range(0..vocab.len())].clone()
            }
        })
        .collect();
    (candidate.join(" "), reference)
}
