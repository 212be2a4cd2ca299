use super::{check_inputs, EmbedError, Embedder, EmbeddingVector, Result};
use crate::text::alnum_tokens;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Seed of the hash that picks a token's bucket (plain FNV-1a).
pub const HASH_SEED_BUCKET: u64 = 0;
/// Seed of the hash whose parity picks a token's sign.
pub const HASH_SEED_SIGN: u64 = 0x9e37_79b9_7f4a_7c15;

/// 64-bit FNV-1a whose offset basis is XORed with `seed`.
pub fn fnv1a_seeded(seed: u64, bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET ^ seed, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Signed feature hashing over lowercased alphanumeric tokens.
///
/// Each token adds ±1 to bucket `fnv(token) mod dim`; the sign comes from
/// the parity of a second, differently seeded hash. Accumulation is integer
/// so the output is identical on every platform.
#[derive(Debug, Clone)]
pub struct LocalHashedEmbedder {
    dim: usize,
    normalize: bool,
}

impl LocalHashedEmbedder {
    pub fn new(dim: usize, normalize: bool) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, normalize }
    }

    pub fn bucket_and_sign(&self, token: &str) -> (usize, i64) {
        let bucket = (fnv1a_seeded(HASH_SEED_BUCKET, token.as_bytes()) % self.dim as u64) as usize;
        let sign = if fnv1a_seeded(HASH_SEED_SIGN, token.as_bytes()).is_multiple_of(2) { 1 } else { -1 };
        (bucket, sign)
    }

    fn counts(&self, text: &str) -> Vec<i64> {
        let mut acc = vec![0i64; self.dim];
        for token in alnum_tokens(text) {
            let (bucket, sign) = self.bucket_and_sign(&token);
            acc[bucket] += sign;
        }
        acc
    }

    fn embed_one(&self, index: usize, text: &str) -> Result<EmbeddingVector> {
        let counts = self.counts(text);
        if counts.iter().all(|&c| c == 0) {
            return Err(EmbedError::Unembeddable(index));
        }
        if !self.normalize {
            return Ok(EmbeddingVector(counts.iter().map(|&c| c as f32).collect()));
        }
        let norm = (counts.iter().map(|&c| (c * c) as f64).sum::<f64>()).sqrt();
        Ok(EmbeddingVector(counts.iter().map(|&c| (c as f64 / norm) as f32).collect()))
    }
}

impl Embedder for LocalHashedEmbedder {
    fn label(&self) -> String {
        format!("local_hashed:{}", self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        check_inputs(texts)?;
        texts.iter().enumerate().map(|(i, t)| self.embed_one(i, t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_matches_published_vectors() {
        // Reference FNV-1a 64 values for "" and "a".
        assert_eq!(fnv1a_seeded(0, b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a_seeded(0, b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn alpha_beta_dim8_hand_computed() {
        // fnv("alpha") = 0x8ac625bb85ed202b -> bucket 3, fnv("beta") =
        // 0x7627619b954620a7 -> bucket 7; both sign hashes are even.
        let e = LocalHashedEmbedder::new(8, true);
        let v = e.embed_query("alpha beta").unwrap();
        let h = std::f32::consts::FRAC_1_SQRT_2;
        assert_eq!(v.0, vec![0.0, 0.0, 0.0, h, 0.0, 0.0, 0.0, h]);
    }

    #[test]
    fn deterministic_and_scale_free() {
        let e = LocalHashedEmbedder::new(4, true);
        assert_eq!(e.embed_query("aa aa").unwrap(), e.embed_query("aa").unwrap());
        let a = e.embed_query("Numerology in 5G").unwrap();
        let b = e.embed_query("Numerology in 5G").unwrap();
        assert_eq!(a.0.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.0.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn query_preprocessing_is_symmetric() {
        let e = LocalHashedEmbedder::new(384, true);
        assert_eq!(e.embed_query("  spaced   query ").unwrap(), e.embed_query("spaced query").unwrap());
        assert_eq!(e.embed_query("Spaced QUERY").unwrap(), e.embed_batch(&["spaced query"]).unwrap()[0]);
    }

    #[test]
    fn errors() {
        let e = LocalHashedEmbedder::new(8, true);
        assert_eq!(e.embed_batch(&[]), Err(EmbedError::EmptyInput));
        assert_eq!(e.embed_batch(&["ok", " "]), Err(EmbedError::EmptyText(1)));
        assert_eq!(e.embed_batch(&["ok", "?!"]), Err(EmbedError::Unembeddable(1)));
    }

    #[test]
    fn raw_counts_without_normalization() {
        let e = LocalHashedEmbedder::new(8, false);
        let v = e.embed_query("alpha alpha beta").unwrap();
        assert_eq!(v.0[3], 2.0);
        assert_eq!(v.0[7], 1.0);
    }
}
