//! Toy corpora with controllable sequential dependence: a first-order
//! markov chain, a long-range agreement language whose paired positions
//! must match, packed arithmetic identities, and plain-text ingestion.
//! All generation is deterministic given the [`CorpusSpec`].

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use thiserror::Error;

use crate::rng::{child_seed, rng_from_seed};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;

/// Content tokens for synthetic corpora are drawn from this pool in
/// order, so alphabet sizes up to the pool length are supported.
const ALPHABET_POOL: &str = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("character {c:?} is not in the vocabulary")]
    UnknownChar { c: char },
    #[error("text input is empty")]
    EmptyText,
    #[error("split fractions ({0}, {1}) must be nonnegative and sum to 1", .fractions.0, .fractions.1)]
    BadFractions { fractions: (f64, f64) },
    #[error("corpus spec: {reason}")]
    BadSpec { reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// Character-level tokenizer. Ids 0..=2 are reserved for PAD, BOS, and
/// EOS; characters map to 3.. in sorted order.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    chars: Vec<char>,
    ids: HashMap<char, u32>,
}

impl Tokenizer {
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Tokenizer {
        let mut set: Vec<char> = chars.into_iter().collect();
        set.sort_unstable();
        set.dedup();
        let ids = set
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, (i + 3) as u32))
            .collect();
        Tokenizer { chars: set, ids }
    }

    pub fn from_text(text: &str) -> Tokenizer {
        Tokenizer::from_chars(text.chars())
    }

    pub fn vocab_size(&self) -> usize {
        self.chars.len() + 3
    }

    /// The vocabulary characters in id order (for serialization).
    pub fn chars(&self) -> String {
        self.chars.iter().collect()
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>> {
        text.chars()
            .map(|c| {
                self.ids
                    .get(&c)
                    .copied()
                    .ok_or(CorpusError::UnknownChar { c })
            })
            .collect()
    }

    /// Inverse of tokenize on content ids; special ids render as nothing.
    pub fn detokenize(&self, tokens: &[u32]) -> String {
        tokens.iter().filter_map(|&t| self.char_for(t)).collect()
    }

    pub fn char_for(&self, id: u32) -> Option<char> {
        if id < 3 {
            return None;
        }
        self.chars.get(id as usize - 3).copied()
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusKind {
    /// First-order chain over `alphabet` symbols with a seeded
    /// row-stochastic transition matrix.
    Markov { alphabet: usize },
    /// Long-range constraint: content position i and i + C/2 always
    /// hold the same token (C = content length).
    Agreement { alphabet: usize },
    /// Expressions "a+b=c" with verified sums, packed back to back.
    Arithmetic { max_operand: u64 },
    /// Plain-text file, one document per non-empty line.
    Textfile { path: String },
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CorpusSpec {
    #[serde(flatten)]
    pub kind: CorpusKind,
    /// Number of packed sequences to emit (ignored for textfile).
    pub size: usize,
    pub seq_len: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub tokenizer: Tokenizer,
    pub sequences: Vec<Vec<u32>>,
    pub seq_len: usize,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

/// Builds a corpus from any spec kind, synthetic or file-backed.
pub fn build_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    match &spec.kind {
        CorpusKind::Textfile { path } => ingest_text(Path::new(path), spec.seq_len),
        _ => generate_synthetic(spec),
    }
}

/// Packs a stream of documents into fixed-length sequences: every
/// sequence starts with BOS, documents are separated by EOS, and only
/// the final sequence may carry a PAD tail.
pub fn pack(docs: &[Vec<u32>], seq_len: usize) -> Result<Vec<Vec<u32>>> {
    if seq_len < 2 {
        return Err(CorpusError::BadSpec {
            reason: format!("seq_len {seq_len} leaves no room for content"),
        });
    }
    let mut stream = Vec::new();
    for doc in docs {
        stream.extend_from_slice(doc);
        stream.push(EOS);
    }
    if stream.is_empty() {
        return Err(CorpusError::EmptyText);
    }
    let body = seq_len - 1;
    let mut out = Vec::new();
    for chunk in stream.chunks(body) {
        let mut seq = Vec::with_capacity(seq_len);
        seq.push(BOS);
        seq.extend_from_slice(chunk);
        seq.resize(seq_len, PAD);
        out.push(seq);
    }
    Ok(out)
}

fn synthetic_tokenizer(alphabet: usize) -> Result<Tokenizer> {
    let pool: Vec<char> = ALPHABET_POOL.chars().collect();
    if alphabet < 2 || alphabet > pool.len() {
        return Err(CorpusError::BadSpec {
            reason: format!("alphabet size {alphabet} outside 2..={}", pool.len()),
        });
    }
    Ok(Tokenizer::from_chars(pool[..alphabet].iter().copied()))
}

/// The seeded row-stochastic transition matrix used by the markov
/// generator, row-major `alphabet` x `alphabet`. Exposed so checks can
/// compare empirical statistics against the exact generator.
pub fn markov_transition_matrix(alphabet: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    // shape < 1 gives peaked rows; the floor keeps every transition live
    let gamma = Gamma::new(0.6, 1.0).expect("valid shape");
    let mut m = vec![0.0f64; alphabet * alphabet];
    for row in m.chunks_mut(alphabet) {
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = gamma.sample(&mut rng) + 1e-3;
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    m
}

fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let mut u = rng.random::<f64>() * probs.iter().sum::<f64>();
    for (i, &p) in probs.iter().enumerate() {
        u -= p;
        if u <= 0.0 {
            return i;
        }
    }
    probs.len() - 1
}

/// Content positions (indices into the full sequence) that the
/// agreement corpus constrains to be equal.
pub fn agreement_pairs(seq_len: usize) -> Vec<(usize, usize)> {
    let content = seq_len.saturating_sub(2);
    let half = content / 2;
    (0..half).map(|i| (1 + i, 1 + half + i)).collect()
}

fn digits(n: u64) -> usize {
    n.to_string().len()
}

pub fn generate_synthetic(spec: &CorpusSpec) -> Result<Corpus> {
    let seq_len = spec.seq_len;
    match spec.kind {
        CorpusKind::Markov { alphabet } => {
            let tokenizer = synthetic_tokenizer(alphabet)?;
            if seq_len < 3 {
                return Err(CorpusError::BadSpec {
                    reason: format!("seq_len {seq_len} too short for BOS/content/EOS"),
                });
            }
            let matrix = markov_transition_matrix(alphabet, child_seed(spec.seed, 0));
            let mut rng = rng_from_seed(child_seed(spec.seed, 1));
            let content = seq_len - 2;
            let sequences = (0..spec.size)
                .map(|_| {
                    let mut seq = Vec::with_capacity(seq_len);
                    seq.push(BOS);
                    let mut state = rng.random_range(0..alphabet);
                    seq.push(3 + state as u32);
                    for _ in 1..content {
                        let row = &matrix[state * alphabet..(state + 1) * alphabet];
                        state = sample_categorical(row, &mut rng);
                        seq.push(3 + state as u32);
                    }
                    seq.push(EOS);
                    seq
                })
                .collect();
            Ok(Corpus {
                tokenizer,
                sequences,
                seq_len,
            })
        }
        CorpusKind::Agreement { alphabet } => {
            let tokenizer = synthetic_tokenizer(alphabet)?;
            let content = seq_len.saturating_sub(2);
            if content < 2 || content % 2 != 0 {
                return Err(CorpusError::BadSpec {
                    reason: format!("agreement needs even content length >= 2, got {content}"),
                });
            }
            let half = content / 2;
            let mut rng = rng_from_seed(child_seed(spec.seed, 1));
            let sequences = (0..spec.size)
                .map(|_| {
                    let first: Vec<u32> = (0..half)
                        .map(|_| 3 + rng.random_range(0..alphabet) as u32)
                        .collect();
                    let mut seq = Vec::with_capacity(seq_len);
                    seq.push(BOS);
                    seq.extend_from_slice(&first);
                    seq.extend_from_slice(&first);
                    seq.push(EOS);
                    seq
                })
                .collect();
            Ok(Corpus {
                tokenizer,
                sequences,
                seq_len,
            })
        }
        CorpusKind::Arithmetic { max_operand } => {
            let tokenizer = Tokenizer::from_chars("0123456789+=".chars());
            if max_operand < 1 {
                return Err(CorpusError::BadSpec {
                    reason: "max_operand must be at least 1".into(),
                });
            }
            // longest expression plus its separator must fit a sequence
            // body, so truncating to whole expressions still fills
            // every requested sequence
            let max_expr = 2 * digits(max_operand) + digits(2 * max_operand) + 2;
            let body = seq_len.saturating_sub(1);
            if body < max_expr + 2 {
                return Err(CorpusError::BadSpec {
                    reason: format!(
                        "seq_len {seq_len} cannot hold an expression of up to {max_expr} tokens"
                    ),
                });
            }
            let mut rng = rng_from_seed(child_seed(spec.seed, 1));
            let budget = spec.size * body;
            let mut docs = Vec::new();
            let mut used = 0usize;
            loop {
                let a = rng.random_range(0..=max_operand);
                let b = rng.random_range(0..=max_operand);
                let expr = format!("{a}+{b}={}", a + b);
                let doc = tokenizer.tokenize(&expr)?;
                if used + doc.len() + 1 > budget {
                    break;
                }
                used += doc.len() + 1;
                docs.push(doc);
            }
            let sequences = pack(&docs, seq_len)?;
            Ok(Corpus {
                tokenizer,
                sequences,
                seq_len,
            })
        }
        CorpusKind::Textfile { .. } => Err(CorpusError::BadSpec {
            reason: "textfile corpora go through ingest_text".into(),
        }),
    }
}

/// Reads a UTF-8 text file, one document per non-empty line, and packs
/// it to fixed-length sequences.
pub fn ingest_text(path: &Path, seq_len: usize) -> Result<Corpus> {
    let text = std::fs::read_to_string(path)?;
    let doc_text: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
    if doc_text.is_empty() {
        return Err(CorpusError::EmptyText);
    }
    let tokenizer = Tokenizer::from_text(&doc_text.join(""));
    let docs: Vec<Vec<u32>> = doc_text
        .iter()
        .map(|d| tokenizer.tokenize(d))
        .collect::<Result<_>>()?;
    let sequences = pack(&docs, seq_len)?;
    Ok(Corpus {
        tokenizer,
        sequences,
        seq_len,
    })
}

/// Seeded disjoint partition into (train, held-out).
pub fn split(corpus: &Corpus, fractions: (f64, f64), seed: u64) -> Result<(Corpus, Corpus)> {
    let (a, b) = fractions;
    if !(a >= 0.0 && b >= 0.0 && (a + b - 1.0).abs() < 1e-9) {
        return Err(CorpusError::BadFractions { fractions });
    }
    let n = corpus.sequences.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let n_train = ((a * n as f64).round() as usize).min(n);
    let mut train_idx: Vec<usize> = order[..n_train].to_vec();
    let mut held_idx: Vec<usize> = order[n_train..].to_vec();
    train_idx.sort_unstable();
    held_idx.sort_unstable();
    let take = |idx: &[usize]| Corpus {
        tokenizer: corpus.tokenizer.clone(),
        sequences: idx.iter().map(|&i| corpus.sequences[i].clone()).collect(),
        seq_len: corpus.seq_len,
    };
    Ok((take(&train_idx), take(&held_idx)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(kind: CorpusKind, size: usize, seq_len: usize, seed: u64) -> CorpusSpec {
        CorpusSpec {
            kind,
            size,
            seq_len,
            seed,
        }
    }

    #[test]
    fn tokenize_detokenize_roundtrip() {
        let text = "the quick brown fox";
        let tok = Tokenizer::from_text(text);
        let ids = tok.tokenize(text).unwrap();
        assert_eq!(tok.detokenize(&ids), text);
        assert!(matches!(
            tok.tokenize("fox!"),
            Err(CorpusError::UnknownChar { c: '!' })
        ));
        assert_eq!(tok.char_for(PAD), None);
        assert_eq!(tok.vocab_size(), text.chars().collect::<std::collections::HashSet<_>>().len() + 3);
    }

    #[test]
    fn single_short_document_is_framed_and_padded() {
        let dir = std::env::temp_dir().join("corpus_test_single");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ab.txt");
        std::fs::write(&path, "ab").unwrap();
        let corpus = ingest_text(&path, 6).unwrap();
        let a = corpus.tokenizer.tokenize("a").unwrap()[0];
        let b = corpus.tokenizer.tokenize("b").unwrap()[0];
        assert_eq!(corpus.sequences, vec![vec![BOS, a, b, EOS, PAD, PAD]]);
    }

    #[test]
    fn two_documents_pack_with_separators() {
        // reference packing computed by hand: stream = a b EOS c d EOS,
        // body width 5 -> [BOS a b EOS c d], [BOS EOS PAD PAD PAD PAD]
        let tok = Tokenizer::from_text("abcd");
        let docs = vec![tok.tokenize("ab").unwrap(), tok.tokenize("cd").unwrap()];
        let packed = pack(&docs, 6).unwrap();
        let id = |s: &str| tok.tokenize(s).unwrap()[0];
        assert_eq!(
            packed,
            vec![
                vec![BOS, id("a"), id("b"), EOS, id("c"), id("d")],
                vec![BOS, EOS, PAD, PAD, PAD, PAD],
            ]
        );
    }

    #[test]
    fn two_documents_fit_one_sequence_when_room_allows() {
        let tok = Tokenizer::from_text("abcd");
        let docs = vec![tok.tokenize("ab").unwrap(), tok.tokenize("cd").unwrap()];
        let packed = pack(&docs, 12).unwrap();
        assert_eq!(packed.len(), 1);
        let id = |s: &str| tok.tokenize(s).unwrap()[0];
        assert_eq!(
            packed[0],
            vec![BOS, id("a"), id("b"), EOS, id("c"), id("d"), EOS, PAD, PAD, PAD, PAD, PAD]
        );
    }

    #[test]
    fn empty_input_is_rejected() {
        let dir = std::env::temp_dir().join("corpus_test_empty");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("empty.txt");
        std::fs::write(&path, "\n\n").unwrap();
        assert!(matches!(
            ingest_text(&path, 8),
            Err(CorpusError::EmptyText)
        ));
    }

    #[test]
    fn markov_bigrams_match_the_generator_matrix() {
        // ~1e5 content tokens; every conditional frequency must sit
        // within three standard errors of the exact transition row
        let alphabet = 5usize;
        let s = spec(CorpusKind::Markov { alphabet }, 7200, 16, 42);
        let corpus = generate_synthetic(&s).unwrap();
        let matrix = markov_transition_matrix(alphabet, child_seed(42, 0));

        let mut counts = vec![0u64; alphabet * alphabet];
        let mut from = vec![0u64; alphabet];
        let mut content_tokens = 0u64;
        for seq in &corpus.sequences {
            assert_eq!(seq.len(), 16);
            assert_eq!(seq[0], BOS);
            assert_eq!(seq[15], EOS);
            let content: Vec<usize> = seq[1..15].iter().map(|&t| (t - 3) as usize).collect();
            content_tokens += content.len() as u64;
            for w in content.windows(2) {
                counts[w[0] * alphabet + w[1]] += 1;
                from[w[0]] += 1;
            }
        }
        assert!(content_tokens >= 100_000);

        for i in 0..alphabet {
            for j in 0..alphabet {
                let p = matrix[i * alphabet + j];
                let n = from[i] as f64;
                let phat = counts[i * alphabet + j] as f64 / n;
                let se = (p * (1.0 - p) / n).sqrt();
                assert!(
                    (phat - p).abs() <= 3.0 * se,
                    "cell ({i},{j}): empirical {phat:.5} vs exact {p:.5}, se {se:.5}"
                );
            }
        }
    }

    #[test]
    fn markov_rows_are_stochastic() {
        let m = markov_transition_matrix(7, 3);
        for row in m.chunks(7) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn agreement_pairs_hold_equal_tokens() {
        let s = spec(CorpusKind::Agreement { alphabet: 6 }, 200, 16, 9);
        let corpus = generate_synthetic(&s).unwrap();
        let pairs = agreement_pairs(16);
        assert_eq!(pairs.len(), 7);
        assert_eq!(pairs[0], (1, 8));
        for seq in &corpus.sequences {
            assert_eq!(seq.len(), 16);
            for &(i, j) in &pairs {
                assert_eq!(seq[i], seq[j]);
            }
        }
        // the generator is not degenerate: sequences differ
        assert!(corpus.sequences.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn arithmetic_expressions_verify() {
        let s = spec(CorpusKind::Arithmetic { max_operand: 99 }, 50, 16, 7);
        let corpus = generate_synthetic(&s).unwrap();
        assert_eq!(corpus.len(), 50);
        for (k, seq) in corpus.sequences.iter().enumerate() {
            assert_eq!(seq.len(), 16);
            assert_eq!(seq[0], BOS);
            if k + 1 < corpus.len() {
                assert!(!seq.contains(&PAD), "PAD before the final sequence");
            }
        }
        // reassemble the stream and check every completed expression
        let stream: Vec<u32> = corpus
            .sequences
            .iter()
            .flat_map(|s| s[1..].iter().copied())
            .filter(|&t| t != PAD)
            .collect();
        let exprs: Vec<&[u32]> = stream.split(|&t| t == EOS).collect();
        let complete = &exprs[..exprs.len() - 1];
        assert!(!complete.is_empty());
        for chunk in complete {
            let text = corpus.tokenizer.detokenize(chunk);
            let (lhs, c) = text.split_once('=').expect("has equals");
            let (a, b) = lhs.split_once('+').expect("has plus");
            let (a, b, c): (u64, u64, u64) =
                (a.parse().unwrap(), b.parse().unwrap(), c.parse().unwrap());
            assert_eq!(a + b, c, "bad identity {text}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        for kind in [
            CorpusKind::Markov { alphabet: 4 },
            CorpusKind::Agreement { alphabet: 4 },
            CorpusKind::Arithmetic { max_operand: 20 },
        ] {
            let s = spec(kind, 25, 16, 11);
            let a = generate_synthetic(&s).unwrap();
            let b = generate_synthetic(&s).unwrap();
            assert_eq!(a.sequences, b.sequences);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(generate_synthetic(&spec(CorpusKind::Markov { alphabet: 1 }, 5, 16, 0)).is_err());
        assert!(generate_synthetic(&spec(CorpusKind::Markov { alphabet: 200 }, 5, 16, 0)).is_err());
        // odd content length cannot hold mirrored halves
        assert!(generate_synthetic(&spec(CorpusKind::Agreement { alphabet: 4 }, 5, 15, 0)).is_err());
        // expression may not fit the sequence body
        assert!(
            generate_synthetic(&spec(CorpusKind::Arithmetic { max_operand: 10_000 }, 5, 8, 0))
                .is_err()
        );
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let s = spec(CorpusKind::Markov { alphabet: 4 }, 1000, 8, 5);
        let corpus = generate_synthetic(&s).unwrap();
        let (train, held) = split(&corpus, (0.9, 0.1), 77).unwrap();
        assert_eq!(train.len(), 900);
        assert_eq!(held.len(), 100);

        let count = |needle: &Vec<u32>, hay: &Corpus| {
            hay.sequences.iter().filter(|s| *s == needle).count()
        };
        // multiset preservation: each sequence appears in the two
        // splits exactly as often as in the original
        for seq in corpus.sequences.iter().take(50) {
            assert_eq!(
                count(seq, &corpus),
                count(seq, &train) + count(seq, &held)
            );
        }

        let (t2, h2) = split(&corpus, (0.9, 0.1), 77).unwrap();
        assert_eq!(train.sequences, t2.sequences);
        assert_eq!(held.sequences, h2.sequences);

        let (all, none) = split(&corpus, (1.0, 0.0), 3).unwrap();
        assert_eq!(all.len(), 1000);
        assert!(none.is_empty());

        assert!(split(&corpus, (0.5, 0.4), 3).is_err());
        assert!(split(&corpus, (-0.1, 1.1), 3).is_err());
    }

    proptest! {
        #[test]
        fn packing_always_yields_exact_lengths(
            doc_lens in proptest::collection::vec(0usize..12, 1..8),
            seq_len in 4usize..20,
        ) {
            let docs: Vec<Vec<u32>> = doc_lens
                .iter()
                .map(|&n| (0..n).map(|i| 3 + (i % 5) as u32).collect())
                .collect();
            let packed = pack(&docs, seq_len).unwrap();
            for (k, seq) in packed.iter().enumerate() {
                prop_assert_eq!(seq.len(), seq_len);
                prop_assert_eq!(seq[0], BOS);
                if k + 1 < packed.len() {
                    prop_assert!(!seq.contains(&PAD));
                }
                // PAD forms a contiguous tail
                let first_pad = seq.iter().position(|&t| t == PAD);
                if let Some(p) = first_pad {
                    prop_assert!(seq[p..].iter().all(|&t| t == PAD));
                }
            }
            // total non-pad content round-trips the stream
            let stream_len: usize = docs.iter().map(|d| d.len() + 1).sum();
            let packed_content: usize = packed
                .iter()
                .map(|s| s.iter().filter(|&&t| t != PAD && t != BOS).count())
                .sum();
            prop_assert_eq!(stream_len, packed_content);
        }

        #[test]
        fn tokenizer_roundtrips_arbitrary_ascii(text in "[a-z0-9 ]{1,40}") {
            let tok = Tokenizer::from_text(&text);
            let ids = tok.tokenize(&text).unwrap();
            prop_assert_eq!(tok.detokenize(&ids), text);
        }
    }
}
