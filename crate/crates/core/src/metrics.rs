//! Generation-quality metrics: pooled n-gram diversity, perplexity
//! under a frozen judge language model, and positionwise recovery rate.

use std::collections::HashSet;

use thiserror::Error;

use crate::corpus::PAD;
use crate::nets::{ARDecoder, NetsError, BOS, EOS};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("sample set is empty after stripping special tokens")]
    EmptySampleSet,
    #[error("no {n}-grams in the whole sample set")]
    ZeroNgrams { n: usize },
    #[error("token {token} outside judge vocabulary of size {vocab}")]
    OutOfVocab { token: u32, vocab: usize },
    #[error("sequence of {len} tokens exceeds judge maximum {max}")]
    TooLong { len: usize, max: usize },
    #[error("length mismatch: {lhs} vs {rhs}")]
    LengthMismatch { lhs: usize, rhs: usize },
    #[error("judge model must be decoder-only (no cross-attention)")]
    JudgeHasMemory,
    #[error(transparent)]
    Nets(#[from] NetsError),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Generated samples with special tokens stripped; every kept sequence
/// is nonempty.
#[derive(Debug, Clone)]
pub struct SampleSet {
    sequences: Vec<Vec<u32>>,
}

impl SampleSet {
    pub fn new(sequences: Vec<Vec<u32>>) -> Result<SampleSet> {
        let sequences: Vec<Vec<u32>> = sequences.into_iter().filter(|s| !s.is_empty()).collect();
        if sequences.is_empty() {
            return Err(MetricsError::EmptySampleSet);
        }
        Ok(SampleSet { sequences })
    }

    /// Strips PAD/BOS/EOS from raw decodes and drops sequences that end
    /// up empty; errors only if nothing at all remains.
    pub fn from_decoded(decoded: &[Vec<u32>]) -> Result<SampleSet> {
        SampleSet::new(
            decoded
                .iter()
                .map(|s| s.iter().copied().filter(|&t| t >= 3).collect())
                .collect(),
        )
    }

    pub fn sequences(&self) -> &[Vec<u32>] {
        &self.sequences
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

/// Product over n in {2,3,4} of (distinct n-grams) / (total n-grams),
/// both pooled across the whole set. Sequences shorter than n simply
/// contribute no n-grams of that order.
pub fn ngram_diversity(samples: &SampleSet) -> Result<f64> {
    let mut div = 1.0f64;
    for n in 2..=4usize {
        let mut unique: HashSet<&[u32]> = HashSet::new();
        let mut total = 0usize;
        for seq in &samples.sequences {
            for gram in seq.windows(n) {
                unique.insert(gram);
                total += 1;
            }
        }
        if total == 0 {
            return Err(MetricsError::ZeroNgrams { n });
        }
        div *= unique.len() as f64 / total as f64;
    }
    Ok(div)
}

/// A frozen decoder-only language model used as the fluency judge.
pub struct OracleLM {
    decoder: ARDecoder,
}

impl OracleLM {
    pub fn new(decoder: ARDecoder) -> Result<OracleLM> {
        if decoder.config().cross_attention {
            return Err(MetricsError::JudgeHasMemory);
        }
        Ok(OracleLM { decoder })
    }

    pub fn decoder(&self) -> &ARDecoder {
        &self.decoder
    }

    pub fn vocab_size(&self) -> usize {
        self.decoder.config().vocab_size
    }

    /// Total negative log-likelihood and token count of one framed
    /// sequence ([BOS, ..., EOS, PAD...]); PAD targets are skipped.
    fn framed_nll(&self, framed: &[u32]) -> Result<(f64, usize)> {
        let vocab = self.vocab_size();
        if framed.len() > self.decoder.config().max_len + 1 {
            return Err(MetricsError::TooLong {
                len: framed.len(),
                max: self.decoder.config().max_len + 1,
            });
        }
        if let Some(&bad) = framed.iter().find(|&&t| t as usize >= vocab) {
            return Err(MetricsError::OutOfVocab {
                token: bad,
                vocab,
            });
        }
        let inputs = &framed[..framed.len() - 1];
        let targets = &framed[1..];
        let logits = self.decoder.forward_teacher(inputs, None)?.to_vec();
        let mut nll = 0.0f64;
        let mut count = 0usize;
        for (r, &target) in targets.iter().enumerate() {
            if target == PAD {
                continue;
            }
            let row = &logits[r * vocab..(r + 1) * vocab];
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
            let lse = max
                + row
                    .iter()
                    .map(|&l| (l as f64 - max).exp())
                    .sum::<f64>()
                    .ln();
            nll += lse - row[target as usize] as f64;
            count += 1;
        }
        Ok((nll, count))
    }

    /// Token-weighted perplexity of already-framed corpus sequences.
    pub fn corpus_ppl(&self, sequences: &[Vec<u32>]) -> Result<f64> {
        let mut nll = 0.0f64;
        let mut count = 0usize;
        for seq in sequences {
            if seq.len() < 2 {
                continue;
            }
            let (n, c) = self.framed_nll(seq)?;
            nll += n;
            count += c;
        }
        if count == 0 {
            return Err(MetricsError::EmptySampleSet);
        }
        Ok((nll / count as f64).exp())
    }
}

/// exp of the mean per-token NLL under the judge, token-weighted across
/// the set. Each sample is framed as BOS .. EOS before scoring, so the
/// end-of-sequence decision is part of the score.
pub fn generative_ppl(samples: &SampleSet, judge: &OracleLM) -> Result<f64> {
    let mut nll = 0.0f64;
    let mut count = 0usize;
    for seq in &samples.sequences {
        let mut framed = Vec::with_capacity(seq.len() + 2);
        framed.push(BOS);
        framed.extend_from_slice(seq);
        framed.push(EOS);
        let (n, c) = judge.framed_nll(&framed)?;
        nll += n;
        count += c;
    }
    Ok((nll / count as f64).exp())
}

/// Positionwise exact-match fraction.
pub fn recovery_rate(predicted: &[u32], truth: &[u32]) -> Result<f64> {
    if predicted.len() != truth.len() || truth.is_empty() {
        return Err(MetricsError::LengthMismatch {
            lhs: predicted.len(),
            rhs: truth.len(),
        });
    }
    let hits = predicted
        .iter()
        .zip(truth)
        .filter(|(a, b)| a == b)
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::DecoderConfig;
    use crate::rng::rng_from_seed;

    fn judge(vocab_size: usize, max_len: usize, seed: u64) -> OracleLM {
        let cfg = DecoderConfig {
            vocab_size,
            max_len,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            cross_attention: false,
            mem_len: 0,
            mem_dim: 0,
        };
        OracleLM::new(ARDecoder::new(cfg, &mut rng_from_seed(seed)).unwrap()).unwrap()
    }

    #[test]
    fn repeated_token_gives_one_twenty_fourth() {
        // hand count for t t t t t: 4 bigrams (1 unique), 3 trigrams
        // (1 unique), 2 four-grams (1 unique)
        let set = SampleSet::new(vec![vec![5; 5]]).unwrap();
        let div = ngram_diversity(&set).unwrap();
        let want = (1.0 / 4.0) * (1.0 / 3.0) * (1.0 / 2.0);
        assert!((div - want).abs() < 1e-15, "div {div}");
    }

    #[test]
    fn all_distinct_ngrams_give_one() {
        let set = SampleSet::new(vec![vec![3, 4, 5, 6, 7, 8]]).unwrap();
        assert_eq!(ngram_diversity(&set).unwrap(), 1.0);
    }

    #[test]
    fn duplicating_the_set_divides_diversity_by_eight() {
        let base = vec![vec![3, 4, 5, 6, 7], vec![4, 6, 3, 7, 5, 8]];
        let mut doubled = base.clone();
        doubled.extend(base.clone());
        let div1 = ngram_diversity(&SampleSet::new(base).unwrap()).unwrap();
        let div2 = ngram_diversity(&SampleSet::new(doubled).unwrap()).unwrap();
        assert!((div2 - div1 / 8.0).abs() < 1e-12, "{div2} vs {}", div1 / 8.0);
        assert!(div2 < div1);
    }

    #[test]
    fn diversity_is_permutation_invariant() {
        let a = vec![vec![3, 3, 4, 5], vec![4, 5, 6, 7, 3], vec![5, 5, 5, 5]];
        let mut b = a.clone();
        b.reverse();
        let da = ngram_diversity(&SampleSet::new(a).unwrap()).unwrap();
        let db = ngram_diversity(&SampleSet::new(b).unwrap()).unwrap();
        assert_eq!(da, db);
    }

    #[test]
    fn short_sequences_are_tolerated_until_nothing_remains() {
        // length-3 sequences alone yield no 4-grams
        let only_short = SampleSet::new(vec![vec![3, 4, 5], vec![6, 7, 8]]).unwrap();
        assert!(matches!(
            ngram_diversity(&only_short),
            Err(MetricsError::ZeroNgrams { n: 4 })
        ));
        // mixing in one long sequence restores a positive total
        let mixed = SampleSet::new(vec![vec![3, 4, 5], vec![3, 4, 5, 6, 7]]).unwrap();
        assert!(ngram_diversity(&mixed).unwrap() > 0.0);
    }

    #[test]
    fn sample_set_strips_specials_and_rejects_empties() {
        let set = SampleSet::from_decoded(&[vec![BOS, 5, 6, EOS], vec![BOS, EOS]]).unwrap();
        assert_eq!(set.sequences(), &[vec![5, 6]]);
        assert!(SampleSet::from_decoded(&[vec![BOS, EOS], vec![BOS, PAD]]).is_err());
        assert!(SampleSet::new(vec![]).is_err());
    }

    #[test]
    fn untrained_judge_costs_exactly_vocab_size() {
        // zero-initialized head makes every conditional uniform, so the
        // per-token NLL is ln|V| and perplexity is |V|
        let j = judge(9, 12, 1);
        let set = SampleSet::new(vec![vec![3, 4, 5, 6], vec![7, 8, 3]]).unwrap();
        let ppl = generative_ppl(&set, &j).unwrap();
        assert!((ppl - 9.0).abs() < 1e-4, "ppl {ppl}");
    }

    #[test]
    fn ppl_is_at_least_one() {
        let j = judge(6, 12, 2);
        let mut rng = rng_from_seed(22);
        for (name, p) in j.decoder().named_params() {
            if name.starts_with("head") {
                let vals: Vec<f32> = (0..p.numel())
                    .map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0))
                    .collect();
                p.set_data(&vals).unwrap();
            }
        }
        let set = SampleSet::new(vec![vec![3, 4, 5], vec![5, 4, 3, 4]]).unwrap();
        assert!(generative_ppl(&set, &j).unwrap() >= 1.0);
    }

    #[test]
    fn out_of_vocabulary_tokens_are_rejected() {
        let j = judge(6, 12, 3);
        let set = SampleSet::new(vec![vec![3, 9, 4]]).unwrap();
        assert!(matches!(
            generative_ppl(&set, &j),
            Err(MetricsError::OutOfVocab { token: 9, vocab: 6 })
        ));
    }

    #[test]
    fn oversized_samples_are_rejected() {
        let j = judge(6, 4, 4);
        let set = SampleSet::new(vec![vec![3, 4, 5, 3, 4, 5]]).unwrap();
        assert!(matches!(
            generative_ppl(&set, &j),
            Err(MetricsError::TooLong { .. })
        ));
    }

    #[test]
    fn corpus_ppl_skips_pad_targets() {
        let j = judge(7, 10, 5);
        // identical content, one padded: same per-token NLL either way
        let a = j.corpus_ppl(&[vec![BOS, 4, 5, EOS]]).unwrap();
        let b = j.corpus_ppl(&[vec![BOS, 4, 5, EOS, PAD, PAD]]).unwrap();
        assert!((a - b).abs() < 1e-9);
        assert!((a - 7.0).abs() < 1e-4);
    }

    #[test]
    fn judge_requires_decoder_only() {
        let cfg = DecoderConfig {
            vocab_size: 6,
            max_len: 8,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            cross_attention: true,
            mem_len: 4,
            mem_dim: 3,
        };
        let dec = ARDecoder::new(cfg, &mut rng_from_seed(6)).unwrap();
        assert!(matches!(
            OracleLM::new(dec),
            Err(MetricsError::JudgeHasMemory)
        ));
    }

    #[test]
    fn recovery_rate_cases() {
        assert_eq!(recovery_rate(&[3, 4, 5], &[3, 4, 5]).unwrap(), 1.0);
        assert_eq!(recovery_rate(&[3, 4, 5], &[6, 7, 8]).unwrap(), 0.0);
        assert_eq!(recovery_rate(&[3, 4, 5, 6], &[3, 4, 7, 8]).unwrap(), 0.5);
        assert!(recovery_rate(&[3], &[3, 4]).is_err());
        assert!(recovery_rate(&[], &[]).is_err());
    }
}
