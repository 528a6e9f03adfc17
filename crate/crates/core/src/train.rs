//! Training loops: the diffusion velocity objective, the
//! noise-augmented autoregressive decoder, the pointwise linear
//! baseline, and the paired token-recovery study that compares the two
//! readouts across embedding widths.
//!
//! Every loop is single-threaded and fully determined by its seed: data
//! order, noise draws, and initialization all derive from it.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, BOS, EOS, PAD};
use crate::diffusion::{
    diffusion_loss, forward_diffuse, velocity_target, DiffusionError, EmbeddingSequence,
    LossWeighting, NoiseSchedule,
};
use crate::nets::{
    ARDecoder, DecoderConfig, DenoiserConfig, DenoiserNet, EmbeddingTable, LinearHead, NetsError,
    TableStyle,
};
use crate::rng::{child_seed, rng_from_seed};
use crate::tensor::{backward, AdamState, NamedParams, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("train config: {reason}")]
    Config { reason: String },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("empty width list")]
    EmptyWidthList,
    #[error("corpus has no sequences")]
    EmptyCorpus,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Nets(#[from] NetsError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_steps: usize,
    /// Fraction of total steps spent ramping linearly to peak_lr.
    pub warmup_frac: f64,
    pub peak_lr: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub seed: u64,
    /// Std of the Gaussian perturbation added to the embeddings the
    /// decoder conditions on (0 disables augmentation).
    pub noise_aug_sigma: f64,
    pub lr_schedule: LrSchedule,
    /// Diffusion loss weighting; ignored by the decoder loops.
    pub weighting: LossWeighting,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            total_steps: 1000,
            warmup_frac: 0.05,
            peak_lr: 1e-3,
            weight_decay: 0.1,
            grad_clip: 1.0,
            seed: 0,
            noise_aug_sigma: 0.1,
            lr_schedule: LrSchedule::Cosine,
            weighting: LossWeighting::Constant,
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.95;
const ADAM_EPS: f64 = 1e-8;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.total_steps == 0 {
            return Err(TrainError::Config {
                reason: "batch size and total steps must be positive".into(),
            });
        }
        if !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(TrainError::Config {
                reason: format!("warmup fraction {} outside [0, 1)", self.warmup_frac),
            });
        }
        if self.peak_lr < 0.0 || self.weight_decay < 0.0 || self.noise_aug_sigma < 0.0 {
            return Err(TrainError::Config {
                reason: "learning rate, weight decay, and noise sigma must be nonnegative".into(),
            });
        }
        Ok(())
    }

    /// Learning rate at a 0-based step: linear warmup, then constant or
    /// cosine decay to zero.
    pub fn lr_at(&self, step: usize) -> f64 {
        let warmup = (self.warmup_frac * self.total_steps as f64).round() as usize;
        if step < warmup {
            return self.peak_lr * (step + 1) as f64 / warmup as f64;
        }
        match self.lr_schedule {
            LrSchedule::Constant => self.peak_lr,
            LrSchedule::Cosine => {
                let span = (self.total_steps - warmup).max(1) as f64;
                let progress = (step - warmup) as f64 / span;
                self.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CurvePoint {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

/// x + sigma * eps with a fresh standard normal draw per coordinate.
pub fn perturb(x: &EmbeddingSequence, sigma: f64, rng: &mut ChaCha8Rng) -> EmbeddingSequence {
    if sigma == 0.0 {
        return x.clone();
    }
    let values: Vec<f32> = x
        .values()
        .iter()
        .map(|&v| (v as f64 + sigma * rng.sample::<f64, _>(StandardNormal)) as f32)
        .collect();
    EmbeddingSequence::new(x.len(), x.dim(), values).expect("finite perturbation")
}

/// Epoch-wise seeded shuffling with contiguous batches.
struct Batcher {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    fn new(n: usize, seed: u64) -> Batcher {
        let mut b = Batcher {
            order: (0..n).collect(),
            pos: 0,
            rng: rng_from_seed(seed),
        };
        b.order.shuffle(&mut b.rng);
        b
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        batch
    }
}

fn mean_of(losses: Vec<Tensor>) -> Result<Tensor> {
    let n = losses.len();
    let mut sum = losses[0].clone();
    for l in &losses[1..] {
        sum = sum.add(l)?;
    }
    Ok(sum.scale(1.0 / n as f32)?)
}

/// One optimization step over an already-built scalar loss.
fn apply_step(
    loss: &Tensor,
    params: &NamedParams,
    opt: &mut AdamState,
    lr: f64,
    step: usize,
) -> Result<f64> {
    let value = loss.item() as f64;
    if !value.is_finite() {
        return Err(TrainError::NonFiniteLoss { step });
    }
    backward(loss)?;
    opt.step(params, lr)?;
    for (_, p) in params {
        p.zero_grad();
    }
    Ok(value)
}

/// Trains a velocity-predicting denoiser on the corpus embeddings.
/// Per element: t ~ U(0, 1], eps ~ N(0, I), x_t from the forward
/// process, loss = w(t) * MSE(v_hat, v_target).
pub fn train_diffusion(
    corpus: &Corpus,
    table: &EmbeddingTable,
    schedule: &NoiseSchedule,
    net_cfg: &DenoiserConfig,
    cfg: &TrainConfig,
) -> Result<(DenoiserNet, Vec<CurvePoint>)> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let net = DenoiserNet::new(net_cfg.clone(), &mut rng_from_seed(child_seed(cfg.seed, 0)))?;
    let params = net.named_params();
    let mut opt = AdamState::new(
        &params,
        ADAM_BETA1,
        ADAM_BETA2,
        ADAM_EPS,
        cfg.weight_decay,
        cfg.grad_clip,
    );
    let mut batcher = Batcher::new(corpus.len(), child_seed(cfg.seed, 1));
    let mut noise_rng = rng_from_seed(child_seed(cfg.seed, 2));
    let mut curve = Vec::with_capacity(cfg.total_steps);

    for step in 0..cfg.total_steps {
        let mut losses = Vec::with_capacity(cfg.batch_size);
        for &i in &batcher.next_batch(cfg.batch_size) {
            let x0 = table.embed(&corpus.sequences[i])?;
            let t = 1.0 - noise_rng.random::<f64>(); // (0, 1]
            let eps = EmbeddingSequence::standard_normal(x0.len(), x0.dim(), &mut noise_rng);
            let x_t = forward_diffuse(&x0, &eps, schedule, t)?;
            let v_target = velocity_target(&x0, &eps, schedule, t)?;
            let v_hat = net.velocity_tensor(&x_t.to_tensor(), t)?;
            losses.push(diffusion_loss(&v_hat, &v_target, &cfg.weighting, schedule, t)?);
        }
        let loss = mean_of(losses)?;
        let lr = cfg.lr_at(step);
        let value = apply_step(&loss, &params, &mut opt, lr, step)?;
        curve.push(CurvePoint { step, loss: value, lr });
    }
    Ok((net, curve))
}

/// Trains an autoregressive decoder with teacher forcing. When the
/// config has cross-attention, the decoder conditions on the clean
/// embeddings plus Gaussian noise of std noise_aug_sigma; without it
/// this trains a pure language model.
pub fn train_decoder(
    corpus: &Corpus,
    table: &EmbeddingTable,
    dec_cfg: &DecoderConfig,
    cfg: &TrainConfig,
) -> Result<(ARDecoder, Vec<CurvePoint>)> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let dec = ARDecoder::new(dec_cfg.clone(), &mut rng_from_seed(child_seed(cfg.seed, 0)))?;
    let params = dec.named_params();
    let mut opt = AdamState::new(
        &params,
        ADAM_BETA1,
        ADAM_BETA2,
        ADAM_EPS,
        cfg.weight_decay,
        cfg.grad_clip,
    );
    let mut batcher = Batcher::new(corpus.len(), child_seed(cfg.seed, 1));
    let mut noise_rng = rng_from_seed(child_seed(cfg.seed, 2));
    let mut curve = Vec::with_capacity(cfg.total_steps);

    for step in 0..cfg.total_steps {
        let mut losses = Vec::with_capacity(cfg.batch_size);
        for &i in &batcher.next_batch(cfg.batch_size) {
            let tokens = &corpus.sequences[i];
            let memory = if dec_cfg.cross_attention {
                let x0 = table.embed(tokens)?;
                Some(perturb(&x0, cfg.noise_aug_sigma, &mut noise_rng))
            } else {
                None
            };
            losses.push(dec.teacher_loss(tokens, memory.as_ref())?);
        }
        let loss = mean_of(losses)?;
        let lr = cfg.lr_at(step);
        let value = apply_step(&loss, &params, &mut opt, lr, step)?;
        curve.push(CurvePoint { step, loss: value, lr });
    }
    Ok((dec, curve))
}

/// Trains the pointwise linear readout on embeddings perturbed with the
/// given sigma (the same protocol the decoder sees, for a fair
/// comparison).
pub fn train_linear_head(
    corpus: &Corpus,
    table: &EmbeddingTable,
    cfg: &TrainConfig,
    sigma: f64,
) -> Result<(LinearHead, Vec<CurvePoint>)> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let head = LinearHead::new(
        table.dim(),
        table.vocab_size(),
        &mut rng_from_seed(child_seed(cfg.seed, 0)),
    );
    let params = head.named_params();
    let mut opt = AdamState::new(
        &params,
        ADAM_BETA1,
        ADAM_BETA2,
        ADAM_EPS,
        cfg.weight_decay,
        cfg.grad_clip,
    );
    let mut batcher = Batcher::new(corpus.len(), child_seed(cfg.seed, 1));
    let mut noise_rng = rng_from_seed(child_seed(cfg.seed, 2));
    let mut curve = Vec::with_capacity(cfg.total_steps);

    for step in 0..cfg.total_steps {
        let mut losses = Vec::with_capacity(cfg.batch_size);
        for &i in &batcher.next_batch(cfg.batch_size) {
            let tokens = &corpus.sequences[i];
            let x = perturb(&table.embed(tokens)?, sigma, &mut noise_rng);
            losses.push(head.loss(&x, tokens)?);
        }
        let loss = mean_of(losses)?;
        let lr = cfg.lr_at(step);
        let value = apply_step(&loss, &params, &mut opt, lr, step)?;
        curve.push(CurvePoint { step, loss: value, lr });
    }
    Ok((head, curve))
}

/// Positions that count toward recovery: real content, not framing.
fn content_positions(tokens: &[u32]) -> Vec<usize> {
    tokens
        .iter()
        .enumerate()
        .filter(|(_, &t)| t != PAD && t != BOS && t != EOS)
        .map(|(i, _)| i)
        .collect()
}

/// Argmax-match recovery of both readouts on one corpus, under shared
/// per-sequence noise draws so the comparison is paired. The decoder is
/// scored teacher-forced: position i is predicted from the true prefix
/// plus the perturbed embeddings, matching the conditional risk the
/// linear readout is being compared against.
pub fn evaluate_recovery(
    head: &LinearHead,
    dec: &ARDecoder,
    table: &EmbeddingTable,
    corpus: &Corpus,
    sigma: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = rng_from_seed(seed);
    let vocab = table.vocab_size();
    let mut linear_hits = 0usize;
    let mut ar_hits = 0usize;
    let mut total = 0usize;
    let top = |row: &[f32]| {
        row.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k as u32)
            .unwrap()
    };
    for tokens in &corpus.sequences {
        let noisy = perturb(&table.embed(tokens)?, sigma, &mut rng);
        let positions = content_positions(tokens);
        total += positions.len();

        let logits = head.predict(&noisy)?.to_vec();
        for &i in &positions {
            if top(&logits[i * vocab..(i + 1) * vocab]) == tokens[i] {
                linear_hits += 1;
            }
        }

        let ar_logits = dec
            .forward_teacher(&tokens[..tokens.len() - 1], Some(&noisy))?
            .to_vec();
        for &i in &positions {
            // Row i-1 scores the token at position i; content positions
            // always sit after the leading frame token.
            if top(&ar_logits[(i - 1) * vocab..i * vocab]) == tokens[i] {
                ar_hits += 1;
            }
        }
    }
    if total == 0 {
        return Err(TrainError::EmptyCorpus);
    }
    Ok((
        linear_hits as f64 / total as f64,
        ar_hits as f64 / total as f64,
    ))
}

#[derive(Debug, Clone, Copy)]
pub struct RecoveryRow {
    pub d: usize,
    /// Rates on noise-perturbed embeddings (the headline numbers).
    pub linear_rate: f64,
    pub ar_rate: f64,
    /// Rates on clean embeddings, for reference.
    pub clean_linear_rate: f64,
    pub clean_ar_rate: f64,
}

/// For each embedding width d: builds a fresh table in the given style,
/// trains the linear readout and a cross-attending decoder on
/// sigma-perturbed embeddings of the train split, and reports held-out
/// argmax recovery for both, noised and clean. All per-width randomness
/// derives from the config seed and d's index.
pub fn token_recovery_experiment(
    d_list: &[usize],
    sigma: f64,
    corpus: &Corpus,
    style: TableStyle,
    dec_template: &DecoderConfig,
    cfg: &TrainConfig,
) -> Result<Vec<RecoveryRow>> {
    if d_list.is_empty() {
        return Err(TrainError::EmptyWidthList);
    }
    cfg.validate()?;
    let (train_split, held_out) = crate::corpus::split(corpus, (0.9, 0.1), child_seed(cfg.seed, 100))?;
    let vocab = corpus.tokenizer.vocab_size();
    let mut rows = Vec::with_capacity(d_list.len());
    for (k, &d) in d_list.iter().enumerate() {
        let point_seed = child_seed(cfg.seed, 200 + k as u64);
        let table = EmbeddingTable::build(style, vocab, d, &mut rng_from_seed(child_seed(point_seed, 0)))?;

        let mut head_cfg = cfg.clone();
        head_cfg.seed = child_seed(point_seed, 1);
        let (head, _) = train_linear_head(&train_split, &table, &head_cfg, sigma)?;

        let mut dec_cfg_run = cfg.clone();
        dec_cfg_run.seed = child_seed(point_seed, 2);
        dec_cfg_run.noise_aug_sigma = sigma;
        let mut shape = dec_template.clone();
        shape.vocab_size = vocab;
        shape.max_len = corpus.seq_len;
        shape.cross_attention = true;
        shape.mem_len = corpus.seq_len;
        shape.mem_dim = d;
        let (dec, _) = train_decoder(&train_split, &table, &shape, &dec_cfg_run)?;

        let eval_seed = child_seed(point_seed, 3);
        let (linear_rate, ar_rate) = evaluate_recovery(&head, &dec, &table, &held_out, sigma, eval_seed)?;
        let (clean_linear_rate, clean_ar_rate) =
            evaluate_recovery(&head, &dec, &table, &held_out, 0.0, eval_seed)?;
        rows.push(RecoveryRow {
            d,
            linear_rate,
            ar_rate,
            clean_linear_rate,
            clean_ar_rate,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, CorpusKind, CorpusSpec};
    use crate::metrics::{generative_ppl, ngram_diversity, OracleLM, SampleSet};

    fn markov_corpus(alphabet: usize, size: usize, seq_len: usize, seed: u64) -> Corpus {
        generate_synthetic(&CorpusSpec {
            kind: CorpusKind::Markov { alphabet },
            size,
            seq_len,
            seed,
        })
        .unwrap()
    }

    fn agreement_corpus(alphabet: usize, size: usize, seq_len: usize, seed: u64) -> Corpus {
        generate_synthetic(&CorpusSpec {
            kind: CorpusKind::Agreement { alphabet },
            size,
            seq_len,
            seed,
        })
        .unwrap()
    }

    fn small_denoiser_cfg(dim: usize, max_len: usize) -> DenoiserConfig {
        DenoiserConfig {
            max_len,
            dim,
            d_model: 32,
            n_layers: 2,
            n_heads: 4,
            d_ff: 64,
        }
    }

    fn small_decoder_cfg(vocab: usize, max_len: usize, cross: bool, mem_dim: usize) -> DecoderConfig {
        DecoderConfig {
            vocab_size: vocab,
            max_len,
            d_model: 32,
            n_layers: 2,
            n_heads: 4,
            d_ff: 64,
            cross_attention: cross,
            mem_len: max_len,
            mem_dim,
        }
    }

    fn table_for(corpus: &Corpus, dim: usize, seed: u64) -> EmbeddingTable {
        EmbeddingTable::new(corpus.tokenizer.vocab_size(), dim, &mut rng_from_seed(seed)).unwrap()
    }

    fn snapshot(params: &NamedParams) -> Vec<(String, Vec<f32>)> {
        params
            .iter()
            .map(|(n, p)| (n.clone(), p.to_vec()))
            .collect()
    }

    #[test]
    fn lr_schedule_shapes() {
        let cfg = TrainConfig {
            total_steps: 100,
            warmup_frac: 0.1,
            peak_lr: 1.0,
            lr_schedule: LrSchedule::Cosine,
            ..TrainConfig::default()
        };
        assert!((cfg.lr_at(0) - 0.1).abs() < 1e-12);
        assert!((cfg.lr_at(9) - 1.0).abs() < 1e-12);
        assert!((cfg.lr_at(10) - 1.0).abs() < 1e-12);
        assert!(cfg.lr_at(55) < 1.0);
        assert!(cfg.lr_at(99) < 0.01);
        let constant = TrainConfig {
            lr_schedule: LrSchedule::Constant,
            ..cfg
        };
        assert!((constant.lr_at(99) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = TrainConfig::default();
        cfg.warmup_frac = 1.0;
        assert!(cfg.validate().is_err());
        cfg.warmup_frac = 0.05;
        cfg.noise_aug_sigma = -0.1;
        assert!(cfg.validate().is_err());
        cfg.noise_aug_sigma = 0.1;
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn diffusion_overfits_a_single_sequence() {
        let mut corpus = markov_corpus(5, 1, 10, 3);
        corpus.sequences.truncate(1);
        let table = table_for(&corpus, 8, 11);
        let schedule = NoiseSchedule::default();
        let cfg = TrainConfig {
            batch_size: 4,
            total_steps: 2000,
            warmup_frac: 0.05,
            peak_lr: 3e-3,
            weight_decay: 0.0,
            grad_clip: 1.0,
            seed: 5,
            noise_aug_sigma: 0.0,
            lr_schedule: LrSchedule::Cosine,
            weighting: LossWeighting::Constant,
        };
        let (_, curve) = train_diffusion(
            &corpus,
            &table,
            &schedule,
            &small_denoiser_cfg(8, 10),
            &cfg,
        )
        .unwrap();
        let initial: f64 = curve[..20].iter().map(|c| c.loss).sum::<f64>() / 20.0;
        let last: f64 = curve[curve.len() - 20..].iter().map(|c| c.loss).sum::<f64>() / 20.0;
        assert!(
            last < 0.1 * initial,
            "initial {initial:.4}, final {last:.4}"
        );
    }

    #[test]
    fn zero_learning_rate_freezes_weights() {
        let corpus = markov_corpus(4, 8, 8, 1);
        let table = table_for(&corpus, 4, 2);
        let schedule = NoiseSchedule::default();
        let cfg = TrainConfig {
            batch_size: 2,
            total_steps: 5,
            peak_lr: 0.0,
            weight_decay: 0.0,
            seed: 9,
            ..TrainConfig::default()
        };
        let net_cfg = DenoiserConfig {
            max_len: 8,
            dim: 4,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
        };
        let (net, _) = train_diffusion(&corpus, &table, &schedule, &net_cfg, &cfg).unwrap();
        let fresh = DenoiserNet::new(net_cfg, &mut rng_from_seed(child_seed(9, 0))).unwrap();
        let trained = snapshot(&net.named_params());
        let initial = snapshot(&fresh.named_params());
        assert_eq!(trained, initial);
    }

    #[test]
    fn same_seed_reproduces_the_run_bitwise() {
        let corpus = markov_corpus(4, 12, 8, 2);
        let table = table_for(&corpus, 4, 3);
        let schedule = NoiseSchedule::default();
        let cfg = TrainConfig {
            batch_size: 3,
            total_steps: 30,
            seed: 17,
            ..TrainConfig::default()
        };
        let net_cfg = DenoiserConfig {
            max_len: 8,
            dim: 4,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
        };
        let (net_a, curve_a) = train_diffusion(&corpus, &table, &schedule, &net_cfg, &cfg).unwrap();
        let (net_b, curve_b) = train_diffusion(&corpus, &table, &schedule, &net_cfg, &cfg).unwrap();
        let losses_a: Vec<f64> = curve_a.iter().map(|c| c.loss).collect();
        let losses_b: Vec<f64> = curve_b.iter().map(|c| c.loss).collect();
        assert_eq!(losses_a, losses_b);
        assert_eq!(snapshot(&net_a.named_params()), snapshot(&net_b.named_params()));
    }

    #[test]
    fn embedding_table_is_untouched_by_training() {
        let corpus = agreement_corpus(4, 16, 8, 4);
        let table = table_for(&corpus, 6, 5);
        let rows_before = table.rows();
        let scale_before = table.scale();

        let cfg = TrainConfig {
            batch_size: 4,
            total_steps: 12,
            seed: 6,
            ..TrainConfig::default()
        };
        let schedule = NoiseSchedule::default();
        let net_cfg = DenoiserConfig {
            max_len: 8,
            dim: 6,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
        };
        train_diffusion(&corpus, &table, &schedule, &net_cfg, &cfg).unwrap();
        let dec_cfg = small_decoder_cfg(corpus.tokenizer.vocab_size(), 8, true, 6);
        train_decoder(&corpus, &table, &dec_cfg, &cfg).unwrap();
        train_linear_head(&corpus, &table, &cfg, 0.2).unwrap();

        assert_eq!(table.rows(), rows_before);
        assert_eq!(table.scale(), scale_before);
    }

    #[test]
    fn decoder_initial_loss_is_log_vocab() {
        let corpus = markov_corpus(5, 16, 10, 7);
        let vocab = corpus.tokenizer.vocab_size();
        let table = table_for(&corpus, 6, 8);
        let cfg = TrainConfig {
            batch_size: 4,
            total_steps: 1,
            peak_lr: 0.0,
            weight_decay: 0.0,
            seed: 10,
            ..TrainConfig::default()
        };
        let dec_cfg = small_decoder_cfg(vocab, 10, true, 6);
        let (_, curve) = train_decoder(&corpus, &table, &dec_cfg, &cfg).unwrap();
        let want = (vocab as f64).ln();
        assert!(
            (curve[0].loss - want).abs() / want < 0.10,
            "initial loss {} vs ln|V| {}",
            curve[0].loss,
            want
        );
    }

    #[test]
    fn decoder_masters_a_copy_corpus_with_clean_memory() {
        let corpus = agreement_corpus(4, 64, 10, 12);
        let vocab = corpus.tokenizer.vocab_size();
        let table = table_for(&corpus, 8, 13);
        let cfg = TrainConfig {
            batch_size: 8,
            total_steps: 700,
            peak_lr: 2e-3,
            weight_decay: 0.01,
            seed: 14,
            noise_aug_sigma: 0.0,
            ..TrainConfig::default()
        };
        let dec_cfg = small_decoder_cfg(vocab, 10, true, 8);
        let (dec, curve) = train_decoder(&corpus, &table, &dec_cfg, &cfg).unwrap();

        // teacher-forced accuracy over content targets
        let mut hits = 0usize;
        let mut total = 0usize;
        for tokens in &corpus.sequences {
            let memory = table.embed(tokens).unwrap();
            let logits = dec
                .forward_teacher(&tokens[..tokens.len() - 1], Some(&memory))
                .unwrap()
                .to_vec();
            for (r, &target) in tokens[1..].iter().enumerate() {
                if target == PAD {
                    continue;
                }
                let row = &logits[r * vocab..(r + 1) * vocab];
                let pred = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(k, _)| k as u32)
                    .unwrap();
                total += 1;
                if pred == target {
                    hits += 1;
                }
            }
        }
        let acc = hits as f64 / total as f64;
        assert!(acc >= 0.99, "teacher-forced accuracy {acc:.4}");

        // loss is nonincreasing across 100-step moving averages
        let ma = |range: std::ops::Range<usize>| -> f64 {
            curve[range.clone()].iter().map(|c| c.loss).sum::<f64>() / range.len() as f64
        };
        let early = ma(0..100);
        let mid = ma(300..400);
        let late = ma(600..700);
        assert!(early >= mid && mid >= late, "{early} {mid} {late}");
    }

    #[test]
    fn noise_augmentation_buys_robustness() {
        let corpus = markov_corpus(6, 96, 10, 20);
        let vocab = corpus.tokenizer.vocab_size();
        let table = table_for(&corpus, 6, 21);
        let sigma_eval = 0.8;
        let dec_cfg = small_decoder_cfg(vocab, 10, true, 6);

        let train_with = |sigma: f64| {
            let cfg = TrainConfig {
                batch_size: 8,
                total_steps: 500,
                peak_lr: 2e-3,
                weight_decay: 0.01,
                seed: 22,
                noise_aug_sigma: sigma,
                ..TrainConfig::default()
            };
            train_decoder(&corpus, &table, &dec_cfg, &cfg).unwrap().0
        };
        let robust = train_with(sigma_eval);
        let brittle = train_with(0.0);

        let accuracy = |dec: &ARDecoder| -> f64 {
            let mut rng = rng_from_seed(500);
            let mut hits = 0usize;
            let mut total = 0usize;
            for tokens in corpus.sequences.iter().take(32) {
                let noisy = perturb(&table.embed(tokens).unwrap(), sigma_eval, &mut rng);
                let logits = dec
                    .forward_teacher(&tokens[..tokens.len() - 1], Some(&noisy))
                    .unwrap()
                    .to_vec();
                for (r, &target) in tokens[1..].iter().enumerate() {
                    if target == PAD {
                        continue;
                    }
                    let row = &logits[r * vocab..(r + 1) * vocab];
                    let pred = row
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.total_cmp(b.1))
                        .map(|(k, _)| k as u32)
                        .unwrap();
                    total += 1;
                    if pred == target {
                        hits += 1;
                    }
                }
            }
            hits as f64 / total as f64
        };
        let acc_robust = accuracy(&robust);
        let acc_brittle = accuracy(&brittle);
        assert!(
            acc_robust > acc_brittle,
            "robust {acc_robust:.4} vs brittle {acc_brittle:.4}"
        );
    }

    #[test]
    fn linear_head_recovers_clean_separable_embeddings() {
        let corpus = markov_corpus(5, 48, 10, 30);
        let table = table_for(&corpus, 16, 31);
        let cfg = TrainConfig {
            batch_size: 8,
            total_steps: 400,
            peak_lr: 5e-3,
            weight_decay: 0.0,
            seed: 32,
            ..TrainConfig::default()
        };
        let (head, _) = train_linear_head(&corpus, &table, &cfg, 0.0).unwrap();
        let vocab = table.vocab_size();
        let mut hits = 0usize;
        let mut total = 0usize;
        for tokens in &corpus.sequences {
            let x = table.embed(tokens).unwrap();
            let logits = head.predict(&x).unwrap().to_vec();
            for (i, &target) in tokens.iter().enumerate() {
                let row = &logits[i * vocab..(i + 1) * vocab];
                let pred = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(k, _)| k as u32)
                    .unwrap();
                total += 1;
                if pred == target {
                    hits += 1;
                }
            }
        }
        let rate = hits as f64 / total as f64;
        assert!(rate >= 0.99, "clean recovery {rate:.4}");
    }

    #[test]
    fn tiny_width_caps_linear_recovery() {
        // 60 crowded classes in a 2-d embedding under noise
        let corpus = markov_corpus(57, 64, 10, 40);
        let table = table_for(&corpus, 2, 41);
        let cfg = TrainConfig {
            batch_size: 8,
            total_steps: 300,
            peak_lr: 5e-3,
            seed: 42,
            ..TrainConfig::default()
        };
        let (head, _) = train_linear_head(&corpus, &table, &cfg, 0.1).unwrap();
        let vocab = table.vocab_size();
        let mut rng = rng_from_seed(43);
        let mut hits = 0usize;
        let mut total = 0usize;
        for tokens in corpus.sequences.iter().take(32) {
            let x = perturb(&table.embed(tokens).unwrap(), 0.1, &mut rng);
            let logits = head.predict(&x).unwrap().to_vec();
            for (i, &target) in tokens.iter().enumerate() {
                let row = &logits[i * vocab..(i + 1) * vocab];
                let pred = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(k, _)| k as u32)
                    .unwrap();
                total += 1;
                if pred == target {
                    hits += 1;
                }
            }
        }
        let rate = hits as f64 / total as f64;
        assert!(rate < 0.7, "rate {rate:.4} should be capacity-limited");
    }

    #[test]
    fn untrained_head_sits_at_chance() {
        let corpus = markov_corpus(47, 16, 10, 50);
        let table = table_for(&corpus, 8, 51);
        let head = LinearHead::new(8, table.vocab_size(), &mut rng_from_seed(52));
        let vocab = table.vocab_size();
        let mut hits = 0usize;
        let mut total = 0usize;
        for tokens in &corpus.sequences {
            let x = table.embed(tokens).unwrap();
            let logits = head.predict(&x).unwrap().to_vec();
            for (i, &target) in tokens.iter().enumerate() {
                let row = &logits[i * vocab..(i + 1) * vocab];
                let pred = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(k, _)| k as u32)
                    .unwrap();
                total += 1;
                if pred == target {
                    hits += 1;
                }
            }
        }
        let rate = hits as f64 / total as f64;
        // chance is 1/50; allow generous slack
        assert!(rate < 0.1, "untrained rate {rate:.4}");
    }

    #[test]
    fn recovery_experiment_prefers_the_sequence_reader() {
        let corpus = agreement_corpus(24, 600, 12, 60);
        let dec_template = small_decoder_cfg(0, 0, true, 0);
        let cfg = TrainConfig {
            batch_size: 8,
            total_steps: 2500,
            peak_lr: 3e-3,
            weight_decay: 0.01,
            seed: 61,
            ..TrainConfig::default()
        };
        let style = TableStyle::Clustered { group: 2, within: 0.15 };
        let rows = token_recovery_experiment(&[8], 0.5, &corpus, style, &dec_template, &cfg).unwrap();
        assert_eq!(rows.len(), 1);
        let row = &rows[0];
        assert!(
            row.ar_rate >= row.linear_rate + 0.03,
            "ar {:.4} vs linear {:.4}",
            row.ar_rate,
            row.linear_rate
        );
        assert!(row.clean_linear_rate > row.linear_rate);
        assert!(
            token_recovery_experiment(&[], 0.5, &corpus, style, &dec_template, &cfg).is_err()
        );
    }

    #[test]
    fn clean_separable_case_closes_the_recovery_gap() {
        let corpus = agreement_corpus(5, 400, 12, 70);
        let dec_template = small_decoder_cfg(0, 0, true, 0);
        let cfg = TrainConfig {
            batch_size: 8,
            total_steps: 1200,
            peak_lr: 3e-3,
            weight_decay: 0.01,
            seed: 71,
            ..TrainConfig::default()
        };
        let rows =
            token_recovery_experiment(&[16], 0.0, &corpus, TableStyle::Spread, &dec_template, &cfg)
                .unwrap();
        let row = &rows[0];
        assert!(row.linear_rate >= 0.99, "linear {:.4}", row.linear_rate);
        assert!(row.ar_rate >= 0.99, "ar {:.4}", row.ar_rate);
    }

    #[test]
    fn judge_scores_its_own_samples_like_held_out_text() {
        let corpus = markov_corpus(5, 600, 12, 80);
        let (train_split, held_out) = crate::corpus::split(&corpus, (0.8, 0.2), 81).unwrap();
        let vocab = corpus.tokenizer.vocab_size();
        let table = table_for(&corpus, 4, 82);
        let cfg = TrainConfig {
            batch_size: 16,
            total_steps: 800,
            peak_lr: 2e-3,
            weight_decay: 0.01,
            seed: 83,
            ..TrainConfig::default()
        };
        let lm_cfg = small_decoder_cfg(vocab, 12, false, 0);
        let (lm, _) = train_decoder(&train_split, &table, &lm_cfg, &cfg).unwrap();
        let judge = OracleLM::new(lm).unwrap();

        let held_ppl = judge.corpus_ppl(&held_out.sequences).unwrap();

        let mut rng = rng_from_seed(84);
        let decoded: Vec<Vec<u32>> = (0..150)
            .map(|_| judge.decoder().decode(None, 1.0, &mut rng, 12).unwrap())
            .collect();
        let samples = SampleSet::from_decoded(&decoded).unwrap();
        let self_ppl = generative_ppl(&samples, &judge).unwrap();

        assert!(
            (self_ppl - held_ppl).abs() / held_ppl <= 0.20,
            "self {self_ppl:.3} vs held-out {held_ppl:.3}"
        );
    }

    #[test]
    fn degenerate_and_random_probes_bracket_the_judge() {
        let corpus = markov_corpus(5, 600, 12, 90);
        let vocab = corpus.tokenizer.vocab_size();
        let table = table_for(&corpus, 4, 91);
        let cfg = TrainConfig {
            batch_size: 16,
            total_steps: 800,
            peak_lr: 2e-3,
            weight_decay: 0.01,
            seed: 92,
            ..TrainConfig::default()
        };
        let lm_cfg = small_decoder_cfg(vocab, 12, false, 0);
        let (lm, _) = train_decoder(&corpus, &table, &lm_cfg, &cfg).unwrap();
        let judge = OracleLM::new(lm).unwrap();

        // pick the most self-loop-friendly token from the exact chain
        let matrix = crate::corpus::markov_transition_matrix(5, child_seed(90, 0));
        let best = (0..5)
            .max_by(|&i, &j| matrix[i * 5 + i].total_cmp(&matrix[j * 5 + j]))
            .unwrap() as u32
            + 3;
        let repeated = SampleSet::new(vec![vec![best; 10]; 20]).unwrap();
        let rep_div = ngram_diversity(&repeated).unwrap();
        let rep_ppl = generative_ppl(&repeated, &judge).unwrap();

        let mut rng = rng_from_seed(93);
        let random_set = SampleSet::new(
            (0..20)
                .map(|_| (0..10).map(|_| 3 + rng.random_range(0..5u32)).collect())
                .collect(),
        )
        .unwrap();
        let rand_div = ngram_diversity(&random_set).unwrap();
        let rand_ppl = generative_ppl(&random_set, &judge).unwrap();

        // repetition: low diversity and cheaper than noise tokens; a
        // 5-letter alphabet caps absolute diversity (25 bigrams total),
        // so the random probe is judged relative to the repeated one
        assert!(rep_div < 1e-4, "repetition diversity {rep_div:.6}");
        assert!(rand_div > 100.0 * rep_div, "random diversity {rand_div:.4} vs {rep_div:.6}");
        assert!(
            rep_ppl < rand_ppl,
            "repetition {rep_ppl:.3} vs random {rand_ppl:.3}"
        );
        // uniform noise costs about the vocabulary size
        assert!(
            rand_ppl >= vocab as f64 / 2.0 && rand_ppl <= vocab as f64 * 2.0,
            "random ppl {rand_ppl:.3} vs |V| {vocab}"
        );
    }
}
