//! The learned components: a bidirectional transformer denoiser
//! conditioned on diffusion time, an autoregressive decoder with
//! optional cross-attention over a continuous memory, a pointwise
//! linear readout baseline, and the frozen normalized embedding table
//! that maps tokens into the diffusion space.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::diffusion::{DiffusionError, EmbeddingSequence};
use crate::sampler::{Denoiser, SamplerError};
use crate::tensor::{NamedParams, Tensor, TensorError};

pub use crate::corpus::{BOS, EOS, PAD};

#[derive(Debug, Error)]
pub enum NetsError {
    #[error("net config: {reason}")]
    Config { reason: String },
    #[error("sequence length {len} exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty token sequence")]
    EmptySequence,
    #[error("diffusion time {t} outside [0, 1]")]
    BadTime { t: f64 },
    #[error("memory given to a decoder built without cross-attention")]
    MemoryUnsupported,
    #[error("memory shape {got_len}x{got_dim} does not match decoder ({want_len}x{want_dim})")]
    MemoryShape {
        got_len: usize,
        got_dim: usize,
        want_len: usize,
        want_dim: usize,
    },
    #[error("temperature {t} must be nonnegative")]
    NegativeTemperature { t: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

pub type Result<T> = std::result::Result<T, NetsError>;

fn randn_vec(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f32> {
    (0..n)
        .map(|_| (rng.sample::<f64, _>(StandardNormal) * std) as f32)
        .collect()
}

/// Affine map with graph-recorded parameters.
struct Linear {
    w: Tensor,
    b: Tensor,
}

impl Linear {
    /// `std = 0` gives an exactly-zero map (used for output layers that
    /// must start silent).
    fn new(d_in: usize, d_out: usize, std: f64, rng: &mut ChaCha8Rng) -> Linear {
        let w = Tensor::param(randn_vec(rng, d_in * d_out, std), &[d_in, d_out])
            .expect("matching length");
        let b = Tensor::param(vec![0.0; d_out], &[d_out]).expect("matching length");
        Linear { w, b }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.w)?.add(&self.b)?)
    }

    fn collect(&self, prefix: &str, out: &mut NamedParams) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
    }
}

struct Attention {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    n_heads: usize,
    d_model: usize,
}

impl Attention {
    fn new(d_model: usize, n_heads: usize, rng: &mut ChaCha8Rng) -> Attention {
        Attention {
            wq: Linear::new(d_model, d_model, 0.02, rng),
            wk: Linear::new(d_model, d_model, 0.02, rng),
            wv: Linear::new(d_model, d_model, 0.02, rng),
            wo: Linear::new(d_model, d_model, 0.02, rng),
            n_heads,
            d_model,
        }
    }

    /// Scaled dot-product attention of `q_in` over `kv_in`; `mask` rows
    /// are added to the scores (0 to keep, large negative to forbid).
    fn forward(&self, q_in: &Tensor, kv_in: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let q = self.wq.forward(q_in)?;
        let k = self.wk.forward(kv_in)?;
        let v = self.wv.forward(kv_in)?;
        let dh = self.d_model / self.n_heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = q.slice(1, h * dh, dh)?;
            let kh = k.slice(1, h * dh, dh)?;
            let vh = v.slice(1, h * dh, dh)?;
            let mut scores = qh.matmul(&kh.transpose2()?)?.scale(scale)?;
            if let Some(m) = mask {
                scores = scores.add(m)?;
            }
            heads.push(scores.softmax_last()?.matmul(&vh)?);
        }
        let refs: Vec<&Tensor> = heads.iter().collect();
        self.wo.forward(&Tensor::concat(&refs, 1)?)
    }

    fn collect(&self, prefix: &str, out: &mut NamedParams) {
        self.wq.collect(&format!("{prefix}.wq"), out);
        self.wk.collect(&format!("{prefix}.wk"), out);
        self.wv.collect(&format!("{prefix}.wv"), out);
        self.wo.collect(&format!("{prefix}.wo"), out);
    }
}

struct FeedForward {
    l1: Linear,
    l2: Linear,
}

impl FeedForward {
    fn new(d_model: usize, d_ff: usize, rng: &mut ChaCha8Rng) -> FeedForward {
        FeedForward {
            l1: Linear::new(d_model, d_ff, 0.02, rng),
            l2: Linear::new(d_ff, d_model, 0.02, rng),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.l2.forward(&self.l1.forward(x)?.gelu()?)
    }

    fn collect(&self, prefix: &str, out: &mut NamedParams) {
        self.l1.collect(&format!("{prefix}.l1"), out);
        self.l2.collect(&format!("{prefix}.l2"), out);
    }
}

const LN_EPS: f32 = 1e-5;
/// Additive score for forbidden attention edges; exp() underflows to
/// exactly zero, so masked positions contribute nothing.
const MASK_NEG: f32 = -1e9;

fn causal_mask(n: usize) -> Tensor {
    let mut m = vec![0.0f32; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            m[i * n + j] = MASK_NEG;
        }
    }
    Tensor::from_vec(m, &[n, n]).expect("matching length")
}

/// Sinusoidal features of a continuous scalar time, log-spaced
/// frequencies, laid out [cos block | sin block].
fn time_features(t: f64, dim: usize) -> Vec<f32> {
    let half = dim / 2;
    let mut feats = vec![0.0f32; dim];
    for i in 0..half {
        let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
        let arg = t * 1000.0 * freq;
        feats[i] = arg.cos() as f32;
        feats[half + i] = arg.sin() as f32;
    }
    feats
}

fn check_net_dims(d_model: usize, n_heads: usize, n_layers: usize) -> Result<()> {
    if n_heads == 0 || n_layers == 0 || d_model == 0 {
        return Err(NetsError::Config {
            reason: "layers, heads, and width must all be positive".into(),
        });
    }
    if d_model % n_heads != 0 || d_model % 2 != 0 {
        return Err(NetsError::Config {
            reason: format!("d_model {d_model} must be even and divisible by {n_heads} heads"),
        });
    }
    Ok(())
}

/// How the frozen table's rows are laid out in embedding space.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "style", rename_all = "snake_case")]
pub enum TableStyle {
    /// Independent random directions: tokens are far apart and easy to
    /// tell apart pointwise.
    Spread,
    /// Content tokens come in tight groups around shared directions,
    /// imitating the crowded geometry of pretrained embeddings; special
    /// tokens stay isolated. `within` is the raw offset radius off the
    /// group center before normalization.
    Clustered { group: usize, within: f64 },
}

/// Frozen |V| x d token embedding: unit-norm rows, then one global scale
/// chosen so the pooled per-coordinate standard deviation over the
/// table is exactly 1.
pub struct EmbeddingTable {
    table: Tensor,
    scale: f64,
    vocab_size: usize,
    dim: usize,
}

impl EmbeddingTable {
    pub fn new(vocab_size: usize, dim: usize, rng: &mut ChaCha8Rng) -> Result<EmbeddingTable> {
        EmbeddingTable::build(TableStyle::Spread, vocab_size, dim, rng)
    }

    pub fn build(
        style: TableStyle,
        vocab_size: usize,
        dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<EmbeddingTable> {
        if vocab_size < 2 || dim == 0 {
            return Err(NetsError::Config {
                reason: format!("embedding table needs vocab >= 2 and dim >= 1, got {vocab_size}x{dim}"),
            });
        }
        let unit = |v: &mut [f32]| {
            let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
            for x in v {
                *x = (*x as f64 / norm) as f32;
            }
        };
        let mut rows = match style {
            TableStyle::Spread => randn_vec(rng, vocab_size * dim, 1.0),
            TableStyle::Clustered { group, within } => {
                if group == 0 || within < 0.0 {
                    return Err(NetsError::Config {
                        reason: format!("cluster group {group} and radius {within} invalid"),
                    });
                }
                let specials = 3.min(vocab_size);
                let mut rows = randn_vec(rng, specials * dim, 1.0);
                let content = vocab_size - specials;
                let mut center: Vec<f32> = Vec::new();
                for i in 0..content {
                    if i % group == 0 {
                        center = randn_vec(rng, dim, 1.0);
                        unit(&mut center);
                    }
                    let mut offset = randn_vec(rng, dim, 1.0);
                    unit(&mut offset);
                    rows.extend(
                        center
                            .iter()
                            .zip(&offset)
                            .map(|(&c, &o)| c + within as f32 * o),
                    );
                }
                rows
            }
        };
        for r in 0..vocab_size {
            unit(&mut rows[r * dim..(r + 1) * dim]);
        }
        let scale = 1.0 / pooled_coordinate_std(&rows, vocab_size, dim);
        Ok(EmbeddingTable {
            table: Tensor::from_vec(rows, &[vocab_size, dim])?,
            scale,
            vocab_size,
            dim,
        })
    }

    /// Rebuilds a table from stored rows and scale (checkpoint load).
    pub fn from_parts(rows: Vec<f32>, vocab_size: usize, dim: usize, scale: f64) -> Result<EmbeddingTable> {
        Ok(EmbeddingTable {
            table: Tensor::from_vec(rows, &[vocab_size, dim])?,
            scale,
            vocab_size,
            dim,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// The unit-row matrix, before the global scale.
    pub fn rows(&self) -> Vec<f32> {
        self.table.to_vec()
    }

    /// x0 = scaled table rows at the given ids.
    pub fn embed(&self, tokens: &[u32]) -> Result<EmbeddingSequence> {
        let looked = self.table.lookup(tokens)?.scale(self.scale as f32)?;
        Ok(EmbeddingSequence::from_tensor(&looked)?)
    }
}

/// sqrt of the mean per-coordinate variance over the table rows.
pub fn pooled_coordinate_std(rows: &[f32], n: usize, dim: usize) -> f64 {
    let mut total_var = 0.0f64;
    for j in 0..dim {
        let mut sum = 0.0f64;
        let mut sumsq = 0.0f64;
        for r in 0..n {
            let v = rows[r * dim + j] as f64;
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / n as f64;
        total_var += sumsq / n as f64 - mean * mean;
    }
    (total_var / dim as f64).sqrt()
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DenoiserConfig {
    pub max_len: usize,
    pub dim: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
}

struct DenoiserBlock {
    attn: Attention,
    ff: FeedForward,
    /// Maps the time vector to (scale1, shift1, scale2, shift2); starts
    /// at zero so every block begins as an unmodulated identity.
    ada: Linear,
}

/// Bidirectional transformer over noised embeddings, conditioned on the
/// diffusion time through per-block scale/shift modulation; predicts a
/// velocity field of the same shape as its input.
pub struct DenoiserNet {
    cfg: DenoiserConfig,
    input_proj: Linear,
    pos: Tensor,
    time_l1: Linear,
    time_l2: Linear,
    blocks: Vec<DenoiserBlock>,
    output_proj: Linear,
}

impl DenoiserNet {
    pub fn new(cfg: DenoiserConfig, rng: &mut ChaCha8Rng) -> Result<DenoiserNet> {
        check_net_dims(cfg.d_model, cfg.n_heads, cfg.n_layers)?;
        if cfg.max_len == 0 || cfg.dim == 0 {
            return Err(NetsError::Config {
                reason: "max_len and dim must be positive".into(),
            });
        }
        let input_proj = Linear::new(cfg.dim, cfg.d_model, 0.02, rng);
        let pos = Tensor::param(
            randn_vec(rng, cfg.max_len * cfg.d_model, 0.02),
            &[cfg.max_len, cfg.d_model],
        )?;
        let time_l1 = Linear::new(cfg.d_model, cfg.d_model, 0.02, rng);
        let time_l2 = Linear::new(cfg.d_model, cfg.d_model, 0.02, rng);
        let blocks = (0..cfg.n_layers)
            .map(|_| DenoiserBlock {
                attn: Attention::new(cfg.d_model, cfg.n_heads, rng),
                ff: FeedForward::new(cfg.d_model, cfg.d_ff, rng),
                ada: Linear::new(cfg.d_model, 4 * cfg.d_model, 0.0, rng),
            })
            .collect();
        // zero output keeps the initial velocity field identically zero
        let output_proj = Linear::new(cfg.d_model, cfg.dim, 0.0, rng);
        Ok(DenoiserNet {
            cfg,
            input_proj,
            pos,
            time_l1,
            time_l2,
            blocks,
            output_proj,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    /// Graph-building forward pass; `x_t` may require gradients.
    pub fn velocity_tensor(&self, x_t: &Tensor, t: f64) -> Result<Tensor> {
        let (len, dim) = match *x_t.shape() {
            [l, d] => (l, d),
            _ => {
                return Err(NetsError::Config {
                    reason: format!("denoiser input must be 2-d, got {:?}", x_t.shape()),
                })
            }
        };
        if dim != self.cfg.dim {
            return Err(NetsError::Config {
                reason: format!("denoiser built for dim {}, got {dim}", self.cfg.dim),
            });
        }
        if len > self.cfg.max_len {
            return Err(NetsError::SequenceTooLong {
                len,
                max: self.cfg.max_len,
            });
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(NetsError::BadTime { t });
        }

        let dm = self.cfg.d_model;
        let mut h = self
            .input_proj
            .forward(x_t)?
            .add(&self.pos.slice(0, 0, len)?)?;

        let tfeat = Tensor::from_vec(time_features(t, dm), &[1, dm])?;
        let tvec = self.time_l2.forward(&self.time_l1.forward(&tfeat)?.gelu()?)?;
        let one_row = Tensor::from_vec(vec![1.0; dm], &[1, dm])?;

        for block in &self.blocks {
            let modulation = block.ada.forward(&tvec)?; // [1, 4*dm]
            let gain1 = modulation.slice(1, 0, dm)?.add(&one_row)?;
            let shift1 = modulation.slice(1, dm, dm)?;
            let gain2 = modulation.slice(1, 2 * dm, dm)?.add(&one_row)?;
            let shift2 = modulation.slice(1, 3 * dm, dm)?;

            let a_in = h.layer_norm_last(LN_EPS)?.mul(&gain1)?.add(&shift1)?;
            h = h.add(&block.attn.forward(&a_in, &a_in, None)?)?;
            let f_in = h.layer_norm_last(LN_EPS)?.mul(&gain2)?.add(&shift2)?;
            h = h.add(&block.ff.forward(&f_in)?)?;
        }
        self.output_proj.forward(&h.layer_norm_last(LN_EPS)?)
    }

    pub fn named_params(&self) -> NamedParams {
        let mut out = NamedParams::new();
        self.input_proj.collect("input_proj", &mut out);
        out.push(("pos.table".into(), self.pos.clone()));
        self.time_l1.collect("time.l1", &mut out);
        self.time_l2.collect("time.l2", &mut out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.attn.collect(&format!("block{i}.attn"), &mut out);
            b.ada.collect(&format!("block{i}.ada"), &mut out);
            b.ff.collect(&format!("block{i}.ff"), &mut out);
        }
        self.output_proj.collect("output_proj", &mut out);
        out
    }
}

impl Denoiser for DenoiserNet {
    fn velocity(
        &self,
        x_t: &EmbeddingSequence,
        t: f64,
    ) -> std::result::Result<EmbeddingSequence, SamplerError> {
        let xt = x_t.to_tensor();
        let v = self
            .velocity_tensor(&xt, t)
            .map_err(|e| SamplerError::DenoiserFailure { message: e.to_string() })?;
        EmbeddingSequence::from_tensor(&v)
            .map_err(|e| SamplerError::DenoiserFailure { message: e.to_string() })
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DecoderConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub cross_attention: bool,
    /// Length and width of the continuous memory the decoder may attend
    /// over; unused when cross_attention is false.
    pub mem_len: usize,
    pub mem_dim: usize,
}

struct DecoderBlock {
    self_attn: Attention,
    cross_attn: Option<Attention>,
    ff: FeedForward,
}

/// Autoregressive token decoder: causal self-attention, optional
/// cross-attention over a projected continuous memory, and a
/// zero-initialized head (uniform logits at step zero).
pub struct ARDecoder {
    cfg: DecoderConfig,
    tok: Tensor,
    pos: Tensor,
    mem_proj: Option<Linear>,
    mem_pos: Option<Tensor>,
    blocks: Vec<DecoderBlock>,
    head: Linear,
}

impl ARDecoder {
    pub fn new(cfg: DecoderConfig, rng: &mut ChaCha8Rng) -> Result<ARDecoder> {
        check_net_dims(cfg.d_model, cfg.n_heads, cfg.n_layers)?;
        if cfg.vocab_size < 3 || cfg.max_len == 0 {
            return Err(NetsError::Config {
                reason: "decoder needs vocab >= 3 (specials) and max_len >= 1".into(),
            });
        }
        if cfg.cross_attention && (cfg.mem_len == 0 || cfg.mem_dim == 0) {
            return Err(NetsError::Config {
                reason: "cross-attention requires positive mem_len and mem_dim".into(),
            });
        }
        let tok = Tensor::param(
            randn_vec(rng, cfg.vocab_size * cfg.d_model, 0.02),
            &[cfg.vocab_size, cfg.d_model],
        )?;
        let pos = Tensor::param(
            randn_vec(rng, cfg.max_len * cfg.d_model, 0.02),
            &[cfg.max_len, cfg.d_model],
        )?;
        let (mem_proj, mem_pos) = if cfg.cross_attention {
            (
                Some(Linear::new(cfg.mem_dim, cfg.d_model, 0.02, rng)),
                Some(Tensor::param(
                    randn_vec(rng, cfg.mem_len * cfg.d_model, 0.02),
                    &[cfg.mem_len, cfg.d_model],
                )?),
            )
        } else {
            (None, None)
        };
        let blocks = (0..cfg.n_layers)
            .map(|_| DecoderBlock {
                self_attn: Attention::new(cfg.d_model, cfg.n_heads, rng),
                cross_attn: cfg
                    .cross_attention
                    .then(|| Attention::new(cfg.d_model, cfg.n_heads, rng)),
                ff: FeedForward::new(cfg.d_model, cfg.d_ff, rng),
            })
            .collect();
        let head = Linear::new(cfg.d_model, cfg.vocab_size, 0.0, rng);
        Ok(ARDecoder {
            cfg,
            tok,
            pos,
            mem_proj,
            mem_pos,
            blocks,
            head,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    fn encode_memory(&self, memory: &EmbeddingSequence) -> Result<Tensor> {
        let proj = self.mem_proj.as_ref().ok_or(NetsError::MemoryUnsupported)?;
        let mem_pos = self.mem_pos.as_ref().expect("paired with mem_proj");
        if memory.len() > self.cfg.mem_len || memory.dim() != self.cfg.mem_dim {
            return Err(NetsError::MemoryShape {
                got_len: memory.len(),
                got_dim: memory.dim(),
                want_len: self.cfg.mem_len,
                want_dim: self.cfg.mem_dim,
            });
        }
        Ok(proj
            .forward(&memory.to_tensor())?
            .add(&mem_pos.slice(0, 0, memory.len())?)?)
    }

    /// Logits for every position of `tokens` under teacher forcing:
    /// row i predicts the token after position i.
    pub fn forward_teacher(
        &self,
        tokens: &[u32],
        memory: Option<&EmbeddingSequence>,
    ) -> Result<Tensor> {
        if tokens.is_empty() {
            return Err(NetsError::EmptySequence);
        }
        if tokens.len() > self.cfg.max_len {
            return Err(NetsError::SequenceTooLong {
                len: tokens.len(),
                max: self.cfg.max_len,
            });
        }
        let t_len = tokens.len();
        let mem_enc = match memory {
            Some(m) => Some(self.encode_memory(m)?),
            None => None,
        };
        let mut h = self.tok.lookup(tokens)?.add(&self.pos.slice(0, 0, t_len)?)?;
        let mask = causal_mask(t_len);
        for block in &self.blocks {
            let a_in = h.layer_norm_last(LN_EPS)?;
            h = h.add(&block.self_attn.forward(&a_in, &a_in, Some(&mask))?)?;
            if let (Some(cross), Some(mem)) = (&block.cross_attn, &mem_enc) {
                let c_in = h.layer_norm_last(LN_EPS)?;
                h = h.add(&cross.forward(&c_in, mem, None)?)?;
            }
            let f_in = h.layer_norm_last(LN_EPS)?;
            h = h.add(&block.ff.forward(&f_in)?)?;
        }
        self.head.forward(&h.layer_norm_last(LN_EPS)?)
    }

    /// Next-token logits after the given prefix.
    pub fn decoder_logits(
        &self,
        prefix: &[u32],
        memory: Option<&EmbeddingSequence>,
    ) -> Result<Vec<f32>> {
        let logits = self.forward_teacher(prefix, memory)?;
        let v = self.cfg.vocab_size;
        Ok(logits.slice(0, prefix.len() - 1, 1)?.to_vec()[..v].to_vec())
    }

    /// Teacher-forced mean cross-entropy of `tokens` under this decoder;
    /// positions whose target is PAD are masked out of the mean.
    pub fn teacher_loss(
        &self,
        tokens: &[u32],
        memory: Option<&EmbeddingSequence>,
    ) -> Result<Tensor> {
        if tokens.len() < 2 {
            return Err(NetsError::EmptySequence);
        }
        let inputs = &tokens[..tokens.len() - 1];
        let targets = &tokens[1..];
        let weights: Vec<f32> = targets
            .iter()
            .map(|&t| if t == PAD { 0.0 } else { 1.0 })
            .collect();
        let logits = self.forward_teacher(inputs, memory)?;
        Ok(logits.cross_entropy_with_logits(targets, Some(&weights))?)
    }

    /// Greedy or temperature sampling until EOS or `max_len` tokens.
    /// The returned sequence includes the leading BOS (and EOS when
    /// reached). Temperature 0 is argmax and ignores the rng.
    pub fn decode(
        &self,
        memory: Option<&EmbeddingSequence>,
        temperature: f64,
        rng: &mut ChaCha8Rng,
        max_len: usize,
    ) -> Result<Vec<u32>> {
        if temperature < 0.0 {
            return Err(NetsError::NegativeTemperature { t: temperature });
        }
        let limit = max_len.min(self.cfg.max_len);
        let mut tokens = vec![BOS];
        while tokens.len() < limit {
            let logits = self.decoder_logits(&tokens, memory)?;
            let next = if temperature == 0.0 {
                argmax(&logits)
            } else {
                sample_softmax(&logits, temperature, rng)
            };
            tokens.push(next);
            if next == EOS {
                break;
            }
        }
        Ok(tokens)
    }

    pub fn named_params(&self) -> NamedParams {
        let mut out = NamedParams::new();
        out.push(("tok.table".into(), self.tok.clone()));
        out.push(("pos.table".into(), self.pos.clone()));
        if let (Some(proj), Some(mem_pos)) = (&self.mem_proj, &self.mem_pos) {
            proj.collect("mem_proj", &mut out);
            out.push(("mem_pos.table".into(), mem_pos.clone()));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            b.self_attn.collect(&format!("block{i}.self_attn"), &mut out);
            if let Some(c) = &b.cross_attn {
                c.collect(&format!("block{i}.cross_attn"), &mut out);
            }
            b.ff.collect(&format!("block{i}.ff"), &mut out);
        }
        self.head.collect("head", &mut out);
        out
    }
}

fn argmax(logits: &[f32]) -> u32 {
    let mut best = 0usize;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best as u32
}

fn sample_softmax(logits: &[f32], temperature: f64, rng: &mut ChaCha8Rng) -> u32 {
    let scaled: Vec<f64> = logits.iter().map(|&l| l as f64 / temperature).collect();
    let m = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scaled.iter().map(|&s| (s - m).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i as u32;
        }
    }
    (weights.len() - 1) as u32
}

/// Pointwise affine readout from embedding space to token logits; no
/// information flows between positions.
pub struct LinearHead {
    lin: Linear,
    dim: usize,
    vocab_size: usize,
}

impl LinearHead {
    pub fn new(dim: usize, vocab_size: usize, rng: &mut ChaCha8Rng) -> LinearHead {
        LinearHead {
            lin: Linear::new(dim, vocab_size, 0.02, rng),
            dim,
            vocab_size,
        }
    }

    pub fn predict(&self, x: &EmbeddingSequence) -> Result<Tensor> {
        if x.dim() != self.dim {
            return Err(NetsError::Config {
                reason: format!("linear head built for dim {}, got {}", self.dim, x.dim()),
            });
        }
        self.lin.forward(&x.to_tensor())
    }

    /// Positionwise cross-entropy against `targets`, PAD targets masked.
    pub fn loss(&self, x: &EmbeddingSequence, targets: &[u32]) -> Result<Tensor> {
        let weights: Vec<f32> = targets
            .iter()
            .map(|&t| if t == PAD { 0.0 } else { 1.0 })
            .collect();
        let logits = self.predict(x)?;
        Ok(logits.cross_entropy_with_logits(targets, Some(&weights))?)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn named_params(&self) -> NamedParams {
        let mut out = NamedParams::new();
        self.lin.collect("head", &mut out);
        out
    }
}
