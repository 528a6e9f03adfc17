use std::path::Path;

use diffdec_core::corpus::{build_corpus, split, Corpus, CorpusSpec};
use diffdec_core::diffusion::NoiseSchedule;
use diffdec_core::nets::{DecoderConfig, DenoiserConfig, EmbeddingTable, TableStyle};
use diffdec_core::rng::{child_seed, rng_from_seed};
use diffdec_core::sampler::Solver;
use diffdec_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

// Seed-stream tags hung off the corpus seed, so that separately trained
// artifacts from the same config share the table and the split.
const SPLIT_TAG: u64 = 11;
const TABLE_TAG: u64 = 12;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TableConfig {
    pub dim: usize,
    #[serde(flatten)]
    pub style: TableStyle,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecoderSettings {
    #[serde(flatten)]
    pub shape: ModelShape,
    /// true: rounding decoder cross-attending to embeddings, trained on
    /// the train split. false: plain language model trained on the
    /// held-out split, suitable as a fluency judge.
    #[serde(default = "default_true")]
    pub cross_attention: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSettings {
    pub solver: Solver,
    pub steps: usize,
    #[serde(default = "default_t_start")]
    pub t_start: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
}

fn default_t_start() -> f64 {
    1.0
}

fn default_t_end() -> f64 {
    1e-3
}

impl Default for SamplerSettings {
    fn default() -> SamplerSettings {
        SamplerSettings {
            solver: Solver::Dpm2,
            steps: 50,
            t_start: default_t_start(),
            t_end: default_t_end(),
        }
    }
}

fn default_split() -> (f64, f64) {
    (0.9, 0.1)
}

fn default_schedule_s() -> f64 {
    0.008
}

fn default_temperatures() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0]
}

/// Everything a run needs. A command is reproducible from this plus the
/// --seed override alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusSpec,
    #[serde(default = "default_split")]
    pub split: (f64, f64),
    pub table: TableConfig,
    #[serde(default = "default_schedule_s")]
    pub schedule_s: f64,
    pub denoiser: ModelShape,
    pub decoder: DecoderSettings,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sampler: SamplerSettings,
    #[serde(default = "default_temperatures")]
    pub temperatures: Vec<f64>,
}

/// Concrete artifacts a config expands to.
pub struct ResolvedRun {
    pub corpus: Corpus,
    pub train_split: Corpus,
    pub held_out: Corpus,
    pub table: EmbeddingTable,
    pub schedule: NoiseSchedule,
    pub denoiser_cfg: DenoiserConfig,
    pub decoder_cfg: DecoderConfig,
}

impl RunConfig {
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        if let Some(seed) = seed_override {
            cfg.train.seed = seed;
        }
        Ok(cfg)
    }

    /// Shape of the decoder implied by corpus and table dimensions.
    pub fn decoder_cfg_for(&self, vocab_size: usize, seq_len: usize) -> DecoderConfig {
        DecoderConfig {
            vocab_size,
            max_len: seq_len,
            d_model: self.decoder.shape.d_model,
            n_layers: self.decoder.shape.n_layers,
            n_heads: self.decoder.shape.n_heads,
            d_ff: self.decoder.shape.d_ff,
            cross_attention: self.decoder.cross_attention,
            mem_len: seq_len,
            mem_dim: self.table.dim,
        }
    }

    pub fn denoiser_cfg_for(&self, seq_len: usize) -> DenoiserConfig {
        DenoiserConfig {
            max_len: seq_len,
            dim: self.table.dim,
            d_model: self.denoiser.d_model,
            n_layers: self.denoiser.n_layers,
            n_heads: self.denoiser.n_heads,
            d_ff: self.denoiser.d_ff,
        }
    }

    pub fn resolve(&self) -> Result<ResolvedRun> {
        let corpus = build_corpus(&self.corpus)?;
        let (train_split, held_out) =
            split(&corpus, self.split, child_seed(self.corpus.seed, SPLIT_TAG))?;
        let vocab = corpus.tokenizer.vocab_size();
        let table = EmbeddingTable::build(
            self.table.style,
            vocab,
            self.table.dim,
            &mut rng_from_seed(child_seed(self.corpus.seed, TABLE_TAG)),
        )?;
        let schedule = NoiseSchedule::new(self.schedule_s)?;
        let denoiser_cfg = self.denoiser_cfg_for(corpus.seq_len);
        let decoder_cfg = self.decoder_cfg_for(vocab, corpus.seq_len);
        Ok(ResolvedRun {
            train_split,
            held_out,
            table,
            schedule,
            denoiser_cfg,
            decoder_cfg,
            corpus,
        })
    }
}
