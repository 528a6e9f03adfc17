use std::path::{Path, PathBuf};

use diffdec_core::corpus::{build_corpus, Tokenizer};
use diffdec_core::diffusion::NoiseSchedule;
use diffdec_core::metrics::{generative_ppl, ngram_diversity, OracleLM, SampleSet};
use diffdec_core::nets::{ARDecoder, DenoiserNet, LinearHead};
use diffdec_core::oracle::JointDistribution;
use diffdec_core::rng::{child_seed, rng_from_seed};
use diffdec_core::sampler::{sample, SamplerConfig, Solver};
use diffdec_core::train::{
    token_recovery_experiment, train_decoder, train_diffusion, train_linear_head,
};

use crate::checkpoint::{
    install_params, load_checkpoint, save_checkpoint, CheckpointMeta, LoadedCheckpoint, ModelKind,
};
use crate::config::RunConfig;
use crate::corpus_file;
use crate::error::{CliError, Result};
use crate::reports::{
    append_metrics_row, write_curve_csv, write_oracle_csv, write_recovery_csv, MetricsRow,
    OracleRow,
};

pub fn parse_solver(s: &str) -> Result<Solver> {
    match s {
        "ancestral" => Ok(Solver::Ancestral),
        "dpm1" => Ok(Solver::Dpm1),
        "dpm2" => Ok(Solver::Dpm2),
        other => Err(CliError::Usage(format!(
            "unknown solver {other:?} (expected ancestral, dpm1, or dpm2)"
        ))),
    }
}

pub fn parse_d_list(s: &str) -> Result<Vec<usize>> {
    let ds: std::result::Result<Vec<usize>, _> =
        s.split(',').map(|p| p.trim().parse::<usize>()).collect();
    match ds {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(CliError::Usage(format!(
            "d-list {s:?} must be comma-separated positive integers"
        ))),
    }
}

fn curve_path(out: &Path) -> PathBuf {
    out.with_extension("curve.csv")
}

fn metrics_path(out: &Path) -> PathBuf {
    out.with_extension("metrics.csv")
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into())
}

pub fn cmd_train_diffusion(config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let run = RunConfig::load(config, seed)?;
    let r = run.resolve()?;
    let (net, curve) = train_diffusion(
        &r.train_split,
        &r.table,
        &r.schedule,
        &r.denoiser_cfg,
        &run.train,
    )?;
    let meta = CheckpointMeta {
        model: ModelKind::Denoiser,
        chars: r.corpus.tokenizer.chars(),
        run: run.clone(),
    };
    save_checkpoint(out, &meta, run.train.seed, &net.named_params())?;
    write_curve_csv(&curve_path(out), &curve)?;
    let last = curve.last().map(|p| p.loss).unwrap_or(f64::NAN);
    println!(
        "trained denoiser for {} steps (final loss {last:.4}); checkpoint {}",
        run.train.total_steps,
        out.display()
    );
    Ok(())
}

pub fn cmd_train_decoder(config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let run = RunConfig::load(config, seed)?;
    let r = run.resolve()?;
    // the cross-attending rounder learns on the train split; a plain LM
    // is a fluency judge and must stay disjoint from the generator's data
    let data = if run.decoder.cross_attention {
        &r.train_split
    } else {
        &r.held_out
    };
    let (net, curve) = train_decoder(data, &r.table, &r.decoder_cfg, &run.train)?;
    let meta = CheckpointMeta {
        model: ModelKind::Decoder,
        chars: r.corpus.tokenizer.chars(),
        run: run.clone(),
    };
    save_checkpoint(out, &meta, run.train.seed, &net.named_params())?;
    write_curve_csv(&curve_path(out), &curve)?;
    let last = curve.last().map(|p| p.loss).unwrap_or(f64::NAN);
    println!(
        "trained {} for {} steps (final loss {last:.4}); checkpoint {}",
        if run.decoder.cross_attention { "rounding decoder" } else { "language model" },
        run.train.total_steps,
        out.display()
    );
    Ok(())
}

pub fn cmd_train_linear(config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let run = RunConfig::load(config, seed)?;
    let r = run.resolve()?;
    let (head, curve) = train_linear_head(&r.train_split, &r.table, &run.train, run.train.noise_aug_sigma)?;
    let meta = CheckpointMeta {
        model: ModelKind::Linear,
        chars: r.corpus.tokenizer.chars(),
        run: run.clone(),
    };
    save_checkpoint(out, &meta, run.train.seed, &head.named_params())?;
    write_curve_csv(&curve_path(out), &curve)?;
    let last = curve.last().map(|p| p.loss).unwrap_or(f64::NAN);
    println!(
        "trained linear readout for {} steps (final loss {last:.4}); checkpoint {}",
        run.train.total_steps,
        out.display()
    );
    Ok(())
}

pub struct LoadedDenoiser {
    pub meta: CheckpointMeta,
    pub net: DenoiserNet,
}

pub struct LoadedDecoder {
    pub meta: CheckpointMeta,
    pub net: ARDecoder,
}

pub struct LoadedLinear {
    pub meta: CheckpointMeta,
    pub head: LinearHead,
}

fn expect_kind(lc: &LoadedCheckpoint, want: ModelKind, path: &Path) -> Result<()> {
    if lc.meta.model != want {
        return Err(CliError::Usage(format!(
            "{} holds a {} model, expected a {want}",
            path.display(),
            lc.meta.model
        )));
    }
    Ok(())
}

fn vocab_of(meta: &CheckpointMeta) -> usize {
    meta.chars.chars().count() + 3
}

pub fn load_denoiser(path: &Path) -> Result<LoadedDenoiser> {
    let lc = load_checkpoint(path)?;
    expect_kind(&lc, ModelKind::Denoiser, path)?;
    let cfg = lc.meta.run.denoiser_cfg_for(lc.meta.run.corpus.seq_len);
    let net = DenoiserNet::new(cfg, &mut rng_from_seed(0))?;
    install_params(&net.named_params(), &lc.tensors)?;
    Ok(LoadedDenoiser { meta: lc.meta, net })
}

pub fn load_decoder(path: &Path) -> Result<LoadedDecoder> {
    let lc = load_checkpoint(path)?;
    expect_kind(&lc, ModelKind::Decoder, path)?;
    let cfg = lc
        .meta
        .run
        .decoder_cfg_for(vocab_of(&lc.meta), lc.meta.run.corpus.seq_len);
    let net = ARDecoder::new(cfg, &mut rng_from_seed(0))?;
    install_params(&net.named_params(), &lc.tensors)?;
    Ok(LoadedDecoder { meta: lc.meta, net })
}

pub fn load_linear(path: &Path) -> Result<LoadedLinear> {
    let lc = load_checkpoint(path)?;
    expect_kind(&lc, ModelKind::Linear, path)?;
    let head = LinearHead::new(lc.meta.run.table.dim, vocab_of(&lc.meta), &mut rng_from_seed(0));
    install_params(&head.named_params(), &lc.tensors)?;
    Ok(LoadedLinear { meta: lc.meta, head })
}

fn ensure_compatible(a: &CheckpointMeta, b: &CheckpointMeta) -> Result<()> {
    if a.run.table.dim != b.run.table.dim {
        return Err(CliError::Usage(format!(
            "checkpoint mismatch: embedding width {} vs {}",
            a.run.table.dim, b.run.table.dim
        )));
    }
    if a.run.corpus.seq_len != b.run.corpus.seq_len {
        return Err(CliError::Usage(format!(
            "checkpoint mismatch: sequence length {} vs {}",
            a.run.corpus.seq_len, b.run.corpus.seq_len
        )));
    }
    if a.chars != b.chars {
        return Err(CliError::Usage(format!(
            "checkpoint mismatch: vocabulary size {} vs {}",
            vocab_of(a),
            vocab_of(b)
        )));
    }
    // same corpus spec and table style imply the same frozen table
    if serde_json::to_string(&a.run.corpus)? != serde_json::to_string(&b.run.corpus)? {
        return Err(CliError::Usage(
            "checkpoint mismatch: corpus spec differs".into(),
        ));
    }
    if serde_json::to_string(&a.run.table)? != serde_json::to_string(&b.run.table)? {
        return Err(CliError::Usage(
            "checkpoint mismatch: embedding table differs".into(),
        ));
    }
    Ok(())
}

pub struct SampleArgs {
    pub denoiser: PathBuf,
    pub decoder: PathBuf,
    pub judge: Option<PathBuf>,
    pub solver: String,
    pub steps: usize,
    pub temperature: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn cmd_sample(args: &SampleArgs) -> Result<()> {
    let solver = parse_solver(&args.solver)?;
    if args.n_samples == 0 {
        return Err(CliError::Usage("n-samples must be positive".into()));
    }
    let den = load_denoiser(&args.denoiser)?;
    let dec = load_decoder(&args.decoder)?;
    ensure_compatible(&den.meta, &dec.meta)?;
    if !dec.meta.run.decoder.cross_attention {
        return Err(CliError::Usage(
            "decoder checkpoint was trained without cross-attention and cannot round embeddings"
                .into(),
        ));
    }
    let judge = match &args.judge {
        Some(p) => {
            let j = load_decoder(p)?;
            if j.meta.chars != den.meta.chars {
                return Err(CliError::Usage(
                    "checkpoint mismatch: judge vocabulary differs".into(),
                ));
            }
            Some(OracleLM::new(j.net)?)
        }
        None => None,
    };

    let schedule = NoiseSchedule::new(den.meta.run.schedule_s)?;
    let seq_len = den.meta.run.corpus.seq_len;
    let dim = den.meta.run.table.dim;
    let settings = den.meta.run.sampler;
    let tokenizer = Tokenizer::from_chars(den.meta.chars.chars());

    let mut decoded = Vec::with_capacity(args.n_samples);
    for i in 0..args.n_samples {
        let mut cfg = SamplerConfig::new(solver, args.steps, child_seed(args.seed, 2 * i as u64));
        cfg.t_start = settings.t_start;
        cfg.t_end = settings.t_end;
        let x0 = sample(&den.net, &cfg, &schedule, seq_len, dim)?;
        let mut rng = rng_from_seed(child_seed(args.seed, 2 * i as u64 + 1));
        decoded.push(dec.net.decode(Some(&x0), args.temperature, &mut rng, seq_len)?);
    }

    let mut text = String::new();
    for tokens in &decoded {
        text.push_str(&tokenizer.detokenize(tokens));
        text.push('\n');
    }
    std::fs::write(&args.out, text)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", args.out.display())))?;

    let set = SampleSet::from_decoded(&decoded)?;
    let div = ngram_diversity(&set)?;
    let gen_ppl = match &judge {
        Some(j) => Some(generative_ppl(&set, j)?),
        None => None,
    };
    let row = MetricsRow {
        run_id: stem(&args.out),
        temperature: Some(args.temperature),
        solver: Some(args.solver.clone()),
        steps: Some(args.steps),
        div,
        gen_ppl,
        n_samples: args.n_samples,
    };
    append_metrics_row(&metrics_path(&args.out), &row)?;
    match gen_ppl {
        Some(p) => println!(
            "wrote {} samples to {} (Div {div:.4}, gen PPL {p:.3})",
            args.n_samples,
            args.out.display()
        ),
        None => println!(
            "wrote {} samples to {} (Div {div:.4}; no judge given, PPL skipped)",
            args.n_samples,
            args.out.display()
        ),
    }
    Ok(())
}

pub fn cmd_eval(
    samples: &Path,
    judge_path: &Path,
    run_id: Option<String>,
    out: &Path,
) -> Result<()> {
    let j = load_decoder(judge_path)?;
    let tokenizer = Tokenizer::from_chars(j.meta.chars.chars());
    let judge = OracleLM::new(j.net)?;
    let text = std::fs::read_to_string(samples)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", samples.display())))?;
    let mut seqs = Vec::new();
    for line in text.lines() {
        if !line.is_empty() {
            seqs.push(tokenizer.tokenize(line)?);
        }
    }
    let set = SampleSet::new(seqs)?;
    let div = ngram_diversity(&set)?;
    let ppl = generative_ppl(&set, &judge)?;
    let n = set.sequences().len();
    let row = MetricsRow {
        run_id: run_id.unwrap_or_else(|| stem(samples)),
        temperature: None,
        solver: None,
        steps: None,
        div,
        gen_ppl: Some(ppl),
        n_samples: n,
    };
    append_metrics_row(out, &row)?;
    println!("scored {n} samples: Div {div:.4}, gen PPL {ppl:.3}");
    Ok(())
}

/// Deterministic joints whose decomposition values are known exactly;
/// they exercise the pure-synergy and pure-locality corners.
fn hand_case_joints() -> Result<Vec<JointDistribution>> {
    let mut cases = Vec::new();
    // evidence pins the tokens: every term vanishes
    let mut determined = vec![0.0; 16];
    for x in 0..4 {
        determined[x * 4 + x] = 0.25;
    }
    cases.push(JointDistribution::new(2, 2, 2, determined)?);
    // independent uniform noise: gap is zero but entropies are maximal
    cases.push(JointDistribution::new(2, 2, 2, vec![1.0 / 16.0; 16])?);
    // blind evidence, perfectly coupled tokens: gap = TC = ln 2
    cases.push(JointDistribution::new(2, 1, 2, vec![0.5, 0.0, 0.0, 0.5])?);
    // each token is the other position's evidence: gap = locality = 2 ln 2
    let mut crossed = vec![0.0; 16];
    for x0 in 0..2 {
        for x1 in 0..2 {
            crossed[(x0 * 2 + x1) * 4 + (x1 * 2 + x0)] = 0.25;
        }
    }
    cases.push(JointDistribution::new(2, 2, 2, crossed)?);
    Ok(cases)
}

pub fn cmd_oracle(
    trials: usize,
    l_max: usize,
    a_max: usize,
    k_max: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    if l_max < 2 || a_max < 2 || k_max < 2 {
        return Err(CliError::Usage(
            "sweep bounds for positions, evidence, and tokens must be at least 2".into(),
        ));
    }
    let mut worst = 0.0f64;
    for joint in hand_case_joints()? {
        let report = joint.optimality_gap()?;
        worst = worst.max(report.max_residual);
    }
    let mut combos = Vec::new();
    for l in 2..=l_max {
        for a in 2..=a_max {
            for k in 2..=k_max {
                combos.push((l, a, k));
            }
        }
    }
    let mut rows = Vec::with_capacity(trials);
    for i in 0..trials {
        let (l, a, k) = combos[i % combos.len()];
        let trial_seed = child_seed(seed, i as u64);
        let joint = JointDistribution::random(l, a, k, trial_seed)?;
        let report = joint.optimality_gap()?;
        worst = worst.max(report.max_residual);
        rows.push(OracleRow {
            seed: trial_seed,
            l,
            a,
            k,
            report,
        });
    }
    write_oracle_csv(out, &rows)?;
    println!(
        "verified {trials} random joints and {} pinned cases (max residual {worst:.3e})",
        hand_case_joints()?.len()
    );
    Ok(())
}

pub fn cmd_recover(
    config: &Path,
    d_list: &str,
    sigma: f64,
    seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let run = RunConfig::load(config, seed)?;
    let ds = parse_d_list(d_list)?;
    if sigma < 0.0 {
        return Err(CliError::Usage(format!("sigma {sigma} must be nonnegative")));
    }
    let corpus = build_corpus(&run.corpus)?;
    // width-independent template; the experiment fills per-width shapes
    let mut template = run.decoder_cfg_for(0, 0);
    template.cross_attention = true;
    let rows = token_recovery_experiment(
        &ds,
        sigma,
        &corpus,
        run.table.style,
        &template,
        &run.train,
    )?;
    write_recovery_csv(out, &rows)?;
    for r in &rows {
        println!(
            "d={}: linear {:.4}, contextual {:.4} (gap {:+.4})",
            r.d,
            r.linear_rate,
            r.ar_rate,
            r.ar_rate - r.linear_rate
        );
    }
    Ok(())
}

pub fn cmd_gen_corpus(config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut run = RunConfig::load(config, None)?;
    if let Some(s) = seed {
        run.corpus.seed = s;
    }
    let corpus = build_corpus(&run.corpus)?;
    corpus_file::write_corpus(out, &corpus)?;
    println!(
        "wrote {} sequences of length {} ({} alphabet characters) to {}",
        corpus.sequences.len(),
        corpus.seq_len,
        corpus.tokenizer.chars().chars().count(),
        out.display()
    );
    Ok(())
}
