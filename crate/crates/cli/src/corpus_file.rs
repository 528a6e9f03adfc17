use std::path::Path;

use diffdec_core::corpus::{Corpus, Tokenizer};

use crate::checkpoint::Reader;
use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"CTOK";
pub const VERSION: u32 = 1;

const MAX_CHARS: usize = 1 << 20;
const MAX_IDS: usize = 1 << 28;

/// Token file: magic, version, seq_len, sequence count, alphabet, then
/// the ids as 32-bit little-endian words, row-major.
pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    let chars = corpus.tokenizer.chars();
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(corpus.seq_len as u32).to_le_bytes());
    buf.extend_from_slice(&(corpus.sequences.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(chars.len() as u32).to_le_bytes());
    buf.extend_from_slice(chars.as_bytes());
    for seq in &corpus.sequences {
        for &id in seq {
            buf.extend_from_slice(&id.to_le_bytes());
        }
    }
    std::fs::write(path, &buf)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let buf = std::fs::read(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut r = Reader::new(&buf, "token file");
    if r.take(4)? != MAGIC {
        return Err(CliError::Usage(format!(
            "{} is not a token file (bad magic)",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CliError::Usage(format!(
            "unsupported token file version {version} (expected {VERSION})"
        )));
    }
    let seq_len = r.u32()? as usize;
    let n_seqs = r.u32()? as usize;
    let chars_len = r.u32()? as usize;
    if chars_len > MAX_CHARS || n_seqs.saturating_mul(seq_len) > MAX_IDS {
        return Err(CliError::Usage("token file header is implausible".into()));
    }
    let chars = std::str::from_utf8(r.take(chars_len)?)
        .map_err(|_| CliError::Usage("token file alphabet is not UTF-8".into()))?
        .to_string();
    let tokenizer = Tokenizer::from_chars(chars.chars());
    let vocab = tokenizer.vocab_size() as u32;
    let mut sequences = Vec::with_capacity(n_seqs);
    for _ in 0..n_seqs {
        let raw = r.take(seq_len * 4)?;
        let seq: Vec<u32> = raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(&bad) = seq.iter().find(|&&id| id >= vocab) {
            return Err(CliError::Usage(format!(
                "token id {bad} exceeds vocabulary size {vocab}"
            )));
        }
        sequences.push(seq);
    }
    if !r.done() {
        return Err(CliError::Usage("trailing data after final sequence".into()));
    }
    Ok(Corpus {
        tokenizer,
        sequences,
        seq_len,
    })
}
