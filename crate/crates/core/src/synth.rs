//! Seeded synthetic bitext for desk-scale experiments and tests.
//!
//! Four patterns: `monotone` (identity alignment), `reversal` (fully
//! reversed), `block-swap` (two swapped halves, giving reverse-adjacent
//! orientations and offset affiliations), and `collocation` (the target
//! word is a parity function of the two source neighbors, so the label is
//! only predictable from a multiplicative interaction of context slots).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthPattern {
    Monotone,
    Reversal,
    BlockSwap,
    Collocation,
}

impl SynthPattern {
    pub fn parse(s: &str) -> Result<SynthPattern> {
        match s {
            "monotone" => Ok(SynthPattern::Monotone),
            "reversal" => Ok(SynthPattern::Reversal),
            "block-swap" => Ok(SynthPattern::BlockSwap),
            "collocation" => Ok(SynthPattern::Collocation),
            other => Err(Error::Config(format!(
                "unknown pattern {other:?}; expected monotone, reversal, block-swap, or collocation"
            ))),
        }
    }
}

impl fmt::Display for SynthPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SynthPattern::Monotone => "monotone",
            SynthPattern::Reversal => "reversal",
            SynthPattern::BlockSwap => "block-swap",
            SynthPattern::Collocation => "collocation",
        };
        f.write_str(name)
    }
}

/// Generated parallel lines; alignments use the 0-based `j-i` file
/// convention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthCorpus {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
    pub align: Vec<String>,
}

const MIN_LEN: usize = 5;
const MAX_LEN: usize = 12;

/// Token class used by the collocation pattern: parity of the type index.
fn class(r: usize) -> usize {
    r % 2
}

/// Generate `sentences` sentence pairs over `vocab_size` source types.
/// Bit-deterministic in (pattern, sentences, vocab_size, seed).
pub fn gen_synth(
    pattern: SynthPattern,
    sentences: usize,
    vocab_size: usize,
    seed: u64,
) -> Result<SynthCorpus> {
    if sentences == 0 || vocab_size == 0 {
        return Err(Error::Config(
            "sentences and vocab_size must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = SynthCorpus {
        src: Vec::with_capacity(sentences),
        tgt: Vec::with_capacity(sentences),
        align: Vec::with_capacity(sentences),
    };

    for _ in 0..sentences {
        let len = rng.random_range(MIN_LEN..=MAX_LEN);
        let types: Vec<usize> = (0..len).map(|_| rng.random_range(0..vocab_size)).collect();
        let src: Vec<String> = types.iter().map(|r| format!("s{r}")).collect();

        let (tgt, align): (Vec<String>, Vec<String>) = match pattern {
            SynthPattern::Monotone => (
                types.iter().map(|r| format!("t{r}")).collect(),
                (0..len).map(|j| format!("{j}-{j}")).collect(),
            ),
            SynthPattern::Reversal => (
                types.iter().rev().map(|r| format!("t{r}")).collect(),
                (0..len).map(|j| format!("{j}-{}", len - 1 - j)).collect(),
            ),
            SynthPattern::BlockSwap => {
                let split = len / 2;
                let mut tgt: Vec<String> =
                    types[split..].iter().map(|r| format!("t{r}")).collect();
                tgt.extend(types[..split].iter().map(|r| format!("t{r}")));
                let tail = len - split;
                let align = (0..len)
                    .map(|j| {
                        if j < split {
                            format!("{j}-{}", tail + j)
                        } else {
                            format!("{j}-{}", j - split)
                        }
                    })
                    .collect();
                (tgt, align)
            }
            SynthPattern::Collocation => {
                let tgt = (0..len)
                    .map(|j| {
                        let left = if j > 0 { class(types[j - 1]) } else { 0 };
                        let right = if j + 1 < len { class(types[j + 1]) } else { 0 };
                        format!("t{}", left ^ right)
                    })
                    .collect();
                let align = (0..len).map(|j| format!("{j}-{j}")).collect();
                (tgt, align)
            }
        };

        corpus.src.push(src.join(" "));
        corpus.tgt.push(tgt.join(" "));
        corpus.align.push(align.join(" "));
    }
    Ok(corpus)
}

impl SynthCorpus {
    /// Write `<prefix>.src`, `<prefix>.tgt`, `<prefix>.align` and return
    /// the three paths.
    pub fn write(&self, prefix: impl AsRef<Path>) -> Result<(PathBuf, PathBuf, PathBuf)> {
        let prefix = prefix.as_ref();
        let with_ext = |ext: &str| -> PathBuf {
            let mut p = prefix.as_os_str().to_owned();
            p.push(".");
            p.push(ext);
            PathBuf::from(p)
        };
        let paths = (with_ext("src"), with_ext("tgt"), with_ext("align"));
        for (path, lines) in [
            (&paths.0, &self.src),
            (&paths.1, &self.tgt),
            (&paths.2, &self.align),
        ] {
            let mut body = lines.join("\n");
            body.push('\n');
            fs::write(path, body).map_err(|e| Error::io(path, e))?;
        }
        Ok(paths)
    }
}
