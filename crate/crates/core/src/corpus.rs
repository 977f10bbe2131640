//! Corpus ingestion: vocabularies, aligned sentence pairs, and padded
//! context-window lookup.
//!
//! File formats:
//! - Bitext: one sentence per line, whitespace-tokenized, UTF-8.
//! - Alignment: per line, whitespace-separated `j-i` pairs, 0-based in the
//!   file; positions are converted to 1-based internally.
//! - Vocabulary: one `surface<TAB>count` per line in id order; the four
//!   reserved entries come first with count 0.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const UNK_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const NULL_ID: u32 = 3;

pub const RESERVED: [&str; 4] = ["<unk>", "<s>", "</s>", "<null>"];

/// Which language side a vocabulary, window, or embedding slot belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Source,
    Target,
}

impl Side {
    pub fn tag(self) -> u8 {
        match self {
            Side::Source => 0,
            Side::Target => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Side> {
        match tag {
            0 => Some(Side::Source),
            1 => Some(Side::Target),
            _ => None,
        }
    }
}

/// Dense id-indexed vocabulary with four reserved entries.
///
/// Ids 0..=3 are `<unk>`, `<s>`, `</s>`, `<null>`; corpus types follow in
/// descending frequency, ties broken by ascending surface form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    side: Side,
    entries: Vec<(String, u64)>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Build from an iterator of tokens. `min_count` filters rare types,
    /// `max_size` caps the total size including the reserved entries.
    pub fn build<I, T>(tokens: I, min_count: u64, max_size: usize, side: Side) -> Result<Vocabulary>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<str>,
    {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for tok in tokens {
            let tok = tok.as_ref();
            if tok.is_empty() || RESERVED.contains(&tok) {
                continue;
            }
            *counts.entry(tok.to_string()).or_insert(0) += 1;
        }
        Vocabulary::from_counts(counts, min_count, max_size, side)
    }

    fn from_counts(
        counts: HashMap<String, u64>,
        min_count: u64,
        max_size: usize,
        side: Side,
    ) -> Result<Vocabulary> {
        if min_count < 1 {
            return Err(Error::Config("min_count must be >= 1".into()));
        }
        if max_size < RESERVED.len() {
            return Err(Error::Config(format!(
                "max_size must be >= {} to hold the reserved entries",
                RESERVED.len()
            )));
        }

        let mut ranked: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - RESERVED.len());

        let mut entries: Vec<(String, u64)> =
            RESERVED.iter().map(|s| (s.to_string(), 0)).collect();
        entries.extend(ranked);

        Ok(Vocabulary::from_entries(entries, side))
    }

    /// Build from a whitespace-tokenized file, one sentence per line.
    pub fn from_token_file(
        path: impl AsRef<Path>,
        min_count: u64,
        max_size: usize,
        side: Side,
    ) -> Result<Vocabulary> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut counts: HashMap<String, u64> = HashMap::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            for tok in line.split_whitespace() {
                if RESERVED.contains(&tok) {
                    continue;
                }
                *counts.entry(tok.to_string()).or_insert(0) += 1;
            }
        }
        Vocabulary::from_counts(counts, min_count, max_size, side)
    }

    fn from_entries(entries: Vec<(String, u64)>, side: Side) -> Vocabulary {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (s, _))| (s.clone(), i as u32))
            .collect();
        Vocabulary {
            side,
            entries,
            index,
        }
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Map a surface form to its id, falling back to `<unk>`.
    pub fn id(&self, surface: &str) -> u32 {
        self.index.get(surface).copied().unwrap_or(UNK_ID)
    }

    /// Exact lookup without the `<unk>` fallback.
    pub fn lookup(&self, surface: &str) -> Option<u32> {
        self.index.get(surface).copied()
    }

    pub fn surface(&self, id: u32) -> Option<&str> {
        self.entries.get(id as usize).map(|(s, _)| s.as_str())
    }

    pub fn count(&self, id: u32) -> Option<u64> {
        self.entries.get(id as usize).map(|(_, c)| *c)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        for (surface, count) in &self.entries {
            writeln!(w, "{surface}\t{count}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_from(r: impl BufRead, side: Side) -> Result<Vocabulary> {
        let mut entries = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<vocabulary>", e))?;
            if line.is_empty() {
                continue;
            }
            let (surface, count) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: lineno + 1,
                detail: format!("vocabulary line missing tab separator: {line:?}"),
            })?;
            let count: u64 = count.parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                detail: format!("bad count field: {count:?}"),
            })?;
            entries.push((surface.to_string(), count));
        }
        for (i, reserved) in RESERVED.iter().enumerate() {
            if entries.get(i).map(|(s, _)| s.as_str()) != Some(*reserved) {
                return Err(Error::Parse {
                    line: i + 1,
                    detail: format!("expected reserved entry {reserved:?}"),
                });
            }
        }
        let vocab = Vocabulary::from_entries(entries, side);
        if vocab.index.len() != vocab.entries.len() {
            return Err(Error::Parse {
                line: 0,
                detail: "duplicate surface form in vocabulary file".into(),
            });
        }
        Ok(vocab)
    }

    pub fn load(path: impl AsRef<Path>, side: Side) -> Result<Vocabulary> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Vocabulary::read_from(BufReader::new(file), side)
    }

    /// FNV-1a over the serialized form; used by model files to pin the
    /// vocabulary a model was trained with.
    pub fn digest(&self) -> u64 {
        let mut hash: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                hash ^= b as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        };
        for (surface, count) in &self.entries {
            eat(surface.as_bytes());
            eat(&count.to_le_bytes());
            eat(b"\n");
        }
        hash
    }

    pub fn entries(&self) -> &[(String, u64)] {
        &self.entries
    }

    pub(crate) fn from_raw_entries(entries: Vec<(String, u64)>, side: Side) -> Vocabulary {
        Vocabulary::from_entries(entries, side)
    }
}

/// One sentence pair with its alignment links, everything id-mapped.
/// Link positions are 1-based: `(j, i)` aligns source word `j` to target
/// word `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedSentencePair {
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
    pub links: BTreeSet<(u32, u32)>,
}

impl AlignedSentencePair {
    pub fn new(
        src: Vec<u32>,
        tgt: Vec<u32>,
        links: impl IntoIterator<Item = (u32, u32)>,
    ) -> Result<AlignedSentencePair> {
        let pair = AlignedSentencePair {
            src,
            tgt,
            links: links.into_iter().collect(),
        };
        pair.validate(0)?;
        Ok(pair)
    }

    fn validate(&self, sentence: usize) -> Result<()> {
        for &(j, i) in &self.links {
            if j < 1 || j as usize > self.src.len() || i < 1 || i as usize > self.tgt.len() {
                return Err(Error::Validation {
                    sentence,
                    detail: format!(
                        "link {}-{} out of bounds for |F|={} |E|={}",
                        j,
                        i,
                        self.src.len(),
                        self.tgt.len()
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn src_len(&self) -> u32 {
        self.src.len() as u32
    }

    pub fn tgt_len(&self) -> u32 {
        self.tgt.len() as u32
    }

    /// Source positions linked to target position `i`, ascending.
    pub fn sources_of(&self, i: u32) -> Vec<u32> {
        let mut v: Vec<u32> = self
            .links
            .iter()
            .filter(|&&(_, ti)| ti == i)
            .map(|&(j, _)| j)
            .collect();
        v.sort_unstable();
        v
    }

    /// Target positions linked to source position `j`, ascending.
    pub fn targets_of(&self, j: u32) -> Vec<u32> {
        // BTreeSet is ordered by (j, i), so these come out ascending already.
        self.links
            .iter()
            .filter(|&&(sj, _)| sj == j)
            .map(|&(_, i)| i)
            .collect()
    }

    pub fn is_aligned(&self, j: u32) -> bool {
        self.links.iter().any(|&(sj, _)| sj == j)
    }
}

/// Fixed-width window of token ids around a (possibly out-of-sentence)
/// center position, padded with `<s>`/`</s>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextWindow {
    pub ids: Vec<u32>,
    pub center: i64,
    pub m: usize,
    pub side: Side,
}

/// Extract the `2m+1` ids centered on `center` (1-based). Positions before
/// the sentence map to `<s>`, positions past the end to `</s>`. The center
/// may lie outside the sentence as long as the window still touches it:
/// `1-m <= center <= len+m`.
pub fn window(sentence: &[u32], center: i64, m: usize, side: Side) -> Result<ContextWindow> {
    let len = sentence.len() as i64;
    let m_i = m as i64;
    if center < 1 - m_i || center > len + m_i {
        return Err(Error::Config(format!(
            "window center {center} outside [{}, {}] for sentence of length {len}",
            1 - m_i,
            len + m_i
        )));
    }
    let ids = (center - m_i..=center + m_i)
        .map(|pos| {
            if pos < 1 {
                BOS_ID
            } else if pos > len {
                EOS_ID
            } else {
                sentence[(pos - 1) as usize]
            }
        })
        .collect();
    Ok(ContextWindow {
        ids,
        center,
        m,
        side,
    })
}

/// Read parallel bitext plus alignments into id-mapped sentence pairs.
///
/// The three files must have equal line counts. Alignment tokens are
/// `j-i` pairs, 0-based in the file; an empty alignment line yields an
/// unaligned sentence pair.
pub fn parse_bitext(
    src_path: impl AsRef<Path>,
    tgt_path: impl AsRef<Path>,
    align_path: impl AsRef<Path>,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
) -> Result<Vec<AlignedSentencePair>> {
    let open = |p: &Path| -> Result<BufReader<File>> {
        Ok(BufReader::new(File::open(p).map_err(|e| Error::io(p, e))?))
    };
    let src = open(src_path.as_ref())?;
    let tgt = open(tgt_path.as_ref())?;
    let align = open(align_path.as_ref())?;
    parse_bitext_readers(src, tgt, align, src_vocab, tgt_vocab)
}

pub fn parse_bitext_readers(
    src: impl BufRead,
    tgt: impl BufRead,
    align: impl BufRead,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
) -> Result<Vec<AlignedSentencePair>> {
    let mut src_lines = src.lines();
    let mut tgt_lines = tgt.lines();
    let mut align_lines = align.lines();
    let mut pairs = Vec::new();
    let mut lineno = 0usize;

    loop {
        lineno += 1;
        let s = src_lines.next().transpose().map_err(|e| Error::io("<src>", e))?;
        let t = tgt_lines.next().transpose().map_err(|e| Error::io("<tgt>", e))?;
        let a = align_lines
            .next()
            .transpose()
            .map_err(|e| Error::io("<align>", e))?;

        let (s, t, a) = match (s, t, a) {
            (None, None, None) => break,
            (Some(s), Some(t), Some(a)) => (s, t, a),
            (s, t, a) => {
                let missing: Vec<&str> = [("source", &s), ("target", &t), ("alignment", &a)]
                    .iter()
                    .filter(|(_, v)| v.is_none())
                    .map(|(n, _)| *n)
                    .collect();
                return Err(Error::LineCount {
                    line: lineno,
                    detail: format!("{} file(s) ended early", missing.join(", ")),
                });
            }
        };

        let src_ids: Vec<u32> = s.split_whitespace().map(|w| src_vocab.id(w)).collect();
        let tgt_ids: Vec<u32> = t.split_whitespace().map(|w| tgt_vocab.id(w)).collect();

        let mut links = BTreeSet::new();
        for tok in a.split_whitespace() {
            let (j, i) = tok.split_once('-').ok_or_else(|| Error::Parse {
                line: lineno,
                detail: format!("bad alignment token {tok:?}, expected j-i"),
            })?;
            let j: u32 = j.parse().map_err(|_| Error::Parse {
                line: lineno,
                detail: format!("bad alignment token {tok:?}, expected j-i"),
            })?;
            let i: u32 = i.parse().map_err(|_| Error::Parse {
                line: lineno,
                detail: format!("bad alignment token {tok:?}, expected j-i"),
            })?;
            // file indices are 0-based; internal positions are 1-based
            links.insert((j + 1, i + 1));
        }

        let pair = AlignedSentencePair {
            src: src_ids,
            tgt: tgt_ids,
            links,
        };
        pair.validate(lineno)?;
        pairs.push(pair);
    }
    Ok(pairs)
}
