//! Feature example extraction and the binary shard format.
//!
//! Every feature reduces to the same record shape: a fixed-width sequence
//! of context token ids plus one label id. Hypothesis-enumerating features
//! emit one record per target word, source-enumerating features one per
//! source word.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::align::{fertility_label, orientation_label, AffiliationMap, ORIENTATION_LABELS};
use crate::corpus::{window, AlignedSentencePair, Side, BOS_ID, EOS_ID, NULL_ID};
use crate::error::{Error, Result};

pub const SHARD_MAGIC: &[u8; 4] = b"MTNX";
pub const SHARD_VERSION: u32 = 1;

/// Which feature a task trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    /// Joint model with offset source context; `k = 0` is the plain joint
    /// model.
    Jmo { k: u32 },
    /// Translation context at a signed offset from the attached target
    /// word; `offset = 0` is the lexical translation model.
    Tcm { offset: i32 },
    /// Orientation of the neighboring maximal spans.
    Ori,
    /// Aligned/unaligned fertility.
    Fert,
}

impl TaskKind {
    pub fn tag(self) -> u8 {
        match self {
            TaskKind::Jmo { .. } => 0,
            TaskKind::Tcm { .. } => 1,
            TaskKind::Ori => 2,
            TaskKind::Fert => 3,
        }
    }
}

/// What the label id ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSpace {
    TargetVocab,
    /// Target vocabulary where `<null>` is a live class.
    TargetVocabNull,
    Orientation30,
    Binary,
}

/// Declaration of one feature task: its kind, history length, and window
/// half-width. Determines the input width and label space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Target history length; meaningful for JMO tasks only.
    pub n: u32,
    /// Source window half-width.
    pub m: u32,
}

impl TaskSpec {
    pub fn jmo(k: u32, n: u32, m: u32) -> TaskSpec {
        TaskSpec {
            kind: TaskKind::Jmo { k },
            n,
            m,
        }
    }

    pub fn tcm(offset: i32, m: u32) -> TaskSpec {
        TaskSpec {
            kind: TaskKind::Tcm { offset },
            n: 0,
            m,
        }
    }

    pub fn ori(m: u32) -> TaskSpec {
        TaskSpec {
            kind: TaskKind::Ori,
            n: 0,
            m,
        }
    }

    pub fn fert(m: u32) -> TaskSpec {
        TaskSpec {
            kind: TaskKind::Fert,
            n: 0,
            m,
        }
    }

    /// Number of context slots: `(n-1) + (2m+1)` for JMO, `2m+1` otherwise.
    pub fn input_width(&self) -> usize {
        let win = 2 * self.m as usize + 1;
        match self.kind {
            TaskKind::Jmo { .. } => (self.n as usize).saturating_sub(1) + win,
            _ => win,
        }
    }

    /// Which embedding table each context slot reads from.
    pub fn slot_sides(&self) -> Vec<Side> {
        let win = 2 * self.m as usize + 1;
        match self.kind {
            TaskKind::Jmo { .. } => {
                let hist = (self.n as usize).saturating_sub(1);
                let mut sides = vec![Side::Target; hist];
                sides.extend(std::iter::repeat_n(Side::Source, win));
                sides
            }
            _ => vec![Side::Source; win],
        }
    }

    pub fn label_space(&self) -> LabelSpace {
        match self.kind {
            TaskKind::Jmo { .. } => LabelSpace::TargetVocab,
            TaskKind::Tcm { .. } => LabelSpace::TargetVocabNull,
            TaskKind::Ori => LabelSpace::Orientation30,
            TaskKind::Fert => LabelSpace::Binary,
        }
    }

    /// Concrete label count given the target vocabulary size.
    pub fn label_space_size(&self, tgt_vocab_len: usize) -> u32 {
        match self.label_space() {
            LabelSpace::TargetVocab | LabelSpace::TargetVocabNull => tgt_vocab_len as u32,
            LabelSpace::Orientation30 => ORIENTATION_LABELS,
            LabelSpace::Binary => 2,
        }
    }

    /// Stable task name; used for output heads and CLI reports.
    pub fn name(&self) -> String {
        match self.kind {
            TaskKind::Jmo { k } => format!("jmo_k{k}"),
            TaskKind::Tcm { offset } => format!("tcm_d{offset}"),
            TaskKind::Ori => "ori".to_string(),
            TaskKind::Fert => "fert".to_string(),
        }
    }

    /// Whether the task scores target words (true) or source words (false).
    pub fn hypothesis_enumerating(&self) -> bool {
        matches!(self.kind, TaskKind::Jmo { .. })
    }
}

/// One training record: fixed-width context ids plus a label id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskExample {
    pub context: Vec<u32>,
    pub label: u32,
}

/// How unaligned source words are handled during TCM extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NullMode {
    /// Emit a `<null>` label for unaligned words (standalone training).
    PredictNull,
    /// Emit nothing for unaligned words (hierarchical combined group).
    SkipUnaligned,
}

/// Joint-model examples: one per target position. Context is the `n-1`
/// previous target words (most recent first) followed by the source window
/// around the word affiliated with the history position `i-k`.
///
/// When `i-k` precedes the sentence, the window collapses to `<s>` padding:
/// the affiliated-history center is undefined there and the fixed width
/// must hold.
pub fn extract_jmo(
    pair: &AlignedSentencePair,
    affil: &AffiliationMap,
    n: u32,
    m: u32,
    k: u32,
) -> Vec<TaskExample> {
    if pair.links.is_empty() {
        return Vec::new();
    }
    let tgt_len = pair.tgt_len();
    let win = 2 * m as usize + 1;
    let width = TaskSpec::jmo(k, n, m).input_width();
    let mut out = Vec::with_capacity(tgt_len as usize);
    for i in 1..=tgt_len {
        let mut context = Vec::with_capacity(width);
        for back in 1..n {
            context.push(if i > back {
                pair.tgt[(i - back - 1) as usize]
            } else {
                BOS_ID
            });
        }
        if i as i64 - k as i64 >= 1 {
            let center = affil.a_of(i - k) as i64;
            let w = window(&pair.src, center, m as usize, Side::Source)
                .expect("affiliated position is inside the sentence");
            context.extend_from_slice(&w.ids);
        } else {
            context.extend(std::iter::repeat_n(BOS_ID, win));
        }
        out.push(TaskExample {
            context,
            label: pair.tgt[(i - 1) as usize],
        });
    }
    out
}

/// Translation-context examples: one per attached source position, labeled
/// with the target word at signed offset `offset` from the attachment.
/// Out-of-range offsets label the target boundary symbols. Unaligned
/// source words follow `null_mode` (a `<null>` label only applies at
/// offset 0).
pub fn extract_tcm(
    pair: &AlignedSentencePair,
    affil: &AffiliationMap,
    m: u32,
    offset: i32,
    null_mode: NullMode,
) -> Vec<TaskExample> {
    let tgt_len = pair.tgt_len() as i64;
    let mut out = Vec::new();
    for j in 1..=pair.src_len() {
        let label = match affil.b_of(j) {
            Some(b) => {
                let pos = b as i64 + offset as i64;
                if pos < 1 {
                    BOS_ID
                } else if pos > tgt_len {
                    EOS_ID
                } else {
                    pair.tgt[(pos - 1) as usize]
                }
            }
            None => {
                if null_mode == NullMode::PredictNull && offset == 0 {
                    NULL_ID
                } else {
                    continue;
                }
            }
        };
        let w = window(&pair.src, j as i64, m as usize, Side::Source)
            .expect("j is inside the sentence");
        out.push(TaskExample {
            context: w.ids,
            label,
        });
    }
    out
}

/// Orientation examples: one per source position, aligned or not.
pub fn extract_ori(pair: &AlignedSentencePair, m: u32) -> Vec<TaskExample> {
    (1..=pair.src_len())
        .map(|j| {
            let w = window(&pair.src, j as i64, m as usize, Side::Source)
                .expect("j is inside the sentence");
            TaskExample {
                context: w.ids,
                label: orientation_label(pair, j).id(),
            }
        })
        .collect()
}

/// Fertility examples: one per source position.
pub fn extract_fert(pair: &AlignedSentencePair, m: u32) -> Vec<TaskExample> {
    (1..=pair.src_len())
        .map(|j| {
            let w = window(&pair.src, j as i64, m as usize, Side::Source)
                .expect("j is inside the sentence");
            TaskExample {
                context: w.ids,
                label: fertility_label(pair, j),
            }
        })
        .collect()
}

/// Dispatch to the right extractor for `spec`. Pairs with no links are
/// skipped wholesale: affiliation is undefined there.
pub fn extract_task(
    pair: &AlignedSentencePair,
    spec: &TaskSpec,
    null_mode: NullMode,
) -> Vec<TaskExample> {
    if pair.links.is_empty() {
        return Vec::new();
    }
    let affil = AffiliationMap::from_pair(pair).expect("non-empty links");
    match spec.kind {
        TaskKind::Jmo { k } => extract_jmo(pair, &affil, spec.n, spec.m, k),
        TaskKind::Tcm { offset } => extract_tcm(pair, &affil, spec.m, offset, null_mode),
        TaskKind::Ori => extract_ori(pair, spec.m),
        TaskKind::Fert => extract_fert(pair, spec.m),
    }
}

/// Extract a whole corpus in sentence order. With `workers > 1` the
/// sentences are chunked across threads and the outputs concatenated in
/// input order, so the result is identical to the sequential one.
pub fn extract_corpus(
    pairs: &[AlignedSentencePair],
    spec: &TaskSpec,
    null_mode: NullMode,
    workers: usize,
) -> Vec<TaskExample> {
    if workers <= 1 || pairs.len() < 2 * workers {
        return pairs
            .iter()
            .flat_map(|p| extract_task(p, spec, null_mode))
            .collect();
    }
    let chunk = pairs.len().div_ceil(workers);
    let parts: Vec<Vec<TaskExample>> = std::thread::scope(|scope| {
        let handles: Vec<_> = pairs
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .flat_map(|p| extract_task(p, spec, null_mode))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    parts.into_iter().flatten().collect()
}

/// A materialized example file: self-describing task plus records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shard {
    pub spec: TaskSpec,
    pub label_space_size: u32,
    pub examples: Vec<TaskExample>,
}

/// Write a shard. Refuses examples whose width or label fall outside the
/// declared shape.
pub fn write_shard(
    path: impl AsRef<Path>,
    spec: &TaskSpec,
    label_space_size: u32,
    examples: &[TaskExample],
) -> Result<()> {
    let path = path.as_ref();
    let width = spec.input_width();
    for (idx, ex) in examples.iter().enumerate() {
        if ex.context.len() != width {
            return Err(Error::WidthMismatch(format!(
                "example {idx} has width {} but task {} declares {width}",
                ex.context.len(),
                spec.name()
            )));
        }
        if ex.label >= label_space_size {
            return Err(Error::WidthMismatch(format!(
                "example {idx} has label {} outside label space {label_space_size}",
                ex.label
            )));
        }
    }

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path, e);

    w.write_all(SHARD_MAGIC).map_err(io_err)?;
    w.write_u32::<LittleEndian>(SHARD_VERSION).map_err(io_err)?;
    w.write_u8(spec.kind.tag()).map_err(io_err)?;
    let (k, offset) = match spec.kind {
        TaskKind::Jmo { k } => (k as i32, 0),
        TaskKind::Tcm { offset } => (0, offset),
        _ => (0, 0),
    };
    w.write_i32::<LittleEndian>(spec.n as i32).map_err(io_err)?;
    w.write_i32::<LittleEndian>(spec.m as i32).map_err(io_err)?;
    w.write_i32::<LittleEndian>(k).map_err(io_err)?;
    w.write_i32::<LittleEndian>(offset).map_err(io_err)?;
    w.write_u32::<LittleEndian>(width as u32).map_err(io_err)?;
    w.write_u32::<LittleEndian>(label_space_size).map_err(io_err)?;
    w.write_u64::<LittleEndian>(examples.len() as u64)
        .map_err(io_err)?;
    for ex in examples {
        for &id in &ex.context {
            w.write_u32::<LittleEndian>(id).map_err(io_err)?;
        }
        w.write_u32::<LittleEndian>(ex.label).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Read a shard written by [`write_shard`].
pub fn read_shard(path: impl AsRef<Path>) -> Result<Shard> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let trunc = |e: std::io::Error| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Truncated { path: path.into() }
        } else {
            Error::io(path, e)
        }
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(trunc)?;
    if &magic != SHARD_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            expected: "MTNX",
        });
    }
    let version = r.read_u32::<LittleEndian>().map_err(trunc)?;
    if version != SHARD_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.into(),
            found: version,
            supported: SHARD_VERSION,
        });
    }
    let tag = r.read_u8().map_err(trunc)?;
    let n = r.read_i32::<LittleEndian>().map_err(trunc)?;
    let m = r.read_i32::<LittleEndian>().map_err(trunc)?;
    let k = r.read_i32::<LittleEndian>().map_err(trunc)?;
    let offset = r.read_i32::<LittleEndian>().map_err(trunc)?;
    let width = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let label_space_size = r.read_u32::<LittleEndian>().map_err(trunc)?;
    let count = r.read_u64::<LittleEndian>().map_err(trunc)?;

    let kind = match tag {
        0 => TaskKind::Jmo { k: k as u32 },
        1 => TaskKind::Tcm { offset },
        2 => TaskKind::Ori,
        3 => TaskKind::Fert,
        other => {
            return Err(Error::Parse {
                line: 0,
                detail: format!("unknown task kind tag {other}"),
            })
        }
    };
    let spec = TaskSpec {
        kind,
        n: n as u32,
        m: m as u32,
    };
    if spec.input_width() != width {
        return Err(Error::WidthMismatch(format!(
            "shard declares width {width} but task {} implies {}",
            spec.name(),
            spec.input_width()
        )));
    }

    let mut examples = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut context = Vec::with_capacity(width);
        for _ in 0..width {
            context.push(r.read_u32::<LittleEndian>().map_err(trunc)?);
        }
        let label = r.read_u32::<LittleEndian>().map_err(trunc)?;
        examples.push(TaskExample { context, label });
    }
    Ok(Shard {
        spec,
        label_space_size,
        examples,
    })
}
