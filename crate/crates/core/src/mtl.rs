//! Multitask group assembly, minibatch SGD training, and model files.
//!
//! A task group shares one embedding table per side plus the first `t`
//! hidden layers; layers `t+1..L` and the output heads are private per
//! task. A single-task group degenerates to a plain standalone network,
//! bit-for-bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Side, Vocabulary};
use crate::error::{Error, Result};
use crate::extract::{Shard, TaskExample, TaskKind, TaskSpec};
use crate::net::{
    backward, forward, Activation, Gradients, GroupWiring, Head, LayerKind, LayerParams, Matrix,
    NetworkParams, Scalar, TaskWiring,
};

pub const MODEL_MAGIC: &[u8; 4] = b"MTNN";
pub const MODEL_VERSION: u32 = 1;

/// Which multitask group a spec describes. Not serialized: the model file
/// records structure (tasks, depths, widths), from which the kind is
/// re-inferred on load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKind {
    /// Hypothesis-enumerating tasks; inputs may differ, so only embeddings
    /// are shared (t = 0).
    HypEn,
    /// Source-enumerating tasks over one shared window signature.
    SrcEn,
    /// One task trained standalone.
    Single,
}

/// Declaration of a multitask group: member tasks, sharing depth, layer
/// widths, and the network-wide knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskGroupSpec {
    pub group: GroupKind,
    pub tasks: Vec<TaskSpec>,
    /// Total hidden layers L.
    pub total_layers: usize,
    /// Shared hidden layers t, 0 <= t <= L-1.
    pub shared_layers: usize,
    /// One width per hidden layer.
    pub widths: Vec<usize>,
    /// Embedding dimension D.
    pub embed_dim: usize,
    /// Tensor hidden layers instead of plain ones.
    pub tensor: bool,
    /// Weight of the log-partition penalty.
    pub alpha: f64,
}

impl TaskGroupSpec {
    pub fn single(task: TaskSpec, layers: &[usize], embed_dim: usize, tensor: bool, alpha: f64) -> TaskGroupSpec {
        TaskGroupSpec {
            group: GroupKind::Single,
            tasks: vec![task],
            total_layers: layers.len(),
            shared_layers: 0,
            widths: layers.to_vec(),
            embed_dim,
            tensor,
            alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Config("group has no tasks".into()));
        }
        if self.total_layers == 0 {
            return Err(Error::Config("group needs at least one hidden layer".into()));
        }
        if self.widths.len() != self.total_layers {
            return Err(Error::Config(format!(
                "{} widths given for {} layers",
                self.widths.len(),
                self.total_layers
            )));
        }
        if self.shared_layers >= self.total_layers {
            return Err(Error::Config(format!(
                "shared layers t={} must be < total layers L={}",
                self.shared_layers, self.total_layers
            )));
        }
        if self.embed_dim == 0 || self.widths.contains(&0) {
            return Err(Error::Config("zero-sized layer".into()));
        }
        if self.alpha < 0.0 {
            return Err(Error::Config("alpha must be >= 0".into()));
        }
        let mut names: Vec<String> = self.tasks.iter().map(|t| t.name()).collect();
        names.sort();
        names.dedup();
        if names.len() != self.tasks.len() {
            return Err(Error::Config("duplicate task in group".into()));
        }
        match self.group {
            GroupKind::Single => {
                if self.tasks.len() != 1 {
                    return Err(Error::Config("single group must hold exactly one task".into()));
                }
            }
            GroupKind::HypEn => {
                if self.shared_layers != 0 {
                    return Err(Error::Config(
                        "hypothesis-enumerating tasks have differing inputs; \
                         only embeddings can be shared (t must be 0)"
                            .into(),
                    ));
                }
            }
            GroupKind::SrcEn => {
                let first = self.tasks[0].slot_sides();
                if self.tasks.iter().any(|t| t.hypothesis_enumerating()) {
                    return Err(Error::Config(
                        "source-enumerating group cannot contain a joint-model task".into(),
                    ));
                }
                if self.tasks.iter().any(|t| t.slot_sides() != first) {
                    return Err(Error::Config(
                        "source-enumerating group requires one shared input signature".into(),
                    ));
                }
            }
        }
        // any sharing requires one trunk, hence one input signature
        if self.shared_layers > 0 {
            let first = self.tasks[0].slot_sides();
            if self.tasks.iter().any(|t| t.slot_sides() != first) {
                return Err(Error::Config(
                    "tasks with differing input signatures cannot share hidden layers".into(),
                ));
            }
        }
        Ok(())
    }

    /// Infer the group kind from structure (used when loading model files).
    fn infer_kind(tasks: &[TaskSpec]) -> GroupKind {
        if tasks.len() == 1 {
            GroupKind::Single
        } else if tasks.iter().any(|t| t.hypothesis_enumerating()) {
            GroupKind::HypEn
        } else {
            GroupKind::SrcEn
        }
    }
}

/// Training hyperparameters. The seed fixes initialization and shuffling;
/// with one worker the whole run is bit-deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Consecutive non-improving epochs before the learning rate halves.
    pub patience: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            epochs: 10,
            batch_size: 128,
            learning_rate: 0.1,
            patience: 2,
            seed: 1,
            workers: 1,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0
            || self.batch_size == 0
            || self.learning_rate <= 0.0
            || self.patience == 0
            || self.workers == 0
        {
            return Err(Error::Config(
                "epochs, batch size, learning rate, patience, and workers must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Matrix<f32> {
    Matrix {
        rows,
        cols,
        data: (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound) as f32)
            .collect(),
    }
}

/// Offset for tensor projection biases at initialization. A product layer
/// with zero biases squares the (small) input scale, so stacking them
/// starves deep networks of signal; starting each projection at
/// tanh(0.5) keeps the product near input scale at any depth.
const TENSOR_BIAS_INIT: f32 = 0.5;

fn init_layer(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, tensor: bool) -> LayerParams<f32> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let kind = if tensor {
        LayerKind::Tensor {
            q: uniform_matrix(rng, fan_in, fan_out, bound),
            r: uniform_matrix(rng, fan_in, fan_out, bound),
            bias_q: vec![TENSOR_BIAS_INIT; fan_out],
            bias_r: vec![TENSOR_BIAS_INIT; fan_out],
        }
    } else {
        LayerKind::Plain {
            w: uniform_matrix(rng, fan_in, fan_out, bound),
            bias: vec![0.0; fan_out],
        }
    };
    LayerParams {
        kind,
        activation: Activation::Tanh,
    }
}

/// Build initialized parameters and wiring for a group.
///
/// Layer pool order is fixed: the `t` shared layers first, then each
/// task's private layers in task order, then heads in task order. That
/// order is also the serialization order.
pub fn build_group(
    spec: &TaskGroupSpec,
    src_vocab_len: usize,
    tgt_vocab_len: usize,
    seed: u64,
) -> Result<(NetworkParams<f32>, GroupWiring)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    build_group_with_rng(spec, src_vocab_len, tgt_vocab_len, &mut rng)
}

fn build_group_with_rng(
    spec: &TaskGroupSpec,
    src_vocab_len: usize,
    tgt_vocab_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(NetworkParams<f32>, GroupWiring)> {
    spec.validate()?;
    let d = spec.embed_dim;
    let src_embed = uniform_matrix(rng, src_vocab_len, d, 0.05);
    let tgt_embed = uniform_matrix(rng, tgt_vocab_len, d, 0.05);

    let t = spec.shared_layers;
    let l = spec.total_layers;
    let mut layers: Vec<LayerParams<f32>> = Vec::new();

    // shared trunk (all tasks have one input width when t > 0)
    let mut shared_path = Vec::new();
    if t > 0 {
        let in_width = spec.tasks[0].input_width() * d;
        let mut fan_in = in_width;
        for li in 0..t {
            shared_path.push(layers.len());
            layers.push(init_layer(rng, fan_in, spec.widths[li], spec.tensor));
            fan_in = spec.widths[li];
        }
    }

    let mut task_paths: Vec<Vec<usize>> = Vec::new();
    for task in &spec.tasks {
        let mut path = shared_path.clone();
        let mut fan_in = if t > 0 {
            spec.widths[t - 1]
        } else {
            task.input_width() * d
        };
        for li in t..l {
            path.push(layers.len());
            layers.push(init_layer(rng, fan_in, spec.widths[li], spec.tensor));
            fan_in = spec.widths[li];
        }
        task_paths.push(path);
    }

    let mut heads = Vec::new();
    for task in &spec.tasks {
        let fan_in = spec.widths[l - 1];
        let labels = task.label_space_size(tgt_vocab_len) as usize;
        let bound = (6.0 / (fan_in + labels) as f64).sqrt();
        heads.push(Head {
            name: task.name(),
            w: uniform_matrix(rng, fan_in, labels, bound),
            bias: vec![0.0; labels],
        });
    }

    let wiring = GroupWiring {
        tasks: spec
            .tasks
            .iter()
            .zip(task_paths)
            .enumerate()
            .map(|(idx, (task, layer_path))| TaskWiring {
                name: task.name(),
                slots: task.slot_sides(),
                layer_path,
                head: idx,
            })
            .collect(),
    };

    Ok((
        NetworkParams {
            src_embed,
            tgt_embed,
            layers,
            heads,
        },
        wiring,
    ))
}

/// A trained (or freshly initialized) model: group structure, parameters,
/// and the vocabularies it was built against.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub group: TaskGroupSpec,
    pub params: NetworkParams<f32>,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
}

impl Model {
    /// Rebuild the wiring deterministically from the group structure.
    pub fn wiring(&self) -> GroupWiring {
        let t = self.group.shared_layers;
        let l = self.group.total_layers;
        let shared: Vec<usize> = (0..t).collect();
        let mut next = t;
        GroupWiring {
            tasks: self
                .group
                .tasks
                .iter()
                .enumerate()
                .map(|(idx, task)| {
                    let mut path = shared.clone();
                    path.extend(next..next + (l - t));
                    next += l - t;
                    TaskWiring {
                        name: task.name(),
                        slots: task.slot_sides(),
                        layer_path: path,
                        head: idx,
                    }
                })
                .collect(),
        }
    }

    /// Check an externally supplied vocabulary against the one the model
    /// embeds.
    pub fn verify_vocab(&self, side: Side, vocab: &Vocabulary) -> Result<()> {
        let own = match side {
            Side::Source => &self.src_vocab,
            Side::Target => &self.tgt_vocab,
        };
        if own.digest() != vocab.digest() {
            return Err(Error::DigestMismatch(format!(
                "{:?} vocabulary digest {:016x} does not match the model's {:016x}",
                side,
                vocab.digest(),
                own.digest()
            )));
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

    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_u32::<LittleEndian>(MODEL_VERSION)?;

        w.write_u32::<LittleEndian>(self.group.tasks.len() as u32)?;
        for task in &self.group.tasks {
            let (k, offset) = match task.kind {
                TaskKind::Jmo { k } => (k as i32, 0),
                TaskKind::Tcm { offset } => (0, offset),
                _ => (0, 0),
            };
            w.write_u8(task.kind.tag())?;
            w.write_i32::<LittleEndian>(task.n as i32)?;
            w.write_i32::<LittleEndian>(task.m as i32)?;
            w.write_i32::<LittleEndian>(k)?;
            w.write_i32::<LittleEndian>(offset)?;
        }
        w.write_u32::<LittleEndian>(self.group.total_layers as u32)?;
        w.write_u32::<LittleEndian>(self.group.shared_layers as u32)?;
        for &width in &self.group.widths {
            w.write_u32::<LittleEndian>(width as u32)?;
        }
        w.write_u32::<LittleEndian>(self.group.embed_dim as u32)?;
        w.write_u8(self.group.tensor as u8)?;
        w.write_f64::<LittleEndian>(self.group.alpha)?;

        w.write_u64::<LittleEndian>(self.src_vocab.digest())?;
        w.write_u64::<LittleEndian>(self.tgt_vocab.digest())?;
        for vocab in [&self.src_vocab, &self.tgt_vocab] {
            w.write_u32::<LittleEndian>(vocab.len() as u32)?;
            for (surface, count) in vocab.entries() {
                w.write_u32::<LittleEndian>(surface.len() as u32)?;
                w.write_all(surface.as_bytes())?;
                w.write_u64::<LittleEndian>(*count)?;
            }
        }

        let write_mat = |w: &mut dyn Write, m: &Matrix<f32>| -> std::io::Result<()> {
            for &x in &m.data {
                w.write_f32::<LittleEndian>(x)?;
            }
            Ok(())
        };
        write_mat(w, &self.params.src_embed)?;
        write_mat(w, &self.params.tgt_embed)?;
        for layer in &self.params.layers {
            match &layer.kind {
                LayerKind::Plain { w: wm, bias } => {
                    write_mat(w, wm)?;
                    for &x in bias {
                        w.write_f32::<LittleEndian>(x)?;
                    }
                }
                LayerKind::Tensor {
                    q,
                    r,
                    bias_q,
                    bias_r,
                } => {
                    write_mat(w, q)?;
                    write_mat(w, r)?;
                    for &x in bias_q {
                        w.write_f32::<LittleEndian>(x)?;
                    }
                    for &x in bias_r {
                        w.write_f32::<LittleEndian>(x)?;
                    }
                }
            }
        }
        for head in &self.params.heads {
            write_mat(w, &head.w)?;
            for &x in &head.bias {
                w.write_f32::<LittleEndian>(x)?;
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        Model::read_from(&mut r, path)
    }

    fn read_from(r: &mut impl Read, path: &Path) -> Result<Model> {
        let trunc = |e: std::io::Error| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Truncated { path: path.into() }
            } else {
                Error::io(path, e)
            }
        };

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(trunc)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::BadMagic {
                path: path.into(),
                expected: "MTNN",
            });
        }
        let version = r.read_u32::<LittleEndian>().map_err(trunc)?;
        if version != MODEL_VERSION {
            return Err(Error::UnsupportedVersion {
                path: path.into(),
                found: version,
                supported: MODEL_VERSION,
            });
        }

        let task_count = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        let mut tasks = Vec::with_capacity(task_count);
        for _ in 0..task_count {
            let tag = r.read_u8().map_err(trunc)?;
            let n = r.read_i32::<LittleEndian>().map_err(trunc)? as u32;
            let m = r.read_i32::<LittleEndian>().map_err(trunc)? as u32;
            let k = r.read_i32::<LittleEndian>().map_err(trunc)?;
            let offset = r.read_i32::<LittleEndian>().map_err(trunc)?;
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
            tasks.push(TaskSpec { kind, n, m });
        }
        let total_layers = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        let shared_layers = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        let mut widths = Vec::with_capacity(total_layers);
        for _ in 0..total_layers {
            widths.push(r.read_u32::<LittleEndian>().map_err(trunc)? as usize);
        }
        let embed_dim = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        let tensor = r.read_u8().map_err(trunc)? != 0;
        let alpha = r.read_f64::<LittleEndian>().map_err(trunc)?;

        let src_digest = r.read_u64::<LittleEndian>().map_err(trunc)?;
        let tgt_digest = r.read_u64::<LittleEndian>().map_err(trunc)?;
        let mut vocabs = Vec::with_capacity(2);
        for side in [Side::Source, Side::Target] {
            let count = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
            let mut entries = Vec::with_capacity(count);
            for _ in 0..count {
                let len = r.read_u32::<LittleEndian>().map_err(trunc)? as usize;
                let mut buf = vec![0u8; len];
                r.read_exact(&mut buf).map_err(trunc)?;
                let surface = String::from_utf8(buf).map_err(|_| Error::Parse {
                    line: 0,
                    detail: "vocabulary entry is not UTF-8".into(),
                })?;
                let c = r.read_u64::<LittleEndian>().map_err(trunc)?;
                entries.push((surface, c));
            }
            vocabs.push(Vocabulary::from_raw_entries(entries, side));
        }
        let tgt_vocab = vocabs.pop().expect("two vocabularies");
        let src_vocab = vocabs.pop().expect("two vocabularies");
        for (side, vocab, expected) in [
            (Side::Source, &src_vocab, src_digest),
            (Side::Target, &tgt_vocab, tgt_digest),
        ] {
            if vocab.digest() != expected {
                return Err(Error::DigestMismatch(format!(
                    "embedded {side:?} vocabulary digest {:016x} does not match header {expected:016x}",
                    vocab.digest()
                )));
            }
        }

        let group = TaskGroupSpec {
            group: TaskGroupSpec::infer_kind(&tasks),
            tasks,
            total_layers,
            shared_layers,
            widths,
            embed_dim,
            tensor,
            alpha,
        };
        group.validate()?;

        // parameter tensors, in the same declaration order as build_group
        let read_mat = |r: &mut dyn Read, rows: usize, cols: usize| -> Result<Matrix<f32>> {
            let mut data = vec![0.0f32; rows * cols];
            for x in &mut data {
                *x = r.read_f32::<LittleEndian>().map_err(trunc)?;
            }
            Ok(Matrix { rows, cols, data })
        };
        let read_vec = |r: &mut dyn Read, len: usize| -> Result<Vec<f32>> {
            let mut data = vec![0.0f32; len];
            for x in &mut data {
                *x = r.read_f32::<LittleEndian>().map_err(trunc)?;
            }
            Ok(data)
        };

        let d = group.embed_dim;
        let src_embed = read_mat(r, src_vocab.len(), d)?;
        let tgt_embed = read_mat(r, tgt_vocab.len(), d)?;

        let t = group.shared_layers;
        let l = group.total_layers;
        let mut layer_dims: Vec<(usize, usize)> = Vec::new();
        if t > 0 {
            let mut fan_in = group.tasks[0].input_width() * d;
            for li in 0..t {
                layer_dims.push((fan_in, group.widths[li]));
                fan_in = group.widths[li];
            }
        }
        for task in &group.tasks {
            let mut fan_in = if t > 0 {
                group.widths[t - 1]
            } else {
                task.input_width() * d
            };
            for li in t..l {
                layer_dims.push((fan_in, group.widths[li]));
                fan_in = group.widths[li];
            }
        }

        let mut layers = Vec::with_capacity(layer_dims.len());
        for (fan_in, fan_out) in layer_dims {
            let kind = if group.tensor {
                LayerKind::Tensor {
                    q: read_mat(r, fan_in, fan_out)?,
                    r: read_mat(r, fan_in, fan_out)?,
                    bias_q: read_vec(r, fan_out)?,
                    bias_r: read_vec(r, fan_out)?,
                }
            } else {
                LayerKind::Plain {
                    w: read_mat(r, fan_in, fan_out)?,
                    bias: read_vec(r, fan_out)?,
                }
            };
            layers.push(LayerParams {
                kind,
                activation: Activation::Tanh,
            });
        }

        let mut heads = Vec::with_capacity(group.tasks.len());
        for task in &group.tasks {
            let labels = task.label_space_size(tgt_vocab.len()) as usize;
            heads.push(Head {
                name: task.name(),
                w: read_mat(r, group.widths[l - 1], labels)?,
                bias: read_vec(r, labels)?,
            });
        }

        // a longer file than the layout implies is corrupt too
        let mut probe = [0u8; 1];
        match r.read(&mut probe) {
            Ok(0) => {}
            Ok(_) => {
                return Err(Error::Parse {
                    line: 0,
                    detail: "trailing bytes after parameter tensors".into(),
                })
            }
            Err(e) => return Err(Error::io(path, e)),
        }

        Ok(Model {
            group,
            params: NetworkParams {
                src_embed,
                tgt_embed,
                layers,
                heads,
            },
            src_vocab,
            tgt_vocab,
        })
    }
}

/// One epoch's held-out record. Epoch 0 is the untrained baseline.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// (task name, held-out average log-likelihood, example count)
    pub per_task: Vec<(String, f64, u64)>,
    /// Sum of the per-task averages.
    pub summed: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn best_summed(&self) -> f64 {
        self.epochs
            .iter()
            .skip(1)
            .map(|e| e.summed)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

struct TaskData<'a> {
    train: &'a [TaskExample],
    heldout: &'a [TaskExample],
}

/// Average log-likelihood of `examples` under one task path (exact
/// softmax, natural log, f64 accumulation).
pub fn avg_loglik_examples(
    params: &NetworkParams<f32>,
    task: &TaskWiring,
    examples: &[TaskExample],
) -> f64 {
    let mut sum = 0.0f64;
    for ex in examples {
        let trace = forward(params, task, &ex.context, ex.label, 0.0f32);
        sum += trace.log_prob.to_f64();
    }
    sum / examples.len() as f64
}

/// Mean |logZ| over `examples`; the self-normalization diagnostic.
pub fn mean_abs_log_z(
    params: &NetworkParams<f32>,
    task: &TaskWiring,
    examples: &[TaskExample],
) -> f64 {
    let mut sum = 0.0f64;
    for ex in examples {
        let trace = forward(params, task, &ex.context, ex.label, 0.0f32);
        sum += trace.log_z.to_f64().abs();
    }
    sum / examples.len() as f64
}

/// Group training objective (negative log-likelihood plus the
/// log-partition penalty) over fixed parameters, evaluated in f64. Walks
/// tasks in interleaved round-robin batch order, exactly as the trainer
/// visits examples.
pub fn group_objective_f64(
    params: &NetworkParams<f32>,
    wiring: &GroupWiring,
    per_task_examples: &[&[TaskExample]],
    alpha: f64,
    batch_size: usize,
) -> f64 {
    let params64: NetworkParams<f64> = params.convert();
    let max_len = per_task_examples.iter().map(|e| e.len()).max().unwrap_or(0);
    let batches = max_len.div_ceil(batch_size);
    let mut sum = 0.0f64;
    for b in 0..batches {
        for (ti, examples) in per_task_examples.iter().enumerate() {
            let task = &wiring.tasks[ti];
            for idx in b * batch_size..((b + 1) * batch_size).min(examples.len()) {
                let ex = &examples[idx];
                sum += forward(&params64, task, &ex.context, ex.label, alpha).loss;
            }
        }
    }
    sum
}

/// Objective of a single task over fixed parameters, evaluated in f64 in
/// plain example order (the independent route for the additivity check).
pub fn task_objective_f64(
    params: &NetworkParams<f32>,
    task: &TaskWiring,
    examples: &[TaskExample],
    alpha: f64,
) -> f64 {
    let params64: NetworkParams<f64> = params.convert();
    let mut sum = 0.0f64;
    for ex in examples {
        sum += forward(&params64, task, &ex.context, ex.label, alpha).loss;
    }
    sum
}

fn heldout_record(
    epoch: usize,
    learning_rate: f64,
    params: &NetworkParams<f32>,
    wiring: &GroupWiring,
    data: &[TaskData<'_>],
) -> EpochRecord {
    let per_task: Vec<(String, f64, u64)> = data
        .iter()
        .enumerate()
        .map(|(ti, td)| {
            let task = &wiring.tasks[ti];
            (
                task.name.clone(),
                avg_loglik_examples(params, task, td.heldout),
                td.heldout.len() as u64,
            )
        })
        .collect();
    let summed = per_task.iter().map(|(_, ll, _)| ll).sum();
    EpochRecord {
        epoch,
        learning_rate,
        per_task,
        summed,
    }
}

/// Accumulate gradients for a batch of one task, optionally across
/// workers. Returns the number of examples seen.
fn batch_gradients(
    params: &NetworkParams<f32>,
    task: &TaskWiring,
    examples: &[&TaskExample],
    alpha: f32,
    workers: usize,
    grads: &mut Gradients<f32>,
) {
    if workers <= 1 || examples.len() < 2 * workers {
        for ex in examples {
            let trace = forward(params, task, &ex.context, ex.label, alpha);
            backward(params, task, &ex.context, &trace, grads);
        }
        return;
    }
    let chunk = examples.len().div_ceil(workers);
    let partials: Vec<Gradients<f32>> = std::thread::scope(|scope| {
        let handles: Vec<_> = examples
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    let mut g = Gradients::zeros_like(params);
                    for ex in part {
                        let trace = forward(params, task, &ex.context, ex.label, alpha);
                        backward(params, task, &ex.context, &trace, &mut g);
                    }
                    g
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for partial in &partials {
        grads.add_assign(partial);
    }
}

/// theta -= scale * gradient, touching only accumulated embedding rows.
fn apply_update(params: &mut NetworkParams<f32>, grads: &Gradients<f32>, scale: f32) {
    for &row in &grads.touched_src {
        let dst = params.src_embed.row_mut(row as usize);
        for (p, &g) in dst.iter_mut().zip(grads.src_embed.row(row as usize)) {
            *p -= scale * g;
        }
    }
    for &row in &grads.touched_tgt {
        let dst = params.tgt_embed.row_mut(row as usize);
        for (p, &g) in dst.iter_mut().zip(grads.tgt_embed.row(row as usize)) {
            *p -= scale * g;
        }
    }
    for (layer, glayer) in params.layers.iter_mut().zip(&grads.layers) {
        match (&mut layer.kind, &glayer.kind) {
            (LayerKind::Plain { w, bias }, LayerKind::Plain { w: gw, bias: gb }) => {
                for (p, &g) in w.data.iter_mut().zip(&gw.data) {
                    *p -= scale * g;
                }
                for (p, &g) in bias.iter_mut().zip(gb) {
                    *p -= scale * g;
                }
            }
            (
                LayerKind::Tensor {
                    q,
                    r,
                    bias_q,
                    bias_r,
                },
                LayerKind::Tensor {
                    q: gq,
                    r: gr,
                    bias_q: gbq,
                    bias_r: gbr,
                },
            ) => {
                for (p, &g) in q.data.iter_mut().zip(&gq.data) {
                    *p -= scale * g;
                }
                for (p, &g) in r.data.iter_mut().zip(&gr.data) {
                    *p -= scale * g;
                }
                for (p, &g) in bias_q.iter_mut().zip(gbq) {
                    *p -= scale * g;
                }
                for (p, &g) in bias_r.iter_mut().zip(gbr) {
                    *p -= scale * g;
                }
            }
            _ => unreachable!("gradient layer kinds match"),
        }
    }
    for (head, ghead) in params.heads.iter_mut().zip(&grads.heads) {
        for (p, &g) in head.w.data.iter_mut().zip(&ghead.w.data) {
            *p -= scale * g;
        }
        for (p, &g) in head.bias.iter_mut().zip(&ghead.bias) {
            *p -= scale * g;
        }
    }
}

/// Train a task group by minibatch SGD.
///
/// Minibatches are drawn from one task at a time in round-robin over a
/// task order reshuffled each epoch; an epoch ends when the largest task
/// has cycled once, smaller tasks wrapping as needed. Held-out data is the
/// last 5% of each shard unless validation shards are supplied. The
/// learning rate halves after `patience` consecutive epochs without
/// improvement of the summed held-out average log-likelihood.
pub fn train(
    spec: &TaskGroupSpec,
    shards: &[Shard],
    val_shards: Option<&[Shard]>,
    config: &TrainConfig,
    src_vocab: &Vocabulary,
    tgt_vocab: &Vocabulary,
) -> Result<(Model, TrainHistory)> {
    spec.validate()?;
    config.validate()?;

    // pair each task with its shard
    let mut matched: Vec<&Shard> = Vec::with_capacity(spec.tasks.len());
    for task in &spec.tasks {
        let shard = shards
            .iter()
            .find(|s| s.spec == *task)
            .ok_or_else(|| Error::Config(format!("no shard supplied for task {}", task.name())))?;
        let expected_labels = task.label_space_size(tgt_vocab.len());
        if shard.label_space_size != expected_labels {
            return Err(Error::Config(format!(
                "shard for {} has label space {} but the vocabulary implies {}",
                task.name(),
                shard.label_space_size,
                expected_labels
            )));
        }
        matched.push(shard);
    }
    let val_matched: Option<Vec<&Shard>> = match val_shards {
        None => None,
        Some(vs) => {
            let mut out = Vec::with_capacity(spec.tasks.len());
            for task in &spec.tasks {
                let shard = vs.iter().find(|s| s.spec == *task).ok_or_else(|| {
                    Error::Config(format!("no validation shard for task {}", task.name()))
                })?;
                out.push(shard);
            }
            Some(out)
        }
    };

    let data: Vec<TaskData<'_>> = matched
        .iter()
        .enumerate()
        .map(|(ti, shard)| -> Result<TaskData<'_>> {
            match &val_matched {
                Some(vals) => {
                    if shard.examples.is_empty() || vals[ti].examples.is_empty() {
                        return Err(Error::Config(format!(
                            "task {} has an empty shard",
                            spec.tasks[ti].name()
                        )));
                    }
                    Ok(TaskData {
                        train: &shard.examples,
                        heldout: &vals[ti].examples,
                    })
                }
                None => {
                    let len = shard.examples.len();
                    if len < 2 {
                        return Err(Error::Config(format!(
                            "task {} needs at least 2 examples to split off held-out data",
                            spec.tasks[ti].name()
                        )));
                    }
                    let holdout = (len / 20).max(1);
                    Ok(TaskData {
                        train: &shard.examples[..len - holdout],
                        heldout: &shard.examples[len - holdout..],
                    })
                }
            }
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut params, wiring) =
        build_group_with_rng(spec, src_vocab.len(), tgt_vocab.len(), &mut rng)?;

    for (ti, td) in data.iter().enumerate() {
        let width = spec.tasks[ti].input_width();
        if td.train.iter().chain(td.heldout).any(|ex| ex.context.len() != width) {
            return Err(Error::Config(format!(
                "shard for {} holds examples of the wrong width",
                spec.tasks[ti].name()
            )));
        }
        let sides = spec.tasks[ti].slot_sides();
        let in_range = |ex: &&TaskExample| {
            ex.context.iter().zip(&sides).all(|(&id, side)| {
                (id as usize)
                    < match side {
                        Side::Source => src_vocab.len(),
                        Side::Target => tgt_vocab.len(),
                    }
            })
        };
        if !td.train.iter().chain(td.heldout).all(|ex| in_range(&ex)) {
            return Err(Error::Config(format!(
                "shard for {} holds token ids outside the vocabulary",
                spec.tasks[ti].name()
            )));
        }
    }

    let alpha = spec.alpha as f32;
    let mut lr = config.learning_rate;
    let mut history = TrainHistory::default();
    history
        .epochs
        .push(heldout_record(0, lr, &params, &wiring, &data));

    let mut grads = Gradients::zeros_like(&params);
    let max_len = data.iter().map(|td| td.train.len()).max().unwrap_or(0);
    let batches_per_task = max_len.div_ceil(config.batch_size);

    let mut best = history.epochs[0].summed;
    let mut stale = 0usize;

    for epoch in 1..=config.epochs {
        let mut task_order: Vec<usize> = (0..spec.tasks.len()).collect();
        task_order.shuffle(&mut rng);
        let mut perms: Vec<Vec<usize>> = data
            .iter()
            .map(|td| {
                let mut perm: Vec<usize> = (0..td.train.len()).collect();
                perm.shuffle(&mut rng);
                perm
            })
            .collect();
        let mut cursors = vec![0usize; spec.tasks.len()];

        for _ in 0..batches_per_task {
            for &ti in &task_order {
                let td = &data[ti];
                let perm = &mut perms[ti];
                let len = td.train.len();
                let take = config.batch_size.min(len);
                let mut batch: Vec<&TaskExample> = Vec::with_capacity(take);
                for _ in 0..take {
                    batch.push(&td.train[perm[cursors[ti]]]);
                    cursors[ti] += 1;
                    if cursors[ti] == len {
                        cursors[ti] = 0;
                    }
                }
                grads.zero();
                batch_gradients(
                    &params,
                    &wiring.tasks[ti],
                    &batch,
                    alpha,
                    config.workers,
                    &mut grads,
                );
                apply_update(&mut params, &grads, (lr / batch.len() as f64) as f32);
            }
        }

        let record = heldout_record(epoch, lr, &params, &wiring, &data);
        let summed = record.summed;
        history.epochs.push(record);

        if summed > best {
            best = summed;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                lr /= 2.0;
                stale = 0;
            }
        }
    }

    Ok((
        Model {
            group: spec.clone(),
            params,
            src_vocab: src_vocab.clone(),
            tgt_vocab: tgt_vocab.clone(),
        },
        history,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::write_shard;

    fn tiny_vocabs() -> (Vocabulary, Vocabulary) {
        let sv = Vocabulary::build(["a", "b", "c"], 1, 100, Side::Source).unwrap();
        let tv = Vocabulary::build(["x", "y", "z"], 1, 100, Side::Target).unwrap();
        (sv, tv)
    }

    fn toy_shard(spec: TaskSpec, labels: u32, count: usize, seed: u64) -> Shard {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = spec.input_width();
        let examples = (0..count)
            .map(|_| TaskExample {
                context: (0..width).map(|_| rng.random_range(0..7u32)).collect(),
                label: rng.random_range(0..labels),
            })
            .collect();
        Shard {
            spec,
            label_space_size: labels,
            examples,
        }
    }

    #[test]
    fn build_group_shares_trunk() {
        let spec = TaskGroupSpec {
            group: GroupKind::SrcEn,
            tasks: vec![
                TaskSpec::tcm(0, 1),
                TaskSpec::tcm(-1, 1),
                TaskSpec::tcm(1, 1),
                TaskSpec::ori(1),
                TaskSpec::fert(1),
            ],
            total_layers: 3,
            shared_layers: 1,
            widths: vec![16, 16, 16],
            embed_dim: 4,
            tensor: true,
            alpha: 0.1,
        };
        let (params, wiring) = build_group(&spec, 7, 7, 1).unwrap();
        // 1 shared + 5 tasks x 2 private
        assert_eq!(params.layers.len(), 11);
        assert_eq!(params.heads.len(), 5);
        for task in &wiring.tasks {
            assert_eq!(task.layer_path.len(), 3);
            assert_eq!(task.layer_path[0], 0);
        }
        let private: Vec<usize> = wiring.tasks.iter().map(|t| t.layer_path[1]).collect();
        let mut dedup = private.clone();
        dedup.dedup();
        assert_eq!(private, dedup, "private layers are not shared");
    }

    #[test]
    fn build_group_rejects_bad_specs() {
        let mut spec = TaskGroupSpec {
            group: GroupKind::SrcEn,
            tasks: vec![TaskSpec::tcm(0, 1), TaskSpec::fert(1)],
            total_layers: 2,
            shared_layers: 2,
            widths: vec![8, 8],
            embed_dim: 4,
            tensor: false,
            alpha: 0.0,
        };
        assert!(build_group(&spec, 7, 7, 1).is_err()); // t >= L

        spec.shared_layers = 1;
        spec.tasks = vec![TaskSpec::tcm(0, 1), TaskSpec::fert(2)];
        assert!(build_group(&spec, 7, 7, 1).is_err()); // heterogeneous widths

        spec.group = GroupKind::HypEn;
        spec.tasks = vec![TaskSpec::jmo(0, 3, 1), TaskSpec::jmo(1, 3, 1)];
        assert!(build_group(&spec, 7, 7, 1).is_err()); // HypEn with t > 0
        spec.shared_layers = 0;
        assert!(build_group(&spec, 7, 7, 1).is_ok());
    }

    #[test]
    fn single_task_group_matches_standalone_structure() {
        let task = TaskSpec::tcm(0, 1);
        let single = TaskGroupSpec::single(task, &[8, 8], 4, false, 0.1);
        let mut srcen_one = single.clone();
        srcen_one.group = GroupKind::SrcEn;
        let (p1, w1) = build_group(&single, 7, 7, 42).unwrap();
        let (p2, w2) = build_group(&srcen_one, 7, 7, 42).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(w1, w2);
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let (sv, tv) = tiny_vocabs();
        let spec = TaskGroupSpec::single(TaskSpec::ori(1), &[6], 3, true, 0.1);
        let (params, _) = build_group(&spec, sv.len(), tv.len(), 5).unwrap();
        let model = Model {
            group: spec,
            params,
            src_vocab: sv,
            tgt_vocab: tv,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mtnn");
        model.save(&path).unwrap();
        let back = Model::load(&path).unwrap();
        assert_eq!(model, back);

        // a second save of the loaded model produces identical bytes
        let path2 = dir.path().join("m2.mtnn");
        back.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn model_load_rejects_corruption() {
        let (sv, tv) = tiny_vocabs();
        let spec = TaskGroupSpec::single(TaskSpec::fert(1), &[4], 2, false, 0.0);
        let (params, _) = build_group(&spec, sv.len(), tv.len(), 5).unwrap();
        let model = Model {
            group: spec,
            params,
            src_vocab: sv,
            tgt_vocab: tv,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mtnn");
        model.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        std::fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        assert_eq!(Model::load(&path).unwrap_err().category(), "truncated");

        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert_eq!(Model::load(&path).unwrap_err().category(), "bad-magic");

        let mut v2 = bytes.clone();
        v2[4] = 2;
        std::fs::write(&path, &v2).unwrap();
        assert_eq!(
            Model::load(&path).unwrap_err().category(),
            "unsupported-version"
        );

        let mut padded = bytes.clone();
        padded.extend_from_slice(&[0u8; 8]);
        std::fs::write(&path, &padded).unwrap();
        assert_eq!(Model::load(&path).unwrap_err().category(), "parse");
    }

    #[test]
    fn verify_vocab_digest() {
        let (sv, tv) = tiny_vocabs();
        let spec = TaskGroupSpec::single(TaskSpec::fert(1), &[4], 2, false, 0.0);
        let (params, _) = build_group(&spec, sv.len(), tv.len(), 5).unwrap();
        let model = Model {
            group: spec,
            params,
            src_vocab: sv.clone(),
            tgt_vocab: tv,
        };
        assert!(model.verify_vocab(Side::Source, &sv).is_ok());
        let other = Vocabulary::build(["q"], 1, 100, Side::Source).unwrap();
        assert_eq!(
            model.verify_vocab(Side::Source, &other).unwrap_err().category(),
            "digest-mismatch"
        );
    }

    #[test]
    fn train_is_seed_deterministic() {
        let (sv, tv) = tiny_vocabs();
        let spec = TaskGroupSpec::single(TaskSpec::fert(1), &[6], 3, true, 0.1);
        let shard = toy_shard(TaskSpec::fert(1), 2, 60, 9);
        let config = TrainConfig {
            epochs: 3,
            batch_size: 8,
            learning_rate: 0.2,
            patience: 2,
            seed: 11,
            workers: 1,
        };
        let dir = tempfile::tempdir().unwrap();
        let (m1, _) = train(&spec, std::slice::from_ref(&shard), None, &config, &sv, &tv).unwrap();
        let (m2, _) = train(&spec, std::slice::from_ref(&shard), None, &config, &sv, &tv).unwrap();
        let p1 = dir.path().join("a.mtnn");
        let p2 = dir.path().join("b.mtnn");
        m1.save(&p1).unwrap();
        m2.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn train_missing_shard_is_config_error() {
        let (sv, tv) = tiny_vocabs();
        let spec = TaskGroupSpec {
            group: GroupKind::SrcEn,
            tasks: vec![TaskSpec::fert(1), TaskSpec::ori(1)],
            total_layers: 1,
            shared_layers: 0,
            widths: vec![4],
            embed_dim: 2,
            tensor: false,
            alpha: 0.0,
        };
        let shard = toy_shard(TaskSpec::fert(1), 2, 40, 9);
        let err = train(
            &spec,
            std::slice::from_ref(&shard),
            None,
            &TrainConfig::default(),
            &sv,
            &tv,
        )
        .unwrap_err();
        assert_eq!(err.category(), "config");
    }

    #[test]
    fn shared_layers_are_one_storage_location() {
        // gradient flowing through task A's updates must move what task B
        // sees: train two tasks, then check the shared layer is literally
        // the same pool entry in both paths
        let spec = TaskGroupSpec {
            group: GroupKind::SrcEn,
            tasks: vec![TaskSpec::fert(1), TaskSpec::ori(1)],
            total_layers: 2,
            shared_layers: 1,
            widths: vec![6, 6],
            embed_dim: 3,
            tensor: false,
            alpha: 0.0,
        };
        let (_, wiring) = build_group(&spec, 7, 7, 3).unwrap();
        assert_eq!(wiring.tasks[0].layer_path[0], wiring.tasks[1].layer_path[0]);
        assert_ne!(wiring.tasks[0].layer_path[1], wiring.tasks[1].layer_path[1]);
    }

    #[test]
    fn round_trip_keeps_avg_loglik_exact() {
        let (sv, tv) = tiny_vocabs();
        let task = TaskSpec::ori(1);
        let spec = TaskGroupSpec::single(task, &[6], 3, true, 0.1);
        let shard = toy_shard(task, 30, 50, 13);
        let config = TrainConfig {
            epochs: 2,
            batch_size: 8,
            learning_rate: 0.1,
            patience: 2,
            seed: 7,
            workers: 1,
        };
        let (model, _) = train(&spec, std::slice::from_ref(&shard), None, &config, &sv, &tv).unwrap();
        let wiring = model.wiring();
        let before = avg_loglik_examples(&model.params, &wiring.tasks[0], &shard.examples);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mtnn");
        model.save(&path).unwrap();
        let back = Model::load(&path).unwrap();
        let after = avg_loglik_examples(&back.params, &back.wiring().tasks[0], &shard.examples);
        assert_eq!(before.to_bits(), after.to_bits());
    }

    #[test]
    fn out_of_vocabulary_ids_in_shard_are_config_error() {
        let (sv, tv) = tiny_vocabs();
        let task = TaskSpec::fert(1);
        let spec = TaskGroupSpec::single(task, &[4], 2, false, 0.0);
        let shard = Shard {
            spec: task,
            label_space_size: 2,
            examples: vec![
                TaskExample {
                    context: vec![1, 2, 3],
                    label: 0,
                },
                TaskExample {
                    context: vec![1, 99, 3],
                    label: 1,
                },
            ],
        };
        let err = train(
            &spec,
            std::slice::from_ref(&shard),
            None,
            &TrainConfig::default(),
            &sv,
            &tv,
        )
        .unwrap_err();
        assert_eq!(err.category(), "config");
    }

    #[test]
    fn multi_worker_training_runs() {
        let (sv, tv) = tiny_vocabs();
        let task = TaskSpec::fert(1);
        let spec = TaskGroupSpec::single(task, &[6], 3, true, 0.1);
        let shard = toy_shard(task, 2, 120, 17);
        let config = TrainConfig {
            epochs: 2,
            batch_size: 16,
            learning_rate: 0.2,
            patience: 2,
            seed: 4,
            workers: 3,
        };
        let (model, history) =
            train(&spec, std::slice::from_ref(&shard), None, &config, &sv, &tv).unwrap();
        assert_eq!(history.epochs.len(), 3);
        assert!(model.params.heads[0].w.data.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn empty_training_shard_with_validation_is_config_error() {
        let (sv, tv) = tiny_vocabs();
        let task = TaskSpec::fert(1);
        let spec = TaskGroupSpec::single(task, &[4], 2, false, 0.0);
        let empty = Shard {
            spec: task,
            label_space_size: 2,
            examples: vec![],
        };
        let val = toy_shard(task, 2, 10, 3);
        let err = train(
            &spec,
            std::slice::from_ref(&empty),
            Some(std::slice::from_ref(&val)),
            &TrainConfig::default(),
            &sv,
            &tv,
        )
        .unwrap_err();
        assert_eq!(err.category(), "config");
    }

    #[test]
    fn toy_group_training_improves_heldout() {
        use crate::corpus::parse_bitext_readers;
        use crate::extract::{extract_corpus, NullMode};
        use crate::synth::{gen_synth, SynthPattern};
        use std::io::Cursor;

        let c = gen_synth(SynthPattern::Monotone, 600, 10, 2).unwrap();
        let sv = Vocabulary::build(c.src.join(" ").split_whitespace(), 1, 1000, Side::Source)
            .unwrap();
        let tv = Vocabulary::build(c.tgt.join(" ").split_whitespace(), 1, 1000, Side::Target)
            .unwrap();
        let pairs = parse_bitext_readers(
            Cursor::new(c.src.join("\n") + "\n"),
            Cursor::new(c.tgt.join("\n") + "\n"),
            Cursor::new(c.align.join("\n") + "\n"),
            &sv,
            &tv,
        )
        .unwrap();
        let tasks = vec![TaskSpec::tcm(0, 1), TaskSpec::ori(1), TaskSpec::fert(1)];
        let shards: Vec<Shard> = tasks
            .iter()
            .map(|t| Shard {
                spec: *t,
                label_space_size: t.label_space_size(tv.len()),
                examples: extract_corpus(&pairs, t, NullMode::PredictNull, 1),
            })
            .collect();
        let spec = TaskGroupSpec {
            group: GroupKind::SrcEn,
            tasks,
            total_layers: 2,
            shared_layers: 1,
            widths: vec![12, 12],
            embed_dim: 6,
            tensor: true,
            alpha: 0.1,
        };
        let config = TrainConfig {
            epochs: 5,
            batch_size: 32,
            learning_rate: 0.3,
            patience: 2,
            seed: 3,
            workers: 1,
        };
        let (_, history) = train(&spec, &shards, None, &config, &sv, &tv).unwrap();
        assert!(
            history.best_summed() > history.epochs[0].summed,
            "held-out sum never improved over the untrained baseline: {:?}",
            history.epochs.iter().map(|e| e.summed).collect::<Vec<_>>()
        );
    }

    #[test]
    fn t0_private_stacks_are_isomorphic_to_standalone() {
        // with t = 0 each task's reachable function class contains its
        // standalone counterpart: same layer shapes, same head shapes
        let tasks = [TaskSpec::tcm(0, 1), TaskSpec::ori(1)];
        let group = TaskGroupSpec {
            group: GroupKind::SrcEn,
            tasks: tasks.to_vec(),
            total_layers: 2,
            shared_layers: 0,
            widths: vec![10, 10],
            embed_dim: 4,
            tensor: true,
            alpha: 0.1,
        };
        let (gp, gw) = build_group(&group, 9, 9, 1).unwrap();
        for (ti, task) in tasks.iter().enumerate() {
            let single = TaskGroupSpec::single(*task, &[10, 10], 4, true, 0.1);
            let (sp, sw) = build_group(&single, 9, 9, 1).unwrap();
            let gpath = &gw.tasks[ti].layer_path;
            let spath = &sw.tasks[0].layer_path;
            assert_eq!(gpath.len(), spath.len());
            for (&gl, &sl) in gpath.iter().zip(spath) {
                assert_eq!(gp.layers[gl].in_dim(), sp.layers[sl].in_dim());
                assert_eq!(gp.layers[gl].out_dim(), sp.layers[sl].out_dim());
            }
            let ghead = &gp.heads[gw.tasks[ti].head];
            let shead = &sp.heads[sw.tasks[0].head];
            assert_eq!((ghead.w.rows, ghead.w.cols), (shead.w.rows, shead.w.cols));
        }
    }

    #[test]
    fn shard_file_feeds_trainer() {
        // end-to-end through the on-disk shard format
        let (sv, tv) = tiny_vocabs();
        let task = TaskSpec::fert(1);
        let shard = toy_shard(task, 2, 40, 21);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.shard");
        write_shard(&path, &shard.spec, shard.label_space_size, &shard.examples).unwrap();
        let loaded = crate::extract::read_shard(&path).unwrap();
        let spec = TaskGroupSpec::single(task, &[4], 2, false, 0.0);
        let config = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let (_, history) = train(&spec, &[loaded], None, &config, &sv, &tv).unwrap();
        assert_eq!(history.epochs.len(), 2);
    }
}
