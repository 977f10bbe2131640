//! Feedforward network core: embeddings, plain and tensor hidden layers,
//! per-task softmax heads with a log-partition penalty, exact forward and
//! backward passes, and finite-difference gradient checking.
//!
//! Everything is generic over the scalar so training can run in `f32`
//! while verification runs in `f64`.

use crate::corpus::Side;

/// Minimal float abstraction: just what the passes need.
pub trait Scalar:
    Copy
    + PartialOrd
    + std::fmt::Debug
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn tanh(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn abs(self) -> Self;
    fn maximum(self, other: Self) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn tanh(self) -> Self {
                self.tanh()
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn ln(self) -> Self {
                self.ln()
            }
            fn abs(self) -> Self {
                self.abs()
            }
            fn maximum(self, other: Self) -> Self {
                if self > other {
                    self
                } else {
                    other
                }
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Matrix<S> {
        Matrix {
            rows,
            cols,
            data: vec![S::ZERO; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<S>>) -> Matrix<S> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend(row);
        }
        Matrix {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(S) -> T) -> Matrix<T> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

/// out[c] = sum_r x[r] * m[r][c] + bias[c]
fn affine<S: Scalar>(x: &[S], m: &Matrix<S>, bias: &[S], out: &mut [S]) {
    debug_assert_eq!(x.len(), m.rows);
    debug_assert_eq!(out.len(), m.cols);
    out.copy_from_slice(bias);
    for (r, &xv) in x.iter().enumerate() {
        let row = m.row(r);
        for (o, &w) in out.iter_mut().zip(row) {
            *o += xv * w;
        }
    }
}

/// dx[r] += sum_c m[r][c] * dout[c]; dm[r][c] += x[r] * dout[c]
fn affine_backward<S: Scalar>(
    x: &[S],
    m: &Matrix<S>,
    dout: &[S],
    dx: &mut [S],
    dm: &mut Matrix<S>,
    dbias: &mut [S],
) {
    for (db, &d) in dbias.iter_mut().zip(dout) {
        *db += d;
    }
    for (r, &xv) in x.iter().enumerate() {
        let row = m.row(r);
        let drow = dm.row_mut(r);
        let mut acc = S::ZERO;
        for ((&w, dw), &d) in row.iter().zip(drow.iter_mut()).zip(dout) {
            acc += w * d;
            *dw += xv * d;
        }
        dx[r] += acc;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply<S: Scalar>(self, x: &mut [S]) {
        if self == Activation::Tanh {
            for v in x {
                *v = v.tanh();
            }
        }
    }

    /// Derivative expressed through the activation value.
    fn derive<S: Scalar>(self, activated: S) -> S {
        match self {
            Activation::Tanh => S::ONE - activated * activated,
            Activation::Identity => S::ONE,
        }
    }
}

/// One hidden layer: either a dense affine map or a double projection
/// merged by an element-wise product. Both produce `out_dim` activations,
/// so the two kinds are drop-in interchangeable at equal widths.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind<S> {
    Plain {
        w: Matrix<S>,
        bias: Vec<S>,
    },
    Tensor {
        q: Matrix<S>,
        r: Matrix<S>,
        bias_q: Vec<S>,
        bias_r: Vec<S>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<S> {
    pub kind: LayerKind<S>,
    pub activation: Activation,
}

impl<S: Scalar> LayerParams<S> {
    pub fn in_dim(&self) -> usize {
        match &self.kind {
            LayerKind::Plain { w, .. } => w.rows,
            LayerKind::Tensor { q, .. } => q.rows,
        }
    }

    pub fn out_dim(&self) -> usize {
        match &self.kind {
            LayerKind::Plain { w, .. } => w.cols,
            LayerKind::Tensor { q, .. } => q.cols,
        }
    }
}

/// Softmax output head for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Head<S> {
    pub name: String,
    pub w: Matrix<S>,
    pub bias: Vec<S>,
}

/// All parameters of one (possibly multitask) network: the two embedding
/// tables, a flat pool of hidden layers, and one head per task. Which
/// layers a task traverses is the wiring's business; shared layers are
/// shared by construction because tasks index into one pool.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<S> {
    pub src_embed: Matrix<S>,
    pub tgt_embed: Matrix<S>,
    pub layers: Vec<LayerParams<S>>,
    pub heads: Vec<Head<S>>,
}

impl<S: Scalar> NetworkParams<S> {
    pub fn embed_dim(&self) -> usize {
        self.src_embed.cols
    }

    pub fn head_index(&self, name: &str) -> Option<usize> {
        self.heads.iter().position(|h| h.name == name)
    }

    pub fn convert<T: Scalar>(&self) -> NetworkParams<T> {
        let conv_vec = |v: &Vec<S>| v.iter().map(|x| T::from_f64(x.to_f64())).collect();
        let conv_mat = |m: &Matrix<S>| m.map(|x| T::from_f64(x.to_f64()));
        NetworkParams {
            src_embed: conv_mat(&self.src_embed),
            tgt_embed: conv_mat(&self.tgt_embed),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    kind: match &l.kind {
                        LayerKind::Plain { w, bias } => LayerKind::Plain {
                            w: conv_mat(w),
                            bias: conv_vec(bias),
                        },
                        LayerKind::Tensor {
                            q,
                            r,
                            bias_q,
                            bias_r,
                        } => LayerKind::Tensor {
                            q: conv_mat(q),
                            r: conv_mat(r),
                            bias_q: conv_vec(bias_q),
                            bias_r: conv_vec(bias_r),
                        },
                    },
                    activation: l.activation,
                })
                .collect(),
            heads: self
                .heads
                .iter()
                .map(|h| Head {
                    name: h.name.clone(),
                    w: conv_mat(&h.w),
                    bias: conv_vec(&h.bias),
                })
                .collect(),
        }
    }

    /// Named views over every parameter tensor, in declaration order.
    /// Gradient buffers expose the same names in the same order.
    pub fn param_slices_mut(&mut self) -> Vec<(String, &mut [S])> {
        let mut out: Vec<(String, &mut [S])> = Vec::new();
        out.push(("src_embed".into(), self.src_embed.data.as_mut_slice()));
        out.push(("tgt_embed".into(), self.tgt_embed.data.as_mut_slice()));
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match &mut layer.kind {
                LayerKind::Plain { w, bias } => {
                    out.push((format!("layer{i}.w"), w.data.as_mut_slice()));
                    out.push((format!("layer{i}.bias"), bias.as_mut_slice()));
                }
                LayerKind::Tensor {
                    q,
                    r,
                    bias_q,
                    bias_r,
                } => {
                    out.push((format!("layer{i}.q"), q.data.as_mut_slice()));
                    out.push((format!("layer{i}.r"), r.data.as_mut_slice()));
                    out.push((format!("layer{i}.bias_q"), bias_q.as_mut_slice()));
                    out.push((format!("layer{i}.bias_r"), bias_r.as_mut_slice()));
                }
            }
        }
        for head in &mut self.heads {
            out.push((format!("head.{}.w", head.name), head.w.data.as_mut_slice()));
            out.push((format!("head.{}.bias", head.name), head.bias.as_mut_slice()));
        }
        out
    }
}

/// How one task reads the shared parameter pool: embedding slot sides, the
/// layer indices it traverses (shared prefix first), and its head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskWiring {
    pub name: String,
    pub slots: Vec<Side>,
    pub layer_path: Vec<usize>,
    pub head: usize,
}

/// Wiring for a whole task group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupWiring {
    pub tasks: Vec<TaskWiring>,
}

impl GroupWiring {
    pub fn task(&self, name: &str) -> Option<&TaskWiring> {
        self.tasks.iter().find(|t| t.name == name)
    }
}

/// Concatenated embedding rows for the given slot ids.
pub fn embed<S: Scalar>(params: &NetworkParams<S>, slots: &[Side], ids: &[u32]) -> Vec<S> {
    assert_eq!(slots.len(), ids.len(), "slot/id arity mismatch");
    let d = params.embed_dim();
    let mut out = Vec::with_capacity(slots.len() * d);
    for (&side, &id) in slots.iter().zip(ids) {
        let table = match side {
            Side::Source => &params.src_embed,
            Side::Target => &params.tgt_embed,
        };
        assert!(
            (id as usize) < table.rows,
            "embedding id {id} out of range for table of {} rows",
            table.rows
        );
        out.extend_from_slice(table.row(id as usize));
    }
    out
}

/// h_out = act(h_in . w + bias)
pub fn plain_layer<S: Scalar>(h_in: &[S], w: &Matrix<S>, bias: &[S], act: Activation) -> Vec<S> {
    let mut out = vec![S::ZERO; w.cols];
    affine(h_in, w, bias, &mut out);
    act.apply(&mut out);
    out
}

/// h_out = act(h_in . q + bias_q) (*) act(h_in . r + bias_r), element-wise.
///
/// Each output coordinate k equals `h . (q[:,k] r[:,k]^T) . h^T` when the
/// activation is the identity and biases are zero: the rank-1 slice of an
/// order-3 weight tensor.
pub fn tensor_layer<S: Scalar>(
    h_in: &[S],
    q: &Matrix<S>,
    r: &Matrix<S>,
    bias_q: &[S],
    bias_r: &[S],
    act: Activation,
) -> Vec<S> {
    let mut vq = vec![S::ZERO; q.cols];
    let mut vr = vec![S::ZERO; r.cols];
    affine(h_in, q, bias_q, &mut vq);
    affine(h_in, r, bias_r, &mut vr);
    act.apply(&mut vq);
    act.apply(&mut vr);
    vq.iter().zip(&vr).map(|(&a, &b)| a * b).collect()
}

fn layer_forward<S: Scalar>(layer: &LayerParams<S>, h_in: &[S]) -> LayerTrace<S> {
    match &layer.kind {
        LayerKind::Plain { w, bias } => LayerTrace::Plain {
            out: plain_layer(h_in, w, bias, layer.activation),
        },
        LayerKind::Tensor {
            q,
            r,
            bias_q,
            bias_r,
        } => {
            let mut vq = vec![S::ZERO; q.cols];
            let mut vr = vec![S::ZERO; r.cols];
            affine(h_in, q, bias_q, &mut vq);
            affine(h_in, r, bias_r, &mut vr);
            layer.activation.apply(&mut vq);
            layer.activation.apply(&mut vr);
            let out = vq.iter().zip(&vr).map(|(&a, &b)| a * b).collect();
            LayerTrace::Tensor { vq, vr, out }
        }
    }
}

/// Retained activations for one layer; enough for an exact backward pass
/// without re-running forward.
#[derive(Debug, Clone)]
pub enum LayerTrace<S> {
    Plain { out: Vec<S> },
    Tensor { vq: Vec<S>, vr: Vec<S>, out: Vec<S> },
}

impl<S> LayerTrace<S> {
    pub fn out(&self) -> &[S] {
        match self {
            LayerTrace::Plain { out } => out,
            LayerTrace::Tensor { out, .. } => out,
        }
    }
}

/// Full forward record for one example.
#[derive(Debug, Clone)]
pub struct ForwardTrace<S> {
    pub input: Vec<S>,
    pub layers: Vec<LayerTrace<S>>,
    pub logits: Vec<S>,
    pub log_z: S,
    /// log P(label), exact normalization.
    pub log_prob: S,
    pub loss: S,
    pub dlogits: Vec<S>,
}

fn head_forward<S: Scalar>(
    h_top: &[S],
    head: &Head<S>,
    label: u32,
    alpha: S,
) -> (Vec<S>, S, Vec<S>, S) {
    assert!(
        (label as usize) < head.w.cols,
        "label {label} out of range for head {} with {} classes",
        head.name,
        head.w.cols
    );
    let mut z = vec![S::ZERO; head.w.cols];
    affine(h_top, &head.w, &head.bias, &mut z);

    let zmax = z
        .iter()
        .copied()
        .fold(S::from_f64(f64::NEG_INFINITY), |a, b| a.maximum(b));
    let mut sum = S::ZERO;
    for &zi in &z {
        sum += (zi - zmax).exp();
    }
    let log_z = zmax + sum.ln();
    let loss = -(z[label as usize] - log_z) + alpha * log_z * log_z;

    // d/dz = softmax(z) * (1 + 2*alpha*logZ) - onehot(label)
    let scale = S::ONE + (alpha + alpha) * log_z;
    let mut dlogits: Vec<S> = z.iter().map(|&zi| ((zi - log_z).exp()) * scale).collect();
    dlogits[label as usize] -= S::ONE;

    (z, loss, dlogits, log_z)
}

/// Head loss with the log-partition penalty:
/// `loss = -(z[label] - logZ) + alpha * logZ^2`, plus its exact gradient
/// with respect to the logits.
pub fn head_loss<S: Scalar>(
    h_top: &[S],
    head: &Head<S>,
    label: u32,
    alpha: S,
) -> (S, Vec<S>, S) {
    let (_, loss, dlogits, log_z) = head_forward(h_top, head, label, alpha);
    (loss, dlogits, log_z)
}

/// Run one example through its task path.
pub fn forward<S: Scalar>(
    params: &NetworkParams<S>,
    task: &TaskWiring,
    context: &[u32],
    label: u32,
    alpha: S,
) -> ForwardTrace<S> {
    let input = embed(params, &task.slots, context);
    let mut layers = Vec::with_capacity(task.layer_path.len());
    let mut h: &[S] = &input;
    for &li in &task.layer_path {
        let trace = layer_forward(&params.layers[li], h);
        layers.push(trace);
        h = layers.last().unwrap().out();
    }
    let head = &params.heads[task.head];
    let (logits, loss, dlogits, log_z) = head_forward(h, head, label, alpha);
    let log_prob = logits[label as usize] - log_z;
    ForwardTrace {
        input,
        layers,
        logits,
        log_z,
        log_prob,
        loss,
        dlogits,
    }
}

/// Gradient buffers shaped like [`NetworkParams`], plus the set of
/// embedding rows an accumulation actually touched so updates and zeroing
/// stay proportional to the work done.
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    pub src_embed: Matrix<S>,
    pub tgt_embed: Matrix<S>,
    pub layers: Vec<LayerParams<S>>,
    pub heads: Vec<Head<S>>,
    pub touched_src: Vec<u32>,
    pub touched_tgt: Vec<u32>,
    src_mask: Vec<bool>,
    tgt_mask: Vec<bool>,
}

impl<S: Scalar> Gradients<S> {
    pub fn zeros_like(params: &NetworkParams<S>) -> Gradients<S> {
        let zero_mat = |m: &Matrix<S>| Matrix::zeros(m.rows, m.cols);
        Gradients {
            src_embed: zero_mat(&params.src_embed),
            tgt_embed: zero_mat(&params.tgt_embed),
            layers: params
                .layers
                .iter()
                .map(|l| LayerParams {
                    kind: match &l.kind {
                        LayerKind::Plain { w, bias } => LayerKind::Plain {
                            w: zero_mat(w),
                            bias: vec![S::ZERO; bias.len()],
                        },
                        LayerKind::Tensor {
                            q,
                            r,
                            bias_q,
                            bias_r,
                        } => LayerKind::Tensor {
                            q: zero_mat(q),
                            r: zero_mat(r),
                            bias_q: vec![S::ZERO; bias_q.len()],
                            bias_r: vec![S::ZERO; bias_r.len()],
                        },
                    },
                    activation: l.activation,
                })
                .collect(),
            heads: params
                .heads
                .iter()
                .map(|h| Head {
                    name: h.name.clone(),
                    w: zero_mat(&h.w),
                    bias: vec![S::ZERO; h.bias.len()],
                })
                .collect(),
            touched_src: Vec::new(),
            touched_tgt: Vec::new(),
            src_mask: vec![false; params.src_embed.rows],
            tgt_mask: vec![false; params.tgt_embed.rows],
        }
    }

    /// Record that an embedding row now carries gradient.
    fn touch(&mut self, side: Side, row: u32) {
        let (mask, touched) = match side {
            Side::Source => (&mut self.src_mask, &mut self.touched_src),
            Side::Target => (&mut self.tgt_mask, &mut self.touched_tgt),
        };
        if !mask[row as usize] {
            mask[row as usize] = true;
            touched.push(row);
        }
    }

    pub fn zero(&mut self) {
        for &row in &self.touched_src {
            self.src_embed.row_mut(row as usize).fill(S::ZERO);
            self.src_mask[row as usize] = false;
        }
        for &row in &self.touched_tgt {
            self.tgt_embed.row_mut(row as usize).fill(S::ZERO);
            self.tgt_mask[row as usize] = false;
        }
        self.touched_src.clear();
        self.touched_tgt.clear();
        for layer in &mut self.layers {
            match &mut layer.kind {
                LayerKind::Plain { w, bias } => {
                    w.data.fill(S::ZERO);
                    bias.fill(S::ZERO);
                }
                LayerKind::Tensor {
                    q,
                    r,
                    bias_q,
                    bias_r,
                } => {
                    q.data.fill(S::ZERO);
                    r.data.fill(S::ZERO);
                    bias_q.fill(S::ZERO);
                    bias_r.fill(S::ZERO);
                }
            }
        }
        for head in &mut self.heads {
            head.w.data.fill(S::ZERO);
            head.bias.fill(S::ZERO);
        }
    }

    /// Fold another buffer into this one (worker merge).
    pub fn add_assign(&mut self, other: &Gradients<S>) {
        for &row in &other.touched_src {
            let dst = self.src_embed.row_mut(row as usize);
            for (d, &s) in dst.iter_mut().zip(other.src_embed.row(row as usize)) {
                *d += s;
            }
            self.touch(Side::Source, row);
        }
        for &row in &other.touched_tgt {
            let dst = self.tgt_embed.row_mut(row as usize);
            for (d, &s) in dst.iter_mut().zip(other.tgt_embed.row(row as usize)) {
                *d += s;
            }
            self.touch(Side::Target, row);
        }
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            match (&mut dst.kind, &src.kind) {
                (
                    LayerKind::Plain { w, bias },
                    LayerKind::Plain {
                        w: sw,
                        bias: sbias,
                    },
                ) => {
                    for (d, &s) in w.data.iter_mut().zip(&sw.data) {
                        *d += s;
                    }
                    for (d, &s) in bias.iter_mut().zip(sbias) {
                        *d += s;
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
                        q: sq,
                        r: sr,
                        bias_q: sbq,
                        bias_r: sbr,
                    },
                ) => {
                    for (d, &s) in q.data.iter_mut().zip(&sq.data) {
                        *d += s;
                    }
                    for (d, &s) in r.data.iter_mut().zip(&sr.data) {
                        *d += s;
                    }
                    for (d, &s) in bias_q.iter_mut().zip(sbq) {
                        *d += s;
                    }
                    for (d, &s) in bias_r.iter_mut().zip(sbr) {
                        *d += s;
                    }
                }
                _ => unreachable!("gradient layer kinds always match"),
            }
        }
        for (dst, src) in self.heads.iter_mut().zip(&other.heads) {
            for (d, &s) in dst.w.data.iter_mut().zip(&src.w.data) {
                *d += s;
            }
            for (d, &s) in dst.bias.iter_mut().zip(&src.bias) {
                *d += s;
            }
        }
    }

    /// Flat views matching [`NetworkParams::param_slices_mut`] name-for-name.
    pub fn param_slices(&self) -> Vec<(String, &[S])> {
        let mut out: Vec<(String, &[S])> = Vec::new();
        out.push(("src_embed".into(), self.src_embed.data.as_slice()));
        out.push(("tgt_embed".into(), self.tgt_embed.data.as_slice()));
        for (i, layer) in self.layers.iter().enumerate() {
            match &layer.kind {
                LayerKind::Plain { w, bias } => {
                    out.push((format!("layer{i}.w"), w.data.as_slice()));
                    out.push((format!("layer{i}.bias"), bias.as_slice()));
                }
                LayerKind::Tensor {
                    q,
                    r,
                    bias_q,
                    bias_r,
                } => {
                    out.push((format!("layer{i}.q"), q.data.as_slice()));
                    out.push((format!("layer{i}.r"), r.data.as_slice()));
                    out.push((format!("layer{i}.bias_q"), bias_q.as_slice()));
                    out.push((format!("layer{i}.bias_r"), bias_r.as_slice()));
                }
            }
        }
        for head in &self.heads {
            out.push((format!("head.{}.w", head.name), head.w.data.as_slice()));
            out.push((format!("head.{}.bias", head.name), head.bias.as_slice()));
        }
        out
    }
}

/// Accumulate the exact gradient of `trace.loss` into `grads`. Heads and
/// layers off the example's task path receive nothing.
pub fn backward<S: Scalar>(
    params: &NetworkParams<S>,
    task: &TaskWiring,
    context: &[u32],
    trace: &ForwardTrace<S>,
    grads: &mut Gradients<S>,
) {
    let head = &params.heads[task.head];
    let h_top = trace
        .layers
        .last()
        .map(|l| l.out())
        .unwrap_or(&trace.input);

    // head: logits = h_top . w + bias
    let mut dh = vec![S::ZERO; h_top.len()];
    {
        let ghead = &mut grads.heads[task.head];
        affine_backward(
            h_top,
            &head.w,
            &trace.dlogits,
            &mut dh,
            &mut ghead.w,
            &mut ghead.bias,
        );
    }

    // hidden layers, in reverse
    for (pos, &li) in task.layer_path.iter().enumerate().rev() {
        let layer = &params.layers[li];
        let h_in: &[S] = if pos == 0 {
            &trace.input
        } else {
            trace.layers[pos - 1].out()
        };
        let mut dh_in = vec![S::ZERO; h_in.len()];
        match (&layer.kind, &trace.layers[pos]) {
            (LayerKind::Plain { w, .. }, LayerTrace::Plain { out }) => {
                let dpre: Vec<S> = dh
                    .iter()
                    .zip(out)
                    .map(|(&d, &o)| d * layer.activation.derive(o))
                    .collect();
                match &mut grads.layers[li].kind {
                    LayerKind::Plain {
                        w: gw,
                        bias: gbias,
                    } => affine_backward(h_in, w, &dpre, &mut dh_in, gw, gbias),
                    _ => unreachable!(),
                }
            }
            (LayerKind::Tensor { q, r, .. }, LayerTrace::Tensor { vq, vr, .. }) => {
                // h = vq (*) vr
                let dpre_q: Vec<S> = dh
                    .iter()
                    .zip(vq.iter().zip(vr))
                    .map(|(&d, (&a, &b))| d * b * layer.activation.derive(a))
                    .collect();
                let dpre_r: Vec<S> = dh
                    .iter()
                    .zip(vq.iter().zip(vr))
                    .map(|(&d, (&a, &b))| d * a * layer.activation.derive(b))
                    .collect();
                match &mut grads.layers[li].kind {
                    LayerKind::Tensor {
                        q: gq,
                        r: gr,
                        bias_q: gbq,
                        bias_r: gbr,
                    } => {
                        affine_backward(h_in, q, &dpre_q, &mut dh_in, gq, gbq);
                        affine_backward(h_in, r, &dpre_r, &mut dh_in, gr, gbr);
                    }
                    _ => unreachable!(),
                }
            }
            _ => unreachable!("trace layer kinds always match the params"),
        }
        dh = dh_in;
    }

    // scatter into embedding rows
    let d = params.embed_dim();
    for (slot, (&side, &id)) in task.slots.iter().zip(context).enumerate() {
        let seg = &dh[slot * d..(slot + 1) * d];
        let table = match side {
            Side::Source => &mut grads.src_embed,
            Side::Target => &mut grads.tgt_embed,
        };
        for (dst, &s) in table.row_mut(id as usize).iter_mut().zip(seg) {
            *dst += s;
        }
        grads.touch(side, id);
    }
}

/// Total loss of a set of examples under one task path (helper for the
/// finite-difference check).
fn total_loss<S: Scalar>(
    params: &NetworkParams<S>,
    wiring: &GroupWiring,
    examples: &[(usize, Vec<u32>, u32)],
    alpha: S,
) -> S {
    let mut sum = S::ZERO;
    for (task_idx, context, label) in examples {
        sum += forward(params, &wiring.tasks[*task_idx], context, *label, alpha).loss;
    }
    sum
}

/// Central finite-difference check of the analytic gradient, run in the
/// caller's precision (use `f64`). Returns the maximum relative error over
/// every parameter: `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check(
    params: &NetworkParams<f64>,
    wiring: &GroupWiring,
    examples: &[(usize, Vec<u32>, u32)],
    alpha: f64,
    h: f64,
) -> f64 {
    let mut grads = Gradients::zeros_like(params);
    for (task_idx, context, label) in examples {
        let trace = forward(params, &wiring.tasks[*task_idx], context, *label, alpha);
        backward(params, &wiring.tasks[*task_idx], context, &trace, &mut grads);
    }

    let analytic: Vec<(String, Vec<f64>)> = grads
        .param_slices()
        .into_iter()
        .map(|(name, s)| (name, s.to_vec()))
        .collect();

    let mut work = params.clone();
    let mut max_rel = 0.0f64;
    for (name, expected) in &analytic {
        for (idx, &a) in expected.iter().enumerate() {
            let saved = {
                let mut slices = work.param_slices_mut();
                let slot = slices
                    .iter_mut()
                    .find(|(n, _)| n == name)
                    .expect("parameter names align");
                let saved = slot.1[idx];
                slot.1[idx] = saved + h;
                saved
            };
            let plus = total_loss(&work, wiring, examples, alpha);
            {
                let mut slices = work.param_slices_mut();
                let slot = slices.iter_mut().find(|(n, _)| n == name).unwrap();
                slot.1[idx] = saved - h;
            }
            let minus = total_loss(&work, wiring, examples, alpha);
            {
                let mut slices = work.param_slices_mut();
                let slot = slices.iter_mut().find(|(n, _)| n == name).unwrap();
                slot.1[idx] = saved;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_task_wiring(slots: Vec<Side>, layers: usize) -> GroupWiring {
        GroupWiring {
            tasks: vec![TaskWiring {
                name: "t".into(),
                slots,
                layer_path: (0..layers).collect(),
                head: 0,
            }],
        }
    }

    #[test]
    fn embed_concatenates_rows() {
        let params: NetworkParams<f64> = NetworkParams {
            src_embed: Matrix::from_rows(vec![vec![0.5, -0.5], vec![1.0, 2.0]]),
            tgt_embed: Matrix::from_rows(vec![vec![9.0, 9.0]]),
            layers: vec![],
            heads: vec![],
        };
        assert_eq!(
            embed(&params, &[Side::Source], &[0]),
            vec![0.5, -0.5]
        );
        // two slots sharing one table repeat the row
        assert_eq!(
            embed(&params, &[Side::Source, Side::Source], &[1, 1]),
            vec![1.0, 2.0, 1.0, 2.0]
        );
        assert_eq!(
            embed(&params, &[Side::Source, Side::Source, Side::Source], &[0, 1, 0]).len(),
            3 * 2
        );
    }

    #[test]
    fn plain_layer_identity() {
        let w = Matrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let out = plain_layer(&[3.0, -2.0], &w, &[0.0, 0.0], Activation::Identity);
        assert_eq!(out, vec![3.0, -2.0]);
    }

    #[test]
    fn plain_layer_tanh_at_zero() {
        let w = Matrix::from_rows(vec![vec![2.0]]);
        let out = plain_layer(&[1.0], &w, &[-2.0], Activation::Tanh);
        assert_eq!(out, vec![0.0]);
    }

    #[test]
    fn plain_layer_sums() {
        let w = Matrix::from_rows(vec![vec![1.0], vec![1.0]]);
        let out = plain_layer(&[1.0, 1.0], &w, &[0.0], Activation::Identity);
        assert_eq!(out, vec![2.0]);
    }

    #[test]
    fn tensor_layer_rank1_identity() {
        let q = Matrix::from_rows(vec![vec![1.0], vec![0.0]]);
        let r = Matrix::from_rows(vec![vec![0.0], vec![1.0]]);
        let out = tensor_layer(&[1.0, 2.0], &q, &r, &[0.0], &[0.0], Activation::Identity);
        assert_eq!(out, vec![2.0]);
    }

    #[test]
    fn tensor_layer_tanh_product() {
        let q = Matrix::from_rows(vec![vec![1.0], vec![0.0]]);
        let r = Matrix::from_rows(vec![vec![0.0], vec![1.0]]);
        let out = tensor_layer(&[1.0, 2.0], &q, &r, &[0.0], &[0.0], Activation::Tanh);
        let expected = 1.0f64.tanh() * 2.0f64.tanh();
        assert!((out[0] - expected).abs() < 1e-12);
        assert!((out[0] - 0.73420).abs() < 1e-5);
    }

    #[test]
    fn tensor_layer_square_is_nonnegative() {
        let q = Matrix::from_rows(vec![vec![0.7, -0.3], vec![0.2, 0.9]]);
        let out = tensor_layer(
            &[1.5, -2.5],
            &q.clone(),
            &q,
            &[0.0, 0.0],
            &[0.0, 0.0],
            Activation::Identity,
        );
        assert!(out.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn head_loss_uniform_two_classes() {
        let head = Head {
            name: "t".into(),
            w: Matrix::zeros(1, 2),
            bias: vec![0.0, 0.0],
        };
        let (loss, _, log_z) = head_loss(&[0.0], &head, 0, 0.0);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((log_z - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn head_loss_with_penalty() {
        let head = Head {
            name: "t".into(),
            w: Matrix::zeros(1, 2),
            bias: vec![0.0, 0.0],
        };
        let (loss, _, _) = head_loss(&[0.0], &head, 0, 0.1);
        let ln2 = std::f64::consts::LN_2;
        assert!((loss - (ln2 + 0.1 * ln2 * ln2)).abs() < 1e-12);
        assert!((loss - 0.741192).abs() < 1e-6);
    }

    #[test]
    fn head_loss_confident_correct_goes_to_zero() {
        let head = Head {
            name: "t".into(),
            w: Matrix::from_rows(vec![vec![30.0, 0.0, 0.0]]),
            bias: vec![0.0, 0.0, 0.0],
        };
        let (loss, _, _) = head_loss(&[1.0], &head, 0, 0.0);
        assert!(loss < 1e-10);
    }

    #[test]
    fn softmax_normalizes() {
        let head = Head {
            name: "t".into(),
            w: Matrix::from_rows(vec![vec![1.5, -0.5, 3.0, 0.25]]),
            bias: vec![0.1, 0.2, -0.3, 0.0],
        };
        let (_, _, log_z) = head_loss(&[0.8], &head, 0, 0.0);
        let mut z = vec![0.0; 4];
        affine(&[0.8], &head.w, &head.bias, &mut z);
        let total: f64 = z.iter().map(|&zi| (zi - log_z).exp()).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn forced_zero_signal_gives_zero_grads() {
        let params: NetworkParams<f64> = NetworkParams {
            src_embed: Matrix::from_rows(vec![vec![0.3, 0.4]]),
            tgt_embed: Matrix::zeros(1, 2),
            layers: vec![LayerParams {
                kind: LayerKind::Plain {
                    w: Matrix::from_rows(vec![vec![0.5, 0.1], vec![-0.2, 0.7]]),
                    bias: vec![0.0, 0.0],
                },
                activation: Activation::Tanh,
            }],
            heads: vec![Head {
                name: "t".into(),
                w: Matrix::zeros(2, 2),
                bias: vec![0.0, 0.0],
            }],
        };
        let wiring = single_task_wiring(vec![Side::Source], 1);
        let mut trace = forward(&params, &wiring.tasks[0], &[0], 0, 0.0);
        trace.dlogits = vec![0.0, 0.0];
        let mut grads = Gradients::zeros_like(&params);
        backward(&params, &wiring.tasks[0], &[0], &trace, &mut grads);
        for (name, slice) in grads.param_slices() {
            assert!(
                slice.iter().all(|&x| x == 0.0),
                "nonzero gradient in {name}"
            );
        }
    }

    #[test]
    fn embedding_gradient_matches_hand_chain() {
        // identity activation, no hidden bias: logits = (x W) W_out + b
        // d loss / d x = W (W_out dlogits)
        let w = Matrix::from_rows(vec![vec![0.5, -0.3], vec![0.8, 0.2]]);
        let w_out = Matrix::from_rows(vec![vec![1.0, -1.0], vec![0.4, 0.6]]);
        let params: NetworkParams<f64> = NetworkParams {
            src_embed: Matrix::from_rows(vec![vec![0.7, -0.1]]),
            tgt_embed: Matrix::zeros(1, 2),
            layers: vec![LayerParams {
                kind: LayerKind::Plain {
                    w: w.clone(),
                    bias: vec![0.0, 0.0],
                },
                activation: Activation::Identity,
            }],
            heads: vec![Head {
                name: "t".into(),
                w: w_out.clone(),
                bias: vec![0.0, 0.0],
            }],
        };
        let wiring = single_task_wiring(vec![Side::Source], 1);
        let trace = forward(&params, &wiring.tasks[0], &[0], 0, 0.0);
        let mut grads = Gradients::zeros_like(&params);
        backward(&params, &wiring.tasks[0], &[0], &trace, &mut grads);

        let dl = &trace.dlogits;
        let dh: Vec<f64> = (0..2)
            .map(|r| w_out.row(r).iter().zip(dl).map(|(&w, &d)| w * d).sum())
            .collect();
        let dx: Vec<f64> = (0..2)
            .map(|r| w.row(r).iter().zip(&dh).map(|(&w, &d)| w * d).sum())
            .collect();
        let got = grads.src_embed.row(0);
        assert!((got[0] - dx[0]).abs() < 1e-12);
        assert!((got[1] - dx[1]).abs() < 1e-12);
    }

    fn random_params(
        seed: u64,
        tensor: bool,
        widths: &[usize],
        in_slots: usize,
        d: usize,
        vocab: usize,
        labels: usize,
    ) -> (NetworkParams<f64>, GroupWiring) {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        fn mat(rng: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
            use rand::Rng;
            Matrix {
                rows,
                cols,
                data: (0..rows * cols)
                    .map(|_| rng.random_range(-0.5..0.5))
                    .collect(),
            }
        }
        let mut dims = vec![in_slots * d];
        dims.extend_from_slice(widths);
        let mut layers = Vec::new();
        for i in 0..widths.len() {
            let kind = if tensor {
                LayerKind::Tensor {
                    q: mat(&mut rng, dims[i], dims[i + 1]),
                    r: mat(&mut rng, dims[i], dims[i + 1]),
                    bias_q: (0..dims[i + 1])
                        .map(|_| rng.random_range(-0.1..0.1))
                        .collect(),
                    bias_r: (0..dims[i + 1])
                        .map(|_| rng.random_range(-0.1..0.1))
                        .collect(),
                }
            } else {
                LayerKind::Plain {
                    w: mat(&mut rng, dims[i], dims[i + 1]),
                    bias: (0..dims[i + 1])
                        .map(|_| rng.random_range(-0.1..0.1))
                        .collect(),
                }
            };
            layers.push(LayerParams {
                kind,
                activation: Activation::Tanh,
            });
        }
        let params = NetworkParams {
            src_embed: mat(&mut rng, vocab, d),
            tgt_embed: mat(&mut rng, vocab, d),
            layers,
            heads: vec![Head {
                name: "t".into(),
                w: mat(&mut rng, *widths.last().unwrap(), labels),
                bias: vec![0.0; labels],
            }],
        };
        let wiring = single_task_wiring(vec![Side::Source; in_slots], widths.len());
        (params, wiring)
    }

    #[test]
    fn grad_check_tensor_net() {
        let (params, wiring) = random_params(7, true, &[8, 8], 3, 2, 5, 3);
        let examples = vec![(0usize, vec![1, 2, 4], 1u32), (0, vec![0, 3, 3], 2)];
        let err = grad_check(&params, &wiring, &examples, 0.1, 1e-5);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn grad_check_plain_net() {
        let (params, wiring) = random_params(8, false, &[6], 2, 3, 5, 4);
        let examples = vec![(0usize, vec![1, 2], 0u32)];
        let err = grad_check(&params, &wiring, &examples, 0.0, 1e-5);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn grad_check_includes_penalty_gradient() {
        let (params, wiring) = random_params(9, true, &[4], 2, 2, 4, 3);
        // several diverse examples so no hidden unit is dead across all of
        // them; a dead unit parks true gradients below the 1e-8 floor where
        // finite-difference truncation noise dominates the ratio
        let examples = vec![
            (0usize, vec![1, 3], 2u32),
            (0, vec![0, 2], 0),
            (0, vec![3, 1], 1),
        ];
        for alpha in [0.0, 0.1] {
            let err = grad_check(&params, &wiring, &examples, alpha, 1e-5);
            assert!(err < 1e-4, "alpha={alpha}: max relative error {err}");
        }
    }

    #[test]
    fn penalty_pulls_log_z_toward_zero() {
        // one-parameter head: logits = [theta, 0]; minimize over theta for
        // increasing alpha and watch |logZ| at the optimum shrink
        let optimum_log_z = |alpha: f64| -> f64 {
            let loss = |theta: f64| -> f64 {
                let log_z = (theta.exp() + 1.0f64).ln();
                -(theta - log_z) + alpha * log_z * log_z
            };
            // golden-section search on [-10, 10]
            let (mut lo, mut hi) = (-10.0f64, 10.0f64);
            let phi = (5.0f64.sqrt() - 1.0) / 2.0;
            for _ in 0..200 {
                let a = hi - phi * (hi - lo);
                let b = lo + phi * (hi - lo);
                if loss(a) < loss(b) {
                    hi = b;
                } else {
                    lo = a;
                }
            }
            let theta = (lo + hi) / 2.0;
            (theta.exp() + 1.0f64).ln()
        };
        let mut prev = f64::INFINITY;
        for alpha in [0.0, 0.05, 0.1, 0.5, 1.0, 10.0] {
            let z = optimum_log_z(alpha).abs();
            assert!(
                z <= prev + 1e-9,
                "|logZ| grew from {prev} to {z} at alpha={alpha}"
            );
            prev = z;
        }
    }
}
