//! Small differentiable models exposing loss, analytic gradient, empirical
//! Fisher diagonal, and accuracy. Backprop is hand-derived; there is no
//! autodiff dependency.

use crate::numkit::{ParamVector, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed from pre-activation `z` and activation `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelKind {
    /// Scalar-output least squares; parameters `[w (input_dim), bias]`.
    LinearRegression,
    /// Multinomial logistic regression; parameters `[W (classes x input_dim), b (classes)]`.
    SoftmaxRegression { classes: usize },
    /// One hidden layer followed by softmax;
    /// parameters `[W1 (hidden x input_dim), b1, W2 (classes x hidden), b2]`.
    Mlp1Hidden {
        classes: usize,
        hidden: usize,
        activation: Activation,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub l2: f64,
}

impl ModelSpec {
    pub fn linear_regression(input_dim: usize, l2: f64) -> Self {
        ModelSpec {
            kind: ModelKind::LinearRegression,
            input_dim,
            l2,
        }
    }

    pub fn softmax_regression(input_dim: usize, classes: usize, l2: f64) -> Self {
        ModelSpec {
            kind: ModelKind::SoftmaxRegression { classes },
            input_dim,
            l2,
        }
    }

    pub fn mlp(input_dim: usize, classes: usize, hidden: usize, activation: Activation, l2: f64) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp1Hidden {
                classes,
                hidden,
                activation,
            },
            input_dim,
            l2,
        }
    }

    /// Total parameter count; a pure function of the spec.
    pub fn param_dim(&self) -> usize {
        match self.kind {
            ModelKind::LinearRegression => self.input_dim + 1,
            ModelKind::SoftmaxRegression { classes } => self.input_dim * classes + classes,
            ModelKind::Mlp1Hidden { classes, hidden, .. } => {
                hidden * self.input_dim + hidden + classes * hidden + classes
            }
        }
    }

    pub fn classes(&self) -> Option<usize> {
        match self.kind {
            ModelKind::LinearRegression => None,
            ModelKind::SoftmaxRegression { classes } => Some(classes),
            ModelKind::Mlp1Hidden { classes, .. } => Some(classes),
        }
    }

    pub fn is_classification(&self) -> bool {
        self.classes().is_some()
    }
}

/// Deterministic weight initialization. Convex kinds start at zero; the MLP
/// needs symmetry breaking and draws layer weights at sd 1/sqrt(fan_in).
pub fn init_weights(spec: &ModelSpec, stream: &mut RngStream) -> ParamVector {
    let d = spec.param_dim();
    match spec.kind {
        ModelKind::LinearRegression | ModelKind::SoftmaxRegression { .. } => ParamVector::zeros(d),
        ModelKind::Mlp1Hidden { classes, hidden, .. } => {
            let mut w = vec![0.0; d];
            let sd1 = 1.0 / (spec.input_dim as f64).sqrt();
            for v in w.iter_mut().take(hidden * spec.input_dim) {
                *v = stream.next_gaussian(0.0, sd1);
            }
            let sd2 = 1.0 / (hidden as f64).sqrt();
            let off = hidden * spec.input_dim + hidden;
            for v in w.iter_mut().skip(off).take(classes * hidden) {
                *v = stream.next_gaussian(0.0, sd2);
            }
            ParamVector::from_vec(w)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Classes(Vec<u32>),
    Targets(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes(v) => v.len(),
            Labels::Targets(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A set of samples: row-major feature matrix plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    features: Vec<f64>,
    input_dim: usize,
    labels: Labels,
}

impl Batch {
    pub fn new(features: Vec<f64>, input_dim: usize, labels: Labels) -> Self {
        assert!(input_dim > 0, "input_dim must be positive");
        assert_eq!(
            features.len(),
            input_dim * labels.len(),
            "feature matrix shape mismatch: {} values for {} samples of dim {}",
            features.len(),
            labels.len(),
            input_dim
        );
        Batch {
            features,
            input_dim,
            labels,
        }
    }

    pub fn empty_like(&self) -> Batch {
        let labels = match &self.labels {
            Labels::Classes(_) => Labels::Classes(Vec::new()),
            Labels::Targets(_) => Labels::Targets(Vec::new()),
        };
        Batch::new(Vec::new(), self.input_dim, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn class_label(&self, i: usize) -> u32 {
        match &self.labels {
            Labels::Classes(v) => v[i],
            Labels::Targets(_) => panic!("class_label on regression batch"),
        }
    }

    pub fn target(&self, i: usize) -> f64 {
        match &self.labels {
            Labels::Targets(v) => v[i],
            Labels::Classes(_) => panic!("target on classification batch"),
        }
    }

    /// New batch holding the given sample indices, in order.
    pub fn select(&self, indices: &[usize]) -> Batch {
        let mut features = Vec::with_capacity(indices.len() * self.input_dim);
        for &i in indices {
            features.extend_from_slice(self.feature_row(i));
        }
        let labels = match &self.labels {
            Labels::Classes(v) => Labels::Classes(indices.iter().map(|&i| v[i]).collect()),
            Labels::Targets(v) => Labels::Targets(indices.iter().map(|&i| v[i]).collect()),
        };
        Batch::new(features, self.input_dim, labels)
    }

    pub fn concat(parts: &[&Batch]) -> Batch {
        assert!(!parts.is_empty(), "concat of zero batches");
        let input_dim = parts[0].input_dim;
        let mut features = Vec::new();
        let classification = matches!(parts[0].labels, Labels::Classes(_));
        let mut classes = Vec::new();
        let mut targets = Vec::new();
        for p in parts {
            assert_eq!(p.input_dim, input_dim, "concat input_dim mismatch");
            features.extend_from_slice(&p.features);
            match &p.labels {
                Labels::Classes(v) => classes.extend_from_slice(v),
                Labels::Targets(v) => targets.extend_from_slice(v),
            }
        }
        let labels = if classification {
            Labels::Classes(classes)
        } else {
            Labels::Targets(targets)
        };
        Batch::new(features, input_dim, labels)
    }
}

fn check_dims(spec: &ModelSpec, w: &ParamVector, batch: &Batch) {
    assert_eq!(
        w.dim(),
        spec.param_dim(),
        "weight dim {} does not match spec dim {}",
        w.dim(),
        spec.param_dim()
    );
    assert_eq!(
        batch.input_dim(),
        spec.input_dim,
        "batch input_dim {} does not match spec input_dim {}",
        batch.input_dim(),
        spec.input_dim
    );
    assert!(!batch.is_empty(), "empty batch");
}

/// Numerically stable log(sum(exp(logits))).
fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let lse = log_sum_exp(logits);
    for (o, z) in out.iter_mut().zip(logits) {
        *o = (z - lse).exp();
    }
}

/// Forward pass scratch for one sample of the current model.
struct Forward {
    logits: Vec<f64>,
    probs: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
}

impl Forward {
    fn new(spec: &ModelSpec) -> Self {
        let c = spec.classes().unwrap_or(1);
        let h = match spec.kind {
            ModelKind::Mlp1Hidden { hidden, .. } => hidden,
            _ => 0,
        };
        Forward {
            logits: vec![0.0; c],
            probs: vec![0.0; c],
            z1: vec![0.0; h],
            a1: vec![0.0; h],
        }
    }

    fn run(&mut self, spec: &ModelSpec, w: &[f64], x: &[f64]) {
        let d_in = spec.input_dim;
        match spec.kind {
            ModelKind::LinearRegression => {
                let mut z = w[d_in];
                for j in 0..d_in {
                    z += w[j] * x[j];
                }
                self.logits[0] = z;
            }
            ModelKind::SoftmaxRegression { classes } => {
                for c in 0..classes {
                    let row = &w[c * d_in..(c + 1) * d_in];
                    let mut z = w[classes * d_in + c];
                    for j in 0..d_in {
                        z += row[j] * x[j];
                    }
                    self.logits[c] = z;
                }
                softmax_into(&self.logits, &mut self.probs);
            }
            ModelKind::Mlp1Hidden {
                classes,
                hidden,
                activation,
            } => {
                let b1_off = hidden * d_in;
                let w2_off = b1_off + hidden;
                let b2_off = w2_off + classes * hidden;
                for r in 0..hidden {
                    let row = &w[r * d_in..(r + 1) * d_in];
                    let mut z = w[b1_off + r];
                    for j in 0..d_in {
                        z += row[j] * x[j];
                    }
                    self.z1[r] = z;
                    self.a1[r] = activation.apply(z);
                }
                for c in 0..classes {
                    let row = &w[w2_off + c * hidden..w2_off + (c + 1) * hidden];
                    let mut z = w[b2_off + c];
                    for (wr, a) in row.iter().zip(&self.a1) {
                        z += wr * a;
                    }
                    self.logits[c] = z;
                }
                softmax_into(&self.logits, &mut self.probs);
            }
        }
    }
}

/// Per-sample data loss (no l2): squared error / 2 for regression,
/// cross-entropy for classification.
fn sample_loss(spec: &ModelSpec, fwd: &Forward, batch: &Batch, i: usize) -> f64 {
    match spec.kind {
        ModelKind::LinearRegression => {
            let r = fwd.logits[0] - batch.target(i);
            0.5 * r * r
        }
        ModelKind::SoftmaxRegression { .. } | ModelKind::Mlp1Hidden { .. } => {
            let y = batch.class_label(i) as usize;
            log_sum_exp(&fwd.logits) - fwd.logits[y]
        }
    }
}

/// Accumulate `scale * grad(sample data loss)` into `out`.
#[allow(clippy::too_many_arguments)]
fn accumulate_sample_grad(
    spec: &ModelSpec,
    fwd: &Forward,
    w: &[f64],
    x: &[f64],
    batch: &Batch,
    i: usize,
    scale: f64,
    out: &mut [f64],
) {
    let d_in = spec.input_dim;
    match spec.kind {
        ModelKind::LinearRegression => {
            let r = fwd.logits[0] - batch.target(i);
            for j in 0..d_in {
                out[j] += scale * r * x[j];
            }
            out[d_in] += scale * r;
        }
        ModelKind::SoftmaxRegression { classes } => {
            let y = batch.class_label(i) as usize;
            for c in 0..classes {
                let delta = fwd.probs[c] - if c == y { 1.0 } else { 0.0 };
                let row = &mut out[c * d_in..(c + 1) * d_in];
                for j in 0..d_in {
                    row[j] += scale * delta * x[j];
                }
                out[classes * d_in + c] += scale * delta;
            }
        }
        ModelKind::Mlp1Hidden {
            classes,
            hidden,
            activation,
        } => {
            let y = batch.class_label(i) as usize;
            let b1_off = hidden * d_in;
            let w2_off = b1_off + hidden;
            let b2_off = w2_off + classes * hidden;
            let mut da1 = vec![0.0; hidden];
            for c in 0..classes {
                let delta = fwd.probs[c] - if c == y { 1.0 } else { 0.0 };
                let w2_row = &w[w2_off + c * hidden..w2_off + (c + 1) * hidden];
                let g_row = &mut out[w2_off + c * hidden..w2_off + (c + 1) * hidden];
                for r in 0..hidden {
                    g_row[r] += scale * delta * fwd.a1[r];
                    da1[r] += delta * w2_row[r];
                }
                out[b2_off + c] += scale * delta;
            }
            for r in 0..hidden {
                let dz1 = da1[r] * activation.derivative(fwd.z1[r], fwd.a1[r]);
                let g_row = &mut out[r * d_in..(r + 1) * d_in];
                for j in 0..d_in {
                    g_row[j] += scale * dz1 * x[j];
                }
                out[b1_off + r] += scale * dz1;
            }
        }
    }
}

/// Mean per-sample loss plus `l2/2 * ||w||^2`.
pub fn loss(spec: &ModelSpec, w: &ParamVector, batch: &Batch) -> f64 {
    check_dims(spec, w, batch);
    let mut fwd = Forward::new(spec);
    let ws = w.as_slice();
    let mut total = 0.0;
    for i in 0..batch.len() {
        fwd.run(spec, ws, batch.feature_row(i));
        total += sample_loss(spec, &fwd, batch, i);
    }
    let data = total / batch.len() as f64;
    let reg = 0.5 * spec.l2 * ws.iter().map(|v| v * v).sum::<f64>();
    data + reg
}

/// Exact analytic gradient of [`loss`].
pub fn grad(spec: &ModelSpec, w: &ParamVector, batch: &Batch) -> ParamVector {
    check_dims(spec, w, batch);
    let mut fwd = Forward::new(spec);
    let ws = w.as_slice();
    let mut g = vec![0.0; w.dim()];
    let scale = 1.0 / batch.len() as f64;
    for i in 0..batch.len() {
        let x = batch.feature_row(i);
        fwd.run(spec, ws, x);
        accumulate_sample_grad(spec, &fwd, ws, x, batch, i, scale, &mut g);
    }
    if spec.l2 != 0.0 {
        for (gj, wj) in g.iter_mut().zip(ws) {
            *gj += spec.l2 * wj;
        }
    }
    ParamVector::from_vec(g)
}

/// Empirical Fisher diagonal: mean over samples of the elementwise square of
/// the per-sample data-loss gradient (the l2 prior is excluded).
pub fn fisher_diag(spec: &ModelSpec, w: &ParamVector, batch: &Batch) -> ParamVector {
    check_dims(spec, w, batch);
    let mut fwd = Forward::new(spec);
    let ws = w.as_slice();
    let d = w.dim();
    let mut acc = vec![0.0; d];
    let mut g = vec![0.0; d];
    for i in 0..batch.len() {
        let x = batch.feature_row(i);
        fwd.run(spec, ws, x);
        g.iter_mut().for_each(|v| *v = 0.0);
        accumulate_sample_grad(spec, &fwd, ws, x, batch, i, 1.0, &mut g);
        for (a, gj) in acc.iter_mut().zip(&g) {
            *a += gj * gj;
        }
    }
    let scale = 1.0 / batch.len() as f64;
    acc.iter_mut().for_each(|v| *v *= scale);
    ParamVector::from_vec(acc)
}

/// Fraction of argmax-correct predictions; ties break to the lowest class
/// index. Panics on regression specs.
pub fn accuracy(spec: &ModelSpec, w: &ParamVector, data: &Batch) -> f64 {
    assert!(
        spec.is_classification(),
        "accuracy requires a classification spec"
    );
    check_dims(spec, w, data);
    let mut fwd = Forward::new(spec);
    let ws = w.as_slice();
    let mut correct = 0usize;
    for i in 0..data.len() {
        fwd.run(spec, ws, data.feature_row(i));
        let mut best = 0usize;
        for (c, &z) in fwd.logits.iter().enumerate() {
            if z > fwd.logits[best] {
                best = c;
            }
        }
        if best == data.class_label(i) as usize {
            correct += 1;
        }
    }
    correct as f64 / data.len() as f64
}
