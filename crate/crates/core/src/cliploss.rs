//! Triplet-embedding regularization over precomputed vectors.
//!
//! Each cell (i, j) of a K×K grid holds human, interaction and object
//! features. An MLP maps their concatenation to a model-side embedding
//! `f_ij`, which is pulled towards the text embedding `e_ij` of the cell's
//! scene description:
//!
//! ```text
//! L_tri = Σ_{i≠j} ρ(f_ij, e_ij) · mask_ij        L_total = L_model + λ · L_tri
//! ```
//!
//! `ρ` is the ℓ1 distance or the negative cosine similarity. Gradients are
//! analytic; [`finite_diff_check`] compares them with central differences.

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

/// λ for VidHOI-style runs.
pub const LAMBDA_VIDHOI: f64 = 0.05;
/// λ for Action Genome-style runs.
pub const LAMBDA_ACTION_GENOME: f64 = 1.5;
/// Lower bound of the denominator in the relative gradient error.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum ClipLossError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("negative cosine distance of a zero vector")]
    ZeroNorm,
    #[error("non-finite parameter")]
    NonFinite,
    #[error("batch file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("loss increased for 5 consecutive steps (last at step {step})")]
    Diverged { step: usize, trajectory: Vec<f64> },
    #[error("{0}")]
    Argument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative at pre-activation `pre` with output `post`.
    fn derivative<T: Scalar>(self, pre: T, post: T) -> T {
        match self {
            Activation::Relu => {
                if pre > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - post * post,
            Activation::Identity => T::one(),
        }
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            "identity" => Ok(Self::Identity),
            other => Err(format!("unknown activation `{other}` (relu, tanh, identity)")),
        }
    }
}

/// Affine map followed by an activation. `weights` is row-major,
/// `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self { inputs, outputs, weights: vec![T::zero(); inputs * outputs], bias: vec![T::zero(); outputs], activation }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Scalar> MlpParams<T> {
    pub fn new(layers: Vec<Dense<T>>) -> Result<Self, ClipLossError> {
        if layers.is_empty() {
            return Err(ClipLossError::Dimension("an MLP needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(ClipLossError::Dimension(format!("layer {i}: parameter shapes do not match {}×{}", l.outputs, l.inputs)));
            }
            if i > 0 && layers[i - 1].outputs != l.inputs {
                return Err(ClipLossError::Dimension(format!(
                    "layer {i} takes {} inputs but layer {} gives {}",
                    l.inputs,
                    i - 1,
                    layers[i - 1].outputs
                )));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(ClipLossError::NonFinite);
            }
        }
        Ok(Self { layers })
    }

    /// Layer sizes `dims[0] → dims[1] → …` with uniform Glorot weights and
    /// small uniform biases.
    pub fn random(dims: &[usize], activations: &[Activation], rng: &mut impl Rng) -> Result<Self, ClipLossError> {
        if dims.len() != activations.len() + 1 {
            return Err(ClipLossError::Dimension("need one activation per layer".into()));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(d, &activation)| {
                let a = (6.0 / (d[0] + d[1]) as f64).sqrt();
                Dense {
                    inputs: d[0],
                    outputs: d[1],
                    weights: (0..d[0] * d[1]).map(|_| T::of(rng.random_range(-a..a))).collect(),
                    bias: (0..d[1]).map(|_| T::of(rng.random_range(-0.1..0.1))).collect(),
                    activation,
                }
            })
            .collect();
        Self::new(layers)
    }

    /// `3·d_f → 128 (relu) → d_e`.
    pub fn default_shape(d_f: usize, d_e: usize, rng: &mut impl Rng) -> Self {
        Self::random(&[3 * d_f, 128, d_e], &[Activation::Relu, Activation::Identity], rng).expect("consistent shape")
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs, l.activation)).collect() }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters in layer order, weights before biases.
    pub fn flat(&self) -> Vec<T> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias).copied()).collect()
    }

    fn param_mut(&mut self, mut i: usize) -> &mut T {
        for l in &mut self.layers {
            if i < l.weights.len() {
                return &mut l.weights[i];
            }
            i -= l.weights.len();
            if i < l.bias.len() {
                return &mut l.bias[i];
            }
            i -= l.bias.len();
        }
        panic!("parameter index out of range")
    }

    /// `self += alpha · other`.
    pub fn add_scaled(&mut self, alpha: T, other: &Self) {
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            for (w, g) in l.weights.iter_mut().zip(&o.weights) {
                *w = *w + alpha * *g;
            }
            for (b, g) in l.bias.iter_mut().zip(&o.bias) {
                *b = *b + alpha * *g;
            }
        }
    }
}

/// Per-layer values kept by the forward pass.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    pub input: Vec<T>,
    pub pre: Vec<Vec<T>>,
    pub post: Vec<Vec<T>>,
}

pub fn mlp_forward<T: Scalar>(
    params: &MlpParams<T>,
    f_human: &[T],
    f_inter: &[T],
    f_obj: &[T],
) -> Result<(Vec<T>, Forward<T>), ClipLossError> {
    let input: Vec<T> = f_human.iter().chain(f_inter).chain(f_obj).copied().collect();
    if input.len() != params.input_dim() {
        return Err(ClipLossError::Dimension(format!(
            "MLP expects {} inputs, got {}",
            params.input_dim(),
            input.len()
        )));
    }
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut post: Vec<Vec<T>> = Vec::with_capacity(params.layers.len());
    for l in &params.layers {
        let x = post.last().unwrap_or(&input);
        let z: Vec<T> = (0..l.outputs)
            .map(|o| {
                let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                row.iter().zip(x).map(|(w, v)| *w * *v).sum::<T>() + l.bias[o]
            })
            .collect();
        post.push(z.iter().map(|&v| l.activation.apply(v)).collect());
        pre.push(z);
    }
    let out = post.last().expect("non-empty").clone();
    Ok((out, Forward { input, pre, post }))
}

/// Gradients of a scalar with respect to parameters and input, given its
/// gradient `grad_out` with respect to the MLP output.
pub fn mlp_backward<T: Scalar>(params: &MlpParams<T>, fwd: &Forward<T>, grad_out: &[T]) -> (MlpParams<T>, Vec<T>) {
    let mut grads = params.zeros_like();
    let mut upstream = grad_out.to_vec();
    for (li, l) in params.layers.iter().enumerate().rev() {
        let x = if li == 0 { &fwd.input } else { &fwd.post[li - 1] };
        let delta: Vec<T> = (0..l.outputs)
            .map(|o| upstream[o] * l.activation.derivative(fwd.pre[li][o], fwd.post[li][o]))
            .collect();
        let g = &mut grads.layers[li];
        let mut down = vec![T::zero(); l.inputs];
        for o in 0..l.outputs {
            g.bias[o] = delta[o];
            for i in 0..l.inputs {
                g.weights[o * l.inputs + i] = delta[o] * x[i];
                down[i] = down[i] + delta[o] * l.weights[o * l.inputs + i];
            }
        }
        upstream = down;
    }
    (grads, upstream)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    L1,
    NegCosine,
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "l1" => Ok(Self::L1),
            "neg_cosine" => Ok(Self::NegCosine),
            other => Err(format!("unknown metric `{other}` (l1, neg_cosine)")),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::L1 => "l1",
            Metric::NegCosine => "neg_cosine",
        })
    }
}

fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Distance between `f` and `e` and its gradient with respect to `f`.
/// The ℓ1 subgradient is 0 where `f` and `e` agree.
pub fn pair_distance<T: Scalar>(metric: Metric, f: &[T], e: &[T]) -> Result<(T, Vec<T>), ClipLossError> {
    if f.len() != e.len() {
        return Err(ClipLossError::Dimension(format!("vectors of length {} and {}", f.len(), e.len())));
    }
    match metric {
        Metric::L1 => {
            let value = f.iter().zip(e).map(|(a, b)| (*a - *b).abs()).sum();
            let grad = f.iter().zip(e).map(|(a, b)| sign(*a - *b)).collect();
            Ok((value, grad))
        }
        Metric::NegCosine => {
            let nf = f.iter().map(|v| *v * *v).sum::<T>().sqrt();
            let ne = e.iter().map(|v| *v * *v).sum::<T>().sqrt();
            if nf == T::zero() || ne == T::zero() {
                return Err(ClipLossError::ZeroNorm);
            }
            let dot: T = f.iter().zip(e).map(|(a, b)| *a * *b).sum();
            let value = -dot / (nf * ne);
            let grad = f
                .iter()
                .zip(e)
                .map(|(fk, ek)| -(*ek / (nf * ne) - dot * *fk / (nf * nf * nf * ne)))
                .collect();
            Ok((value, grad))
        }
    }
}

/// Inputs of one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellInput<T> {
    pub human: Vec<T>,
    pub inter: Vec<T>,
    pub object: Vec<T>,
}

impl<T: Scalar> CellInput<T> {
    fn concat(&self) -> Vec<T> {
        self.human.iter().chain(&self.inter).chain(&self.object).copied().collect()
    }

    fn from_concat(v: &[T], d_f: usize) -> Self {
        Self { human: v[..d_f].to_vec(), inter: v[d_f..2 * d_f].to_vec(), object: v[2 * d_f..].to_vec() }
    }
}

/// K×K grid of cell inputs, text embeddings and the ground-truth mask, all
/// stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch<T> {
    pub k: usize,
    pub inputs: Vec<CellInput<T>>,
    pub text: Vec<Vec<T>>,
    pub mask: Vec<bool>,
}

impl<T: Scalar> EmbeddingBatch<T> {
    pub fn new(k: usize, inputs: Vec<CellInput<T>>, text: Vec<Vec<T>>, mask: Vec<bool>) -> Result<Self, ClipLossError> {
        let cells = k * k;
        if inputs.len() != cells || text.len() != cells || mask.len() != cells {
            return Err(ClipLossError::Dimension(format!("a {k}×{k} batch needs {cells} cells")));
        }
        if (0..k).any(|i| mask[i * k + i]) {
            return Err(ClipLossError::Dimension("mask diagonal must be false".into()));
        }
        let d_f = inputs.first().map_or(0, |c| c.human.len());
        if inputs.iter().any(|c| c.human.len() != d_f || c.inter.len() != d_f || c.object.len() != d_f) {
            return Err(ClipLossError::Dimension("feature vectors differ in length".into()));
        }
        let d_e = text.first().map_or(0, Vec::len);
        if text.iter().any(|t| t.len() != d_e) {
            return Err(ClipLossError::Dimension("text embeddings differ in length".into()));
        }
        Ok(Self { k, inputs, text, mask })
    }

    /// Random features and text in (−1, 1); each off-diagonal cell is in the
    /// mask with probability `density`.
    pub fn random(k: usize, d_f: usize, d_e: usize, density: f64, rng: &mut impl Rng) -> Self {
        let mut vec = |n: usize| -> Vec<T> { (0..n).map(|_| T::of(rng.random_range(-1.0..1.0))).collect() };
        let inputs = (0..k * k).map(|_| CellInput { human: vec(d_f), inter: vec(d_f), object: vec(d_f) }).collect();
        let text = (0..k * k).map(|_| vec(d_e)).collect();
        let mask = (0..k * k).map(|c| c / k != c % k && rng.random_bool(density)).collect();
        Self::new(k, inputs, text, mask).expect("consistent shape")
    }

    pub fn d_f(&self) -> usize {
        self.inputs.first().map_or(0, |c| c.human.len())
    }

    pub fn d_e(&self) -> usize {
        self.text.first().map_or(0, Vec::len)
    }

    /// Text format: a header `K D_f D_e metric`, then K² lines of 3·D_f
    /// features (human, interaction, object), K² lines of D_e text
    /// embeddings and K lines of K mask flags (0/1). Blank lines and lines
    /// starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<(Self, Metric), ClipLossError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let err = |line: usize, message: String| ClipLossError::Format { line, message };
        let (hl, header) = lines.next().ok_or_else(|| err(0, "empty batch file".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 4 {
            return Err(err(hl, "header must be `K D_f D_e metric`".into()));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|e| err(hl, format!("`{s}`: {e}")));
        let (k, d_f, d_e) = (num(h[0])?, num(h[1])?, num(h[2])?);
        let metric: Metric = h[3].parse().map_err(|e| err(hl, e))?;
        if k == 0 || d_f == 0 || d_e == 0 {
            return Err(err(hl, "dimensions must be positive".into()));
        }
        let mut row = |n: usize, what: &str| -> Result<Vec<T>, ClipLossError> {
            let (ln, l) = lines.next().ok_or_else(|| err(0, format!("missing {what} line")))?;
            let vals: Vec<f64> = l
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|e| err(ln, format!("`{v}`: {e}"))))
                .collect::<Result<_, _>>()?;
            if vals.len() != n {
                return Err(err(ln, format!("{what} line has {} values, expected {n}", vals.len())));
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(err(ln, "non-finite value".into()));
            }
            Ok(vals.into_iter().map(T::of).collect())
        };
        let inputs = (0..k * k)
            .map(|_| row(3 * d_f, "feature").map(|v| CellInput::from_concat(&v, d_f)))
            .collect::<Result<Vec<_>, _>>()?;
        let text_rows = (0..k * k).map(|_| row(d_e, "text")).collect::<Result<Vec<_>, _>>()?;
        let mut mask = Vec::with_capacity(k * k);
        for _ in 0..k {
            let flags = row(k, "mask")?;
            for f in flags {
                if f != T::zero() && f != T::one() {
                    return Err(err(0, "mask flags must be 0 or 1".into()));
                }
                mask.push(f == T::one());
            }
        }
        if let Some((ln, _)) = lines.next() {
            return Err(err(ln, "trailing data".into()));
        }
        Ok((Self::new(k, inputs, text_rows, mask)?, metric))
    }

    pub fn load(path: &Path) -> Result<(Self, Metric), ClipLossError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self, metric: Metric) -> String {
        let join = |v: &[T]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let mut out = format!("{} {} {} {metric}\n", self.k, self.d_f(), self.d_e());
        for c in &self.inputs {
            out.push_str(&join(&c.concat()));
            out.push('\n');
        }
        for t in &self.text {
            out.push_str(&join(t));
            out.push('\n');
        }
        for i in 0..self.k {
            let flags: Vec<&str> = (0..self.k).map(|j| if self.mask[i * self.k + j] { "1" } else { "0" }).collect();
            out.push_str(&flags.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, metric: Metric, path: &Path) -> Result<(), ClipLossError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_text(metric).as_bytes())?;
        Ok(())
    }
}

/// Masked sum of cell distances and its gradient with respect to each
/// model-side vector. Gradients of cells outside the mask are zero.
pub fn tri_emb_loss<T: Scalar>(
    features: &[Vec<T>],
    batch: &EmbeddingBatch<T>,
    metric: Metric,
) -> Result<(T, Vec<Vec<T>>), ClipLossError> {
    if features.len() != batch.mask.len() {
        return Err(ClipLossError::Dimension(format!("{} features for {} cells", features.len(), batch.mask.len())));
    }
    let mut loss = T::zero();
    let mut grads = Vec::with_capacity(features.len());
    for (c, f) in features.iter().enumerate() {
        let (i, j) = (c / batch.k, c % batch.k);
        if i != j && batch.mask[c] {
            let (v, g) = pair_distance(metric, f, &batch.text[c])?;
            loss = loss + v;
            grads.push(g);
        } else {
            grads.push(vec![T::zero(); f.len()]);
        }
    }
    Ok((loss, grads))
}

pub fn total_loss<T: Scalar>(l_model: T, l_tri_emb: T, lambda_clip: T) -> T {
    l_model + lambda_clip * l_tri_emb
}

/// Loss and gradients with respect to MLP parameters and cell inputs.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub loss: T,
    pub params: MlpParams<T>,
    pub inputs: Vec<CellInput<T>>,
}

/// Loss alone; cells outside the mask are not evaluated.
pub fn batch_loss<T: Scalar>(params: &MlpParams<T>, batch: &EmbeddingBatch<T>, metric: Metric) -> Result<T, ClipLossError> {
    let mut loss = T::zero();
    for (c, cell) in batch.inputs.iter().enumerate() {
        if batch.mask[c] {
            let (f, _) = mlp_forward(params, &cell.human, &cell.inter, &cell.object)?;
            loss = loss + pair_distance(metric, &f, &batch.text[c])?.0;
        }
    }
    Ok(loss)
}

pub fn loss_and_gradients<T: Scalar>(
    params: &MlpParams<T>,
    batch: &EmbeddingBatch<T>,
    metric: Metric,
) -> Result<Gradients<T>, ClipLossError> {
    let mut features = Vec::with_capacity(batch.inputs.len());
    let mut passes = Vec::with_capacity(batch.inputs.len());
    for cell in &batch.inputs {
        let (f, fwd) = mlp_forward(params, &cell.human, &cell.inter, &cell.object)?;
        features.push(f);
        passes.push(fwd);
    }
    let (loss, feature_grads) = tri_emb_loss(&features, batch, metric)?;
    let mut param_grads = params.zeros_like();
    let d_f = batch.d_f();
    let mut input_grads = Vec::with_capacity(batch.inputs.len());
    for (c, fwd) in passes.iter().enumerate() {
        if batch.mask[c] {
            let (g, gi) = mlp_backward(params, fwd, &feature_grads[c]);
            param_grads.add_scaled(T::one(), &g);
            input_grads.push(CellInput::from_concat(&gi, d_f));
        } else {
            input_grads.push(CellInput::from_concat(&vec![T::zero(); 3 * d_f], d_f));
        }
    }
    Ok(Gradients { loss, params: param_grads, inputs: input_grads })
}

fn input_mut<T: Scalar>(batch: &mut EmbeddingBatch<T>, cell: usize, x: usize) -> &mut T {
    let d_f = batch.d_f();
    let c = &mut batch.inputs[cell];
    match x / d_f {
        0 => &mut c.human[x % d_f],
        1 => &mut c.inter[x % d_f],
        _ => &mut c.object[x % d_f],
    }
}

/// Counts consecutive loss increases.
#[derive(Debug, Default)]
struct RiseCounter(usize);

impl RiseCounter {
    const LIMIT: usize = 5;

    /// True once the loss has risen `LIMIT` times in a row.
    fn observe<T: Scalar>(&mut self, previous: T, current: T) -> bool {
        if current > previous {
            self.0 += 1;
        } else {
            self.0 = 0;
        }
        self.0 >= Self::LIMIT
    }
}

fn relative_error<T: Scalar>(analytic: T, numeric: T) -> T {
    let denom = analytic.abs().max(numeric.abs()).max(T::of(RELATIVE_ERROR_FLOOR));
    (analytic - numeric).abs() / denom
}

/// Largest relative difference between analytic gradients and central
/// differences `(L(x+h) − L(x−h)) / 2h`, over every parameter and every
/// input coordinate. The denominator is `max(|analytic|, |numeric|, 1e-4)`.
pub fn finite_diff_check<T: Scalar>(
    params: &MlpParams<T>,
    batch: &EmbeddingBatch<T>,
    metric: Metric,
    h: T,
) -> Result<T, ClipLossError> {
    if !(h > T::zero()) || !h.is_finite() {
        return Err(ClipLossError::Argument(format!("step h must be positive, got {h}")));
    }
    let grads = loss_and_gradients(params, batch, metric)?;
    let two_h = h + h;
    let mut worst = T::zero();
    let analytic_params = grads.params.flat();
    let mut probe = params.clone();
    for (i, &a) in analytic_params.iter().enumerate() {
        let orig = *probe.param_mut(i);
        *probe.param_mut(i) = orig + h;
        let up = batch_loss(&probe, batch, metric)?;
        *probe.param_mut(i) = orig - h;
        let down = batch_loss(&probe, batch, metric)?;
        *probe.param_mut(i) = orig;
        worst = worst.max(relative_error(a, (up - down) / two_h));
    }
    let mut probe = batch.clone();
    for c in 0..batch.inputs.len() {
        let analytic = grads.inputs[c].concat();
        for (x, &a) in analytic.iter().enumerate() {
            let orig = *input_mut(&mut probe, c, x);
            *input_mut(&mut probe, c, x) = orig + h;
            let up = batch_loss(params, &probe, metric)?;
            *input_mut(&mut probe, c, x) = orig - h;
            let down = batch_loss(params, &probe, metric)?;
            *input_mut(&mut probe, c, x) = orig;
            worst = worst.max(relative_error(a, (up - down) / two_h));
        }
    }
    Ok(worst)
}

/// Plain gradient descent on the MLP parameters. Returns the loss before
/// the first step and after each step (`steps + 1` values).
pub fn toy_descent<T: Scalar>(
    params: &mut MlpParams<T>,
    batch: &EmbeddingBatch<T>,
    metric: Metric,
    steps: usize,
    learning_rate: T,
) -> Result<Vec<T>, ClipLossError> {
    if !(learning_rate >= T::zero()) {
        return Err(ClipLossError::Argument(format!("learning rate must be ≥ 0, got {learning_rate}")));
    }
    let mut trajectory = Vec::with_capacity(steps + 1);
    let mut grads = loss_and_gradients(params, batch, metric)?;
    trajectory.push(grads.loss);
    let mut rises = RiseCounter::default();
    for step in 1..=steps {
        params.add_scaled(-learning_rate, &grads.params);
        grads = loss_and_gradients(params, batch, metric)?;
        let diverged = rises.observe(trajectory[step - 1], grads.loss);
        trajectory.push(grads.loss);
        if diverged {
            return Err(ClipLossError::Diverged {
                step,
                trajectory: trajectory.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect(),
            });
        }
    }
    Ok(trajectory)
}

/// `A scene of a person <relation> a/an <object>`.
pub fn scene_template(relation: &str, object: &str) -> String {
    let article = match object.chars().next() {
        Some(c) if "aeiouAEIOU".contains(c) => "an",
        _ => "a",
    };
    format!("A scene of a person {relation} {article} {object}")
}
