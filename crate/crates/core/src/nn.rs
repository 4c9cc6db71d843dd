//! The projection network: a stack of fully connected layers followed by a
//! classifier head used only during training.
//!
//! Rows are samples. Layer `l` computes `Z_l = H_{l−1} W_lᵀ + b_l` and
//! `H_l = act(Z_l)`; the last layer's output is the embedding that the
//! verification backend consumes. The hidden activation applies to every
//! layer but the last, which uses the embedding activation.
//!
//! Forward and backward are written once over [`Real`], so the Hessian-vector
//! product is the same gradient code evaluated on dual numbers.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dual::{Dual, Real};
use crate::error::{Error, Result};
use crate::losses::{aam_ce_on_cosines, softmax_ce_on, CosineHead, LossSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `max(0, x)`; the derivative at exactly 0 is taken as 0.
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x.value() > 0.0 {
                    x
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `h`.
    #[inline]
    fn derivative<T: Real>(self, z: T, h: T) -> T {
        match self {
            Activation::Relu => {
                if z.value() > 0.0 {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - h * h,
            Activation::Identity => T::one(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Linear logits `W e + b`, trained with softmax cross-entropy.
    SoftmaxLinear,
    /// Cosine logits against unbiased class rows, trained with AAM softmax.
    Aam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// `[D, h1, ..., hL]`: input width followed by each layer's width.
    pub layer_dims: Vec<usize>,
    pub hidden_activation: Activation,
    pub embedding_activation: Activation,
    pub head: HeadKind,
    pub n_classes: usize,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::Config(
                "layer_dims needs an input width and at least one layer".into(),
            ));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::Config(format!(
                "layer widths must be positive: {:?}",
                self.layer_dims
            )));
        }
        if self.n_classes < 2 {
            return Err(Error::Config(format!(
                "classifier needs at least 2 classes, got {}",
                self.n_classes
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn embedding_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated")
    }

    pub fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.n_layers() {
            self.embedding_activation
        } else {
            self.hidden_activation
        }
    }

    pub fn check_loss(&self, loss: &LossSpec) -> Result<()> {
        match (self.head, loss) {
            (HeadKind::SoftmaxLinear, LossSpec::Softmax) => Ok(()),
            (HeadKind::Aam, LossSpec::Aam(cfg)) => cfg.validate(),
            (head, loss) => Err(Error::Config(format!(
                "loss {loss:?} does not fit a {head:?} head"
            ))),
        }
    }
}

/// One fully connected layer: `weight` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T: nalgebra::Scalar = f64> {
    pub weight: DMatrix<T>,
    pub bias: DVector<T>,
}

/// Every trainable parameter of a [`ProjectionNet`]. Gradients and
/// Hessian-vector products share this shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T: nalgebra::Scalar = f64> {
    pub layers: Vec<Dense<T>>,
    /// `K × h` class rows.
    pub head_weight: DMatrix<T>,
    /// Present only for the softmax-linear head.
    pub head_bias: Option<DVector<T>>,
}

/// ∇θ L, shape-congruent with [`Params`].
pub type ParamGrads = Params<f64>;

impl<T: nalgebra::Scalar> Params<T> {
    fn blocks(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::with_capacity(2 * self.layers.len() + 2);
        for l in &self.layers {
            out.push(l.weight.as_slice());
            out.push(l.bias.as_slice());
        }
        out.push(self.head_weight.as_slice());
        if let Some(b) = &self.head_bias {
            out.push(b.as_slice());
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::with_capacity(2 * self.layers.len() + 2);
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out.push(self.head_weight.as_mut_slice());
        if let Some(b) = &mut self.head_bias {
            out.push(b.as_mut_slice());
        }
        out
    }

    pub fn same_shape<U: nalgebra::Scalar>(&self, other: &Params<U>) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.shape() == b.weight.shape() && a.bias.len() == b.bias.len())
            && self.head_weight.shape() == other.head_weight.shape()
            && self.head_bias.as_ref().map(|b| b.len()) == other.head_bias.as_ref().map(|b| b.len())
    }

    fn zip_map<U: nalgebra::Scalar, V: nalgebra::Scalar>(
        &self,
        other: &Params<U>,
        f: impl Fn(T, U) -> V,
    ) -> Result<Params<V>>
    where
        T: Copy,
        U: Copy,
    {
        if !self.same_shape(other) {
            return Err(Error::Dimension("parameter trees differ in shape".into()));
        }
        let zm = |a: &DMatrix<T>, b: &DMatrix<U>| a.zip_map(b, &f);
        let zv = |a: &DVector<T>, b: &DVector<U>| a.zip_map(b, &f);
        Ok(Params {
            layers: self
                .layers
                .iter()
                .zip(&other.layers)
                .map(|(a, b)| Dense {
                    weight: zm(&a.weight, &b.weight),
                    bias: zv(&a.bias, &b.bias),
                })
                .collect(),
            head_weight: zm(&self.head_weight, &other.head_weight),
            head_bias: match (&self.head_bias, &other.head_bias) {
                (Some(a), Some(b)) => Some(zv(a, b)),
                _ => None,
            },
        })
    }

    pub fn map<U: nalgebra::Scalar>(&self, f: impl Fn(T) -> U) -> Params<U>
    where
        T: Copy,
    {
        Params {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: l.weight.map(&f),
                    bias: l.bias.map(&f),
                })
                .collect(),
            head_weight: self.head_weight.map(&f),
            head_bias: self.head_bias.as_ref().map(|b| b.map(&f)),
        }
    }
}

impl Params<f64> {
    /// `self + scale·g`, elementwise. Neither input is modified.
    pub fn axpy(&self, g: &Params<f64>, scale: f64) -> Result<Self> {
        self.zip_map(g, |a, b| a + scale * b)
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|_| 0.0)
    }

    pub fn scaled(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    pub fn n_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// All values in block order (layer weights, layer biases, head).
    /// Matrices are flattened in their storage (column-major) order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    /// Overwrites every value from a flat vector produced by [`Self::to_flat`].
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Dimension(format!(
                "flat vector of {} for {} parameters",
                flat.len(),
                self.n_params()
            )));
        }
        let mut off = 0;
        for block in self.blocks_mut() {
            block.copy_from_slice(&flat[off..off + block.len()]);
            off += block.len();
        }
        Ok(())
    }

    pub fn dot(&self, other: &Params<f64>) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::Dimension("parameter trees differ in shape".into()));
        }
        Ok(self
            .blocks()
            .iter()
            .zip(other.blocks())
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum())
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).expect("same tree").sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Pairs each value with a tangent, giving dual parameters.
    pub fn with_tangent(&self, tangent: &Params<f64>) -> Result<Params<Dual>> {
        self.zip_map(tangent, Dual::new)
    }
}

/// `θ + scale·g`; the input is not modified.
pub fn axpy_params(theta: &Params, g: &ParamGrads, scale: f64) -> Result<Params> {
    theta.axpy(g, scale)
}

/// A mini-batch: `n × D` vectors and one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub vectors: DMatrix<f64>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(vectors: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        if vectors.nrows() == 0 {
            return Err(Error::Data("empty batch".into()));
        }
        if vectors.nrows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} rows but {} labels",
                vectors.nrows(),
                labels.len()
            )));
        }
        Ok(Self { vectors, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone)]
pub enum HeadTrace<T: nalgebra::Scalar> {
    Linear { logits: DMatrix<T> },
    Cosine(Box<CosineHead<T>>),
}

impl<T: nalgebra::Scalar> std::fmt::Debug for CosineHead<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CosineHead")
            .field("cosines", &self.cosines)
            .finish_non_exhaustive()
    }
}

impl<T: nalgebra::Scalar> Clone for CosineHead<T> {
    fn clone(&self) -> Self {
        Self {
            unit_emb: self.unit_emb.clone(),
            emb_norms: self.emb_norms.clone(),
            unit_w: self.unit_w.clone(),
            w_norms: self.w_norms.clone(),
            cosines: self.cosines.clone(),
        }
    }
}

/// Everything `forward` computed, kept for `backward`.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T: nalgebra::Scalar = f64> {
    /// Pre-activations `Z_l`, one per layer.
    pub pre: Vec<DMatrix<T>>,
    /// `post[0]` is the input; `post[l]` the output of layer `l`.
    pub post: Vec<DMatrix<T>>,
    pub head: HeadTrace<T>,
}

impl<T: nalgebra::Scalar> ForwardTrace<T> {
    /// Head outputs: linear logits, or the cosine matrix for an AAM head.
    pub fn logits(&self) -> &DMatrix<T> {
        match &self.head {
            HeadTrace::Linear { logits } => logits,
            HeadTrace::Cosine(c) => &c.cosines,
        }
    }

    /// Output of the last FC layer (the embedding), one row per sample.
    pub fn embeddings(&self) -> &DMatrix<T> {
        self.post.last().expect("trace has the input at least")
    }
}

fn body_forward<T: Real>(
    cfg: &NetConfig,
    params: &Params<T>,
    input: DMatrix<T>,
) -> (Vec<DMatrix<T>>, Vec<DMatrix<T>>) {
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut post = Vec::with_capacity(params.layers.len() + 1);
    post.push(input);
    for (l, layer) in params.layers.iter().enumerate() {
        let mut z = post[l].clone() * layer.weight.transpose();
        for mut row in z.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(layer.bias.iter()) {
                *v += *b;
            }
        }
        let act = cfg.activation(l);
        let h = z.map(|v| act.apply(v));
        pre.push(z);
        post.push(h);
    }
    (pre, post)
}

fn forward_on<T: Real>(
    cfg: &NetConfig,
    params: &Params<T>,
    input: DMatrix<T>,
) -> Result<ForwardTrace<T>> {
    if input.ncols() != cfg.input_dim() {
        return Err(Error::Dimension(format!(
            "input width {} but the net expects {}",
            input.ncols(),
            cfg.input_dim()
        )));
    }
    let (pre, post) = body_forward(cfg, params, input);
    let emb = post.last().expect("nonempty");
    let head = match &params.head_bias {
        Some(bias) => {
            let mut logits = emb * params.head_weight.transpose();
            for mut row in logits.row_iter_mut() {
                for (v, b) in row.iter_mut().zip(bias.iter()) {
                    *v += *b;
                }
            }
            HeadTrace::Linear { logits }
        }
        None => HeadTrace::Cosine(Box::new(CosineHead::forward(emb, &params.head_weight)?)),
    };
    Ok(ForwardTrace { pre, post, head })
}

fn backward_on<T: Real>(
    cfg: &NetConfig,
    params: &Params<T>,
    trace: &ForwardTrace<T>,
    dlogits: &DMatrix<T>,
) -> Result<Params<T>> {
    let n = trace.post[0].nrows();
    if trace.pre.len() != params.layers.len()
        || dlogits.shape() != (n, params.head_weight.nrows())
        || trace
            .pre
            .iter()
            .zip(&params.layers)
            .any(|(z, l)| z.shape() != (n, l.weight.nrows()))
    {
        return Err(Error::Dimension("trace does not match the network".into()));
    }
    let emb = trace.embeddings();
    let (mut dh, head_weight, head_bias) = match (&trace.head, &params.head_bias) {
        (HeadTrace::Linear { .. }, Some(_)) => {
            let dw = dlogits.transpose() * emb;
            let db =
                DVector::from_iterator(dlogits.ncols(), dlogits.column_iter().map(|c| c.sum()));
            (dlogits * &params.head_weight, dw, Some(db))
        }
        (HeadTrace::Cosine(head), None) => {
            let (demb, dw) = head.backward(dlogits);
            (demb, dw, None)
        }
        _ => {
            return Err(Error::Dimension(
                "trace head does not match the network head".into(),
            ))
        }
    };
    let mut layers = Vec::with_capacity(params.layers.len());
    for l in (0..params.layers.len()).rev() {
        let act = cfg.activation(l);
        let dz = dh.zip_zip_map(&trace.pre[l], &trace.post[l + 1], |g, z, h| {
            g * act.derivative(z, h)
        });
        let dw = dz.transpose() * &trace.post[l];
        let db = DVector::from_iterator(dz.ncols(), dz.column_iter().map(|c| c.sum()));
        if l > 0 {
            dh = &dz * &params.layers[l].weight;
        }
        layers.push(Dense {
            weight: dw,
            bias: db,
        });
    }
    layers.reverse();
    Ok(Params {
        layers,
        head_weight,
        head_bias,
    })
}

fn loss_on<T: Real>(
    loss: &LossSpec,
    trace: &ForwardTrace<T>,
    labels: &[usize],
) -> Result<(T, DMatrix<T>)> {
    match loss {
        LossSpec::Softmax => softmax_ce_on(trace.logits(), labels),
        LossSpec::Aam(cfg) => aam_ce_on_cosines(trace.logits(), labels, cfg),
    }
}

fn loss_grad_on<T: Real>(
    cfg: &NetConfig,
    params: &Params<T>,
    input: DMatrix<T>,
    labels: &[usize],
    loss: &LossSpec,
) -> Result<(T, Params<T>)> {
    let trace = forward_on(cfg, params, input)?;
    let (value, dlogits) = loss_on(loss, &trace, labels)?;
    let grads = backward_on(cfg, params, &trace, &dlogits)?;
    Ok((value, grads))
}

/// The projection MLP `f_θ` and its classifier head.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionNet {
    config: NetConfig,
    params: Params,
}

/// Glorot-uniform weights, zero biases, deterministic in `seed`.
pub fn init_net(config: NetConfig, seed: u64) -> Result<ProjectionNet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut glorot = |rows: usize, cols: usize| {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        // Fill row by row so the draw order does not depend on storage order.
        let mut m = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = rng.random_range(-limit..=limit);
            }
        }
        m
    };
    let layers = config
        .layer_dims
        .windows(2)
        .map(|w| Dense {
            weight: glorot(w[1], w[0]),
            bias: DVector::zeros(w[1]),
        })
        .collect();
    let emb = config.embedding_dim();
    let head_weight = glorot(config.n_classes, emb);
    let head_bias = match config.head {
        HeadKind::SoftmaxLinear => Some(DVector::zeros(config.n_classes)),
        HeadKind::Aam => None,
    };
    Ok(ProjectionNet {
        config,
        params: Params {
            layers,
            head_weight,
            head_bias,
        },
    })
}

impl ProjectionNet {
    pub fn from_parts(config: NetConfig, params: Params) -> Result<Self> {
        config.validate()?;
        let reference = init_net(config.clone(), 0)?;
        if !reference.params.same_shape(&params) {
            return Err(Error::Dimension(
                "parameters do not match the configured layer shapes".into(),
            ));
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("network parameters".into()));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    /// A net with the same topology and different parameters.
    pub fn with_params(&self, params: Params) -> Result<Self> {
        if !self.params.same_shape(&params) {
            return Err(Error::Dimension(
                "parameter tree does not match the net".into(),
            ));
        }
        Ok(Self {
            config: self.config.clone(),
            params,
        })
    }

    pub fn forward(&self, batch: &Batch) -> Result<ForwardTrace> {
        forward_on(&self.config, &self.params, batch.vectors.clone())
    }

    /// Embeddings (last FC layer outputs) for each row of `vectors`.
    pub fn embed_batch(&self, vectors: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if vectors.ncols() != self.config.input_dim() {
            return Err(Error::Dimension(format!(
                "input width {} but the net expects {}",
                vectors.ncols(),
                self.config.input_dim()
            )));
        }
        let (_, mut post) = body_forward(&self.config, &self.params, vectors.clone());
        Ok(post.pop().expect("nonempty"))
    }

    /// Embedding of one vector. The classifier head is not evaluated.
    pub fn embed(&self, vector: &[f64]) -> Result<Vec<f64>> {
        let m = DMatrix::from_row_slice(1, vector.len(), vector);
        Ok(self.embed_batch(&m)?.iter().copied().collect())
    }

    /// Reverse-mode gradient given the upstream gradient on the head outputs
    /// (logits, or cosines for an AAM head).
    pub fn backward(&self, trace: &ForwardTrace, dlogits: &DMatrix<f64>) -> Result<ParamGrads> {
        backward_on(&self.config, &self.params, trace, dlogits)
    }

    /// Mean loss over the batch and its gradient.
    pub fn loss_and_grad(&self, batch: &Batch, loss: &LossSpec) -> Result<(f64, ParamGrads)> {
        self.config.check_loss(loss)?;
        loss_grad_on(
            &self.config,
            &self.params,
            batch.vectors.clone(),
            &batch.labels,
            loss,
        )
    }

    pub fn loss(&self, batch: &Batch, loss: &LossSpec) -> Result<f64> {
        self.config.check_loss(loss)?;
        let trace = self.forward(batch)?;
        Ok(loss_on(loss, &trace, &batch.labels)?.0)
    }

    /// Exact Hessian-vector product `H·v` of the batch loss at the current
    /// parameters, by forward-mode differentiation of the reverse-mode
    /// gradient along `v`.
    pub fn hvp(&self, batch: &Batch, loss: &LossSpec, v: &ParamGrads) -> Result<ParamGrads> {
        self.config.check_loss(loss)?;
        let dual = self.params.with_tangent(v)?;
        let input = batch.vectors.map(Dual::constant);
        let (_, grads) = loss_grad_on(&self.config, &dual, input, &batch.labels, loss)?;
        Ok(grads.map(|d| d.eps))
    }

    pub fn to_checkpoint(&self) -> NetCheckpoint {
        let mut params = Vec::new();
        let row_major = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
        for l in &self.params.layers {
            params.push(row_major(&l.weight));
            params.push(l.bias.as_slice().to_vec());
        }
        params.push(row_major(&self.params.head_weight));
        if let Some(b) = &self.params.head_bias {
            params.push(b.as_slice().to_vec());
        }
        NetCheckpoint {
            layer_dims: self.config.layer_dims.clone(),
            hidden_activation: self.config.hidden_activation,
            embedding_activation: self.config.embedding_activation,
            head_kind: self.config.head,
            n_classes: self.config.n_classes,
            params,
        }
    }

    pub fn from_checkpoint(ck: NetCheckpoint) -> Result<Self> {
        let config = NetConfig {
            layer_dims: ck.layer_dims,
            hidden_activation: ck.hidden_activation,
            embedding_activation: ck.embedding_activation,
            head: ck.head_kind,
            n_classes: ck.n_classes,
        };
        config.validate()?;
        let mut arrays = ck.params.into_iter();
        let mut take = |rows: usize, cols: usize, what: &str| -> Result<Vec<f64>> {
            let a = arrays
                .next()
                .ok_or_else(|| Error::Data(format!("checkpoint is missing {what}")))?;
            if a.len() != rows * cols {
                return Err(Error::Dimension(format!(
                    "checkpoint {what} has {} values, expected {}",
                    a.len(),
                    rows * cols
                )));
            }
            Ok(a)
        };
        let mut layers = Vec::new();
        for (l, w) in config.layer_dims.windows(2).enumerate() {
            let weight = DMatrix::from_row_slice(
                w[1],
                w[0],
                &take(w[1], w[0], &format!("layer {l} weight"))?,
            );
            let bias = DVector::from_vec(take(w[1], 1, &format!("layer {l} bias"))?);
            layers.push(Dense { weight, bias });
        }
        let k = config.n_classes;
        let e = config.embedding_dim();
        let head_weight = DMatrix::from_row_slice(k, e, &take(k, e, "head weight")?);
        let head_bias = match config.head {
            HeadKind::SoftmaxLinear => Some(DVector::from_vec(take(k, 1, "head bias")?)),
            HeadKind::Aam => None,
        };
        if arrays.next().is_some() {
            return Err(Error::Data("checkpoint has extra parameter arrays".into()));
        }
        Self::from_parts(
            config,
            Params {
                layers,
                head_weight,
                head_bias,
            },
        )
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(serde_json::from_str(&text)?)
    }
}

/// JSON checkpoint. Parameter arrays come in layer order (weight row-major,
/// then bias), followed by the head weight and, for softmax heads, its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetCheckpoint {
    pub layer_dims: Vec<usize>,
    pub hidden_activation: Activation,
    pub embedding_activation: Activation,
    pub head_kind: HeadKind,
    pub n_classes: usize,
    pub params: Vec<Vec<f64>>,
}
