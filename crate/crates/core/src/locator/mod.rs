//! The span locator network.
//!
//! Forward pass for a transcript `T` (turns × d) and query `Q` (tokens × d):
//!
//! ```text
//! T' = maxpool(conv(T))          Q' = maxpool(conv(Q))
//! E_T = W1 T' + b1               E_Q = W1 Q' + b1
//! sim = cos(E_T, E_Q)
//! f   = [E_T ‖ E_Q ‖ sim ‖ L / L_max]
//! s   = |W3 · leaky(W2 f + b2) + b3|      → (start, end)
//! ```
//!
//! The convolution runs along the sequence axis with zero padding so every
//! position produces an output. All arithmetic is `f64`.

mod checkpoint;
mod grad;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, sidecar_path,
    CheckpointSidecar, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use grad::{batch_gradients, batch_loss, gradient_norm, Example};
pub use train::{initial_params, train, train_embedded, Adam, EpochLog, TrainingLog, TrainingPair};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbedError;
use crate::ingest::GoldSpan;
use crate::matrix::{dot, norm, Matrix};

/// Norms below this make cosine similarity undefined.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum LocatorError {
    #[error("empty input sequence")]
    EmptyInput,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("cosine similarity undefined for a zero-norm vector")]
    DegenerateVector,
    #[error("training set has no specific queries")]
    EmptyTrainingSet,
    #[error("training diverged in epoch {epoch} (learning rate {learning_rate}): non-finite loss")]
    Divergence { epoch: usize, learning_rate: f64 },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
}

fn shape_err(
    what: &str,
    expected: impl std::fmt::Debug,
    got: impl std::fmt::Debug,
) -> LocatorError {
    LocatorError::Shape(format!("{what}: expected {expected:?}, got {got:?}"))
}

/// Hyperparameters. `length_norm` defaults to the longest training meeting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocatorConfig {
    pub out_channels: usize,
    pub projection_dim: usize,
    pub hidden_dim: usize,
    pub kernel_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub length_norm: Option<f64>,
    pub leaky_slope: f64,
    /// Use one convolution for both branches (default) or one per branch.
    pub share_conv: bool,
    pub init_scale: f64,
}

impl Default for LocatorConfig {
    fn default() -> Self {
        Self {
            out_channels: 64,
            projection_dim: 64,
            hidden_dim: 128,
            kernel_size: 3,
            learning_rate: 1e-3,
            epochs: 30,
            batch_size: 8,
            seed: 0,
            length_norm: None,
            leaky_slope: 0.01,
            share_conv: true,
            init_scale: 0.05,
        }
    }
}

impl LocatorConfig {
    pub fn validate(&self) -> Result<(), LocatorError> {
        let positive = [
            ("out_channels", self.out_channels),
            ("projection_dim", self.projection_dim),
            ("hidden_dim", self.hidden_dim),
            ("kernel_size", self.kernel_size),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(LocatorError::Config(format!("{name} must be positive")));
            }
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(LocatorError::Config("kernel_size must be odd".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(LocatorError::Config(
                "learning_rate must be positive".into(),
            ));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(LocatorError::Config(
                "leaky_slope must lie in (0, 1)".into(),
            ));
        }
        if let Some(l) = self.length_norm {
            if !(l > 0.0 && l.is_finite()) {
                return Err(LocatorError::Config("length_norm must be positive".into()));
            }
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(LocatorError::Config("init_scale must be positive".into()));
        }
        Ok(())
    }
}

/// 1-D convolution over the sequence axis, stride 1, odd kernel width.
/// `kernel` is laid out `[channel][offset][feature]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub channels: usize,
    pub width: usize,
    pub in_dim: usize,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(channels: usize, width: usize, in_dim: usize) -> Self {
        Self {
            channels,
            width,
            in_dim,
            kernel: vec![0.0; channels * width * in_dim],
            bias: vec![0.0; channels],
        }
    }

    #[inline]
    pub fn weight(&self, ch: usize, offset: usize, feature: usize) -> f64 {
        self.kernel[(ch * self.width + offset) * self.in_dim + feature]
    }

    #[inline]
    pub fn weight_mut(&mut self, ch: usize, offset: usize, feature: usize) -> &mut f64 {
        &mut self.kernel[(ch * self.width + offset) * self.in_dim + feature]
    }

    fn check(&self) -> Result<(), LocatorError> {
        if self.width == 0 || self.width.is_multiple_of(2) {
            return Err(LocatorError::Shape(format!(
                "kernel width {} must be odd",
                self.width
            )));
        }
        if self.kernel.len() != self.channels * self.width * self.in_dim
            || self.bias.len() != self.channels
        {
            return Err(LocatorError::Shape(
                "convolution tensors inconsistent with declared shape".into(),
            ));
        }
        Ok(())
    }
}

/// All learnable tensors plus the two fixed scalars the forward pass needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocatorParams {
    pub conv: ConvLayer,
    /// Present only when the branches do not share a convolution.
    pub query_conv: Option<ConvLayer>,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub w3: Matrix,
    pub b3: Vec<f64>,
    pub leaky_slope: f64,
    pub length_norm: f64,
}

impl LocatorParams {
    pub fn zeros(in_dim: usize, config: &LocatorConfig, length_norm: f64) -> Self {
        let (c, e, h, k) = (
            config.out_channels,
            config.projection_dim,
            config.hidden_dim,
            config.kernel_size,
        );
        Self {
            conv: ConvLayer::zeros(c, k, in_dim),
            query_conv: (!config.share_conv).then(|| ConvLayer::zeros(c, k, in_dim)),
            w1: Matrix::zeros(e, c),
            b1: vec![0.0; e],
            w2: Matrix::zeros(h, 2 * e + 2),
            b2: vec![0.0; h],
            w3: Matrix::zeros(2, h),
            b3: vec![0.0; 2],
            leaky_slope: config.leaky_slope,
            length_norm,
        }
    }

    /// Every tensor drawn from uniform(−scale, scale) in declaration order.
    pub fn random<R: Rng>(
        in_dim: usize,
        config: &LocatorConfig,
        length_norm: f64,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(in_dim, config, length_norm);
        for (_, t) in p.tensors_mut() {
            t.iter_mut().for_each(|x| *x = rng.gen_range(-scale..scale));
        }
        p
    }

    /// A same-shaped parameter set with every entry zero (gradient buffer).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.iter_mut().for_each(|x| *x = 0.0);
        }
        z
    }

    pub fn in_dim(&self) -> usize {
        self.conv.in_dim
    }

    pub fn channels(&self) -> usize {
        self.conv.channels
    }

    pub fn projection_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w2.rows()
    }

    pub fn query_conv(&self) -> &ConvLayer {
        self.query_conv.as_ref().unwrap_or(&self.conv)
    }

    /// Learnable tensors in checkpoint order.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut v: Vec<(&'static str, &[f64])> = vec![
            ("conv_kernel", &self.conv.kernel),
            ("conv_bias", &self.conv.bias),
        ];
        if let Some(q) = &self.query_conv {
            v.push(("query_conv_kernel", &q.kernel));
            v.push(("query_conv_bias", &q.bias));
        }
        v.extend([
            ("w1", self.w1.as_slice()),
            ("b1", &self.b1[..]),
            ("w2", self.w2.as_slice()),
            ("b2", &self.b2[..]),
            ("w3", self.w3.as_slice()),
            ("b3", &self.b3[..]),
        ]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut v: Vec<(&'static str, &mut [f64])> = vec![
            ("conv_kernel", &mut self.conv.kernel),
            ("conv_bias", &mut self.conv.bias),
        ];
        if let Some(q) = &mut self.query_conv {
            v.push(("query_conv_kernel", &mut q.kernel));
            v.push(("query_conv_bias", &mut q.bias));
        }
        v.extend([
            ("w1", self.w1.as_mut_slice()),
            ("b1", &mut self.b1[..]),
            ("w2", self.w2.as_mut_slice()),
            ("b2", &mut self.b2[..]),
            ("w3", self.w3.as_mut_slice()),
            ("b3", &mut self.b3[..]),
        ]);
        v
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    pub fn check(&self) -> Result<(), LocatorError> {
        self.conv.check()?;
        if let Some(q) = &self.query_conv {
            q.check()?;
            if (q.channels, q.width, q.in_dim)
                != (self.conv.channels, self.conv.width, self.conv.in_dim)
            {
                return Err(LocatorError::Shape(
                    "query convolution differs in shape from transcript convolution".into(),
                ));
            }
        }
        let (c, e, h) = (self.channels(), self.projection_dim(), self.hidden_dim());
        if self.w1.cols() != c || self.b1.len() != e {
            return Err(shape_err("W1/b1", (e, c), (self.w1.shape(), self.b1.len())));
        }
        if self.w2.cols() != 2 * e + 2 || self.b2.len() != h {
            return Err(shape_err(
                "W2/b2",
                (h, 2 * e + 2),
                (self.w2.shape(), self.b2.len()),
            ));
        }
        if self.w3.shape() != (2, h) || self.b3.len() != 2 {
            return Err(shape_err("W3/b3", (2, h), (self.w3.shape(), self.b3.len())));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(LocatorError::Shape(format!(
                "leaky slope {} outside (0, 1)",
                self.leaky_slope
            )));
        }
        if !(self.length_norm > 0.0 && self.length_norm.is_finite()) {
            return Err(LocatorError::Shape(format!(
                "length norm {} not positive",
                self.length_norm
            )));
        }
        Ok(())
    }
}

/// Raw, non-negative ⟨start, end⟩ regression output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub start_raw: f64,
    pub end_raw: f64,
}

// ---------------------------------------------------------------------------
// Forward components

/// Convolution output (n × c) and, per channel, the max value and the lowest
/// index attaining it.
pub(crate) fn conv_maxpool_with_argmax(
    m: &Matrix,
    conv: &ConvLayer,
) -> Result<(Vec<f64>, Vec<usize>), LocatorError> {
    conv.check()?;
    let n = m.rows();
    if n == 0 {
        return Err(LocatorError::EmptyInput);
    }
    if m.cols() != conv.in_dim {
        return Err(shape_err("conv input dim", conv.in_dim, m.cols()));
    }
    let pad = conv.width / 2;
    let mut pooled = vec![f64::NEG_INFINITY; conv.channels];
    let mut argmax = vec![0usize; conv.channels];
    for t in 0..n {
        for ch in 0..conv.channels {
            let mut acc = conv.bias[ch];
            for off in 0..conv.width {
                // input row t + off - pad, zero outside [0, n)
                let src = t + off;
                if src < pad || src - pad >= n {
                    continue;
                }
                let row = m.row(src - pad);
                let w = &conv.kernel[(ch * conv.width + off) * conv.in_dim..][..conv.in_dim];
                acc += dot(w, row);
            }
            if acc > pooled[ch] {
                pooled[ch] = acc;
                argmax[ch] = t;
            }
        }
    }
    Ok((pooled, argmax))
}

/// Zero-padded 1-D convolution along rows followed by max over rows.
pub fn conv_maxpool(m: &Matrix, conv: &ConvLayer) -> Result<Vec<f64>, LocatorError> {
    conv_maxpool_with_argmax(m, conv).map(|(v, _)| v)
}

/// `W1 v + b1`.
pub fn project(v: &[f64], w1: &Matrix, b1: &[f64]) -> Result<Vec<f64>, LocatorError> {
    if w1.cols() != v.len() || w1.rows() != b1.len() {
        return Err(shape_err(
            "projection",
            (w1.rows(), v.len()),
            (w1.shape(), b1.len()),
        ));
    }
    Ok(w1.iter_rows().zip(b1).map(|(r, b)| dot(r, v) + b).collect())
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, LocatorError> {
    if a.len() != b.len() {
        return Err(shape_err("cosine operands", a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na < DEGENERATE_NORM || nb < DEGENERATE_NORM {
        return Err(LocatorError::DegenerateVector);
    }
    Ok(dot(a, b) / (na * nb))
}

/// `[E_T ‖ E_Q ‖ sim ‖ L / L_max]`.
pub fn assemble_features(
    e_t: &[f64],
    e_q: &[f64],
    sim: f64,
    length: usize,
    length_norm: f64,
) -> Vec<f64> {
    let mut f = Vec::with_capacity(e_t.len() + e_q.len() + 2);
    f.extend_from_slice(e_t);
    f.extend_from_slice(e_q);
    f.push(sim);
    f.push(length as f64 / length_norm);
    f
}

#[inline]
pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn mlp_forward(
    features: &[f64],
    w2: &Matrix,
    b2: &[f64],
    w3: &Matrix,
    b3: &[f64],
    slope: f64,
) -> Result<SpanPrediction, LocatorError> {
    if w2.cols() != features.len()
        || w2.rows() != b2.len()
        || w3.shape() != (2, b2.len())
        || b3.len() != 2
    {
        return Err(LocatorError::Shape(format!(
            "mlp: features {}, W2 {:?}, b2 {}, W3 {:?}, b3 {}",
            features.len(),
            w2.shape(),
            b2.len(),
            w3.shape(),
            b3.len()
        )));
    }
    let hidden: Vec<f64> = w2
        .iter_rows()
        .zip(b2)
        .map(|(r, b)| leaky_relu(dot(r, features) + b, slope))
        .collect();
    let out: Vec<f64> = w3
        .iter_rows()
        .zip(b3)
        .map(|(r, b)| (dot(r, &hidden) + b).abs())
        .collect();
    Ok(SpanPrediction {
        start_raw: out[0],
        end_raw: out[1],
    })
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub transcript_pooled: Vec<f64>,
    pub transcript_argmax: Vec<usize>,
    pub query_pooled: Vec<f64>,
    pub query_argmax: Vec<usize>,
    pub e_t: Vec<f64>,
    pub e_q: Vec<f64>,
    /// `None` when either projection has (near) zero norm; the feature is 0.
    pub sim: Option<f64>,
    pub features: Vec<f64>,
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub out_pre: [f64; 2],
    pub prediction: SpanPrediction,
}

impl ForwardTrace {
    pub fn sim_feature(&self) -> f64 {
        self.sim.unwrap_or(0.0)
    }
}

pub fn forward_trace(
    params: &LocatorParams,
    transcript: &Matrix,
    query: &Matrix,
    length: usize,
) -> Result<ForwardTrace, LocatorError> {
    params.check()?;
    if length == 0 {
        return Err(LocatorError::EmptyInput);
    }
    let (transcript_pooled, transcript_argmax) =
        conv_maxpool_with_argmax(transcript, &params.conv)?;
    let (query_pooled, query_argmax) = conv_maxpool_with_argmax(query, params.query_conv())?;
    let e_t = project(&transcript_pooled, &params.w1, &params.b1)?;
    let e_q = project(&query_pooled, &params.w1, &params.b1)?;
    let sim = match cosine_similarity(&e_t, &e_q) {
        Ok(s) => Some(s),
        Err(LocatorError::DegenerateVector) => None,
        Err(e) => return Err(e),
    };
    let features = assemble_features(&e_t, &e_q, sim.unwrap_or(0.0), length, params.length_norm);
    let hidden_pre: Vec<f64> = params
        .w2
        .iter_rows()
        .zip(&params.b2)
        .map(|(r, b)| dot(r, &features) + b)
        .collect();
    let hidden: Vec<f64> = hidden_pre
        .iter()
        .map(|&x| leaky_relu(x, params.leaky_slope))
        .collect();
    let out_pre = [
        dot(params.w3.row(0), &hidden) + params.b3[0],
        dot(params.w3.row(1), &hidden) + params.b3[1],
    ];
    let prediction = SpanPrediction {
        start_raw: out_pre[0].abs(),
        end_raw: out_pre[1].abs(),
    };
    Ok(ForwardTrace {
        transcript_pooled,
        transcript_argmax,
        query_pooled,
        query_argmax,
        e_t,
        e_q,
        sim,
        features,
        hidden_pre,
        hidden,
        out_pre,
        prediction,
    })
}

/// Full locator forward pass for a meeting of `length` turns.
pub fn locator_forward(
    params: &LocatorParams,
    transcript: &Matrix,
    query: &Matrix,
    length: usize,
) -> Result<SpanPrediction, LocatorError> {
    forward_trace(params, transcript, query, length).map(|t| t.prediction)
}

/// Half squared error between normalized predicted and gold indices.
pub fn span_loss(pred: SpanPrediction, gold: GoldSpan, length_norm: f64) -> f64 {
    let ds = (pred.start_raw - gold.start as f64) / length_norm;
    let de = (pred.end_raw - gold.end as f64) / length_norm;
    0.5 * (ds * ds + de * de)
}

/// Loss against the closest gold span, and that span's index (lowest on ties).
/// Panics if `golds` is empty.
pub fn query_loss(pred: SpanPrediction, golds: &[GoldSpan], length_norm: f64) -> (f64, usize) {
    assert!(!golds.is_empty(), "query_loss needs at least one gold span");
    let mut best = (f64::INFINITY, 0);
    for (i, g) in golds.iter().enumerate() {
        let l = span_loss(pred, *g, length_norm);
        if l < best.0 {
            best = (l, i);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn random_conv(rng: &mut ChaCha8Rng, c: usize, k: usize, d: usize) -> ConvLayer {
        let mut conv = ConvLayer::zeros(c, k, d);
        conv.kernel
            .iter_mut()
            .for_each(|x| *x = rng.gen_range(-1.0..1.0));
        conv.bias
            .iter_mut()
            .for_each(|x| *x = rng.gen_range(-1.0..1.0));
        conv
    }

    /// Direct sliding-window convolution with explicit padding, written
    /// independently of the production loop.
    fn conv_oracle(m: &Matrix, conv: &ConvLayer) -> Vec<f64> {
        let n = m.rows() as i64;
        let pad = (conv.width as i64 - 1) / 2;
        let mut best = vec![f64::NEG_INFINITY; conv.channels];
        for ch in 0..conv.channels {
            for t in 0..n {
                let mut s = conv.bias[ch];
                for j in 0..conv.width as i64 {
                    let src = t - pad + j;
                    for f in 0..conv.in_dim {
                        let x = if src >= 0 && src < n {
                            m.get(src as usize, f)
                        } else {
                            0.0
                        };
                        s += conv.kernel
                            [ch * conv.width * conv.in_dim + j as usize * conv.in_dim + f]
                            * x;
                    }
                }
                best[ch] = best[ch].max(s);
            }
        }
        best
    }

    #[test]
    fn identity_kernel_is_columnwise_max() {
        let mut conv = ConvLayer::zeros(2, 1, 2);
        *conv.weight_mut(0, 0, 0) = 1.0;
        *conv.weight_mut(1, 0, 1) = 1.0;
        let m = Matrix::from_rows(&[[1.0, 5.0], [3.0, 2.0]]).unwrap();
        assert_eq!(conv_maxpool(&m, &conv).unwrap(), vec![3.0, 5.0]);
    }

    #[test]
    fn zero_kernel_yields_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = ConvLayer::zeros(3, 3, 4);
        conv.bias = vec![0.5, -1.25, 2.0];
        let m = random_matrix(&mut rng, 7, 4);
        assert_eq!(conv_maxpool(&m, &conv).unwrap(), vec![0.5, -1.25, 2.0]);
    }

    #[test]
    fn conv_matches_sliding_window_oracle() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng, 6, 4);
            let conv = random_conv(&mut rng, 5, 3, 4);
            let got = conv_maxpool(&m, &conv).unwrap();
            let want = conv_oracle(&m, &conv);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "seed {seed}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn conv_handles_single_row_and_rejects_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = random_conv(&mut rng, 2, 5, 3);
        let m = random_matrix(&mut rng, 1, 3);
        let got = conv_maxpool(&m, &conv).unwrap();
        assert_eq!(got.len(), 2);
        assert!((got[0] - conv_oracle(&m, &conv)[0]).abs() < 1e-12);
        assert!(matches!(
            conv_maxpool(&Matrix::zeros(0, 3), &conv),
            Err(LocatorError::EmptyInput)
        ));
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        let conv = ConvLayer {
            channels: 1,
            width: 1,
            in_dim: 1,
            kernel: vec![1.0],
            bias: vec![0.0],
        };
        let m = Matrix::from_rows(&[[1.0], [4.0], [4.0], [2.0]]).unwrap();
        let (_, arg) = conv_maxpool_with_argmax(&m, &conv).unwrap();
        assert_eq!(arg, vec![1]);
    }

    #[test]
    fn projection_examples() {
        let v = vec![1.5, -2.0, 0.25];
        let eye = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(project(&v, &eye, &[0.0; 3]).unwrap(), v);
        assert_eq!(
            project(&v, &Matrix::zeros(2, 3), &[4.0, -1.0]).unwrap(),
            vec![4.0, -1.0]
        );
        assert!(matches!(
            project(&v, &Matrix::zeros(2, 2), &[0.0; 2]),
            Err(LocatorError::Shape(_))
        ));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_matrix(&mut rng, 4, 3);
        let b: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = project(&v, &w, &b).unwrap();
        for i in 0..4 {
            let mut s = b[i];
            for j in 0..3 {
                s += w.get(i, j) * v[j];
            }
            assert!((got[i] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[0.3, 4.0], &[0.3, 4.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(
            (cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-12
        );
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]),
            Err(LocatorError::DegenerateVector)
        ));
    }

    #[test]
    fn feature_assembly() {
        assert_eq!(
            assemble_features(&[1.0, 2.0], &[3.0, 4.0], 0.5, 100, 200.0),
            vec![1.0, 2.0, 3.0, 4.0, 0.5, 0.5]
        );
        assert_eq!(
            assemble_features(&[0.0; 3], &[0.0; 3], 0.0, 40, 40.0),
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]
        );
        for e in 1..=64 {
            assert_eq!(
                assemble_features(&vec![0.1; e], &vec![0.2; e], 0.0, 1, 1.0).len(),
                2 * e + 2
            );
        }
    }

    #[test]
    fn mlp_constant_and_abs_head() {
        let (w2, b2, w3) = (Matrix::zeros(4, 6), vec![0.0; 4], Matrix::zeros(2, 4));
        let f = vec![1.0; 6];
        let p = mlp_forward(&f, &w2, &b2, &w3, &[3.2, 7.9], 0.01).unwrap();
        assert_eq!((p.start_raw, p.end_raw), (3.2, 7.9));
        let p = mlp_forward(&f, &w2, &b2, &w3, &[-3.2, 7.9], 0.01).unwrap();
        assert_eq!((p.start_raw, p.end_raw), (3.2, 7.9));
        assert!(mlp_forward(&f, &w2, &b2, &Matrix::zeros(3, 4), &[0.0; 2], 0.01).is_err());
    }

    #[test]
    fn mlp_matches_composed_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (w2, w3) = (random_matrix(&mut rng, 5, 6), random_matrix(&mut rng, 2, 5));
        let b2: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b3 = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let f: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = mlp_forward(&f, &w2, &b2, &w3, &b3, 0.2).unwrap();
        let mut hidden = [0.0; 5];
        for i in 0..5 {
            let mut s = b2[i];
            for j in 0..6 {
                s += w2.get(i, j) * f[j];
            }
            hidden[i] = if s < 0.0 { 0.2 * s } else { s };
        }
        for (k, got) in [p.start_raw, p.end_raw].into_iter().enumerate() {
            let mut s = b3[k];
            for i in 0..5 {
                s += w3.get(k, i) * hidden[i];
            }
            assert!((got - s.abs()).abs() < 1e-12);
        }
    }

    fn small_config() -> LocatorConfig {
        LocatorConfig {
            out_channels: 4,
            projection_dim: 6,
            hidden_dim: 16,
            kernel_size: 3,
            ..LocatorConfig::default()
        }
    }

    #[test]
    fn zero_params_emit_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = LocatorParams::zeros(8, &small_config(), 50.0);
        p.b3 = vec![4.0, 9.5];
        let t = random_matrix(&mut rng, 12, 8);
        let q = random_matrix(&mut rng, 3, 8);
        let pred = locator_forward(&p, &t, &q, 12).unwrap();
        assert_eq!((pred.start_raw, pred.end_raw), (4.0, 9.5));
        // all-zero projections are degenerate: feature reads 0
        assert_eq!(forward_trace(&p, &t, &q, 12).unwrap().sim, None);
    }

    #[test]
    fn identical_inputs_have_unit_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = LocatorParams::random(8, &small_config(), 20.0, 0.5, &mut rng);
        let m = random_matrix(&mut rng, 5, 8);
        let trace = forward_trace(&p, &m, &m, 5).unwrap();
        assert!((trace.sim.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(trace.e_t, trace.e_q);
    }

    #[test]
    fn loss_examples() {
        let gold = GoldSpan::new(3, 9);
        assert_eq!(
            span_loss(
                SpanPrediction {
                    start_raw: 3.0,
                    end_raw: 9.0
                },
                gold,
                40.0
            ),
            0.0
        );
        let l = span_loss(
            SpanPrediction {
                start_raw: 0.0,
                end_raw: 0.0,
            },
            GoldSpan::new(0, 200),
            200.0,
        );
        assert_eq!(l, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let p = SpanPrediction {
                start_raw: rng.gen_range(0.0..50.0),
                end_raw: rng.gen_range(0.0..50.0),
            };
            let g = GoldSpan::new(rng.gen_range(0..20), rng.gen_range(20..50));
            let lm = rng.gen_range(50.0..100.0);
            let want = 0.5
                * ((p.start_raw / lm - g.start as f64 / lm).powi(2)
                    + (p.end_raw / lm - g.end as f64 / lm).powi(2));
            assert!((span_loss(p, g, lm) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn multi_span_loss_takes_minimum() {
        let pred = SpanPrediction {
            start_raw: 10.0,
            end_raw: 12.0,
        };
        let golds = [
            GoldSpan::new(0, 3),
            GoldSpan::new(10, 12),
            GoldSpan::new(10, 12),
        ];
        assert_eq!(query_loss(pred, &golds, 30.0), (0.0, 1));
    }

    #[test]
    fn config_validation() {
        assert!(LocatorConfig::default().validate().is_ok());
        assert!(LocatorConfig {
            kernel_size: 4,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(LocatorConfig {
            leaky_slope: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(LocatorConfig {
            batch_size: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    proptest! {
        #[test]
        fn output_is_non_negative(seed in 0u64..1000, n in 1usize..10, m in 1usize..6, len in 1usize..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = LocatorParams::random(8, &small_config(), 100.0, 2.0, &mut rng);
            let pred = locator_forward(&p, &random_matrix(&mut rng, n, 8), &random_matrix(&mut rng, m, 8), len).unwrap();
            prop_assert!(pred.start_raw >= 0.0 && pred.end_raw >= 0.0);
        }

        #[test]
        fn swapping_inputs_swaps_projections(seed in 0u64..500, n in 1usize..8, m in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = LocatorParams::random(8, &small_config(), 10.0, 0.5, &mut rng);
            let (a, b) = (random_matrix(&mut rng, n, 8), random_matrix(&mut rng, m, 8));
            let ab = forward_trace(&p, &a, &b, 5).unwrap();
            let ba = forward_trace(&p, &b, &a, 5).unwrap();
            prop_assert_eq!(&ab.e_t, &ba.e_q);
            prop_assert_eq!(&ab.e_q, &ba.e_t);
            prop_assert!((ab.sim_feature() - ba.sim_feature()).abs() < 1e-15);
        }

        #[test]
        fn cosine_scale_invariant(a in proptest::collection::vec(-5.0f64..5.0, 4), b in proptest::collection::vec(-5.0f64..5.0, 4), alpha in 0.01f64..100.0) {
            prop_assume!(norm(&a) > 1e-3 && norm(&b) > 1e-3);
            let scaled: Vec<f64> = a.iter().map(|x| alpha * x).collect();
            let s1 = cosine_similarity(&a, &b).unwrap();
            prop_assert!((cosine_similarity(&scaled, &b).unwrap() - s1).abs() < 1e-12);
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s1));
        }

        #[test]
        fn width_one_conv_is_row_order_invariant(seed in 0u64..500, n in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let conv = random_conv(&mut rng, 3, 1, 4);
            let m = random_matrix(&mut rng, n, 4);
            let mut rows: Vec<Vec<f64>> = m.iter_rows().map(<[f64]>::to_vec).collect();
            rows.reverse();
            rows.rotate_left(seed as usize % n);
            let permuted = Matrix::from_rows(&rows).unwrap();
            prop_assert_eq!(conv_maxpool(&m, &conv).unwrap(), conv_maxpool(&permuted, &conv).unwrap());
        }

        #[test]
        fn loss_non_negative_zero_iff_exact(s in 0.0f64..100.0, e in 0.0f64..100.0, gs in 0usize..100, ge in 0usize..100) {
            let pred = SpanPrediction { start_raw: s, end_raw: e };
            let l = span_loss(pred, GoldSpan::new(gs, ge), 100.0);
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l == 0.0, s == gs as f64 && e == ge as f64);
        }
    }

    #[test]
    fn wider_kernel_is_order_sensitive() {
        // Distinguishes k = 3 from the permutation-invariant k = 1 case.
        let mut conv = ConvLayer::zeros(1, 3, 1);
        *conv.weight_mut(0, 0, 0) = 1.0;
        let a = Matrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
        let b = Matrix::from_rows(&[[3.0], [2.0], [1.0]]).unwrap();
        assert_ne!(
            conv_maxpool(&a, &conv).unwrap(),
            conv_maxpool(&b, &conv).unwrap()
        );
    }
}
