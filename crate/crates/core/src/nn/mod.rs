//! From-scratch neural classifiers: CNN and BiLSTM backbones, early and late
//! fusion, softmax classifier, hand-written gradients and Adam.
//!
//! Everything is generic over [`Scalar`]; training runs in `f32` and gradient
//! checks in `f64`.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod train;

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};
use std::str::FromStr;

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

use crate::dataset::InputFormat;
use crate::extract::AspectKind;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use model::{Model, Sample};
pub use train::{
    embed_sequence, embed_tokens, encode_dataset, encode_instance, evaluate_model, predict_missing, train, Adam,
    Prediction, TrainOptions, TrainReport,
};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("non-finite {what} at iteration {iteration}")]
    Diverged { what: String, iteration: usize },
    #[error("{0}")]
    Input(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Floating-point storage type of a model.
pub trait Scalar:
    Float
    + FromPrimitive
    + Default
    + fmt::Debug
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    /// C ← alpha·A·B + beta·C with element strides.
    ///
    /// # Safety
    /// All strided accesses must stay inside the pointed-to buffers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

fn span_ok(len: usize, rows: usize, cols: usize, rs: usize, cs: usize) -> bool {
    rows == 0 || cols == 0 || (rows - 1) * rs + (cols - 1) * cs < len
}

/// C (m×n) ← alpha·A (m×k)·B (k×n) + beta·C, all with explicit element strides.
#[allow(clippy::too_many_arguments)]
pub fn gemm<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: S,
    a: &[S],
    (rsa, csa): (usize, usize),
    b: &[S],
    (rsb, csb): (usize, usize),
    beta: S,
    c: &mut [S],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(span_ok(c.len(), m, n, rsc, csc), "gemm: C out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let x = &mut c[i * rsc + j * csc];
                *x = if beta == S::zero() { S::zero() } else { *x * beta };
            }
        }
        return;
    }
    assert!(span_ok(a.len(), m, k, rsa, csa), "gemm: A out of bounds");
    assert!(span_ok(b.len(), k, n, rsb, csb), "gemm: B out of bounds");
    // SAFETY: bounds of every strided access were checked above.
    unsafe {
        S::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn cast<T: Scalar>(&self) -> Mat<T> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|x| T::from_f64(x.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }
}

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(name: &str, shape: &[usize]) -> Self {
        Self {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: vec![S::zero(); shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    Cnn1,
    Cnn2,
    Bilstm1,
    Bilstm2,
    Bilstm1Attn,
    Bilstm2Attn,
}

impl Backbone {
    pub const ALL: [Backbone; 6] = [
        Backbone::Cnn1,
        Backbone::Cnn2,
        Backbone::Bilstm1,
        Backbone::Bilstm2,
        Backbone::Bilstm1Attn,
        Backbone::Bilstm2Attn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Backbone::Cnn1 => "cnn1",
            Backbone::Cnn2 => "cnn2",
            Backbone::Bilstm1 => "bilstm1",
            Backbone::Bilstm2 => "bilstm2",
            Backbone::Bilstm1Attn => "bilstm1_attn",
            Backbone::Bilstm2Attn => "bilstm2_attn",
        }
    }

    pub fn is_cnn(self) -> bool {
        matches!(self, Backbone::Cnn1 | Backbone::Cnn2)
    }

    pub fn lstm_layers(self) -> usize {
        match self {
            Backbone::Bilstm1 | Backbone::Bilstm1Attn => 1,
            Backbone::Bilstm2 | Backbone::Bilstm2Attn => 2,
            _ => 0,
        }
    }

    pub fn has_attention(self) -> bool {
        matches!(self, Backbone::Bilstm1Attn | Backbone::Bilstm2Attn)
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Backbone {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Backbone::ALL
            .into_iter()
            .find(|b| b.name() == key)
            .ok_or_else(|| NnError::Argument(format!("unknown backbone {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    Early,
    Late,
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fusion::Early => "early",
            Fusion::Late => "late",
        })
    }
}

impl FromStr for Fusion {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "early" => Ok(Fusion::Early),
            "late" => Ok(Fusion::Late),
            _ => Err(NnError::Argument(format!("unknown fusion {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    /// Skip-gram vectors trained on the description corpus.
    Cve,
    /// Vectors loaded from an interchange file (or random when none is given).
    External,
}

impl fmt::Display for EmbeddingSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingSource::Cve => "cve",
            EmbeddingSource::External => "external",
        })
    }
}

impl FromStr for EmbeddingSource {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cve" | "domain" => Ok(EmbeddingSource::Cve),
            "external" | "general" => Ok(EmbeddingSource::External),
            _ => Err(NnError::Argument(format!("unknown embedding source {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub fusion: Fusion,
    pub input_format: InputFormat,
    pub embedding_source: EmbeddingSource,
    pub target_kind: AspectKind,
    pub num_classes: usize,
    pub embed_dim: usize,
    pub window_sizes: Vec<usize>,
    pub filters: usize,
    pub lstm_cells: usize,
    /// Token cap per input sequence (per aspect under late fusion).
    pub max_len: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Defaults for a target: cnn1, early fusion, i-ao, domain embeddings.
    pub fn new(target_kind: AspectKind, num_classes: usize, embed_dim: usize) -> Self {
        Self {
            backbone: Backbone::Cnn1,
            fusion: Fusion::Early,
            input_format: InputFormat::Ao,
            embedding_source: EmbeddingSource::Cve,
            target_kind,
            num_classes,
            embed_dim,
            window_sizes: vec![1, 3, 5],
            filters: 128,
            lstm_cells: 192,
            max_len: 160,
            seed: 1,
        }
    }

    pub fn with_format(mut self, format: InputFormat) -> Self {
        self.input_format = format;
        self.max_len = if format == InputFormat::Fu { 256 } else { 160 };
        self
    }

    /// Width of the vector entering the classifier.
    pub fn feature_dim(&self) -> usize {
        if self.backbone.is_cnn() {
            self.window_sizes.len() * self.filters
        } else {
            2 * self.lstm_cells
        }
    }

    /// Number of per-aspect backbones: 1 (early) or 5 (late).
    pub fn slots(&self) -> usize {
        match self.fusion {
            Fusion::Early => 1,
            Fusion::Late => AspectKind::ALL.len() - 1,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let err = |m: &str| Err(NnError::Config(m.to_string()));
        if self.fusion == Fusion::Late && self.input_format == InputFormat::Fu {
            return err("late fusion needs per-aspect inputs; i-fu supports only early fusion");
        }
        if self.num_classes < 2 {
            return err("need at least 2 classes");
        }
        if self.embed_dim == 0 || self.max_len == 0 {
            return err("embed_dim and max_len must be positive");
        }
        if self.backbone.is_cnn() {
            if self.window_sizes.is_empty() || self.filters == 0 {
                return err("CNN needs window sizes and filters");
            }
            if let Some(h) = self.window_sizes.iter().find(|&&h| h % 2 == 0) {
                return Err(NnError::Config(format!("window size {h} is even")));
            }
        } else if self.lstm_cells == 0 {
            return err("BiLSTM needs cells");
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        crate::fingerprint(serde_json::to_string(self).expect("serializable").as_bytes())
    }
}
