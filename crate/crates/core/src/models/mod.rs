//! Trainable models with hand-derived gradients.
//!
//! Every model exposes its tensors through [`Parameterized`], which gives a
//! deterministic flat [`ParamVector`] view used by the protocols, and
//! implements [`Model`] by accumulating its exact gradient into a
//! zero-initialised copy of itself.

pub mod checkpoint;
pub mod fusion;
pub mod gru;
pub mod mlp;
pub mod multiview;
pub mod params;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::loss::{argmax, softmax_cross_entropy};
use crate::rng::SimRng;
use crate::scalar::Scalar;

pub use fusion::{FcHead, FmHead, FusionHead, HeadKind, MvmHead};
pub use gru::{GruCache, GruCell};
pub use mlp::MlpModel;
pub use multiview::{MultiViewGruModel, MultiViewSpec, ViewSequences};
pub use params::{sgd_apply, Layout, ParamVector, Parameterized, Segment};

/// A labelled training or evaluation sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example<X> {
    pub input: X,
    pub label: usize,
}

impl<X> Example<X> {
    pub fn new(input: X, label: usize) -> Self {
        Self { input, label }
    }
}

pub trait Model<T: Scalar>: Parameterized<T> + Clone + Send + Sync {
    type Input: Send + Sync;

    fn num_classes(&self) -> usize;

    /// Class logits for one sample.
    fn forward(&self, input: &Self::Input) -> Result<Vector<T>>;

    /// Adds `scale * ∂loss/∂θ` for one sample into `grad` (a copy of `self`
    /// holding gradient values) and returns the sample loss.
    fn accumulate_gradient(
        &self,
        input: &Self::Input,
        label: usize,
        scale: T,
        grad: &mut Self,
    ) -> Result<T>;

    fn zeroed(&self) -> Self {
        let mut z = self.clone();
        z.set_zero();
        z
    }

    fn loss(&self, input: &Self::Input, label: usize) -> Result<T> {
        Ok(softmax_cross_entropy(&self.forward(input)?, label)?.0)
    }

    fn predict(&self, input: &Self::Input) -> Result<usize> {
        Ok(argmax(&self.forward(input)?))
    }
}

/// Samples per work unit when a batch gradient is split across threads.
const GRADIENT_CHUNK: usize = 16;

/// Mean cross-entropy over `batch` and its exact gradient.
pub fn loss_and_gradient<T, M>(
    model: &M,
    batch: &[&Example<M::Input>],
) -> Result<(T, ParamVector<T>)>
where
    T: Scalar,
    M: Model<T>,
{
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let scale = T::one() / T::of(batch.len() as f64);
    let partials: Vec<(T, M)> = batch
        .par_chunks(GRADIENT_CHUNK)
        .map(|chunk| {
            let mut grad = model.zeroed();
            let mut loss = T::zero();
            for ex in chunk {
                loss += model.accumulate_gradient(&ex.input, ex.label, scale, &mut grad)?;
            }
            Ok((loss, grad))
        })
        .collect::<Result<_>>()?;

    let mut parts = partials.into_iter();
    let (mut loss, first) = parts.next().expect("non-empty batch");
    let mut total = first.flatten();
    for (l, g) in parts {
        loss += l;
        let flat = g.flatten_with(total.layout().clone());
        total.axpy(T::one(), &flat)?;
    }
    Ok((loss * scale, total))
}

/// Mean loss and accuracy of `model` on `data`, evaluated in parallel.
pub fn evaluate<T, M>(model: &M, data: &[Example<M::Input>]) -> Result<Evaluation>
where
    T: Scalar,
    M: Model<T>,
{
    if data.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let per_sample: Vec<(f64, usize)> = data
        .par_iter()
        .map(|ex| {
            let logits = model.forward(&ex.input)?;
            let (loss, _) = softmax_cross_entropy(&logits, ex.label)?;
            Ok((loss.as_f64(), argmax(&logits)))
        })
        .collect::<Result<_>>()?;
    let n = data.len() as f64;
    let loss = per_sample.iter().map(|p| p.0).sum::<f64>() / n;
    let predictions: Vec<usize> = per_sample.iter().map(|p| p.1).collect();
    let correct = predictions
        .iter()
        .zip(data)
        .filter(|(p, ex)| **p == ex.label)
        .count();
    Ok(Evaluation {
        loss,
        accuracy: correct as f64 / n,
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

/// Uniform(-r, r) with r = sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform<T: Scalar>(rows: usize, cols: usize, rng: &mut SimRng) -> Matrix<T> {
    let r = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| T::of(rng.uniform_range(-r, r)))
}
