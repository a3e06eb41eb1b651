use crate::error::{invalid, shape, Result};
use crate::linalg::{relu, Matrix, Vector};
use crate::loss::softmax_cross_entropy;
use crate::models::{glorot_uniform, Model, Parameterized};
use crate::rng::SimRng;
use crate::scalar::Scalar;

/// Fully connected network with ReLU hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    sizes: Vec<usize>,
    weights: Vec<Matrix<T>>,
    biases: Vec<Matrix<T>>,
}

impl<T: Scalar> MlpModel<T> {
    /// `sizes = [input, hidden.., classes]`, randomly initialised.
    pub fn new(sizes: &[usize], rng: &mut SimRng) -> Result<Self> {
        Self::validate(sizes)?;
        let weights = sizes
            .windows(2)
            .map(|w| glorot_uniform(w[1], w[0], rng))
            .collect();
        let biases = sizes[1..].iter().map(|&n| Matrix::zeros(n, 1)).collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        Self::validate(sizes)?;
        Ok(Self {
            sizes: sizes.to_vec(),
            weights: sizes
                .windows(2)
                .map(|w| Matrix::zeros(w[1], w[0]))
                .collect(),
            biases: sizes[1..].iter().map(|&n| Matrix::zeros(n, 1)).collect(),
        })
    }

    fn validate(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(invalid(format!(
                "MLP needs >= 2 positive layer sizes, got {sizes:?}"
            )));
        }
        Ok(())
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Matrix<T> {
        &mut self.weights[layer]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Matrix<T> {
        &mut self.biases[layer]
    }

    /// Pre-activations of every layer.
    fn forward_trace(&self, x: &[T]) -> Result<Vec<Vector<T>>> {
        if x.len() != self.sizes[0] {
            return Err(shape(
                "MlpModel::forward",
                format!(
                    "input length {} but model expects {}",
                    x.len(),
                    self.sizes[0]
                ),
            ));
        }
        let last = self.weights.len() - 1;
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut act: Vector<T> = x.to_vec().into();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w.matvec(&act)?;
            z.axpy(T::one(), b.as_slice())?;
            act = if i < last {
                z.iter().map(|&v| relu(v)).collect::<Vec<_>>().into()
            } else {
                z.clone()
            };
            pre.push(z);
        }
        Ok(pre)
    }
}

impl<T: Scalar> Parameterized<T> for MlpModel<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix<T>)) {
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            f(&format!("layer{i}.weight"), w);
            f(&format!("layer{i}.bias"), b);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix<T>)) {
        for (i, (w, b)) in self
            .weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .enumerate()
        {
            f(&format!("layer{i}.weight"), w);
            f(&format!("layer{i}.bias"), b);
        }
    }
}

impl<T: Scalar> Model<T> for MlpModel<T> {
    type Input = Vector<T>;

    fn num_classes(&self) -> usize {
        *self.sizes.last().expect("validated")
    }

    fn forward(&self, input: &Vector<T>) -> Result<Vector<T>> {
        Ok(self
            .forward_trace(input)?
            .pop()
            .expect("at least one layer"))
    }

    fn accumulate_gradient(
        &self,
        input: &Vector<T>,
        label: usize,
        scale: T,
        grad: &mut Self,
    ) -> Result<T> {
        let pre = self.forward_trace(input)?;
        let (loss, dlogits) = softmax_cross_entropy(pre.last().expect("layer"), label)?;
        let mut delta = dlogits;
        for i in (0..self.weights.len()).rev() {
            let act_in: Vector<T> = if i == 0 {
                input.clone()
            } else {
                pre[i - 1]
                    .iter()
                    .map(|&v| relu(v))
                    .collect::<Vec<_>>()
                    .into()
            };
            grad.weights[i].add_outer(scale, &delta, &act_in)?;
            grad.biases[i]
                .as_mut_slice()
                .iter_mut()
                .zip(delta.iter())
                .for_each(|(g, &d)| *g += scale * d);
            if i > 0 {
                let back = self.weights[i].matvec_transposed(&delta)?;
                delta = back
                    .iter()
                    .zip(pre[i - 1].iter())
                    .map(|(&d, &z)| if z > T::zero() { d } else { T::zero() })
                    .collect::<Vec<_>>()
                    .into();
            }
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_layer_is_affine() {
        let mut m = MlpModel::<f64>::zeros(&[2, 2]).unwrap();
        *m.weight_mut(0) = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let out = m.forward(&vec![1.0, 1.0].into()).unwrap();
        assert_eq!(out.as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn rejects_bad_sizes_and_inputs() {
        assert!(MlpModel::<f64>::zeros(&[3]).is_err());
        assert!(MlpModel::<f64>::zeros(&[3, 0, 2]).is_err());
        let m = MlpModel::<f64>::zeros(&[3, 2]).unwrap();
        assert!(m.forward(&vec![1.0].into()).is_err());
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = MlpModel::<f64>::zeros(&[4, 5, 3]).unwrap();
        let loss = m.loss(&vec![1.0, -1.0, 0.5, 2.0].into(), 1).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-15);
    }
}
