//! Bias-free gated recurrent unit and backpropagation through time.
//!
//! ```text
//! r = σ(W_r x + U_r h)
//! z = σ(W_z x + U_z h)
//! c = tanh(W x + U (r ⊙ h))
//! h' = z ⊙ h + (1 - z) ⊙ c
//! ```

use crate::error::{shape, Error, Result};
use crate::linalg::{sigmoid, Matrix, Vector};
use crate::models::glorot_uniform;
use crate::rng::SimRng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct GruCell<T> {
    pub w_r: Matrix<T>,
    pub u_r: Matrix<T>,
    pub w_z: Matrix<T>,
    pub u_z: Matrix<T>,
    pub w: Matrix<T>,
    pub u: Matrix<T>,
}

/// Intermediates of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GruCache<T> {
    x: Vector<T>,
    h_prev: Vector<T>,
    r: Vector<T>,
    z: Vector<T>,
    candidate: Vector<T>,
    reset_hidden: Vector<T>,
}

impl<T: Scalar> GruCell<T> {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            w_r: Matrix::zeros(hidden, input_dim),
            u_r: Matrix::zeros(hidden, hidden),
            w_z: Matrix::zeros(hidden, input_dim),
            u_z: Matrix::zeros(hidden, hidden),
            w: Matrix::zeros(hidden, input_dim),
            u: Matrix::zeros(hidden, hidden),
        }
    }

    pub fn new(input_dim: usize, hidden: usize, rng: &mut SimRng) -> Self {
        Self {
            w_r: glorot_uniform(hidden, input_dim, rng),
            u_r: glorot_uniform(hidden, hidden, rng),
            w_z: glorot_uniform(hidden, input_dim, rng),
            u_z: glorot_uniform(hidden, hidden, rng),
            w: glorot_uniform(hidden, input_dim, rng),
            u: glorot_uniform(hidden, hidden, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w.rows()
    }

    pub(crate) fn tensors(&self) -> [(&'static str, &Matrix<T>); 6] {
        [
            ("W_r", &self.w_r),
            ("U_r", &self.u_r),
            ("W_z", &self.w_z),
            ("U_z", &self.u_z),
            ("W", &self.w),
            ("U", &self.u),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> [(&'static str, &mut Matrix<T>); 6] {
        [
            ("W_r", &mut self.w_r),
            ("U_r", &mut self.u_r),
            ("W_z", &mut self.w_z),
            ("U_z", &mut self.u_z),
            ("W", &mut self.w),
            ("U", &mut self.u),
        ]
    }

    pub fn step(&self, x: &[T], h_prev: &[T]) -> Result<(Vector<T>, GruCache<T>)> {
        if x.len() != self.input_dim() || h_prev.len() != self.hidden_dim() {
            return Err(shape(
                "gru_step",
                format!(
                    "cell expects x:{} h:{}, got x:{} h:{}",
                    self.input_dim(),
                    self.hidden_dim(),
                    x.len(),
                    h_prev.len()
                ),
            ));
        }
        let gate = |w: &Matrix<T>, u: &Matrix<T>, hh: &[T]| -> Result<Vector<T>> {
            let mut a = w.matvec(x)?;
            a.axpy(T::one(), &u.matvec(hh)?)?;
            Ok(a)
        };
        let r: Vector<T> = gate(&self.w_r, &self.u_r, h_prev)?
            .iter()
            .map(|&a| sigmoid(a))
            .collect::<Vec<_>>()
            .into();
        let z: Vector<T> = gate(&self.w_z, &self.u_z, h_prev)?
            .iter()
            .map(|&a| sigmoid(a))
            .collect::<Vec<_>>()
            .into();
        let reset_hidden: Vector<T> = r
            .iter()
            .zip(h_prev)
            .map(|(&a, &b)| a * b)
            .collect::<Vec<_>>()
            .into();
        let candidate: Vector<T> = gate(&self.w, &self.u, &reset_hidden)?
            .iter()
            .map(|&a| a.tanh())
            .collect::<Vec<_>>()
            .into();
        let h: Vector<T> = (0..self.hidden_dim())
            .map(|i| z[i] * h_prev[i] + (T::one() - z[i]) * candidate[i])
            .collect::<Vec<_>>()
            .into();
        let cache = GruCache {
            x: x.to_vec().into(),
            h_prev: h_prev.to_vec().into(),
            r,
            z,
            candidate,
            reset_hidden,
        };
        Ok((h, cache))
    }

    /// Backward through one step. Accumulates `scale`-weighted weight
    /// gradients into `grad` and returns ∂loss/∂h_prev.
    pub fn step_backward(
        &self,
        cache: &GruCache<T>,
        dh: &[T],
        scale: T,
        grad: &mut Self,
    ) -> Result<Vector<T>> {
        let n = self.hidden_dim();
        if dh.len() != n {
            return Err(shape(
                "gru_step_backward",
                format!("dh length {} != {n}", dh.len()),
            ));
        }
        let one = T::one();
        let mut da_z = Vec::with_capacity(n);
        let mut da_c = Vec::with_capacity(n);
        for i in 0..n {
            let z = cache.z[i];
            let c = cache.candidate[i];
            da_z.push(dh[i] * (cache.h_prev[i] - c) * z * (one - z));
            da_c.push(dh[i] * (one - z) * (one - c * c));
        }
        grad.w.add_outer(scale, &da_c, &cache.x)?;
        grad.u.add_outer(scale, &da_c, &cache.reset_hidden)?;
        let d_reset_hidden = self.u.matvec_transposed(&da_c)?;

        let da_r: Vec<T> = (0..n)
            .map(|i| {
                let r = cache.r[i];
                d_reset_hidden[i] * cache.h_prev[i] * r * (one - r)
            })
            .collect();
        grad.w_r.add_outer(scale, &da_r, &cache.x)?;
        grad.u_r.add_outer(scale, &da_r, &cache.h_prev)?;
        grad.w_z.add_outer(scale, &da_z, &cache.x)?;
        grad.u_z.add_outer(scale, &da_z, &cache.h_prev)?;

        let mut dh_prev: Vector<T> = (0..n)
            .map(|i| dh[i] * cache.z[i] + d_reset_hidden[i] * cache.r[i])
            .collect::<Vec<_>>()
            .into();
        dh_prev.axpy(one, &self.u_r.matvec_transposed(&da_r)?)?;
        dh_prev.axpy(one, &self.u_z.matvec_transposed(&da_z)?)?;
        Ok(dh_prev)
    }

    /// Runs the cell over `seq` from a zero state; returns the final hidden
    /// state and per-step caches.
    pub fn encode(&self, seq: &[Vector<T>]) -> Result<(Vector<T>, Vec<GruCache<T>>)> {
        if seq.is_empty() {
            return Err(Error::Empty("view sequence"));
        }
        let mut h = Vector::zeros(self.hidden_dim());
        let mut caches = Vec::with_capacity(seq.len());
        for x in seq {
            let (next, cache) = self.step(x, &h)?;
            caches.push(cache);
            h = next;
        }
        Ok((h, caches))
    }

    /// Backpropagation through time from ∂loss/∂h_final.
    pub fn encode_backward(
        &self,
        caches: &[GruCache<T>],
        dh_final: &[T],
        scale: T,
        grad: &mut Self,
    ) -> Result<()> {
        let mut dh: Vector<T> = dh_final.to_vec().into();
        for cache in caches.iter().rev() {
            dh = self.step_backward(cache, &dh, scale, grad)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones_scalar() -> GruCell<f64> {
        let one = || Matrix::from_rows(&[&[1.0]]).unwrap();
        GruCell {
            w_r: one(),
            u_r: one(),
            w_z: one(),
            u_z: one(),
            w: one(),
            u: one(),
        }
    }

    /// Independent scalar evaluation of the recurrence.
    fn scalar_step(x: f64, h: f64) -> f64 {
        let s = |a: f64| 1.0 / (1.0 + (-a).exp());
        let r = s(x + h);
        let z = s(x + h);
        let c = (x + r * h).tanh();
        z * h + (1.0 - z) * c
    }

    #[test]
    fn zero_weights() {
        let cell = GruCell::<f64>::zeros(3, 2);
        let (h, _) = cell.step(&[1.0, -2.0, 0.5], &[0.0, 0.0]).unwrap();
        assert_eq!(h.as_slice(), &[0.0, 0.0]);
        let (h, _) = cell.step(&[1.0, -2.0, 0.5], &[0.8, -0.4]).unwrap();
        assert_eq!(h.as_slice(), &[0.4, -0.2]);
    }

    #[test]
    fn scalar_unit_weights() {
        let (h, _) = ones_scalar().step(&[1.0], &[0.0]).unwrap();
        assert!((h[0] - 0.2048).abs() < 1e-4, "{}", h[0]);
        assert!((h[0] - scalar_step(1.0, 0.0)).abs() < 1e-15);
    }

    #[test]
    fn encode_examples() {
        let cell = ones_scalar();
        let (h1, c1) = cell.encode(&[vec![1.0].into()]).unwrap();
        assert_eq!(c1.len(), 1);
        assert_eq!(h1, cell.step(&[1.0], &[0.0]).unwrap().0);

        let (h2, _) = cell.encode(&[vec![1.0].into(), vec![-0.5].into()]).unwrap();
        let expect = scalar_step(-0.5, scalar_step(1.0, 0.0));
        assert!((h2[0] - expect).abs() < 1e-15);

        let zero = GruCell::<f64>::zeros(2, 3);
        let seq: Vec<Vector<f64>> = (0..5).map(|i| vec![i as f64, 1.0].into()).collect();
        assert_eq!(zero.encode(&seq).unwrap().0.as_slice(), &[0.0; 3]);
    }

    #[test]
    fn empty_sequence_is_an_error() {
        let cell = GruCell::<f64>::zeros(1, 1);
        assert!(matches!(cell.encode(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn dimension_mismatch() {
        let cell = GruCell::<f64>::zeros(2, 2);
        assert!(cell.step(&[1.0], &[0.0, 0.0]).is_err());
        assert!(cell.step(&[1.0, 1.0], &[0.0]).is_err());
    }
}
