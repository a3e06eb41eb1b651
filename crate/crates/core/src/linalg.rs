//! Dense row-major matrices and vectors with the handful of kernels the
//! models need: products (plain and transposed), rank-one accumulation,
//! elementwise activations, and norms.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::scalar::Scalar;

/// Dense vector of scalars.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector<T>(Vec<T>);

impl<T: Scalar> Vector<T> {
    /// Builds a vector, rejecting non-finite entries.
    pub fn new(data: Vec<T>) -> Result<Self> {
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(invalid(format!("vector entry {i} is not finite")));
        }
        Ok(Self(data))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![T::zero(); len])
    }

    pub fn filled(len: usize, value: T) -> Self {
        Self(vec![value; len])
    }

    pub fn from_f64(data: &[f64]) -> Self {
        Self(data.iter().map(|&x| T::of(x)).collect())
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn dot(&self, other: &[T]) -> Result<T> {
        if self.len() != other.len() {
            return Err(shape(
                "dot",
                format!("lengths {} and {}", self.len(), other.len()),
            ));
        }
        Ok(dot(&self.0, other))
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &[T]) -> Result<()> {
        if self.len() != other.len() {
            return Err(shape(
                "axpy",
                format!("lengths {} and {}", self.len(), other.len()),
            ));
        }
        for (a, &b) in self.0.iter_mut().zip(other) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Appends the constant bias channel, giving `[v; 1]`.
    pub fn with_bias(&self) -> Self {
        let mut out = Vec::with_capacity(self.len() + 1);
        out.extend_from_slice(&self.0);
        out.push(T::one());
        Self(out)
    }

    pub fn concat<'a, I>(parts: I) -> Self
    where
        I: IntoIterator<Item = &'a Vector<T>>,
    {
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(&p.0);
        }
        Self(out)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl<T> From<Vec<T>> for Vector<T> {
    fn from(data: Vec<T>) -> Self {
        Self(data)
    }
}

impl<T> Deref for Vector<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T> DerefMut for Vector<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.0
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    /// Builds a matrix from row-major data.
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid(format!(
                "matrix dims must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(shape(
                "Matrix::new",
                format!(
                    "{rows}x{cols} needs {} entries, got {}",
                    rows * cols,
                    data.len()
                ),
            ));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(invalid(format!("matrix entry {i} is not finite")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dims must be positive");
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(shape("Matrix::from_rows", "ragged rows"));
        }
        let data = rows
            .iter()
            .flat_map(|row| row.iter().map(|&x| T::of(x)))
            .collect();
        Self::new(r, c, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// `self * v`.
    pub fn matvec(&self, v: &[T]) -> Result<Vector<T>> {
        if v.len() != self.cols {
            return Err(shape(
                "matvec",
                format!(
                    "{}x{} matrix times length-{} vector",
                    self.rows,
                    self.cols,
                    v.len()
                ),
            ));
        }
        Ok(Vector(
            self.data
                .chunks_exact(self.cols)
                .map(|row| dot(row, v))
                .collect(),
        ))
    }

    /// `selfᵀ * v`.
    pub fn matvec_transposed(&self, v: &[T]) -> Result<Vector<T>> {
        if v.len() != self.rows {
            return Err(shape(
                "matvec_transposed",
                format!(
                    "({}x{})ᵀ times length-{} vector",
                    self.rows,
                    self.cols,
                    v.len()
                ),
            ));
        }
        let mut out = vec![T::zero(); self.cols];
        for (row, &s) in self.data.chunks_exact(self.cols).zip(v) {
            if s == T::zero() {
                continue;
            }
            for (o, &m) in out.iter_mut().zip(row) {
                *o += m * s;
            }
        }
        Ok(Vector(out))
    }

    /// Rank-one accumulate: `self += alpha * u vᵀ`.
    pub fn add_outer(&mut self, alpha: T, u: &[T], v: &[T]) -> Result<()> {
        if u.len() != self.rows || v.len() != self.cols {
            return Err(shape(
                "add_outer",
                format!(
                    "{}x{} += outer({}, {})",
                    self.rows,
                    self.cols,
                    u.len(),
                    v.len()
                ),
            ));
        }
        for (row, &a) in self.data.chunks_exact_mut(self.cols).zip(u) {
            let s = alpha * a;
            if s == T::zero() {
                continue;
            }
            for (m, &b) in row.iter_mut().zip(v) {
                *m += s * b;
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Free-function form of [`Matrix::matvec`].
pub fn matvec<T: Scalar>(m: &Matrix<T>, v: &Vector<T>) -> Result<Vector<T>> {
    m.matvec(v)
}

/// Pointwise operations used by the recurrent cell and fusion heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Sigmoid,
    Tanh,
    Relu,
    Mul,
    Add,
    Sub,
}

impl Elementwise {
    pub fn is_binary(self) -> bool {
        matches!(self, Self::Mul | Self::Add | Self::Sub)
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    // Split on sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// Applies a unary (`b = None`) or binary pointwise op.
pub fn elementwise<T: Scalar>(op: Elementwise, a: &[T], b: Option<&[T]>) -> Result<Vector<T>> {
    match (op.is_binary(), b) {
        (false, None) => {
            let f: fn(T) -> T = match op {
                Elementwise::Sigmoid => sigmoid,
                Elementwise::Tanh => T::tanh,
                Elementwise::Relu => relu,
                _ => unreachable!(),
            };
            Ok(Vector(a.iter().map(|&x| f(x)).collect()))
        }
        (true, Some(b)) => {
            if a.len() != b.len() {
                return Err(shape(
                    "elementwise",
                    format!("{op:?} on lengths {} and {}", a.len(), b.len()),
                ));
            }
            let f: fn(T, T) -> T = match op {
                Elementwise::Mul => |x, y| x * y,
                Elementwise::Add => |x, y| x + y,
                Elementwise::Sub => |x, y| x - y,
                _ => unreachable!(),
            };
            Ok(Vector(a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()))
        }
        (false, Some(_)) => Err(invalid(format!("{op:?} is unary"))),
        (true, None) => Err(invalid(format!("{op:?} needs a second operand"))),
    }
}

/// Euclidean norm, computed with scaling so large entries do not overflow.
pub fn l2_norm<T: Scalar>(v: &[T]) -> T {
    let scale = v.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    if scale == T::zero() {
        return T::zero();
    }
    let ss = v.iter().fold(T::zero(), |acc, &x| {
        let y = x / scale;
        acc + y * y
    });
    scale * ss.sqrt()
}
