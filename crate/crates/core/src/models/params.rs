use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{l2_norm, Matrix};
use crate::scalar::Scalar;

/// One named tensor inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered map from segments of a flat vector to named tensors.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Layout {
    segments: Vec<Segment>,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize) {
        let offset = self.len();
        self.segments.push(Segment {
            name: name.into(),
            rows,
            cols,
            offset,
        });
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Total number of scalars.
    pub fn len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.offset + s.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }
}

/// Flat, ordered trainable weights of a model together with their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T> {
    layout: Arc<Layout>,
    values: Vec<T>,
}

impl<T: Scalar> ParamVector<T> {
    pub fn new(layout: Arc<Layout>, values: Vec<T>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Layout(format!(
                "layout holds {} scalars, got {}",
                layout.len(),
                values.len()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        let n = layout.len();
        Self {
            layout,
            values: vec![T::zero(); n],
        }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment_values(&self, name: &str) -> Option<&[T]> {
        self.layout.segment(name).map(|s| &self.values[s.range()])
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    pub fn check_layout(&self, other: &Self) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Layout(format!(
                "{} segments / {} scalars vs {} segments / {} scalars",
                self.layout.segments().len(),
                self.len(),
                other.layout.segments().len(),
                other.len()
            )))
        }
    }

    pub fn norm(&self) -> T {
        l2_norm(&self.values)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.check_layout(other)?;
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: T) {
        self.values.iter_mut().for_each(|x| *x *= alpha);
    }

    /// `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_layout(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Self {
            layout: self.layout.clone(),
            values,
        })
    }
}

/// One plain SGD step: `params - lr * grad`.
pub fn sgd_apply<T: Scalar>(
    params: &ParamVector<T>,
    grad: &ParamVector<T>,
    lr: T,
) -> Result<ParamVector<T>> {
    let mut out = params.clone();
    out.axpy(-lr, grad)?;
    Ok(out)
}

/// Anything whose trainable tensors can be enumerated in a fixed order.
pub trait Parameterized<T: Scalar> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix<T>));

    fn layout(&self) -> Layout {
        let mut layout = Layout::new();
        self.visit(&mut |name, m| layout.push(name, m.rows(), m.cols()));
        layout
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, m| n += m.as_slice().len());
        n
    }

    /// Copies every tensor, in visiting order, into one flat vector.
    fn flatten_with(&self, layout: Arc<Layout>) -> ParamVector<T> {
        let mut values = Vec::with_capacity(layout.len());
        self.visit(&mut |_, m| values.extend_from_slice(m.as_slice()));
        ParamVector::new(layout, values).expect("layout built from the same model")
    }

    fn flatten(&self) -> ParamVector<T> {
        self.flatten_with(Arc::new(self.layout()))
    }

    /// Inverse of [`flatten`](Self::flatten).
    fn unflatten(&mut self, params: &ParamVector<T>) -> Result<()> {
        let mut segs = params.layout().segments().iter();
        let mut err = None;
        let values = params.values();
        self.visit_mut(&mut |name, m| {
            if err.is_some() {
                return;
            }
            match segs.next() {
                Some(s) if s.name == name && (s.rows, s.cols) == m.shape() => {
                    m.as_mut_slice().copy_from_slice(&values[s.range()]);
                }
                Some(s) => {
                    err = Some(Error::Layout(format!(
                        "expected {name} {:?}, found {} {}x{}",
                        m.shape(),
                        s.name,
                        s.rows,
                        s.cols
                    )))
                }
                None => err = Some(Error::Layout(format!("missing segment {name}"))),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if segs.next().is_some() {
            return Err(Error::Layout("parameter vector has extra segments".into()));
        }
        Ok(())
    }

    fn set_zero(&mut self) {
        self.visit_mut(&mut |_, m| m.fill(T::zero()));
    }
}
