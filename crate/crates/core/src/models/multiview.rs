use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::linalg::{Matrix, Vector};
use crate::loss::softmax_cross_entropy;
use crate::models::fusion::{FusionHead, HeadKind};
use crate::models::gru::GruCell;
use crate::models::{Model, Parameterized};
use crate::rng::SimRng;
use crate::scalar::Scalar;

/// One sample for the multi-view model: a non-empty sequence per view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSequences<T> {
    pub views: Vec<Vec<Vector<T>>>,
}

impl<T> ViewSequences<T> {
    pub fn new(views: Vec<Vec<Vector<T>>>) -> Self {
        Self { views }
    }
}

/// Shape of a multi-view GRU model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiViewSpec {
    /// Feature width of each view; `m = input_dims.len()`.
    pub input_dims: Vec<usize>,
    /// Shared GRU hidden size `d_h`.
    pub hidden: usize,
    pub classes: usize,
    pub head: HeadKind,
}

impl MultiViewSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dims.is_empty() || self.input_dims.contains(&0) {
            return Err(invalid(format!("bad view dims {:?}", self.input_dims)));
        }
        if self.hidden == 0 || self.classes == 0 {
            return Err(invalid("hidden size and class count must be positive"));
        }
        let width = match self.head {
            HeadKind::Fc { hidden_units } => hidden_units,
            HeadKind::Fm { factors } | HeadKind::Mvm { factors } => factors,
        };
        if width == 0 {
            return Err(invalid("fusion head width must be positive"));
        }
        Ok(())
    }
}

/// Per-view GRU encoders followed by a late-fusion head.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewGruModel<T> {
    cells: Vec<GruCell<T>>,
    head: FusionHead<T>,
    classes: usize,
}

impl<T: Scalar> MultiViewGruModel<T> {
    pub fn new(spec: &MultiViewSpec, rng: &mut SimRng) -> Result<Self> {
        spec.validate()?;
        let cells = spec
            .input_dims
            .iter()
            .map(|&d| GruCell::new(d, spec.hidden, rng))
            .collect();
        let head = FusionHead::new(
            spec.head,
            spec.input_dims.len(),
            spec.hidden,
            spec.classes,
            rng,
        );
        Ok(Self {
            cells,
            head,
            classes: spec.classes,
        })
    }

    pub fn zeros(spec: &MultiViewSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            cells: spec
                .input_dims
                .iter()
                .map(|&d| GruCell::zeros(d, spec.hidden))
                .collect(),
            head: FusionHead::zeros(spec.head, spec.input_dims.len(), spec.hidden, spec.classes),
            classes: spec.classes,
        })
    }

    pub fn from_parts(cells: Vec<GruCell<T>>, head: FusionHead<T>, classes: usize) -> Result<Self> {
        let hidden = cells
            .first()
            .map(GruCell::hidden_dim)
            .ok_or_else(|| invalid("no views"))?;
        if cells.iter().any(|c| c.hidden_dim() != hidden) {
            return Err(invalid("all GRU cells must share the hidden size"));
        }
        let model = Self {
            cells,
            head,
            classes,
        };
        // Probe the head with zero encodings to catch dim mismatches early.
        let probe: Vec<Vector<T>> = (0..model.cells.len())
            .map(|_| Vector::zeros(hidden))
            .collect();
        let logits = model.head.forward(&probe)?;
        if logits.len() != classes {
            return Err(shape(
                "MultiViewGruModel",
                format!("head emits {} logits, expected {classes}", logits.len()),
            ));
        }
        Ok(model)
    }

    pub fn spec(&self) -> MultiViewSpec {
        MultiViewSpec {
            input_dims: self.cells.iter().map(GruCell::input_dim).collect(),
            hidden: self.hidden(),
            classes: self.classes,
            head: self.head.kind(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.cells[0].hidden_dim()
    }

    pub fn views(&self) -> usize {
        self.cells.len()
    }

    pub fn cells(&self) -> &[GruCell<T>] {
        &self.cells
    }

    pub fn head(&self) -> &FusionHead<T> {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut FusionHead<T> {
        &mut self.head
    }

    /// Final hidden state of every view.
    pub fn encode(&self, input: &ViewSequences<T>) -> Result<Vec<Vector<T>>> {
        self.check_input(input)?;
        self.cells
            .iter()
            .zip(&input.views)
            .map(|(cell, seq)| cell.encode(seq).map(|(h, _)| h))
            .collect()
    }

    fn check_input(&self, input: &ViewSequences<T>) -> Result<()> {
        if input.views.len() != self.cells.len() {
            return Err(shape(
                "MultiViewGruModel::forward",
                format!(
                    "model has {} views, sample has {}",
                    self.cells.len(),
                    input.views.len()
                ),
            ));
        }
        Ok(())
    }
}

impl<T: Scalar> Parameterized<T> for MultiViewGruModel<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix<T>)) {
        for (p, cell) in self.cells.iter().enumerate() {
            for (name, m) in cell.tensors() {
                f(&format!("view{p}.{name}"), m);
            }
        }
        self.head.for_each(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix<T>)) {
        for (p, cell) in self.cells.iter_mut().enumerate() {
            for (name, m) in cell.tensors_mut() {
                f(&format!("view{p}.{name}"), m);
            }
        }
        self.head.for_each_mut(f);
    }
}

impl<T: Scalar> Model<T> for MultiViewGruModel<T> {
    type Input = ViewSequences<T>;

    fn num_classes(&self) -> usize {
        self.classes
    }

    fn forward(&self, input: &ViewSequences<T>) -> Result<Vector<T>> {
        let encoded = self.encode(input)?;
        self.head.forward(&encoded)
    }

    fn accumulate_gradient(
        &self,
        input: &ViewSequences<T>,
        label: usize,
        scale: T,
        grad: &mut Self,
    ) -> Result<T> {
        self.check_input(input)?;
        let mut encoded = Vec::with_capacity(self.cells.len());
        let mut caches = Vec::with_capacity(self.cells.len());
        for (cell, seq) in self.cells.iter().zip(&input.views) {
            let (h, c) = cell.encode(seq)?;
            encoded.push(h);
            caches.push(c);
        }
        let (logits, head_cache) = self.head.forward_cached(&encoded)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, label)?;
        let dh = self
            .head
            .backward(&head_cache, &dlogits, scale, &mut grad.head, self.hidden())?;
        for ((cell, cache), (g, d)) in self
            .cells
            .iter()
            .zip(&caches)
            .zip(grad.cells.iter_mut().zip(&dh))
        {
            cell.encode_backward(cache, d, scale, g)?;
        }
        Ok(loss)
    }
}
