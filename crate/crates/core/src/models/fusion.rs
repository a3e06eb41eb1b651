//! Late-fusion heads mapping per-view encodings `h^(1..m)` to class logits.
//!
//! * FC:  `q = relu(W1 [h; 1])`, `y = W2 q`
//! * FM:  `y_a = sum(U_a h ⊙ U_a h) + w_a·[h; 1]`, squared self-interactions kept
//! * MVM: `y_a = sum(⊙_p U_a^(p) [h^(p); 1])`

use serde::{Deserialize, Serialize};

use crate::error::{shape, Result};
use crate::linalg::{relu, Matrix, Vector};
use crate::models::glorot_uniform;
use crate::rng::SimRng;
use crate::scalar::Scalar;

/// Which head to build, with its width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HeadKind {
    /// One ReLU hidden layer of `hidden_units`.
    Fc { hidden_units: usize },
    /// Factorization-machine head with `factors` factor units.
    Fm { factors: usize },
    /// Multi-view-machine head with `factors` factor units.
    Mvm { factors: usize },
}

impl HeadKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Fc { .. } => "fc",
            Self::Fm { .. } => "fm",
            Self::Mvm { .. } => "mvm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcHead<T> {
    /// `k' × (d+1)`
    pub w1: Matrix<T>,
    /// `c × k'`
    pub w2: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FmHead<T> {
    /// Per class, `k × d`.
    pub u: Vec<Matrix<T>>,
    /// Row `a` is `w_a`, length `d+1`.
    pub w: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvmHead<T> {
    /// `u[a][p]` is `k × (d_h+1)`.
    pub u: Vec<Vec<Matrix<T>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FusionHead<T> {
    Fc(FcHead<T>),
    Fm(FmHead<T>),
    Mvm(MvmHead<T>),
}

/// Forward intermediates.
#[derive(Debug, Clone)]
pub enum HeadCache<T> {
    Fc {
        h_bias: Vector<T>,
        pre: Vector<T>,
        q: Vector<T>,
    },
    Fm {
        h_bias: Vector<T>,
        q: Vec<Vector<T>>,
    },
    Mvm {
        h_bias: Vec<Vector<T>>,
        q: Vec<Vec<Vector<T>>>,
    },
}

fn check_views<T: Scalar>(views: &[Vector<T>], m: usize, dh: usize) -> Result<()> {
    if views.len() != m || views.iter().any(|v| v.len() != dh) {
        return Err(shape(
            "fusion",
            format!(
                "head expects {m} views of length {dh}, got lengths {:?}",
                views.iter().map(|v| v.len()).collect::<Vec<_>>()
            ),
        ));
    }
    Ok(())
}

impl<T: Scalar> FusionHead<T> {
    /// Zero-initialised head for `views` encodings of width `hidden`.
    pub fn zeros(kind: HeadKind, views: usize, hidden: usize, classes: usize) -> Self {
        let d = views * hidden;
        match kind {
            HeadKind::Fc { hidden_units } => Self::Fc(FcHead {
                w1: Matrix::zeros(hidden_units, d + 1),
                w2: Matrix::zeros(classes, hidden_units),
            }),
            HeadKind::Fm { factors } => Self::Fm(FmHead {
                u: (0..classes).map(|_| Matrix::zeros(factors, d)).collect(),
                w: Matrix::zeros(classes, d + 1),
            }),
            HeadKind::Mvm { factors } => Self::Mvm(MvmHead {
                u: (0..classes)
                    .map(|_| {
                        (0..views)
                            .map(|_| Matrix::zeros(factors, hidden + 1))
                            .collect()
                    })
                    .collect(),
            }),
        }
    }

    pub fn new(
        kind: HeadKind,
        views: usize,
        hidden: usize,
        classes: usize,
        rng: &mut SimRng,
    ) -> Self {
        let mut head = Self::zeros(kind, views, hidden, classes);
        head.for_each_mut(&mut |_, m| {
            *m = glorot_uniform(m.rows(), m.cols(), rng);
        });
        head
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            Self::Fc(h) => HeadKind::Fc {
                hidden_units: h.w1.rows(),
            },
            Self::Fm(h) => HeadKind::Fm {
                factors: h.u[0].rows(),
            },
            Self::Mvm(h) => HeadKind::Mvm {
                factors: h.u[0][0].rows(),
            },
        }
    }

    pub fn for_each(&self, f: &mut dyn FnMut(&str, &Matrix<T>)) {
        match self {
            Self::Fc(h) => {
                f("fc.W1", &h.w1);
                f("fc.W2", &h.w2);
            }
            Self::Fm(h) => {
                for (a, u) in h.u.iter().enumerate() {
                    f(&format!("fm.U[{a}]"), u);
                }
                f("fm.w", &h.w);
            }
            Self::Mvm(h) => {
                for (a, per_view) in h.u.iter().enumerate() {
                    for (p, u) in per_view.iter().enumerate() {
                        f(&format!("mvm.U[{a}][{p}]"), u);
                    }
                }
            }
        }
    }

    pub fn for_each_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix<T>)) {
        match self {
            Self::Fc(h) => {
                f("fc.W1", &mut h.w1);
                f("fc.W2", &mut h.w2);
            }
            Self::Fm(h) => {
                for (a, u) in h.u.iter_mut().enumerate() {
                    f(&format!("fm.U[{a}]"), u);
                }
                f("fm.w", &mut h.w);
            }
            Self::Mvm(h) => {
                for (a, per_view) in h.u.iter_mut().enumerate() {
                    for (p, u) in per_view.iter_mut().enumerate() {
                        f(&format!("mvm.U[{a}][{p}]"), u);
                    }
                }
            }
        }
    }

    pub fn forward(&self, views: &[Vector<T>]) -> Result<Vector<T>> {
        Ok(self.forward_cached(views)?.0)
    }

    pub fn forward_cached(&self, views: &[Vector<T>]) -> Result<(Vector<T>, HeadCache<T>)> {
        match self {
            Self::Fc(h) => h.forward(views),
            Self::Fm(h) => h.forward(views),
            Self::Mvm(h) => h.forward(views),
        }
    }

    /// Accumulates `scale`-weighted head gradients into `grad` and returns
    /// ∂loss/∂h^(p) for every view.
    pub fn backward(
        &self,
        cache: &HeadCache<T>,
        dlogits: &[T],
        scale: T,
        grad: &mut Self,
        hidden: usize,
    ) -> Result<Vec<Vector<T>>> {
        match (self, cache, grad) {
            (Self::Fc(h), HeadCache::Fc { h_bias, pre, q }, Self::Fc(g)) => {
                g.w2.add_outer(scale, dlogits, q)?;
                let dq = h.w2.matvec_transposed(dlogits)?;
                let dpre: Vec<T> = dq
                    .iter()
                    .zip(pre.iter())
                    .map(|(&d, &a)| if a > T::zero() { d } else { T::zero() })
                    .collect();
                g.w1.add_outer(scale, &dpre, h_bias)?;
                let dh = h.w1.matvec_transposed(&dpre)?;
                Ok(split_views(&dh[..dh.len() - 1], hidden))
            }
            (Self::Fm(h), HeadCache::Fm { h_bias, q }, Self::Fm(g)) => {
                let d = h_bias.len() - 1;
                let mut dh = Vector::zeros(d);
                for (a, (u, qa)) in h.u.iter().zip(q).enumerate() {
                    let dy = dlogits[a];
                    let two_dy = dy + dy;
                    // ∂ sum(q⊙q) / ∂U = 2 q hᵀ
                    g.u[a].add_outer(scale * two_dy, qa, &h_bias[..d])?;
                    let w_row: Vec<T> = h.w.row(a).to_vec();
                    let g_row = &mut g.w.as_mut_slice()[a * (d + 1)..(a + 1) * (d + 1)];
                    for (gw, &hb) in g_row.iter_mut().zip(h_bias.iter()) {
                        *gw += scale * dy * hb;
                    }
                    dh.axpy(two_dy, &u.matvec_transposed(qa)?)?;
                    dh.axpy(dy, &w_row[..d])?;
                }
                Ok(split_views(&dh, hidden))
            }
            (Self::Mvm(h), HeadCache::Mvm { h_bias, q }, Self::Mvm(g)) => {
                let m = h_bias.len();
                let mut dh: Vec<Vector<T>> = (0..m).map(|_| Vector::zeros(hidden + 1)).collect();
                for (a, per_view) in h.u.iter().enumerate() {
                    let dy = dlogits[a];
                    let qa = &q[a];
                    let k = qa[0].len();
                    for p in 0..m {
                        // Product over the other views, computed directly so a
                        // zero factor in view p does not poison the result.
                        let dq: Vec<T> = (0..k)
                            .map(|f| {
                                let mut prod = dy;
                                for (pp, qv) in qa.iter().enumerate() {
                                    if pp != p {
                                        prod *= qv[f];
                                    }
                                }
                                prod
                            })
                            .collect();
                        g.u[a][p].add_outer(scale, &dq, &h_bias[p])?;
                        dh[p].axpy(T::one(), &per_view[p].matvec_transposed(&dq)?)?;
                    }
                }
                Ok(dh
                    .into_iter()
                    .map(|v| v.as_slice()[..hidden].to_vec().into())
                    .collect())
            }
            _ => Err(shape(
                "fusion backward",
                "head, cache and gradient variants differ",
            )),
        }
    }
}

fn split_views<T: Scalar>(dh: &[T], hidden: usize) -> Vec<Vector<T>> {
    dh.chunks(hidden).map(|c| c.to_vec().into()).collect()
}

impl<T: Scalar> FcHead<T> {
    fn forward(&self, views: &[Vector<T>]) -> Result<(Vector<T>, HeadCache<T>)> {
        let d = self.w1.cols() - 1;
        let m = views.len().max(1);
        check_views(views, m, d / m)?;
        let h_bias = Vector::concat(views).with_bias();
        let pre = self.w1.matvec(&h_bias)?;
        let q: Vector<T> = pre.iter().map(|&a| relu(a)).collect::<Vec<_>>().into();
        let logits = self.w2.matvec(&q)?;
        Ok((logits, HeadCache::Fc { h_bias, pre, q }))
    }
}

impl<T: Scalar> FmHead<T> {
    fn forward(&self, views: &[Vector<T>]) -> Result<(Vector<T>, HeadCache<T>)> {
        let d = self.w.cols() - 1;
        let m = views.len().max(1);
        check_views(views, m, d / m)?;
        let h = Vector::concat(views);
        if h.len() != d {
            return Err(shape(
                "fuse_fm",
                format!("concatenated length {} != {d}", h.len()),
            ));
        }
        let h_bias = h.with_bias();
        let mut logits = Vec::with_capacity(self.u.len());
        let mut qs = Vec::with_capacity(self.u.len());
        for (a, u) in self.u.iter().enumerate() {
            let q = u.matvec(&h)?;
            let b = crate::linalg::dot(self.w.row(a), &h_bias);
            let y = q.iter().fold(T::zero(), |s, &x| s + x * x) + b;
            logits.push(y);
            qs.push(q);
        }
        Ok((logits.into(), HeadCache::Fm { h_bias, q: qs }))
    }
}

impl<T: Scalar> MvmHead<T> {
    fn forward(&self, views: &[Vector<T>]) -> Result<(Vector<T>, HeadCache<T>)> {
        let m = self.u[0].len();
        let dh = self.u[0][0].cols() - 1;
        check_views(views, m, dh)?;
        let h_bias: Vec<Vector<T>> = views.iter().map(|v| v.with_bias()).collect();
        let mut logits = Vec::with_capacity(self.u.len());
        let mut qs = Vec::with_capacity(self.u.len());
        for per_view in &self.u {
            let q: Vec<Vector<T>> = per_view
                .iter()
                .zip(&h_bias)
                .map(|(u, hb)| u.matvec(hb))
                .collect::<Result<_>>()?;
            let k = q[0].len();
            let y = (0..k).fold(T::zero(), |s, f| {
                s + q.iter().fold(T::one(), |p, qv| p * qv[f])
            });
            logits.push(y);
            qs.push(q);
        }
        Ok((logits.into(), HeadCache::Mvm { h_bias, q: qs }))
    }
}
