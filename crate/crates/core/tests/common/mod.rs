//! Test-only oracles, independent of the code paths they check.
#![allow(dead_code)]

use fedsim::linalg::Vector;
use fedsim::models::{loss_and_gradient, Example, FusionHead, Model, MultiViewSpec, ViewSequences};
use fedsim::rng::SimRng;

/// Random short sessions matching `spec`; sequence lengths in `1..=max_len`.
pub fn random_sessions(
    spec: &MultiViewSpec,
    n: usize,
    max_len: usize,
    rng: &mut SimRng,
) -> Vec<Example<ViewSequences<f64>>> {
    (0..n)
        .map(|i| {
            let views = spec
                .input_dims
                .iter()
                .map(|&d| {
                    let len = 1 + rng.below(max_len);
                    (0..len)
                        .map(|_| {
                            (0..d)
                                .map(|_| rng.standard_normal())
                                .collect::<Vec<_>>()
                                .into()
                        })
                        .collect()
                })
                .collect();
            Example::new(ViewSequences::new(views), i % spec.classes)
        })
        .collect()
}

fn mean_loss<M: Model<f64>>(model: &M, data: &[Example<M::Input>]) -> f64 {
    data.iter()
        .map(|ex| model.loss(&ex.input, ex.label).unwrap())
        .sum::<f64>()
        / data.len() as f64
}

/// Worst per-coordinate relative error between the analytic gradient and
/// central finite differences of the mean loss. The denominator is floored
/// at 1e-6 so coordinates whose true gradient is ~0 are judged absolutely.
pub fn fd_check<M: Model<f64>>(model: &M, data: &[Example<M::Input>], eps: f64) -> f64 {
    let batch: Vec<_> = data.iter().collect();
    let (_, grad) = loss_and_gradient(model, &batch).unwrap();
    let base = model.flatten();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut p = base.clone();
        p.values_mut()[i] = base.values()[i] + eps;
        probe.unflatten(&p).unwrap();
        let up = mean_loss(&probe, data);
        p.values_mut()[i] = base.values()[i] - eps;
        probe.unflatten(&p).unwrap();
        let dn = mean_loss(&probe, data);
        let fd = (up - dn) / (2.0 * eps);
        let an = grad.values()[i];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

/// MVM logits by explicit expansion over every index tuple
/// `(i_1, .., i_m)` of the bias-augmented views:
/// `y_a = Σ_tuple Π_p h̄^(p)[i_p] · Σ_f Π_p U_a^(p)[f, i_p]`.
pub fn mvm_enumeration(head: &FusionHead<f64>, views: &[Vector<f64>]) -> Vec<f64> {
    let FusionHead::Mvm(h) = head else {
        panic!("not an MVM head")
    };
    let bars: Vec<Vec<f64>> = views
        .iter()
        .map(|v| {
            let mut b = v.to_vec();
            b.push(1.0);
            b
        })
        .collect();
    let m = bars.len();
    let widths: Vec<usize> = bars.iter().map(Vec::len).collect();
    let total: usize = widths.iter().product();
    h.u.iter()
        .map(|per_view| {
            let k = per_view[0].rows();
            let mut y = 0.0;
            for flat in 0..total {
                let mut rem = flat;
                let mut idx = vec![0; m];
                for p in 0..m {
                    idx[p] = rem % widths[p];
                    rem /= widths[p];
                }
                let feature: f64 = (0..m).map(|p| bars[p][idx[p]]).product();
                let weight: f64 = (0..k)
                    .map(|f| (0..m).map(|p| per_view[p].get(f, idx[p])).product::<f64>())
                    .sum();
                y += feature * weight;
            }
            y
        })
        .collect()
}
