//! Analytic gradients against central finite differences, and the MVM head
//! against brute-force enumeration of its interaction terms.

mod common;

use common::{fd_check, mvm_enumeration, random_sessions};
use fedsim::linalg::Vector;
use fedsim::models::{
    loss_and_gradient, sgd_apply, Example, FusionHead, HeadKind, MlpModel, Model,
    MultiViewGruModel, MultiViewSpec, Parameterized,
};
use fedsim::rng::SimRng;
use proptest::prelude::*;

const HEADS: [HeadKind; 3] = [
    HeadKind::Fc { hidden_units: 3 },
    HeadKind::Fm { factors: 2 },
    HeadKind::Mvm { factors: 2 },
];

#[test]
fn multiview_gradients_match_finite_differences() {
    for head in HEADS {
        for seed in 0..5u64 {
            let spec = MultiViewSpec {
                input_dims: vec![2, 3, 1],
                hidden: 3,
                classes: 2,
                head,
            };
            let mut rng = SimRng::new(seed);
            let model = MultiViewGruModel::<f64>::new(&spec, &mut rng).unwrap();
            let data = random_sessions(&spec, 3, 4, &mut rng);
            let worst = fd_check(&model, &data, 1e-5);
            assert!(
                worst < 1e-4,
                "{head:?} seed {seed}: worst rel err {worst:e}"
            );
        }
    }
}

#[test]
fn mlp_gradients_match_finite_differences() {
    let mut rng = SimRng::new(17);
    let model = MlpModel::<f64>::new(&[3, 4, 3, 2], &mut rng).unwrap();
    let data: Vec<Example<Vector<f64>>> = (0..5)
        .map(|i| {
            let x: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
            Example::new(x.into(), i % 2)
        })
        .collect();
    let worst = fd_check(&model, &data, 1e-5);
    assert!(worst < 1e-4, "worst rel err {worst:e}");
}

#[test]
fn gradient_vanishes_at_saturated_optimum() {
    // Bias-only model whose correct logit dominates.
    let mut model = MlpModel::<f64>::zeros(&[2, 2]).unwrap();
    model.bias_mut(0).set(0, 0, 40.0);
    let ex = Example::new(Vector::from(vec![0.3, -0.7]), 0);
    let (_, g) = loss_and_gradient(&model, &[&ex]).unwrap();
    assert!(g.norm() < 1e-6, "{}", g.norm());
}

#[test]
fn batch_gradient_is_mean_of_sample_gradients() {
    let spec = MultiViewSpec {
        input_dims: vec![2, 2],
        hidden: 2,
        classes: 3,
        head: HeadKind::Fm { factors: 2 },
    };
    let mut rng = SimRng::new(5);
    let model = MultiViewGruModel::<f64>::new(&spec, &mut rng).unwrap();
    let data = random_sessions(&spec, 2, 3, &mut rng);
    let (_, both) = loss_and_gradient(&model, &[&data[0], &data[1]]).unwrap();
    let (_, g1) = loss_and_gradient(&model, &[&data[0]]).unwrap();
    let (_, g2) = loss_and_gradient(&model, &[&data[1]]).unwrap();
    for i in 0..both.len() {
        let half = 0.5 * (g1.values()[i] + g2.values()[i]);
        assert!((both.values()[i] - half).abs() < 1e-12);
    }
}

#[test]
fn empty_batch_rejected() {
    let model = MlpModel::<f64>::zeros(&[2, 2]).unwrap();
    assert!(loss_and_gradient(&model, &[]).is_err());
}

#[test]
fn small_step_decreases_loss() {
    for head in HEADS {
        let spec = MultiViewSpec {
            input_dims: vec![2, 3, 2],
            hidden: 3,
            classes: 2,
            head,
        };
        let mut rng = SimRng::new(99);
        let mut model = MultiViewGruModel::<f64>::new(&spec, &mut rng).unwrap();
        let data = random_sessions(&spec, 6, 4, &mut rng);
        let batch: Vec<_> = data.iter().collect();
        let (before, g) = loss_and_gradient(&model, &batch).unwrap();
        let next = sgd_apply(&model.flatten(), &g, 1e-3).unwrap();
        model.unflatten(&next).unwrap();
        let (after, _) = loss_and_gradient(&model, &batch).unwrap();
        assert!(after < before, "{head:?}: {after} !< {before}");
    }
}

#[test]
fn mvm_matches_enumeration() {
    for (m, seed) in [(2usize, 1u64), (3, 2), (3, 3)] {
        let mut rng = SimRng::new(seed);
        let head = FusionHead::<f64>::new(HeadKind::Mvm { factors: 2 }, m, 2, 2, &mut rng);
        let views: Vec<Vector<f64>> = (0..m)
            .map(|_| vec![rng.standard_normal(), rng.standard_normal()].into())
            .collect();
        let y = head.forward(&views).unwrap();
        let oracle = mvm_enumeration(&head, &views);
        for (a, b) in y.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn flatten_unflatten_round_trip(
        dims in proptest::collection::vec(1usize..4, 1..4),
        hidden in 1usize..4,
        classes in 1usize..4,
        width in 1usize..3,
        head_ix in 0usize..3,
        seed in any::<u64>(),
    ) {
        let head = match head_ix {
            0 => HeadKind::Fc { hidden_units: width },
            1 => HeadKind::Fm { factors: width },
            _ => HeadKind::Mvm { factors: width },
        };
        let spec = MultiViewSpec { input_dims: dims, hidden, classes, head };
        let model = MultiViewGruModel::<f64>::new(&spec, &mut SimRng::new(seed)).unwrap();
        let flat = model.flatten();
        prop_assert_eq!(flat.len(), model.param_count());
        let mut other = MultiViewGruModel::<f64>::zeros(&spec).unwrap();
        other.unflatten(&flat).unwrap();
        prop_assert_eq!(&other, &model);
        prop_assert_eq!(other.flatten(), flat);
    }

    #[test]
    fn mvm_enumeration_random(seed in any::<u64>(), m in 2usize..4, dh in 1usize..3, k in 1usize..3) {
        let mut rng = SimRng::new(seed);
        let head = FusionHead::<f64>::new(HeadKind::Mvm { factors: k }, m, dh, 2, &mut rng);
        let views: Vec<Vector<f64>> = (0..m)
            .map(|_| (0..dh).map(|_| rng.standard_normal()).collect::<Vec<_>>().into())
            .collect();
        let y = head.forward(&views).unwrap();
        let oracle = mvm_enumeration(&head, &views);
        for (a, b) in y.iter().zip(&oracle) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn forward_is_bit_reproducible() {
    let spec = MultiViewSpec {
        input_dims: vec![4, 6, 3],
        hidden: 3,
        classes: 2,
        head: HeadKind::Fc { hidden_units: 4 },
    };
    let run = || {
        let mut rng = SimRng::new(2718);
        let model = MultiViewGruModel::<f64>::new(&spec, &mut rng).unwrap();
        let data = random_sessions(&spec, 4, 4, &mut rng);
        data.iter()
            .flat_map(|ex| model.forward(&ex.input).unwrap().into_inner())
            .map(f64::to_bits)
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
