//! Finite-difference verification of every analytic gradient across random
//! instances spanning one to three hierarchy levels.

use hscp_core::model::{AdversaryModel, CorrelationSet, FactorModel};
use hscp_core::objective::{
    attack_objective, defense_objective, finite_difference_gradient, grad_attack_wrt_adversary,
    grad_j_wrt_component, grad_j_wrt_loading, gradient_relative_error,
};
use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

const FD_STEP: f64 = 1e-6;
const REL_TOL: f64 = 1e-5;

struct Instance {
    model: FactorModel,
    adversary: AdversaryModel,
    data: CorrelationSet,
    perturbed: CorrelationSet,
    alpha: f64,
    beta: f64,
}

/// Instance dimensions cycle through depths 1..3 with node counts up to 12
/// and up to 5 subjects.
fn make_instance(case: usize) -> Instance {
    let mut rng = ChaCha20Rng::seed_from_u64(9000 + case as u64);
    let depth = case % 3 + 1;
    let p = rng.random_range(7..=12);
    let widths: Vec<usize> = match depth {
        1 => vec![rng.random_range(2..=5)],
        2 => {
            let k1 = rng.random_range(4..=6);
            vec![k1, rng.random_range(2..k1)]
        }
        _ => vec![6, 4, 2],
    };
    let subjects = rng.random_range(1..=5);

    let mut components = Vec::new();
    let mut rows = p;
    for &k in &widths {
        components.push(Array2::from_shape_fn((rows, k), |_| rng.random_range(-1.0..1.0)));
        rows = k;
    }
    let loadings = (0..subjects)
        .map(|_| {
            widths
                .iter()
                .map(|&k| {
                    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    Array1::from_iter(raw.into_iter().map(|v| v / s))
                })
                .collect()
        })
        .collect();
    let model = FactorModel { components, loadings };

    let mut adversary = AdversaryModel::from_model(&model);
    for w in &mut adversary.components {
        w.mapv_inplace(|v| v + rng.random_range(-0.3..0.3));
    }

    let sym = |rng: &mut ChaCha20Rng| {
        let m = Array2::from_shape_fn((p, p), |_| rng.random_range(-1.0..1.0));
        0.5 * (&m + &m.t())
    };
    let data =
        CorrelationSet::from_matrices_unchecked((0..subjects).map(|_| sym(&mut rng)).collect())
            .unwrap();
    let perturbed =
        CorrelationSet::from_matrices_unchecked((0..subjects).map(|_| sym(&mut rng)).collect())
            .unwrap();

    Instance {
        model,
        adversary,
        data,
        perturbed,
        alpha: rng.random_range(1e-4..1e-2),
        beta: rng.random_range(0.1..1.0),
    }
}

#[test]
fn attack_gradient_matches_finite_differences_on_20_instances() {
    for case in 0..20 {
        let inst = make_instance(case);
        for r in 1..=inst.model.depth() {
            let analytic = grad_attack_wrt_adversary(
                &inst.adversary,
                &inst.model,
                &inst.perturbed,
                r,
                inst.alpha,
            )
            .unwrap();
            let numeric = finite_difference_gradient(
                |w: &Array2<f64>| {
                    let mut adv = inst.adversary.clone();
                    adv.components[r - 1] = w.clone();
                    attack_objective(&adv, &inst.model, &inst.perturbed, r, inst.alpha)
                },
                inst.adversary.component(r),
                FD_STEP,
            )
            .unwrap();
            let err = gradient_relative_error(&analytic, &numeric);
            assert!(err < REL_TOL, "case {case} level {r}: rel err {err}");
        }
    }
}

#[test]
fn loading_gradient_matches_finite_differences_on_20_instances() {
    for case in 0..20 {
        let inst = make_instance(case);
        for r in 1..=inst.model.depth() {
            for i in 0..inst.model.subject_count() {
                let analytic =
                    grad_j_wrt_loading(&inst.adversary, &inst.model, &inst.data, r, i, inst.beta)
                        .unwrap();
                let numeric = finite_difference_gradient(
                    |l: &Array1<f64>| {
                        let mut m = inst.model.clone();
                        m.loadings[i][r - 1] = l.clone();
                        defense_objective(&inst.adversary, &m, &inst.data, inst.beta)
                            .map(|b| b.total_j)
                    },
                    inst.model.loading(i, r),
                    FD_STEP,
                )
                .unwrap();
                let err = gradient_relative_error(&analytic, &numeric);
                assert!(err < REL_TOL, "case {case} level {r} subject {i}: rel err {err}");
            }
        }
    }
}

#[test]
fn component_gradient_matches_finite_differences_on_20_instances() {
    for case in 0..20 {
        let inst = make_instance(case);
        for r in 1..=inst.model.depth() {
            let analytic =
                grad_j_wrt_component(&inst.model, &inst.data, r, inst.beta).unwrap();
            let numeric = finite_difference_gradient(
                |w: &Array2<f64>| {
                    let mut m = inst.model.clone();
                    m.components[r - 1] = w.clone();
                    defense_objective(&inst.adversary, &m, &inst.data, inst.beta)
                        .map(|b| b.total_j)
                },
                inst.model.component(r),
                FD_STEP,
            )
            .unwrap();
            let err = gradient_relative_error(&analytic, &numeric);
            assert!(err < REL_TOL, "case {case} level {r}: rel err {err}");
        }
    }
}
