use predcode::theory::{lemma1_monte_carlo, TheoryParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn params() -> TheoryParams {
    TheoryParams {
        smoothness: 2.0,
        learning_rate: 0.05,
        local_steps: 4,
        workers: 5,
        prediction_ratio: 0.5,
        quantization_ratio: 2.0,
        grad_noise: 3.0,
        f_opt: 1.0,
        f_init: 10.0,
    }
}

#[test]
fn constraint_hand_fixtures() {
    // 4·0.0025·4·3/2 + 0.1·4·(1/5 + 1) = 0.06 + 0.48
    let p = params();
    assert!((p.lr_constraint_lhs() - 0.54).abs() < 1e-12);
    assert!(p.lr_constraint_satisfied());
    // 0.09 + 0.6·2 = 1.29
    let q = TheoryParams {
        smoothness: 1.0,
        learning_rate: 0.3,
        local_steps: 2,
        workers: 1,
        prediction_ratio: 1.0,
        quantization_ratio: 1.0,
        ..p
    };
    assert!((q.lr_constraint_lhs() - 1.29).abs() < 1e-12);
    assert!(!q.lr_constraint_satisfied());
    // no compression noise, one step: Lη ≤ 1
    for (eta, ok) in [(0.5, true), (0.5000001, false)] {
        let r = TheoryParams {
            smoothness: 2.0,
            learning_rate: eta,
            local_steps: 1,
            prediction_ratio: 0.0,
            quantization_ratio: 0.0,
            ..p
        };
        assert_eq!(r.lr_constraint_satisfied(), ok);
    }
    assert!(TheoryParams { learning_rate: 0.0, ..p }.lr_constraint_satisfied());
}

#[test]
fn bound_hand_fixture() {
    // 2·9/(0.05·4·20) + 0.1·(2/5 + 0.15)·3 = 4.5 + 0.165
    let rhs = params().convergence_bound_rhs(20).unwrap();
    assert!((rhs - 4.665).abs() < 1e-12, "{rhs}");
}

#[test]
fn uncompressed_noise_term() {
    for (p, q) in [(0.0, 3.0), (0.7, 0.0)] {
        let tp = TheoryParams {
            prediction_ratio: p,
            quantization_ratio: q,
            f_init: 1.0,
            ..params()
        };
        // f0 = f*, so only the noise term remains: Lη(1/M + Lη(τ−1)/2)σ²
        let expected = 0.1 * (1.0 / 5.0 + 0.1 * 3.0 / 2.0) * 3.0;
        assert!((tp.convergence_bound_rhs(7).unwrap() - expected).abs() < 1e-12);
    }
}

fn random_params(rng: &mut ChaCha8Rng) -> TheoryParams {
    TheoryParams {
        smoothness: rng.random_range(0.1..10.0),
        learning_rate: rng.random_range(1e-4..0.5),
        local_steps: rng.random_range(1..50),
        workers: rng.random_range(1..64),
        prediction_ratio: rng.random_range(0.01..2.0),
        quantization_ratio: rng.random_range(0.01..50.0),
        grad_noise: rng.random_range(0.01..10.0),
        f_opt: 0.0,
        f_init: rng.random_range(0.1..10.0),
    }
}

#[test]
fn bound_monotonicities() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let tp = random_params(&mut rng);
        let k = rng.random_range(1..1000);
        let base = tp.convergence_bound_rhs(k).unwrap();
        assert!(tp.convergence_bound_rhs(k + 1).unwrap() < base);
        let up = 1.0 + rng.random_range(0.01..1.0);
        let bigger = [
            TheoryParams {
                grad_noise: tp.grad_noise * up,
                ..tp
            },
            TheoryParams {
                quantization_ratio: tp.quantization_ratio * up,
                ..tp
            },
            TheoryParams {
                prediction_ratio: tp.prediction_ratio * up,
                ..tp
            },
        ];
        for b in bigger {
            assert!(b.convergence_bound_rhs(k).unwrap() > base);
        }
    }
}

#[test]
fn bound_rejects_degenerate_inputs() {
    assert!(params().convergence_bound_rhs(0).is_err());
    assert!(TheoryParams {
        learning_rate: 0.0,
        ..params()
    }
    .convergence_bound_rhs(3)
    .is_err());
}

#[test]
fn min_error_curve_is_seed_deterministic() {
    let a = lemma1_monte_carlo(400.0, 30.0, 6, 5000, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let b = lemma1_monte_carlo(400.0, 30.0, 6, 5000, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 6);
}
