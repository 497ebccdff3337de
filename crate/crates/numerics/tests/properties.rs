use proptest::prelude::*;
use sa_numerics::tape::sigmoid;
use sa_numerics::{AdamConfig, AdamState, ParamStore, Tape, Tensor};

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant(
        xs in prop::collection::vec(-50.0f64..50.0, 12),
        shift in -100.0f64..100.0,
    ) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![4, 3], xs.clone()).unwrap());
        let y = tape.softmax(x, 1).unwrap();
        let shifted = tape.constant(Tensor::new(vec![4, 3], xs.iter().map(|v| v + shift).collect()).unwrap());
        let ys = tape.softmax(shifted, 1).unwrap();
        for row in tape.value(y).data().chunks(3) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        prop_assert!(tape.value(y).max_abs_diff(tape.value(ys)) < 1e-9);
    }

    #[test]
    fn sigmoid_bounded_and_symmetric(x in -30.0f64..30.0) {
        let s = sigmoid(x);
        prop_assert!(s > 0.0 && s < 1.0);
        prop_assert!((sigmoid(-x) - (1.0 - s)).abs() < 1e-12);
    }

    #[test]
    fn adam_zero_gradient_fixed_point(ws in prop::collection::vec(-5.0f64..5.0, 1..20), steps in 1usize..10) {
        let mut p = ParamStore::new();
        p.add("w", Tensor::vector(ws.clone()));
        let mut s = AdamState::new(AdamConfig::default(), &p);
        for _ in 0..steps {
            s.step(&mut p, &[Tensor::zeros(vec![ws.len()])]).unwrap();
        }
        prop_assert_eq!(p.tensors()[0].data(), &ws[..]);
        prop_assert_eq!(s.step_count, steps as u64);
    }
}
