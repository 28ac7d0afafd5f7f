use audiohall::fusion::gradcheck::check_gradients;
use audiohall::fusion::FusionHead;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random input whose pre-activations stay clear of the ReLU kink, so the
/// finite difference never straddles it.
fn clear_of_kink(head: &FusionHead, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    loop {
        let a: Vec<f64> = (0..head.audio_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t: Vec<f64> = (0..head.text_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pass = head.forward(&a, &t).unwrap();
        if pass.pre_a.iter().chain(&pass.pre_t).all(|p| p.abs() > 1e-3) {
            return (a, t);
        }
    }
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut configs = 0;
    for &d in &[1usize, 4, 16] {
        for &dim in &[8usize, 32] {
            for _ in 0..20 {
                let mut head = FusionHead::init(dim, dim, d, &mut rng).unwrap();
                // non-zero biases exercise every parameter
                for p in head.params_mut().iter_mut() {
                    if *p == 0.0 {
                        *p = rng.random_range(-0.5..0.5);
                    }
                }
                let (a, t) = clear_of_kink(&head, &mut rng);
                let r = check_gradients(&head, &a, &t, rng.random_bool(0.5), 1e-5).unwrap();
                worst = worst.max(r.max_relative_error);
                configs += 1;
                assert!(r.max_relative_error <= 1e-4, "d={d} D={dim}: {r:?}");
            }
        }
    }
    assert!(configs >= 100);
    eprintln!("max relative error over {configs} configurations: {worst:e}");
}
