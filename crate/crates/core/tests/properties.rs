use proptest::prelude::*;

use stochastic_contraction::bounds::{bound, BoundInputs};
use stochastic_contraction::geodesic::{distance_sq, ConstantMetric, FnMetric, GeodesicOptions};
use stochastic_contraction::linalg::Matrix;
use stochastic_contraction::sde::{run_ensemble, EnsembleOptions, Horizon, InitialSampler, NoiseCoupling};
use stochastic_contraction::system::ContinuousSystem;

fn quick() -> GeodesicOptions {
    GeodesicOptions { segments: 16, ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn continuous_bound_decreases_to_its_asymptote(
        lambda in 0.05f64..5.0, c in 0.0f64..10.0, beta in 0.1f64..10.0, u0 in 0.0f64..50.0, t in 0.0f64..20.0,
    ) {
        let inputs = BoundInputs::continuous(lambda, c, beta, u0);
        let now = bound(&inputs, t).unwrap();
        let later = bound(&inputs, t + 1.0).unwrap();
        let limit = bound(&inputs, f64::INFINITY).unwrap();
        prop_assert!(later.ms <= now.ms + 1e-12);
        prop_assert!(later.d2 <= now.d2 + 1e-12);
        prop_assert!(limit.ms <= later.ms + 1e-12);
        prop_assert!((limit.d2 - c / lambda).abs() <= 1e-12 * (1.0 + c / lambda));
    }

    #[test]
    fn noise_free_reference_halves_the_asymptote(
        mu in 0.01f64..0.99, d in 0.0f64..5.0, beta in 0.1f64..10.0,
    ) {
        let full = BoundInputs::discrete(mu, d, beta, 0.0);
        let half = full.clone().with_noise_free_reference(true);
        let (a, b) = (bound(&full, f64::INFINITY).unwrap(), bound(&half, f64::INFINITY).unwrap());
        prop_assert!((b.d2 - a.d2 / 2.0).abs() <= 1e-12 * (1.0 + a.d2));
    }

    #[test]
    fn constant_metric_distance_is_the_quadratic_form(
        a in prop::collection::vec(-3.0f64..3.0, 2), b in prop::collection::vec(-3.0f64..3.0, 2),
        l11 in 0.5f64..2.0, l21 in -1.0f64..1.0, l22 in 0.5f64..2.0,
    ) {
        let l = Matrix::from_rows(&[[l11, 0.0], [l21, l22]]);
        let m = &l * &l.transpose();
        let diff = [b[0] - a[0], b[1] - a[1]];
        let d = distance_sq(&a, &b, &ConstantMetric(m.clone()), &quick()).unwrap().dist_sq;
        prop_assert!((d - m.quadratic_form(&diff)).abs() <= 1e-9 * (1.0 + d));
    }

    #[test]
    fn geodesic_is_symmetric_and_beats_the_chord(
        a in prop::collection::vec(-1.0f64..1.0, 2), b in prop::collection::vec(-1.0f64..1.0, 2),
    ) {
        let metric = FnMetric::new(2, |x: &[f64]| Ok(Matrix::identity(2).scale(1.0 + x[0] * x[0] + 0.5 * x[1].sin().powi(2))));
        let ab = distance_sq(&a, &b, &metric, &quick()).unwrap();
        let ba = distance_sq(&b, &a, &metric, &quick()).unwrap();
        prop_assert!(ab.dist_sq <= ab.straight_line_energy + 1e-12);
        prop_assert!((ab.dist_sq - ba.dist_sq).abs() <= 1e-6 * (1.0 + ab.dist_sq));
    }
}

#[test]
fn ou_stationary_variance() {
    // dX = -θX dt + s dW: Var → s²/(2θ); Euler–Maruyama gives s²/(θ(2 − θδ)).
    let (theta, s, dt) = (2.0, 0.8, 0.01);
    let sys = ContinuousSystem::linear(Matrix::from_rows(&[[-theta]]), 1).with_diffusion(move |_, _| Ok(Matrix::from_rows(&[[s]])));
    let init = InitialSampler::Fixed { a: vec![0.0], b: vec![0.0] };
    let opts = EnsembleOptions {
        horizon: Horizon::Continuous { t_end: 4.0, dt },
        coupling: NoiseCoupling::NoiseFreeSecond,
        n_paths: 20_000,
        seed: 99,
        keep_paths: 0,
        distance_stats: None,
    };
    let ens = run_ensemble(&sys, &init, &opts).unwrap();
    let last = ens.stats.last().unwrap();
    let expected = s * s / (theta * (2.0 - theta * dt));
    let z = (last.mean_sq_err - expected) / last.stderr;
    assert!(z.abs() < 4.0, "variance {} vs {expected} (z = {z:.2})", last.mean_sq_err);
}
