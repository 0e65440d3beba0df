//! Discrete and continuous bound curves, and how far the prior bound trails them.

use stochastic_contraction::bounds::{bound_series, optimal_prior_epsilon, BoundInputs};

fn main() -> stochastic_contraction::Result<()> {
    let discrete = BoundInputs::discrete(0.5, 0.09, 1.0, 4.0);
    let ks: Vec<f64> = (0..=10).map(f64::from).chain([f64::INFINITY]).collect();
    print!("{}", bound_series(&discrete, &ks)?.to_csv());

    let (lambda, c, beta) = (0.24, 14.5, 12.95);
    let cont = BoundInputs::continuous(lambda, c, beta, 10.0);
    let ts: Vec<f64> = [0.0, 1.0, 5.0, 10.0, 20.0, f64::INFINITY].into();
    print!("{}", bound_series(&cont, &ts)?.to_csv());

    let prior = optimal_prior_epsilon(lambda, c, beta, 1.0, 34.05, 2)?;
    println!(
        "asymptote {:.3} vs prior {:.3} (epsilon {:.4})",
        cont.ms_asymptote(),
        prior.ms_asymptote(beta),
        prior.epsilon
    );
    Ok(())
}
