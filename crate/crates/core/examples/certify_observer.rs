//! Certifies the transformed nonlinear observer over |x̂| ≤ 3 and prints the constants.

use stochastic_contraction::contraction::{certify_continuous, CertifyOptions};
use stochastic_contraction::observer::{observer_transformed, Measurement};
use stochastic_contraction::system::Domain;

fn main() -> stochastic_contraction::Result<()> {
    let sys = observer_transformed(Measurement::Plant { x0: [0.0, 1.0] }, 1.0);
    let domain = Domain::cube(2, 3.0, 15.0);
    let report = certify_continuous(&sys, &domain, &CertifyOptions::default())?;

    println!("rate lambda  = {:.4}", report.rate);
    println!("metric floor = {:.4}", report.beta);
    println!("noise bound  = {:.4}", report.noise_bound);
    println!("growth ratio = {:?}", report.growth_ratio);
    println!("certified    = {}", report.passed());
    Ok(())
}
