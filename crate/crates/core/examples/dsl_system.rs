//! Builds a system from expression strings, certifies it in a constant metric and
//! evaluates the distance between two states.

use stochastic_contraction::config::{build_from_config, parse_config, BuiltSystem};
use stochastic_contraction::contraction::certify_continuous;
use stochastic_contraction::geodesic::{distance_sq, GeodesicOptions, SystemMetric};

const CONFIG: &str = r#"
[system]
n = 2
d = 1
drift = ["-x1 + 0.5*tanh(x2)", "-2*x2 + 0.3*sin(x1) + cos(t)"]
diffusion = [["0.2"], ["0.1*x1/sqrt(1+x1^2)"]]
theta = [["1", "0"], ["0", "2"]]

[domain]
lower = [-3, -3]
upper = [3, 3]
t_end = 10
"#;

fn main() -> stochastic_contraction::Result<()> {
    let loaded = parse_config(CONFIG, std::iter::empty::<(String, String)>())?;
    let mut notices = Vec::new();
    let BuiltSystem::Continuous(sys) = build_from_config(&loaded.config, &mut notices)? else {
        unreachable!("continuous config")
    };
    let cert = certify_continuous(&sys, &loaded.config.domain()?, &loaded.config.certify_options())?;
    println!("lambda = {:.4}, beta = {:.4}, C = {:.4}, certified = {}", cert.rate, cert.beta, cert.noise_bound, cert.passed());

    let d = distance_sq(&[1.0, 1.0], &[-1.0, 0.5], &SystemMetric::new(&sys, 0.0), &GeodesicOptions::default())?;
    println!("d^2 = {:.6}", d.dist_sq);
    Ok(())
}
