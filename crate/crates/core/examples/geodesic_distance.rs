//! Squared geodesic distance under a position-dependent metric, compared with the straight line.

use stochastic_contraction::geodesic::{distance_sq, refine, FnMetric, GeodesicOptions};
use stochastic_contraction::linalg::Matrix;

fn main() -> stochastic_contraction::Result<()> {
    // Conformal metric (1 + |x|²)·I: paths prefer to bend towards the origin.
    let metric = FnMetric::new(2, |x: &[f64]| Ok(Matrix::identity(2).scale(1.0 + x[0] * x[0] + x[1] * x[1])));
    let (a, b) = ([-1.5, 1.0], [1.5, 1.0]);

    let opts = GeodesicOptions::default();
    let res = distance_sq(&a, &b, &metric, &opts)?;
    let fine = refine(&res, &metric, 4, &opts)?;

    println!("straight-line energy = {:.6}", res.straight_line_energy);
    println!("geodesic d^2         = {:.6} ({} sweeps, converged {})", res.dist_sq, res.iterations, res.converged);
    println!("refined d^2 (x4)     = {:.6}", fine.dist_sq);
    let mid = &fine.curve.points[fine.curve.points.len() / 2];
    println!("curve midpoint       = ({:.4}, {:.4})", mid[0], mid[1]);
    Ok(())
}
