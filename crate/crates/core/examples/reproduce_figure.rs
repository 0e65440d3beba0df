//! Recomputes the observer example: its constants and the mean-square estimation error.

use stochastic_contraction::observer::{reproduce_figure, verify_constants, FigureOptions, VerifyOptions};

fn main() -> stochastic_contraction::Result<()> {
    let report = verify_constants(&VerifyOptions::default())?;
    for c in &report.checks {
        let mark = if c.pass { "ok " } else { "MISMATCH" };
        println!("{mark:8} {:<24} computed {:>9.4}  reference {:>6}", c.name, c.computed, c.reference);
    }

    let fig = reproduce_figure(&FigureOptions { n_paths: 200, ..Default::default() })?;
    println!("mean squared error over t in [5, 15]: {:.3}", fig.window_mean_mse(5.0, 15.0));
    println!("diverged paths: {}", fig.diverged_paths);
    Ok(())
}
