//! Linearization at the cycle: leading eigenvalues, drift under refinement, the verdict, and
//! the comparison with the parameter-gap ratios.
//!
//!     cargo run --release --example spectrum -- 4

use fibrenorm::hunt::{hunted_parameter, solve_cycle, CyclePlan};
use fibrenorm::operator::NewtonConfig;
use fibrenorm::spectrum::{cycle_spectrum, eigenvalues, hyperbolicity_verdict, jacobian_r_squared, DEFAULT_DRIFT_TOL};

fn main() {
    let d: u32 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let (_, rep) = hunted_parameter(d, 12).expect("hunt");
    let run = solve_cycle(d, rep.c_infinity_estimate, &CyclePlan::default()).expect("cycle");
    let sol = &run.solution;

    let (report, refined) = cycle_spectrum(sol, 0.05, 10, &NewtonConfig::default()).expect("spectrum");
    println!("order {} -> {}: drift of |lambda_1| = {:.2e}", report.truncation_order, refined.map.order(), report.drift);
    println!("leading eigenvalues:");
    for z in report.eigenvalues.iter().take(10) {
        println!("  {:>22.15} {:+.3e}i   |.| = {:.6}", z.re, z.im, z.norm());
    }
    match hyperbolicity_verdict(&report, DEFAULT_DRIFT_TOL) {
        Ok(v) => println!("hyperbolic = {}  unstable = {}  gamma = {:.10}", v.hyperbolic, report.unstable_count, v.gamma),
        Err(e) => println!("{e}"),
    }

    let lambda = report.eigenvalues[0].norm();
    println!("gap ratios: last {:.6}, Aitken {:.6}, relative to lambda_1 {:.3e}", rep.gamma_estimate, rep.extrapolated_gamma, (rep.extrapolated_gamma - lambda).abs() / lambda);

    let j2 = jacobian_r_squared(&sol.map, sol.beta).expect("D(R^2)");
    let top = eigenvalues(&j2).expect("eig")[0].norm();
    println!("lambda_1^2 = {:.8}  top of D(R^2) = {:.8}  rel {:.2e}", lambda * lambda, top, (top - lambda * lambda).abs() / top);
}
