//! Principal nest of the cycle map: Hausdorff distance to the Julia set, roundness, and the
//! distance from the critical value to the next outer piece, level by level.
//!
//!     cargo run --release --example principal_nest -- 4 8

use fibrenorm::hunt::{hunted_parameter, solve_cycle, CyclePlan};
use fibrenorm::puzzle::{default_gamma0, functional_equation_residual, nest_julia, principal_nest, rescaled_central, shape_convergence_report, NestConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let d: u32 = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);
    let depth: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(8);

    let (_, rep) = hunted_parameter(d, 12).expect("hunt");
    let sol = solve_cycle(d, rep.c_infinity_estimate, &CyclePlan::default()).expect("cycle").solution;

    let g = rescaled_central(&sol.map, sol.beta).unwrap();
    println!("functional equation residual {:.3e}", functional_equation_residual(&g, sol.beta).unwrap());

    let cfg = NestConfig { depth, ..NestConfig::default() };
    let gamma0 = default_gamma0(&sol, &cfg).unwrap();
    let levels = principal_nest(&sol, &gamma0, &cfg).unwrap();
    let julia = nest_julia(&sol, &levels[1].rescaled_boundary, 0.015, 300).unwrap();
    let rows = shape_convergence_report(&sol, &levels, &julia, 65).unwrap();

    println!("{:>2} {:>12} {:>10} {:>9} {:>10}", "n", "tau_n", "dist_H", "round", "eq1");
    for (r, l) in rows.iter().zip(&levels) {
        let eq1 = r.eq1_distance.map_or("-".to_string(), |x| format!("{x:.3e}"));
        println!("{:>2} {:>12.4e} {:>10.4e} {:>9.4} {:>10}", r.n, l.tau_n, r.dist_h, r.roundness, eq1);
    }
}
