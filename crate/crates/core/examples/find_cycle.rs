//! Bootstrap the Newton seed from a deep real renormalization and solve for the cycle.
//!
//!     cargo run --release --example find_cycle -- 4 60

use fibrenorm::hunt::{hunted_parameter, solve_cycle, CyclePlan};
use fibrenorm::operator::renormalize;
use std::time::Instant;

fn main() {
    let mut args = std::env::args().skip(1);
    let d: u32 = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);
    let order: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(60);

    let t = Instant::now();
    let (_, rep) = hunted_parameter(d, 12).expect("hunt");
    println!("bootstrap parameter c = {:.17}", rep.c_infinity_estimate);

    let plan = CyclePlan { order, ..CyclePlan::default() };
    let run = match solve_cycle(d, rep.c_infinity_estimate, &plan) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    };
    let sol = &run.solution;
    let g = run.geometry;
    println!("seed depth {}  U_0 = D({}, {})  U_1 = D({:.4}, {:.4})", run.depth, g.u0.center.re, g.u0.radius, g.u1.center.re, g.u1.radius);
    println!("beta      {:.16}", sol.beta);
    println!("residual  {:.3e} after {} Newton steps", sol.residual, sol.newton_iters);
    for (k, r) in sol.residual_trace.iter().enumerate() {
        println!("  {k:>2}  {r:.3e}");
    }
    println!("tail ratio {:.2e}, normalization defect {:.2e}", sol.tail_ratio(), sol.normalization_defect);

    // the cycle: R(h) = phi(h) and R(phi(h)) = h
    let (r1, b) = renormalize(&sol.map, -sol.beta).expect("R(h)");
    println!("|R(h) - phi(h)| = {:.3e}", r1.project().unwrap().distance(&sol.companion()).unwrap());
    let (r2, _) = renormalize(&r1, -b).expect("R(R(h))");
    println!("|R(R(h)) - h|   = {:.3e}", r2.project().unwrap().distance(&sol.map).unwrap());

    println!("central coefficients (first 8):");
    for (k, c) in sol.map.central.coeffs.iter().take(8).enumerate() {
        println!("  a_{k} = {:+.15e}", c.re);
    }
    println!("{:?}", t.elapsed());
}
