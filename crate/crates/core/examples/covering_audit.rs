//! Covering-family predicates on a synthetic family and on the pieces of a computed nest.

use fibrenorm::covering::*;
use fibrenorm::hunt::{hunted_parameter, solve_cycle, CyclePlan};
use fibrenorm::puzzle::{default_gamma0, principal_nest, ClosedCurve, NestConfig};
use fibrenorm::C64;

fn main() {
    let z = |re, im| C64::new(re, im);

    // three nested disks, one separate disk, one square straddling two of them
    let mut family = vec![
        Region::disk("big", z(0.0, 0.0), 4.0).unwrap(),
        Region::disk("mid", z(0.5, 0.0), 2.0).unwrap(),
        Region::disk("small", z(0.5, 0.2), 0.5).unwrap(),
        Region::disk("far", z(10.0, 0.0), 1.0).unwrap(),
    ];
    println!("synthetic family markov: {:?}", markov_check(&family).unwrap());
    let f = MarkovFamily::new(family.clone()).unwrap();
    println!("parents: {:?}", f.parent);
    let sub = markov_subfamily(&f, &[z(0.5, 0.2), z(10.0, 0.5)]).unwrap();
    println!("maximal subfamily: {:?}", sub.regions.iter().map(|r| r.id.as_str()).collect::<Vec<_>>());

    family.push(Region::new("square", ClosedCurve::rectangle(z(3.5, 0.0), 2.0, 2.0, 8).unwrap()).unwrap());
    println!("with a straddling square: {:?}", markov_check(&family).unwrap());

    let stretch = |w: C64| z(2.0 * w.re, w.im);
    println!("dilatation of (x, y) -> (2x, y): {:.12}", circular_dilatation(stretch, z(0.3, 0.1), 0.25, 256).unwrap());
    println!("dilatation of a similarity:      {:.12}", circular_dilatation(|w| z(1.0, 2.0) * w + 5.0, z(0.0, 0.0), 1.0, 256).unwrap());

    // puzzle pieces in dynamical coordinates
    let (_, rep) = hunted_parameter(4, 12).unwrap();
    let sol = solve_cycle(4, rep.c_infinity_estimate, &CyclePlan::default()).unwrap().solution;
    let cfg = NestConfig { depth: 6, ..NestConfig::default() };
    let levels = principal_nest(&sol, &default_gamma0(&sol, &cfg).unwrap(), &cfg).unwrap();
    let mut pieces = Vec::new();
    for l in &levels {
        pieces.push(Region::new(format!("V0_{}", l.n), l.boundary()).unwrap());
        if let Some(o) = l.boundary_outer() {
            pieces.push(Region::new(format!("V1_{}", l.n + 1), o).unwrap());
        }
    }
    println!("nest pieces markov: {}", markov_check(&pieces).unwrap().markov);
    if let GeometryStats::Uniform { floor, .. } = uniform_geometry(&pieces).unwrap() {
        println!("roundness floor of the pieces: {floor:.4}");
    }
    let scales: Vec<f64> = levels.iter().map(|l| l.boundary().diameter() * 1.000001).collect();
    let cov = covers_arbitrary_small_scales(&pieces, &[z(0.0, 0.0)], &scales);
    println!("critical point covered at every level scale: {}", cov.all);
}
