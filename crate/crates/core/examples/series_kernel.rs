//! The truncated-series kernel on its own: fit, evaluate, compose, rescale, differentiate.

use fibrenorm::series::{compose, fit_function, rescale, Disk, Parity};
use fibrenorm::C64;

fn main() {
    let disk = Disk::real(0.0, 1.0).unwrap();
    let exp = fit_function(disk, 40, Parity::All, Some(1e-9), |z| Ok(z.exp())).unwrap();
    let z = C64::new(0.3, -0.4);
    println!("exp fit error at {z}: {:.2e}", (exp.eval(z).unwrap() - z.exp()).norm());
    println!("tail ratio {:.2e}", exp.tail_ratio());

    let d = exp.derivative();
    println!("derivative error: {:.2e}", (d.eval(z).unwrap() - z.exp()).norm());

    // z/2 composed into exp: exp(z/2) on the unit disk
    let half = fibrenorm::series::TruncatedSeries::from_real(disk, &[0.0, 0.5]).unwrap();
    let big = fit_function(Disk::real(0.0, 2.0).unwrap(), 40, Parity::All, None, |z| Ok(z.exp())).unwrap();
    let c = compose(&big, &half, 0.05).unwrap();
    println!("compose error: {:.2e}", (c.eval(z).unwrap() - (z / 2.0).exp()).norm());

    // (1/b) exp(b z) on the disk of radius 1/b
    let b = C64::new(0.5, 0.0);
    let r = rescale(&exp, b).unwrap();
    let w = C64::new(1.1, 0.2);
    println!("rescale error: {:.2e}", (r.eval(w).unwrap() - (b * w).exp() / b).norm());

    // even series: cos is a function of z^2
    let cos = fit_function(disk, 30, Parity::Even, None, |z| Ok(z.cos())).unwrap();
    println!("odd coefficients of cos: {:?}", cos.coeffs.iter().skip(1).step_by(2).take(3).map(|c| c.norm()).collect::<Vec<_>>());
}
