//! Superattracting Fibonacci parameters of x^d + c and the ratios of consecutive gaps.
//!
//!     cargo run --release --example hunt_ratios -- 4

use fibrenorm::hunt::{aitken, fibonacci_chain_partial, ratio_table};

fn main() {
    let d: u32 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let n_max: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(12);

    let (records, stop) = fibonacci_chain_partial(d, n_max);
    println!("{:>3} {:>6} {:>24} {:>10} {:>12}", "n", "S_n", "c_n", "residual", "ratio");
    for (i, r) in records.iter().enumerate() {
        let ratio = if i >= 2 {
            format!("{:.6}", (records[i - 2].c - records[i - 1].c) / (records[i - 1].c - r.c))
        } else {
            String::new()
        };
        println!("{:>3} {:>6} {:>24.18} {:>10.1e} {:>12}", r.n, r.period, r.c, r.residual, ratio);
    }
    if let Some(e) = stop {
        println!("stopped: {e}");
    }

    match ratio_table(&records) {
        Ok(rep) => {
            println!("last ratio        {:.6}", rep.gamma_estimate);
            println!("Aitken of ratios  {:.6}", rep.extrapolated_gamma);
            println!("c_infinity        {:.18}", rep.c_infinity_estimate);
            // second pass of Aitken on the parameters themselves
            let cs: Vec<f64> = records.iter().map(|r| r.c).collect();
            if let Some(c) = aitken(&cs[..cs.len().saturating_sub(1)]) {
                println!("c_infinity (one level shallower)  {c:.18}");
            }
        }
        Err(e) => println!("no ratio table: {e}"),
    }
}
