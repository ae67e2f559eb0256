//! Render the filled Julia set of the cycle map with the rescaled nest on top, as P6 images.
//!
//!     cargo run --release --example render_julia -- 4 600 /tmp

use fibrenorm::cli::{cmd_cycle, cmd_render, RunConfig};
use std::path::PathBuf;

fn main() {
    let mut args = std::env::args().skip(1);
    let degree: u32 = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);
    let resolution: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(600);
    let dir = args.next().map(PathBuf::from).unwrap_or_else(std::env::temp_dir);

    let cfg = RunConfig { degree, resolution, output_dir: Some(dir.clone()), ..RunConfig::default() };
    let mut out = std::io::stdout();
    cmd_cycle(&cfg, None, &mut out).expect("cycle");
    cmd_render(&cfg, None, &mut out).expect("render");
    println!("{}", dir.join(format!("julia_d{degree}.ppm")).display());
    println!("{}", dir.join(format!("nest_d{degree}.ppm")).display());
}
