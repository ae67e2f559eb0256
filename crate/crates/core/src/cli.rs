//! Command-line front end: configuration, commands and the files they write.

use crate::covering::{
    bounded_geometry, covers_arbitrary_small_scales, markov_check, markov_subfamily, uniform_geometry, CenteredRegion,
    GeometryMode, GeometryStats, MarkovFamily, Region,
};
use crate::dynamics::fib;
use crate::error::{Error, Result};
use crate::hunt::{default_hunt_depth, fibonacci_chain_partial, ratio_table, solve_cycle, CyclePlan, HuntRecord, RatioReport};
use crate::io::{fmt17, read_json, write_csv, write_json, Image};
use crate::operator::{find_cycle, CycleSolution, DerivativeMode, Geometry, NewtonConfig};
use crate::puzzle::{default_gamma0, nest_julia, principal_nest, shape_convergence_report, ClosedCurve, NestConfig, NestLevel, ShapeRow};
use crate::spectrum::{cycle_spectrum, hyperbolicity_verdict, SpectrumReport, Verdict, DEFAULT_DRIFT_TOL, DEFAULT_MARGIN};
use clap::{Args, Parser, Subcommand};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const OUTPUT_DIR_ENV: &str = "FIBRENORM_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiskConfig {
    pub c0: f64,
    pub r0: f64,
    pub x1: f64,
    pub r1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub newton: f64,
    pub residual: f64,
    pub margin: f64,
    pub drift: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { newton: 1e-10, residual: 1e-10, margin: DEFAULT_MARGIN, drift: DEFAULT_DRIFT_TOL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Depths {
    /// Defaults by degree when absent.
    pub hunt_n_max: Option<usize>,
    pub nest: usize,
    pub bootstrap: Vec<usize>,
}

impl Default for Depths {
    fn default() -> Self {
        Depths { hunt_n_max: None, nest: 8, bootstrap: CyclePlan::default().depths }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub degree: u32,
    pub truncation_order: usize,
    pub disks: Option<DiskConfig>,
    pub tolerances: Tolerances,
    pub depths: Depths,
    pub output_dir: Option<PathBuf>,
    pub seed_checkpoint: Option<PathBuf>,
    /// Truncation-order increase for the drift measurement.
    pub refine: usize,
    pub derivative: DerivativeMode,
    pub gamma0_factor: f64,
    pub curve_vertices: usize,
    /// Rendered image width in pixels.
    pub resolution: usize,
    pub max_iter: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let nest = NestConfig::default();
        RunConfig {
            degree: 4,
            truncation_order: 60,
            disks: None,
            tolerances: Tolerances::default(),
            depths: Depths::default(),
            output_dir: None,
            seed_checkpoint: None,
            refine: 10,
            derivative: DerivativeMode::Analytic,
            gamma0_factor: nest.gamma0_factor,
            curve_vertices: nest.vertices,
            resolution: 400,
            max_iter: 300,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree < 2 || self.degree % 2 != 0 {
            return Err(Error::Usage(format!("degree must be even and at least 2, got {}", self.degree)));
        }
        let t = &self.tolerances;
        if [t.newton, t.residual, t.margin, t.drift].iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Usage("tolerances must be positive".into()));
        }
        if self.truncation_order < 2 * self.degree as usize {
            return Err(Error::Usage(format!("truncation order {} is too small", self.truncation_order)));
        }
        if self.depths.bootstrap.is_empty() {
            return Err(Error::Usage("no bootstrap depths".into()));
        }
        if !(self.gamma0_factor > 1.0) || self.curve_vertices < 16 || self.resolution < 16 {
            return Err(Error::Usage("gamma0_factor > 1, curve_vertices >= 16 and resolution >= 16 required".into()));
        }
        Ok(())
    }

    pub fn hunt_n_max(&self) -> usize {
        self.depths.hunt_n_max.unwrap_or_else(|| default_hunt_depth(self.degree))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    fn newton(&self) -> NewtonConfig {
        NewtonConfig { tol: self.tolerances.newton, mode: self.derivative, ..NewtonConfig::default() }
    }

    fn nest(&self) -> NestConfig {
        NestConfig { depth: self.depths.nest, vertices: self.curve_vertices, gamma0_factor: self.gamma0_factor }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.output_dir().join(name)
    }
}

#[derive(Debug, Parser)]
#[command(name = "fibrenorm", version, about = "Fibonacci renormalization: parameter hunts, the cycle, its spectrum and puzzle geometry")]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (default: $FIBRENORM_OUTPUT_DIR, else the current directory).
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub degree: Option<u32>,
    #[arg(long, global = true)]
    pub order: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Superattracting Fibonacci parameters and their gap ratios.
    Hunt {
        #[arg(long)]
        n_max: Option<usize>,
    },
    /// Solve for the period-two cycle of the renormalization operator.
    Cycle(CycleArgs),
    /// Spectrum of the linearization at the cycle and the hyperbolicity verdict.
    Spectrum {
        #[arg(long)]
        refine: Option<usize>,
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Principal nest of the cycle map and its shape statistics.
    Nest {
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Images of the filled Julia set with the rescaled nest overlaid.
    Render {
        /// Image width in pixels.
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Covering-family statistics for a family file.
    Audit {
        #[arg(long)]
        family: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct CycleArgs {
    #[arg(long)]
    pub seed_checkpoint: Option<PathBuf>,
    /// Accumulation parameter to bootstrap from instead of hunting it.
    #[arg(long, allow_hyphen_values = true)]
    pub parameter: Option<f64>,
    #[arg(long, value_enum)]
    pub derivative: Option<DerivativeArg>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum DerivativeArg {
    Analytic,
    FiniteDiff,
}

/// Configuration with precedence flags > file > environment > defaults.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_toml(&std::fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    if cfg.output_dir.is_none() {
        cfg.output_dir = std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from);
    }
    if let Some(d) = &cli.output_dir {
        cfg.output_dir = Some(d.clone());
    }
    if let Some(d) = cli.degree {
        cfg.degree = d;
    }
    if let Some(n) = cli.order {
        cfg.truncation_order = n;
    }
    match &cli.command {
        Command::Hunt { n_max } => {
            if n_max.is_some() {
                cfg.depths.hunt_n_max = *n_max;
            }
        }
        Command::Cycle(a) => {
            if a.seed_checkpoint.is_some() {
                cfg.seed_checkpoint = a.seed_checkpoint.clone();
            }
            if let Some(m) = a.derivative {
                cfg.derivative = match m {
                    DerivativeArg::Analytic => DerivativeMode::Analytic,
                    DerivativeArg::FiniteDiff => DerivativeMode::FiniteDiff,
                };
            }
        }
        Command::Spectrum { refine, margin, .. } => {
            cfg.refine = refine.unwrap_or(cfg.refine);
            cfg.tolerances.margin = margin.unwrap_or(cfg.tolerances.margin);
        }
        Command::Nest { depth, .. } => cfg.depths.nest = depth.unwrap_or(cfg.depths.nest),
        Command::Render { resolution, depth, .. } => {
            cfg.resolution = resolution.unwrap_or(cfg.resolution);
            cfg.depths.nest = depth.unwrap_or(cfg.depths.nest);
        }
        Command::Audit { .. } => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleCheckpoint {
    pub degree: u32,
    pub parameter: f64,
    pub bootstrap_depth: usize,
    pub geometry: Geometry,
    pub solution: CycleSolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumFile {
    pub degree: u32,
    pub report: SpectrumReport,
    pub verdict: Option<Verdict>,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyEntry {
    pub region: Region,
    #[serde(default, with = "option_pair")]
    pub center: Option<C64>,
}

/// Regions with optional centers, plus points the family should cover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyFile {
    pub entries: Vec<FamilyEntry>,
    #[serde(default, with = "crate::io::complex_vec")]
    pub targets: Vec<C64>,
    #[serde(default)]
    pub scales: Vec<f64>,
}

mod option_pair {
    use num_complex::Complex64 as C64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(z: &Option<C64>, s: S) -> Result<S::Ok, S::Error> {
        z.map(|z| [z.re, z.im]).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<C64>, D::Error> {
        Ok(Option::<[f64; 2]>::deserialize(d)?.map(|[re, im]| C64::new(re, im)))
    }
}

fn ensure_dir(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(cfg.output_dir())?;
    Ok(())
}

fn hunt_rows(records: &[HuntRecord]) -> Result<Vec<Vec<String>>> {
    let mut rows = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let gap = if i > 0 { fmt17(records[i - 1].c - r.c) } else { String::new() };
        let ratio = if i > 1 { fmt17((records[i - 2].c - records[i - 1].c) / (records[i - 1].c - r.c)) } else { String::new() };
        let expected: Result<Vec<usize>> = (0..=r.n).map(|k| fib(k).map(|s| s as usize)).collect();
        let ok = r.signature.times == expected?;
        rows.push(vec![r.n.to_string(), r.period.to_string(), fmt17(r.c), gap, ratio, ok.to_string()]);
    }
    Ok(rows)
}

pub fn cmd_hunt(cfg: &RunConfig, out: &mut dyn std::io::Write) -> Result<(Vec<HuntRecord>, RatioReport)> {
    ensure_dir(cfg)?;
    let d = cfg.degree;
    let (records, err) = fibonacci_chain_partial(d, cfg.hunt_n_max());
    write_csv(&cfg.path(&format!("hunt_d{d}.csv")), &["n", "S_n", "c_n", "gap", "ratio", "signature_ok"], &hunt_rows(&records)?)?;
    if let Some(e) = err {
        writeln!(out, "hunt stopped after {} records", records.len())?;
        return Err(e);
    }
    let report = ratio_table(&records)?;
    write_json(&cfg.path(&format!("ratio_d{d}.json")), &report)?;
    writeln!(out, "d={d} records={} gamma_estimate={} extrapolated_gamma={} c_infinity={}", records.len(), fmt17(report.gamma_estimate), fmt17(report.extrapolated_gamma), fmt17(report.c_infinity_estimate))?;
    Ok((records, report))
}

fn bootstrap_parameter(cfg: &RunConfig) -> Result<f64> {
    let ratio_path = cfg.path(&format!("ratio_d{}.json", cfg.degree));
    if ratio_path.exists() {
        return Ok(read_json::<RatioReport>(&ratio_path)?.c_infinity_estimate);
    }
    let records = crate::hunt::fibonacci_bracket_chain(cfg.degree, cfg.hunt_n_max())?;
    Ok(ratio_table(&records)?.c_infinity_estimate)
}

pub fn cmd_cycle(cfg: &RunConfig, parameter: Option<f64>, out: &mut dyn std::io::Write) -> Result<CycleCheckpoint> {
    ensure_dir(cfg)?;
    let d = cfg.degree;
    if d == 2 {
        writeln!(out, "EXPERIMENTAL: degree 2 lies outside the hypotheses of the hyperbolicity result")?;
    }
    let newton = cfg.newton();
    let result = match &cfg.seed_checkpoint {
        Some(p) => {
            let seed: CycleCheckpoint = read_json(p)?;
            if seed.degree != d {
                return Err(Error::Usage(format!("checkpoint is for degree {}, not {d}", seed.degree)));
            }
            let map = if seed.solution.map.order() == cfg.truncation_order { seed.solution.map.clone() } else { seed.solution.map.refit(cfg.truncation_order)? };
            find_cycle(&map, seed.solution.beta, &newton)
                .map(|solution| CycleCheckpoint { solution, ..seed })
        }
        None => {
            let c = match parameter {
                Some(c) => c,
                None => bootstrap_parameter(cfg)?,
            };
            let geometry = cfg.disks.map(|g| Geometry::new(g.c0, g.r0, g.x1, g.r1)).transpose()?;
            let plan = CyclePlan { depths: cfg.depths.bootstrap.clone(), order: cfg.truncation_order, geometry, newton };
            solve_cycle(d, c, &plan).map(|run| CycleCheckpoint {
                degree: d,
                parameter: c,
                bootstrap_depth: run.depth,
                geometry: run.geometry,
                solution: run.solution,
            })
        }
    };
    let ck = match result {
        Ok(ck) => ck,
        Err(Error::NonConvergence { message, trace }) => {
            let rows: Vec<Vec<String>> = trace.iter().enumerate().map(|(k, r)| vec![k.to_string(), fmt17(*r)]).collect();
            write_csv(&cfg.path(&format!("cycle_d{d}_trace.csv")), &["iteration", "residual"], &rows)?;
            return Err(Error::NonConvergence { message, trace });
        }
        Err(e) => return Err(e),
    };
    if !(ck.solution.residual < cfg.tolerances.residual) {
        return Err(Error::NonConvergence { message: format!("residual {:.3e} above tolerance", ck.solution.residual), trace: ck.solution.residual_trace.clone() });
    }
    write_json(&cfg.path(&format!("cycle_d{d}.json")), &ck)?;
    writeln!(out, "beta={} residual={:.3e} newton_iterations={}", fmt17(ck.solution.beta), ck.solution.residual, ck.solution.newton_iters)?;
    Ok(ck)
}

fn load_checkpoint(cfg: &RunConfig, explicit: Option<&Path>) -> Result<CycleCheckpoint> {
    let path = explicit.map(Path::to_path_buf).unwrap_or_else(|| cfg.path(&format!("cycle_d{}.json", cfg.degree)));
    let ck: CycleCheckpoint = read_json(&path)?;
    ck.solution.map.validate().map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Ok(ck)
}

pub fn cmd_spectrum(cfg: &RunConfig, checkpoint: Option<&Path>, out: &mut dyn std::io::Write) -> Result<SpectrumFile> {
    ensure_dir(cfg)?;
    let ck = load_checkpoint(cfg, checkpoint)?;
    let d = cfg.degree;
    let (report, _) = cycle_spectrum(&ck.solution, cfg.tolerances.margin, cfg.refine, &cfg.newton())?;
    let verdict = hyperbolicity_verdict(&report, cfg.tolerances.drift);
    let file = SpectrumFile { degree: d, report: report.clone(), verdict: verdict.as_ref().ok().copied(), beta: ck.solution.beta };
    write_json(&cfg.path(&format!("spectrum_d{d}.json")), &file)?;
    let v = verdict?;
    let tag = if v.hyperbolic { "HYPERBOLIC" } else { "NOT-HYPERBOLIC" };
    writeln!(out, "{tag} unstable={} neutral={} gamma={} drift={:.3e}", report.unstable_count, report.neutral_count, fmt17(v.gamma), report.drift)?;
    let ratio_path = cfg.path(&format!("ratio_d{d}.json"));
    if ratio_path.exists() {
        let r: RatioReport = read_json(&ratio_path)?;
        let rel = (r.extrapolated_gamma - v.gamma).abs() / v.gamma;
        writeln!(out, "CROSSCHECK hunt_gamma={} spectrum_gamma={} relative_difference={:.3e}", fmt17(r.extrapolated_gamma), fmt17(v.gamma), rel)?;
    }
    Ok(file)
}

pub struct NestRun {
    pub levels: Vec<NestLevel>,
    pub rows: Vec<ShapeRow>,
    pub julia: crate::puzzle::JuliaGrid,
}

/// Nest, filled Julia set and shape table for a checkpoint.
pub fn nest_run(cfg: &RunConfig, ck: &CycleCheckpoint) -> Result<NestRun> {
    let nest = cfg.nest();
    let sol = &ck.solution;
    let gamma0 = default_gamma0(sol, &nest)?;
    let levels = principal_nest(sol, &gamma0, &nest)?;
    let domain = &levels.get(1).ok_or_else(|| Error::Usage("nest depth must be at least 1".into()))?.rescaled_boundary;
    let (lo, hi) = domain.bounding_box();
    // Grid points at both window edges: `resolution` pixels across the wider side.
    let pixel = (hi.re - lo.re).max(hi.im - lo.im) * 1.02 / (cfg.resolution.max(2) - 1) as f64;
    let julia = nest_julia(sol, domain, pixel, cfg.max_iter)?;
    let rows = shape_convergence_report(sol, &levels, &julia, 65)?;
    Ok(NestRun { levels, rows, julia })
}

fn nest_family(levels: &[NestLevel]) -> Result<FamilyFile> {
    let mut entries = Vec::new();
    for l in levels {
        entries.push(FamilyEntry { region: Region::new(format!("V0_{}", l.n), l.boundary())?, center: Some(C64::new(0.0, 0.0)) });
        if let Some(o) = l.boundary_outer() {
            entries.push(FamilyEntry { region: Region::new(format!("V1_{}", l.n + 1), o)?, center: None });
        }
    }
    let scales = levels.iter().map(|l| l.boundary().diameter() * (1.0 + 1e-9)).collect();
    Ok(FamilyFile { entries, targets: vec![C64::new(0.0, 0.0)], scales })
}

pub fn cmd_nest(cfg: &RunConfig, checkpoint: Option<&Path>, out: &mut dyn std::io::Write) -> Result<NestRun> {
    ensure_dir(cfg)?;
    let ck = load_checkpoint(cfg, checkpoint)?;
    let run = nest_run(cfg, &ck)?;
    let d = cfg.degree;
    let rows: Vec<Vec<String>> = run
        .rows
        .iter()
        .zip(&run.levels)
        .map(|(r, l)| {
            vec![
                r.n.to_string(),
                fmt17(l.tau_n),
                fmt17(r.dist_h),
                fmt17(r.roundness),
                r.eq1_distance.map(fmt17).unwrap_or_default(),
                r.eq1_distance.is_some().to_string(),
            ]
        })
        .collect();
    write_csv(&cfg.path(&format!("nest_d{d}.csv")), &["n", "tau_n", "dist_h", "roundness", "eq1_distance", "eq1_available"], &rows)?;
    write_json(&cfg.path(&format!("nest_pieces_d{d}.json")), &nest_family(&run.levels)?)?;
    for r in &run.rows {
        writeln!(out, "n={} dist_h={:.4e} roundness={:.4} eq1={}", r.n, r.dist_h, r.roundness, r.eq1_distance.map_or("-".into(), |x| format!("{x:.4e}")))?;
    }
    Ok(run)
}

fn level_color(n: usize) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 6] = [[220, 40, 40], [240, 140, 20], [200, 180, 0], [40, 160, 60], [30, 110, 220], [140, 60, 200]];
    PALETTE[n % PALETTE.len()]
}

fn draw_curve(img: &mut Image, grid: &crate::puzzle::JuliaGrid, curve: &ClosedCurve, rgb: [u8; 3]) {
    let px = |z: C64| ((z.re - grid.window.re_min) / grid.resolution, (grid.window.im_max - z.im) / grid.resolution);
    for (a, b) in curve.edges() {
        let (pa, pb) = (px(a), px(b));
        let steps = ((pb.0 - pa.0).abs().max((pb.1 - pa.1).abs()).ceil() as usize).max(1);
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            let (x, y) = (pa.0 + (pb.0 - pa.0) * t, pa.1 + (pb.1 - pa.1) * t);
            if x >= 0.0 && y >= 0.0 {
                img.set(x.round() as usize, y.round() as usize, rgb);
            }
        }
    }
}

pub fn cmd_render(cfg: &RunConfig, checkpoint: Option<&Path>, out: &mut dyn std::io::Write) -> Result<(Image, Image)> {
    ensure_dir(cfg)?;
    let ck = load_checkpoint(cfg, checkpoint)?;
    let run = nest_run(cfg, &ck)?;
    let g = &run.julia;
    let mut julia = Image::new(g.nx, g.ny, [255, 255, 255]);
    for j in 0..g.ny {
        for i in 0..g.nx {
            if g.is_inside(i, j) {
                julia.set(i, j, [0, 0, 0]);
            }
        }
    }
    let mut overlay = julia.clone();
    for l in &run.levels {
        draw_curve(&mut overlay, g, &l.rescaled_boundary, level_color(l.n));
    }
    let d = cfg.degree;
    julia.write_ppm(&cfg.path(&format!("julia_d{d}.ppm")))?;
    overlay.write_ppm(&cfg.path(&format!("nest_d{d}.ppm")))?;
    let inside = g.inside.iter().filter(|&&b| b).count();
    writeln!(out, "wrote {}x{} images, {inside} interior pixels", g.nx, g.ny)?;
    Ok((julia, overlay))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub regions: usize,
    pub markov: bool,
    pub violation: Option<(String, String)>,
    pub uniform_floor: f64,
    pub flagged: usize,
    pub pointwise_floor: Option<f64>,
    pub selected: Option<usize>,
    pub covers_all_scales: Option<bool>,
}

pub fn cmd_audit(cfg: &RunConfig, family: &Path, out: &mut dyn std::io::Write) -> Result<AuditSummary> {
    ensure_dir(cfg)?;
    let file: FamilyFile = read_json(family)?;
    let regions: Vec<Region> = file.entries.iter().map(|e| Region::new(e.region.id.clone(), e.region.boundary.clone())).collect::<Result<_>>()?;
    let verdict = markov_check(&regions)?;
    let GeometryStats::Uniform { floor, flagged, .. } = uniform_geometry(&regions)? else { unreachable!() };
    let centered: Vec<CenteredRegion> = file
        .entries
        .iter()
        .zip(&regions)
        .filter_map(|(e, r)| e.center.map(|c| CenteredRegion::new(r.clone(), c)))
        .collect::<Result<_>>()?;
    let pointwise_floor = if centered.is_empty() {
        None
    } else {
        match bounded_geometry(&centered, &GeometryMode::Pointwise)? {
            GeometryStats::Pointwise { floor, .. } => Some(floor),
            _ => None,
        }
    };
    let (selected, covers) = if verdict.markov && !file.targets.is_empty() {
        let fam = MarkovFamily::new(regions.clone())?;
        let sub = markov_subfamily(&fam, &file.targets)?;
        let covers = (!file.scales.is_empty()).then(|| covers_arbitrary_small_scales(&regions, &file.targets, &file.scales).all);
        (Some(sub.len()), covers)
    } else {
        (None, None)
    };
    let summary = AuditSummary {
        regions: regions.len(),
        markov: verdict.markov,
        violation: verdict.violation.map(|(i, j)| (regions[i].id.clone(), regions[j].id.clone())),
        uniform_floor: floor,
        flagged: flagged.len(),
        pointwise_floor,
        selected,
        covers_all_scales: covers,
    };
    let opt = |x: Option<String>| x.unwrap_or_default();
    let rows = vec![
        vec!["regions".into(), summary.regions.to_string()],
        vec!["markov".into(), summary.markov.to_string()],
        vec!["violation".into(), opt(summary.violation.as_ref().map(|(a, b)| format!("{a}|{b}")))],
        vec!["uniform_floor".into(), fmt17(summary.uniform_floor)],
        vec!["flagged".into(), summary.flagged.to_string()],
        vec!["pointwise_floor".into(), opt(summary.pointwise_floor.map(fmt17))],
        vec!["selected".into(), opt(summary.selected.map(|s| s.to_string()))],
        vec!["covers_all_scales".into(), opt(summary.covers_all_scales.map(|b| b.to_string()))],
    ];
    let stem = family.file_stem().and_then(|s| s.to_str()).unwrap_or("family");
    write_csv(&cfg.path(&format!("audit_{stem}.csv")), &["statistic", "value"], &rows)?;
    writeln!(out, "markov_check={} regions={} uniform_floor={:.4}", summary.markov, summary.regions, summary.uniform_floor)?;
    Ok(summary)
}

/// Parse, run, and map the outcome to an exit code.
pub fn run<I, T>(args: I, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{e}");
                return 1;
            }
            let _ = write!(out, "{e}");
            return 0;
        }
    };
    let result = resolve_config(&cli).and_then(|cfg| match &cli.command {
        Command::Hunt { .. } => cmd_hunt(&cfg, out).map(|_| ()),
        Command::Cycle(a) => cmd_cycle(&cfg, a.parameter, out).map(|_| ()),
        Command::Spectrum { checkpoint, .. } => cmd_spectrum(&cfg, checkpoint.as_deref(), out).map(|_| ()),
        Command::Nest { checkpoint, .. } => cmd_nest(&cfg, checkpoint.as_deref(), out).map(|_| ()),
        Command::Render { checkpoint, .. } => cmd_render(&cfg, checkpoint.as_deref(), out).map(|_| ()),
        Command::Audit { family } => cmd_audit(&cfg, family, out).map(|_| ()),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
