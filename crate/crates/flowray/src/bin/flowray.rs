//! Command-line front end for the flowray pipeline.
//!
//! Subcommands: `phantom` (author a phantom JSON), `forward` (field + phantom
//! -> sinogram), `hness` (type-H audit), `invert` (sinogram or phantom+field
//! -> reconstruction), `approx` (analytic spec + eps list -> stability
//! report), `validate` (oracle suite).  Every run writes its outputs under
//! `--out` together with a `manifest.json` listing content hashes of inputs
//! and outputs.
//!
//! Exit codes: 1 usage error, 2 numerical failure (with stage label),
//! 3 validation failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use sha2::{Digest, Sha256};

use flowray::approx::{
    c_hat_test, stability_report, AnalyticFieldSpec, StabilityConfig,
};
use flowray::complexify::hness_check;
use flowray::error::FlowrayError;
use flowray::field::PolyField;
use flowray::flow::{Chart, Labeling};
use flowray::oracle;
use flowray::reconstruct::{reconstruct_end_to_end, ReconConfig, ScalarGrid};
use flowray::transforms::{
    field_id, hilbert_s, ray_transform, Bump, Phantom, Sinogram, DEFAULT_QUAD_DT,
};

const EXIT_USAGE: i32 = 1;
const EXIT_NUMERICAL: i32 = 2;
const EXIT_VALIDATION: i32 = 3;

#[derive(Parser)]
#[command(
    name = "flowray",
    about = "Ray transforms over integral curves of planar polynomial vector fields",
    version
)]
struct Cli {
    /// Flat key=value config file (# comments); flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker thread cap (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct GridArgs {
    /// Reconstruction grid size n (n x n pixels).
    #[arg(long)]
    n: Option<usize>,
    /// Number of angles (must be a power of two).
    #[arg(long)]
    ntheta: Option<usize>,
    /// Number of transverse s-nodes (rounded up to odd).
    #[arg(long)]
    ns: Option<usize>,
    /// Reconstruction mask radius.
    #[arg(long)]
    mask: Option<f64>,
    /// Curve-quadrature resampling step.
    #[arg(long)]
    quad_dt: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a phantom JSON from bump parameters.
    Phantom {
        /// Bump as cx,cy,amplitude,width (repeatable).
        #[arg(long = "bump", required = true, allow_hyphen_values = true)]
        bumps: Vec<String>,
        /// Support radius of the phantom.
        #[arg(long, default_value_t = 0.8)]
        support: f64,
    },
    /// Compute the forward sinogram of a phantom under a field.
    Forward {
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long)]
        phantom: Option<PathBuf>,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Audit the type-H conditions of a field and write the report JSON.
    Hness {
        #[arg(long)]
        field: Option<PathBuf>,
        /// Argument-principle quadrature nodes.
        #[arg(long, default_value_t = 4096)]
        quad_n: usize,
        /// Number of audit samples on each of three rings.
        #[arg(long, default_value_t = 12)]
        samples: usize,
    },
    /// Reconstruct from a sinogram (or phantom+field end to end).
    Invert {
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long)]
        phantom: Option<PathBuf>,
        /// Precomputed sinogram CSV (with .json sidecar); requires --field.
        #[arg(long)]
        sino: Option<PathBuf>,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Stability experiment for the geometric analytic family.
    Approx {
        /// Geometric ratio beta of the analytic family.
        #[arg(long, default_value_t = 0.5)]
        beta: f64,
        /// Dominance skew of the family (a_pq = beta^{p+q} skew^p).
        #[arg(long, default_value_t = 0.6)]
        skew: f64,
        /// Truncation tolerance (repeatable).
        #[arg(long = "eps")]
        eps: Vec<f64>,
        /// L^q exponent for sinogram distances (repeatable; inf always added).
        #[arg(long = "q")]
        q: Vec<f64>,
        #[arg(long)]
        phantom: Option<PathBuf>,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Run the oracle suite; nonzero exit on any failed invariant.
    Validate,
}

fn main() {
    let code = run();
    std::process::exit(code);
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help/--version with success exits.
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };

    let config = match cli.config.as_deref().map(read_config).transpose() {
        Ok(c) => c.unwrap_or_default(),
        Err(e) => {
            eprintln!("error: bad config file: {e}");
            return EXIT_USAGE;
        }
    };

    let threads = cli
        .threads
        .or_else(|| config_get(&config, "threads"))
        .unwrap_or(0);
    if threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: thread pool: {e}");
            return EXIT_USAGE;
        }
    }

    let out_dir = cli
        .out
        .clone()
        .or_else(|| config.get("out").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("flowray-out"));
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("error: cannot create output directory: {e}");
        return EXIT_USAGE;
    }

    let mut manifest = Manifest::new(&cli.command);
    let started = std::time::Instant::now();
    let result = dispatch(&cli.command, &config, &out_dir, &mut manifest);
    manifest.runtime_s = started.elapsed().as_secs_f64();

    match result {
        Ok(()) => {
            if let Err(e) = manifest.write(&out_dir) {
                eprintln!("error: manifest: {e}");
                return EXIT_NUMERICAL;
            }
            0
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Numerical(e)) => {
            eprintln!("error: numerical failure: {e}");
            EXIT_NUMERICAL
        }
        Err(CliError::Validation(msg)) => {
            eprintln!("error: validation failed: {msg}");
            EXIT_VALIDATION
        }
    }
}

enum CliError {
    Usage(String),
    Numerical(FlowrayError),
    Validation(String),
}

impl From<FlowrayError> for CliError {
    fn from(e: FlowrayError) -> Self {
        CliError::Numerical(e)
    }
}

type CliResult = Result<(), CliError>;

#[derive(serde::Serialize)]
struct Manifest {
    command: String,
    version: String,
    runtime_s: f64,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl Manifest {
    fn new(command: &Command) -> Self {
        let name = match command {
            Command::Phantom { .. } => "phantom",
            Command::Forward { .. } => "forward",
            Command::Hness { .. } => "hness",
            Command::Invert { .. } => "invert",
            Command::Approx { .. } => "approx",
            Command::Validate => "validate",
        };
        Manifest {
            command: name.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            runtime_s: 0.0,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    fn record_input(&mut self, path: &Path) {
        if let Ok(hash) = file_sha256(path) {
            self.inputs.insert(path.display().to_string(), hash);
        }
    }

    fn record_output(&mut self, path: &Path) {
        if let Ok(hash) = file_sha256(path) {
            self.outputs
                .insert(path.file_name().unwrap().to_string_lossy().into(), hash);
        }
        // Sidecar metadata files travel with their primary output.
        let sidecar = path.with_extension("json");
        if sidecar != path && sidecar.exists() {
            if let Ok(hash) = file_sha256(&sidecar) {
                self.outputs
                    .insert(sidecar.file_name().unwrap().to_string_lossy().into(), hash);
            }
        }
    }

    fn write(&self, out_dir: &Path) -> Result<(), FlowrayError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(out_dir.join("manifest.json"), text)?;
        Ok(())
    }
}

fn file_sha256(path: &Path) -> Result<String, std::io::Error> {
    let bytes = std::fs::read(path)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn read_config(path: &Path) -> Result<BTreeMap<String, String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn config_get<T: std::str::FromStr>(config: &BTreeMap<String, String>, key: &str) -> Option<T> {
    config.get(key).and_then(|v| v.parse().ok())
}

/// Grid parameters after merging flags over config entries and defaults.
struct Resolved {
    n: usize,
    n_theta: usize,
    n_s: usize,
    mask: f64,
    quad_dt: f64,
}

fn resolve_grid(grid: &GridArgs, config: &BTreeMap<String, String>) -> Result<Resolved, CliError> {
    let r = Resolved {
        n: grid.n.or_else(|| config_get(config, "n")).unwrap_or(128),
        n_theta: grid
            .ntheta
            .or_else(|| config_get(config, "ntheta"))
            .unwrap_or(256),
        n_s: grid.ns.or_else(|| config_get(config, "ns")).unwrap_or(257),
        mask: grid
            .mask
            .or_else(|| config_get(config, "mask"))
            .unwrap_or(0.95),
        quad_dt: grid
            .quad_dt
            .or_else(|| config_get(config, "quad_dt"))
            .unwrap_or(DEFAULT_QUAD_DT),
    };
    if r.n == 0 || r.n_theta == 0 || r.n_s == 0 || r.mask <= 0.0 || r.quad_dt <= 0.0 {
        return Err(CliError::Usage("grid parameters must be positive".into()));
    }
    if !r.n_theta.is_power_of_two() {
        return Err(CliError::Usage(format!(
            "ntheta must be a power of two, got {}",
            r.n_theta
        )));
    }
    Ok(r)
}

fn load_field(
    path: Option<&Path>,
    config: &BTreeMap<String, String>,
    manifest: &mut Manifest,
) -> Result<PolyField, CliError> {
    let path = path
        .map(PathBuf::from)
        .or_else(|| config.get("field").map(PathBuf::from))
        .ok_or_else(|| CliError::Usage("--field is required".into()))?;
    manifest.record_input(&path);
    PolyField::load(&path).map_err(CliError::Numerical)
}

fn load_phantom(
    path: Option<&Path>,
    config: &BTreeMap<String, String>,
    manifest: &mut Manifest,
) -> Result<Phantom, CliError> {
    let path = path
        .map(PathBuf::from)
        .or_else(|| config.get("phantom").map(PathBuf::from))
        .ok_or_else(|| CliError::Usage("--phantom is required".into()))?;
    manifest.record_input(&path);
    Phantom::load(&path).map_err(CliError::Numerical)
}

fn ring_samples(count: usize) -> Vec<Complex64> {
    let mut out = Vec::new();
    for &r in &[0.3, 0.6, 0.85] {
        for i in 0..count {
            let phi = std::f64::consts::TAU * i as f64 / count as f64;
            out.push(Complex64::from_polar(r, phi));
        }
    }
    out
}

fn dispatch(
    command: &Command,
    config: &BTreeMap<String, String>,
    out_dir: &Path,
    manifest: &mut Manifest,
) -> CliResult {
    match command {
        Command::Phantom { bumps, support } => {
            let mut parsed = Vec::new();
            for spec in bumps {
                let parts: Vec<f64> = spec
                    .split(',')
                    .map(|t| t.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| CliError::Usage(format!("bad --bump '{spec}': {e}")))?;
                if parts.len() != 4 {
                    return Err(CliError::Usage(format!(
                        "--bump needs cx,cy,amplitude,width, got '{spec}'"
                    )));
                }
                if parts[3] <= 0.0 {
                    return Err(CliError::Usage("bump width must be positive".into()));
                }
                parsed.push(Bump {
                    center: Complex64::new(parts[0], parts[1]),
                    amplitude: parts[2],
                    width: parts[3],
                });
            }
            if *support <= 0.0 || *support >= 1.0 {
                return Err(CliError::Usage("support must lie in (0, 1)".into()));
            }
            let phantom = Phantom::new(parsed, *support);
            let path = out_dir.join("phantom.json");
            phantom.save(&path)?;
            manifest.record_output(&path);
            println!("wrote {} (id {})", path.display(), phantom.id());
            Ok(())
        }

        Command::Forward {
            field,
            phantom,
            grid,
        } => {
            let field = load_field(field.as_deref(), config, manifest)?;
            let phantom = load_phantom(phantom.as_deref(), config, manifest)?;
            let r = resolve_grid(grid, config)?;
            let chart = Chart::build(&field, 200, Labeling::Auto)?;
            let sino = ray_transform(&phantom, &field, &chart, r.n_theta, r.n_s, r.quad_dt)?;
            let path = out_dir.join("sinogram.csv");
            sino.save_csv(&path)?;
            manifest.record_output(&path);
            println!(
                "wrote {} ({} angles x {} s-nodes)",
                path.display(),
                sino.n_theta(),
                sino.n_s()
            );
            Ok(())
        }

        Command::Hness {
            field,
            quad_n,
            samples,
        } => {
            let field = load_field(field.as_deref(), config, manifest)?;
            let report = hness_check(&field, &ring_samples(*samples), *quad_n);
            let path = out_dir.join("hness.json");
            std::fs::write(
                &path,
                serde_json::to_string_pretty(&report).map_err(FlowrayError::from)?,
            )
            .map_err(FlowrayError::from)?;
            manifest.record_output(&path);
            // An audit that runs to completion succeeds even when conditions
            // fail; the verdicts live in the report.
            println!("wrote {} (aggregate: {:?})", path.display(), report.aggregate);
            Ok(())
        }

        Command::Invert {
            field,
            phantom,
            sino,
            grid,
        } => {
            let field = load_field(field.as_deref(), config, manifest)?;
            let r = resolve_grid(grid, config)?;
            let (grid_out, report_json) = if let Some(sino_path) = sino {
                manifest.record_input(sino_path);
                let sino = Sinogram::load_csv(sino_path)?;
                let expected = field_id(&field);
                if !sino.meta.field_id.is_empty() && sino.meta.field_id != expected {
                    return Err(CliError::Usage(format!(
                        "sinogram was computed for field {} but --field hashes to {}",
                        sino.meta.field_id, expected
                    )));
                }
                let chart = Chart::build(&field, 200, Labeling::Auto)?;
                let filt = flowray::reconstruct::filter_sinogram(&sino, 8)?;
                let (grid_out, bp) =
                    flowray::reconstruct::backproject(&filt, &chart, &field, r.n, r.mask)?;
                let report = serde_json::json!({
                    "flagged_pixels": bp.flagged_pixels,
                    "max_imag_residual": bp.max_imag_residual,
                });
                (grid_out, report)
            } else {
                let phantom = load_phantom(phantom.as_deref(), config, manifest)?;
                let cfg = ReconConfig {
                    n: r.n,
                    n_theta: r.n_theta,
                    n_s: r.n_s,
                    mask_radius: r.mask,
                    quad_dt: r.quad_dt,
                    ..ReconConfig::default()
                };
                let (grid_out, _, report) = reconstruct_end_to_end(&phantom, &field, &cfg)?;
                (grid_out, serde_json::to_value(&report).map_err(FlowrayError::from)?)
            };
            let csv = out_dir.join("recon.csv");
            grid_out.save_csv(&csv, &format!("field {}", field_id(&field)))?;
            manifest.record_output(&csv);
            let pgm = out_dir.join("recon.pgm");
            grid_out.save_pgm(&pgm)?;
            manifest.record_output(&pgm);
            let rep = out_dir.join("report.json");
            std::fs::write(
                &rep,
                serde_json::to_string_pretty(&report_json).map_err(FlowrayError::from)?,
            )
            .map_err(FlowrayError::from)?;
            manifest.record_output(&rep);
            println!("wrote {} and {}", csv.display(), rep.display());
            Ok(())
        }

        Command::Approx {
            beta,
            skew,
            eps,
            q,
            phantom,
            grid,
        } => {
            if !(0.0..1.0).contains(beta) || !(0.0..=1.0).contains(skew) || *skew == 0.0 {
                return Err(CliError::Usage(
                    "need 0 <= beta < 1 and 0 < skew <= 1".into(),
                ));
            }
            let mut eps = if eps.is_empty() {
                vec![0.1, 0.05, 0.01]
            } else {
                eps.clone()
            };
            if eps.iter().any(|&e| e <= 0.0) {
                return Err(CliError::Usage("--eps values must be positive".into()));
            }
            // Largest to smallest, so monotonicity reads top to bottom.
            eps.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let q_list = if q.is_empty() { vec![2.0] } else { q.clone() };
            let spec = AnalyticFieldSpec::geometric(*beta, *skew);

            let phantom = match phantom {
                Some(p) => {
                    manifest.record_input(p);
                    Phantom::load(p)?
                }
                None => Phantom::new(
                    vec![
                        Bump {
                            center: Complex64::new(0.15, -0.1),
                            amplitude: 1.0,
                            width: 0.22,
                        },
                        Bump {
                            center: Complex64::new(-0.25, 0.2),
                            amplitude: 0.7,
                            width: 0.18,
                        },
                    ],
                    0.7,
                ),
            };
            let mut cfg = StabilityConfig::default();
            if let Some(n) = grid.n.or_else(|| config_get(config, "n")) {
                cfg.n = n;
            }
            if let Some(nt) = grid.ntheta.or_else(|| config_get(config, "ntheta")) {
                if !nt.is_power_of_two() {
                    return Err(CliError::Usage("ntheta must be a power of two".into()));
                }
                cfg.n_theta = nt;
            }
            if let Some(ns) = grid.ns.or_else(|| config_get(config, "ns")) {
                cfg.n_s = ns;
            }

            let decay = c_hat_test(&spec, &ring_samples(6), 40, None)?;
            let report = stability_report(&spec, &phantom, &eps, &q_list, &cfg)?;
            let json = out_dir.join("stability.json");
            report.save_json(&json)?;
            manifest.record_output(&json);
            let csv = out_dir.join("stability.csv");
            report.save_csv(&csv)?;
            manifest.record_output(&csv);
            let decay_path = out_dir.join("c_hat.json");
            std::fs::write(
                &decay_path,
                serde_json::to_string_pretty(&decay).map_err(FlowrayError::from)?,
            )
            .map_err(FlowrayError::from)?;
            manifest.record_output(&decay_path);
            println!(
                "wrote {} (log-log slope {:.3})",
                json.display(),
                report.loglog_slope
            );
            Ok(())
        }

        Command::Validate => run_validate(),
    }
}

/// Oracle suite: fast invariants that must hold on every build.
fn run_validate() -> CliResult {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        println!("[validate] {name}: {}", if ok { "ok" } else { "FAIL" });
        if !ok {
            failures.push(name.to_string());
        }
    };

    // Hilbert transform on the closed-form pair 1/(1+s^2) -> s/(1+s^2).
    {
        let n = 1 << 13;
        let half = 40.0;
        let row: Vec<f64> = (0..n)
            .map(|i| {
                let s = -half + 2.0 * half * i as f64 / (n - 1) as f64;
                1.0 / (1.0 + s * s)
            })
            .collect();
        let h = hilbert_s(&row, 8).map_err(CliError::Numerical)?;
        let mut worst = 0.0f64;
        for (i, &v) in h.iter().enumerate() {
            let s = -half + 2.0 * half * i as f64 / (n - 1) as f64;
            if s.abs() <= 20.0 {
                worst = worst.max((v - s / (1.0 + s * s)).abs());
            }
        }
        check("hilbert closed-form pair", worst < 1e-6);
    }

    // Interior root of the unit field vanishes identically.
    {
        let field = PolyField::constant(Complex64::new(1.0, 0.0)).map_err(CliError::Numerical)?;
        let lam = flowray::complexify::find_lambda_i(&field, Complex64::new(0.3, 0.2))
            .map_err(CliError::Numerical)?;
        check("unit-field interior root at origin", lam.norm() < 1e-12);
    }

    // Classical FBP agrees with the pipeline on the unit field.
    {
        let phantom = Phantom::new(
            vec![Bump {
                center: Complex64::new(0.1, -0.05),
                amplitude: 1.0,
                width: 0.25,
            }],
            0.7,
        );
        let field = PolyField::constant(Complex64::new(1.0, 0.0)).map_err(CliError::Numerical)?;
        let chart = Chart::build(&field, 100, Labeling::Auto).map_err(CliError::Numerical)?;
        let sino = ray_transform(&phantom, &field, &chart, 64, 129, 2e-3)
            .map_err(CliError::Numerical)?;
        let fbp = oracle::classical_fbp(&sino, 48, 0.9);
        let truth = ScalarGrid::from_fn(48, 0.9, |z| phantom.eval(z));
        let rel = fbp.rel_l2_diff(&truth);
        check("classical fbp on unit field", rel < 5e-2);
    }

    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(failures.join(", ")))
    }
}
