mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use localkernel::data::{
    apply_torus_diffeomorphism, generate_ellipse, generate_embedded_torus_r3, generate_flat_torus_r4,
    sample_embedded_torus_r3, sample_flat_torus_r4, PointCloud,
};
use localkernel::eigen::EigenOptions;
use localkernel::experiments::{self, Report, Settings};
use localkernel::geometry::{conformal_generator, PipelineOptions};
use localkernel::graph::{diffusion_maps_generator, epsilon_heuristic, Sparsity, DEFAULT_KNN};
use localkernel::kernel::{LocalKernelSpec, RadialShape};
use localkernel::spectral::decompose;
use localkernel::{fmt_num, Error};
use serde_json::json;

use config::RunConfig;

pub const SCHEMA_VERSION: &str = "1.0";

#[derive(Parser, Debug)]
#[command(name = "localkernel", version, about = "Local-kernel generators, Laplacians and geometric embeddings")]
struct Cli {
    /// JSON file whose keys mirror the flag names; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic point cloud as CSV.
    Generate {
        #[arg(value_enum)]
        manifold: Manifold,
        /// Points per angle on a regular grid.
        #[arg(long, conflicts_with = "count")]
        grid: Option<usize>,
        /// Number of points (random for tori, equally spaced for the ellipse).
        #[arg(long)]
        count: Option<usize>,
        /// Ellipse semi-minor axis.
        #[arg(long, default_value_t = 1.0 / 6.0)]
        minor: f64,
        /// Major radius of tori in R^3.
        #[arg(long, default_value_t = 2.0)]
        major: f64,
        #[command(flatten)]
        run: RunConfig,
    },
    /// Build a generator from a CSV cloud and write its leading spectrum.
    Laplacian {
        input: PathBuf,
        /// Also write the operator as a coordinate list.
        #[arg(long)]
        operator: bool,
        #[command(flatten)]
        run: RunConfig,
    },
    /// Run a reproduction experiment and write panel data plus a summary.
    Repro {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(experiments::EXPERIMENTS))]
        experiment: String,
        #[command(flatten)]
        run: RunConfig,
    },
}

#[derive(Copy, Clone, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Manifold {
    FlatTorusR4,
    TorusR3,
    Ellipse,
    DiffeoTorus,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
    Threshold,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Threshold | Failure::Usage(_) => 1,
            Failure::Core(Error::Io(_) | Error::Parse { .. }) => 2,
            Failure::Core(e) if e.is_numerical() => 3,
            Failure::Core(_) => 1,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("error: {m}"),
                Failure::Core(e) => eprintln!("error: {e}"),
                Failure::Threshold => eprintln!("one or more acceptance thresholds failed"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn resolve(file: Option<&Path>, flags: &RunConfig) -> Result<RunConfig, Failure> {
    let base = match file {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = base.merged(flags);
    cfg.validate().map_err(Failure::Usage)?;
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let file = cli.config.as_deref();
    match cli.command {
        Command::Generate { manifold, grid, count, minor, major, run } => {
            let cfg = resolve(file, &run)?;
            generate(manifold, grid, count, minor, major, &cfg)
        }
        Command::Laplacian { input, operator, run } => laplacian(&input, operator, &resolve(file, &run)?),
        Command::Repro { experiment, run } => repro(&experiment, &resolve(file, &run)?),
    }
}

fn generate(m: Manifold, grid: Option<usize>, count: Option<usize>, minor: f64, major: f64, cfg: &RunConfig) -> Result<(), Failure> {
    let out = cfg.out.as_ref().ok_or_else(|| Failure::Usage("--out <file> is required".into()))?;
    let seed = cfg.seed.unwrap_or(0);
    let need_grid = || grid.ok_or_else(|| Failure::Usage("--grid or --count is required".into()));
    let cloud = match (m, count) {
        (Manifold::FlatTorusR4, Some(n)) => sample_flat_torus_r4(n, seed)?,
        (Manifold::FlatTorusR4, None) => generate_flat_torus_r4(need_grid()?)?,
        (Manifold::TorusR3, Some(n)) => sample_embedded_torus_r3(n, major, seed)?,
        (Manifold::TorusR3, None) => generate_embedded_torus_r3(need_grid()?, major)?,
        (Manifold::DiffeoTorus, Some(n)) => apply_torus_diffeomorphism(&sample_embedded_torus_r3(n, major, seed)?)?,
        (Manifold::DiffeoTorus, None) => apply_torus_diffeomorphism(&generate_embedded_torus_r3(need_grid()?, major)?)?,
        (Manifold::Ellipse, n) => {
            let n = n.ok_or_else(|| Failure::Usage("--count is required for the ellipse".into()))?;
            generate_ellipse(n, minor)?
        }
    };
    cloud.save_csv(out)?;
    println!("N={} n={} d={}", cloud.len(), cloud.dim(), cloud.intrinsic_dim());
    Ok(())
}

fn default_sparsity(cloud: &PointCloud, cfg: &RunConfig) -> Sparsity {
    cfg.sparsity().unwrap_or(if cloud.len() > DEFAULT_KNN + 1 { Sparsity::Knn(DEFAULT_KNN) } else { Sparsity::Dense })
}

fn sparsity_json(s: Sparsity) -> serde_json::Value {
    match s {
        Sparsity::Dense => json!("dense"),
        Sparsity::Knn(k) => json!(k),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<(), Failure> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, v).map_err(|e| Failure::Core(Error::Io(e.into())))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn laplacian(input: &Path, write_operator: bool, cfg: &RunConfig) -> Result<(), Failure> {
    let cloud = PointCloud::load_csv(input)?;
    let sparsity = default_sparsity(&cloud, cfg);
    let eps = match cfg.epsilon.and_then(|e| e.value()) {
        Some(e) => e,
        None => {
            let e = epsilon_heuristic(&cloud)?;
            log::info!("epsilon = {e}");
            e
        }
    };
    let alpha = cfg.alpha.unwrap_or(1.0);
    let eigs = cfg.eigs.unwrap_or(5);
    let eigen = EigenOptions { seed: cfg.seed.unwrap_or(0), ..Default::default() };
    let g = match cfg.dim {
        Some(d) => conformal_generator(&cloud, d, &PipelineOptions { sparsity, epsilon: Some(eps), eigen: eigen.clone() })?,
        None => diffusion_maps_generator(&cloud, &LocalKernelSpec::radial(RadialShape::diffusion(), eps)?, alpha, sparsity)?,
    };
    let spectrum = decompose(&g, eigs, &eigen)?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let mut w = create(&out.join("eigenvalues.csv"))?;
    writeln!(w, "index,lambda,minus_lambda")?;
    for (i, &l) in spectrum.eigenvalues.iter().enumerate() {
        writeln!(w, "{i},{},{}", fmt_num(l), fmt_num(-l))?;
    }
    w.flush()?;
    spectrum.write_csv(create(&out.join("spectrum.csv"))?)?;
    if write_operator {
        g.write_coo(create(&out.join("operator.coo"))?)?;
    }
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "laplacian",
        "input": input,
        "config": cfg,
        "resolved": {
            "epsilon": eps,
            "alpha": if cfg.dim.is_some() { serde_json::Value::Null } else { json!(alpha) },
            "knn": sparsity_json(sparsity),
            "eigs": eigs,
            "generator": g.kind.name(),
        },
        "points": cloud.len(),
        "eigenvalues": spectrum.eigenvalues,
    });
    write_json(&out.join("summary.json"), &summary)?;
    for l in &spectrum.eigenvalues {
        println!("{}", fmt_num(*l));
    }
    Ok(())
}

fn write_panels(dir: &Path, rep: &Report) -> Result<Vec<String>, Failure> {
    let mut files = Vec::new();
    for p in &rep.panels {
        let name = format!("{}_{}.csv", rep.id, p.name);
        let mut w = create(&dir.join(&name))?;
        writeln!(w, "{}", p.columns.join(","))?;
        for row in &p.rows {
            writeln!(w, "{}", row.iter().map(|&v| fmt_num(v)).collect::<Vec<_>>().join(","))?;
        }
        w.flush()?;
        files.push(name);
    }
    Ok(files)
}

fn repro(experiment: &str, cfg: &RunConfig) -> Result<(), Failure> {
    let settings = Settings {
        scale: cfg.scale.unwrap_or(1.0),
        sparsity: cfg.sparsity(),
        epsilon: cfg.epsilon.and_then(|e| e.value()),
        eigs: cfg.eigs,
        seed: cfg.seed.unwrap_or(0),
        eigen: EigenOptions::default(),
    };
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let rep = experiments::run(experiment, &settings)?;
    let files = write_panels(&out, &rep)?;
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "repro",
        "experiment": experiment,
        "config": cfg,
        "resolved": {
            "scale": settings.scale,
            "threshold_factor": if settings.scale < 1.0 { experiments::REDUCED_SCALE_FACTOR } else { 1.0 },
            "seed": settings.seed,
        },
        "passed": rep.passed(),
        "report": rep,
        "panel_files": files,
    });
    write_json(&out.join(format!("{experiment}_summary.json")), &summary)?;
    for m in &rep.metrics {
        println!("{} {} {}", if m.passed { "PASS" } else { "FAIL" }, m.name, fmt_num(m.value));
    }
    if rep.passed() {
        Ok(())
    } else {
        Err(Failure::Threshold)
    }
}
