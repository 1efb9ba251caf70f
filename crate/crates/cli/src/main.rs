use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use psideal_core::{
    estimate_lights, generate_dataset, indicators, reconstruct, IdealityReport, LightMethod, PsError,
    ScreeningMethod,
};
use psideal_io::{
    load_dataset, read_lights_csv, read_scenario, write_albedo_map, write_heightmap, write_json, write_lights_csv,
    write_normal_map, write_obj, write_ply, write_surface_csv, write_synthetic, Dataset, LightReport,
    ReconstructionReport,
};

/// Exit status when linear screening cannot start because every candidate
/// Gram matrix is indefinite.
const EXIT_BREAKDOWN: u8 = 2;

#[derive(Parser)]
#[command(name = "psideal", version, about = "Photometric stereo with dataset ideality screening")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset from a scenario file.
    Synth {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate lights, normals and albedo.
    Estimate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Linear)]
        method: Method,
        /// Reference lights CSV used to fix the orientation; defaults to the
        /// manifest's lights.
        #[arg(long)]
        align: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Rank images by ideality and suggest which to drop.
    Screen {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "all")]
        method: String,
        /// Report file; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline to mesh, heightmap and error against ground truth.
    Reconstruct {
        #[arg(long)]
        manifest: PathBuf,
        /// 1-based images to use, e.g. `1,2,4-9`.
        #[arg(long)]
        keep: Option<String>,
        #[arg(long, value_enum, default_value_t = Method::Linear)]
        method: Method,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Start the curation service.
    Serve {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Concurrent jobs; defaults to the number of CPUs.
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Linear,
    Nonlinear,
}

impl From<Method> for LightMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Linear => LightMethod::Linear,
            Method::Nonlinear => LightMethod::Nonlinear,
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth { scenario, out } => synth(&scenario, &out)?,
        Command::Estimate { manifest, method, align, out } => estimate(&manifest, method.into(), align, &out)?,
        Command::Screen { manifest, method, out } => return screen(&manifest, &method, out.as_deref()),
        Command::Reconstruct { manifest, keep, method, out } => {
            reconstruct_cmd(&manifest, keep.as_deref(), method.into(), &out)?
        }
        Command::Serve { manifest, port, host, workers } => serve(&manifest, SocketAddr::new(host, port), workers)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn synth(scenario: &Path, out: &Path) -> Result<()> {
    let scn = read_scenario(scenario)?;
    let ds = generate_dataset(&scn)?;
    let name = scenario.file_stem().and_then(|s| s.to_str()).unwrap_or("synthetic");
    let manifest = write_synthetic(&ds, name, out)?;
    println!("wrote {} images to {}", ds.data.q(), manifest.display());
    Ok(())
}

fn estimate(manifest: &Path, method: LightMethod, align: Option<PathBuf>, out: &Path) -> Result<()> {
    let ds = load_dataset(manifest)?;
    let reference = match align {
        Some(path) => Some(read_lights_csv(&path)?),
        None => ds.lights()?,
    };
    if let Some(r) = &reference {
        if r.len() != ds.len() {
            bail!("{} reference lights for {} images", r.len(), ds.len());
        }
    }
    let est = estimate_lights(&ds.data, method, reference.as_ref().map(|l| l.directions()))?;
    create_dir(out)?;
    write_lights_csv(&est.lights, &out.join("lights.csv"))?;
    let grid = ds.grid()?;
    write_normal_map(&est.field, &grid, &out.join("normals.png"))?;
    write_albedo_map(&est.field, &grid, &out.join("albedo.png"))?;
    let report = LightReport::new(&est, (1..=ds.len()).collect());
    write_json(&report, &out.join("estimate.json"))?;
    println!("estimated {} lights ({method}), lambda3 = {:e}", est.lights.len(), report.lambda3);
    Ok(())
}

fn screen(manifest: &Path, method: &str, out: Option<&Path>) -> Result<ExitCode> {
    let ds = load_dataset(manifest)?;
    let methods = match method {
        "all" => ScreeningMethod::ALL.to_vec(),
        m => vec![m.parse::<ScreeningMethod>().map_err(anyhow::Error::msg)?],
    };
    let shared = indicators(&ds.data).ok();
    let mut unrecoverable = false;
    let reports: Vec<IdealityReport> = methods
        .into_iter()
        .map(|m| {
            m.run(&ds.data).unwrap_or_else(|e| {
                unrecoverable |= matches!(e, PsError::UnrecoverableBreakdown { .. });
                IdealityReport::failed(m, ds.len(), shared.clone(), &e)
            })
        })
        .collect();
    match out {
        Some(path) => write_json(&reports, path)?,
        None => print!("{}", psideal_io::to_json(&reports)),
    }
    for r in &reports {
        match &r.failure {
            Some(msg) => eprintln!("{:<11} failed: {msg}", r.method),
            None => eprintln!("{:<11} excluded {:?}, kept {}", r.method, r.excluded, r.kept.len()),
        }
    }
    Ok(if unrecoverable { ExitCode::from(EXIT_BREAKDOWN) } else { ExitCode::SUCCESS })
}

/// Parses `1,2,5-9` into 0-based column indices.
fn parse_keep(spec: &str, images: usize) -> Result<Vec<usize>> {
    let mut kept = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (lo, hi) = match part.split_once('-') {
            Some((a, b)) => (a.trim().parse::<usize>()?, b.trim().parse::<usize>()?),
            None => {
                let v = part.parse::<usize>().with_context(|| format!("bad image index `{part}`"))?;
                (v, v)
            }
        };
        if lo < 1 || hi > images || lo > hi {
            bail!("image range `{part}` is outside 1..{images}");
        }
        kept.extend(lo - 1..hi);
    }
    kept.sort_unstable();
    kept.dedup();
    Ok(kept)
}

fn reconstruct_cmd(manifest: &Path, keep: Option<&str>, method: LightMethod, out: &Path) -> Result<()> {
    let ds: Dataset = load_dataset(manifest)?;
    let kept = keep.map(|k| parse_keep(k, ds.len())).transpose()?;
    let grid = ds.grid()?;
    let lights = ds.lights()?;
    let rec = reconstruct(&ds.data, &grid, kept.as_deref(), method, lights.as_ref().map(|l| l.directions()))?;
    let truth = ds.ground_truth()?;
    let report = ReconstructionReport::new(&rec, truth.as_ref())?;
    create_dir(out)?;
    write_obj(&rec.surface, &out.join("surface.obj"))?;
    write_ply(&rec.surface, &out.join("surface.ply"))?;
    write_heightmap(&rec.surface, &out.join("heightmap.png"))?;
    write_surface_csv(&rec.surface, &out.join("heights.csv"))?;
    write_normal_map(&rec.estimate.field, &grid, &out.join("normals.png"))?;
    write_albedo_map(&rec.estimate.field, &grid, &out.join("albedo.png"))?;
    write_json(&report, &out.join("reconstruction.json"))?;
    match report.relative_error {
        Some(e) => println!("reconstructed from {} images, relative error {e:e}", report.kept.len()),
        None => println!("reconstructed from {} images", report.kept.len()),
    }
    Ok(())
}

fn serve(manifest: &Path, addr: SocketAddr, workers: Option<usize>) -> Result<()> {
    let ds = load_dataset(manifest)?;
    let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(2, |n| n.get()));
    let state = psideal_service::AppState::new(ds, workers)?;
    let rt = tokio::runtime::Runtime::new()?;
    println!("serving {} on http://{addr}", manifest.display());
    rt.block_on(psideal_service::serve(state, addr))?;
    Ok(())
}
