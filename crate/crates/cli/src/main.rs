//! Command-line front end for the restricted four-body diffusion toolkit.

mod config;
mod runs;
mod store;

use clap::{Parser, Subcommand};
use config::RunConfig;
use rp4bp::Result;
use runs::Ctx;
use std::path::PathBuf;
use store::ArtifactStore;

#[derive(Parser)]
#[command(name = "rp4bp", about = "Lyapunov families, heteroclinics, and energy diffusion \
in the restricted planar four-body problem")]
struct Cli {
    /// Configuration file (flat key = value with [section] headers)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Artifact output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for independent stages
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Relative integration tolerance override
    #[arg(long, global = true)]
    tol_rel: Option<f64>,

    /// Absolute integration tolerance override
    #[arg(long, global = true)]
    tol_abs: Option<f64>,

    /// Config override, repeatable: section.key=value
    #[arg(long = "set", global = true)]
    sets: Vec<String>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Collinear Lagrangian points with their linearization
    Lagrange,
    /// Continue one Lyapunov orbit family
    LyapunovFamily,
    /// Globalize one manifold branch to the secondary section
    Manifold,
    /// Heteroclinic connections between the L1 and L2 families
    Heteroclinic,
    /// Sphere-of-influence opening criterion at a Jacobi constant
    HillCheck,
    /// Correct the resonant planet orbit
    PlanetOrbit,
    /// Nu-grid variation of the averaged perturbation difference
    Nondegeneracy,
    /// Integrate the averaged energy-growth ODE
    GtlOde,
    /// Direct follow-and-jump diffusion simulation
    Diffuse,
    /// Full chain: lagrange through diffuse, with a summary report
    Pipeline,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::parse(&std::fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    for s in &cli.sets {
        cfg.set(s)?;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.get("global", "out").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let threads = match cli.threads {
        Some(n) => n.max(1),
        None => cfg.u64("global", "threads", 1)? as usize,
    };
    let tol_rel = match cli.tol_rel {
        Some(t) => t,
        None => cfg.f64("global", "tol_rel", 1e-12)?,
    };
    let tol_abs = match cli.tol_abs {
        Some(t) => t,
        None => cfg.f64("global", "tol_abs", 1e-12)?,
    };
    let ctx = Ctx { cfg, store: ArtifactStore::open(&out)?, threads, tol_rel, tol_abs };
    match cli.cmd {
        Cmd::Lagrange => runs::cmd_lagrange(&ctx),
        Cmd::LyapunovFamily => runs::cmd_family(&ctx),
        Cmd::Manifold => runs::cmd_manifold(&ctx),
        Cmd::Heteroclinic => runs::cmd_heteroclinic(&ctx).map(|_| ()),
        Cmd::HillCheck => runs::cmd_hill_check(&ctx),
        Cmd::PlanetOrbit => runs::cmd_planet(&ctx),
        Cmd::Nondegeneracy => runs::cmd_nondegeneracy(&ctx).map(|_| ()),
        Cmd::GtlOde => runs::cmd_gtl(&ctx).map(|_| ()),
        Cmd::Diffuse => runs::cmd_diffuse(&ctx).map(|_| ()),
        Cmd::Pipeline => runs::cmd_pipeline(&ctx),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
