use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use tfv_core::projection::ProjectionSpec;
use tfv_core::synth::{generate, ScenarioSpec};
use tfv_core::trajectory::{
    build_all, compare_embedding_variants, convergence_table, dissimilarity_matrix, mean_convergence_radius,
    DEFAULT_K_WINDOW,
};
use tfv_core::{Dataset, ProjectionResult};
use tfv_reports::{Vlm, VlmConfig};

use crate::api::{compute_projection, router};
use crate::state::AppState;

#[derive(Debug, Parser)]
#[command(name = "tfv", version, about = "Explore temporal flow-field embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Write the full pairwise trajectory dissimilarity matrix as CSV.
    SimilarityMatrix(MatrixArgs),
    /// Write per-case convergence radii as CSV.
    Convergence(ConvergenceArgs),
    /// Generate a synthetic dataset from a scenario file.
    GenerateFixture(FixtureArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 8640)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long)]
    pub cache_dir: PathBuf,
    /// Directory with built frontend assets.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MatrixArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub channel: String,
    /// `pca`, or a `case_id,t_index,x,y` file with precomputed coordinates.
    #[arg(long, default_value = "pca")]
    pub projection: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub channel: String,
    #[arg(long, default_value = "pca")]
    pub projection: String,
    #[arg(long, default_value_t = DEFAULT_K_WINDOW)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Also report the mean-radius reduction against this channel's PCA layout.
    #[arg(long)]
    pub baseline_channel: Option<String>,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub async fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Serve(args) => serve(args).await,
        Command::SimilarityMatrix(args) => similarity_matrix(&args),
        Command::Convergence(args) => convergence(&args),
        Command::GenerateFixture(args) => generate_fixture(&args),
    }
}

fn load(manifest: &Path) -> anyhow::Result<Dataset> {
    Dataset::load(manifest).with_context(|| format!("loading {}", manifest.display()))
}

pub async fn serve(args: ServeArgs) -> anyhow::Result<()> {
    let dataset = load(&args.manifest)?;
    let vlm = Vlm::new(&VlmConfig::from_env()?)?;
    tracing::info!(
        dataset = dataset.name(),
        cases = dataset.n_cases(),
        model = vlm.model_id(),
        "dataset loaded"
    );
    let state = AppState::open(dataset, &args.cache_dir, vlm).map_err(|e| anyhow::anyhow!(e.message))?;
    let app = router(Arc::new(state), args.static_dir);
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .with_context(|| format!("invalid address {}:{}", args.host, args.port))?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// Projects every case that has `channel`.
fn project_all(ds: &Dataset, channel: &str, projection: &str) -> anyhow::Result<ProjectionResult> {
    let scope: Vec<String> = ds
        .cases()
        .filter(|c| c.channel(channel).is_some())
        .map(|c| c.case_id.clone())
        .collect();
    if scope.is_empty() {
        bail!("no case has channel {channel:?}");
    }
    let spec = match projection {
        "pca" => ProjectionSpec::pca(channel, scope),
        file => ProjectionSpec::external(channel, scope, file),
    };
    compute_projection(ds, &spec).map_err(|e| anyhow::anyhow!("{}: {}", e.code, e.message))
}

fn create(path: &Path) -> anyhow::Result<fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}

pub fn similarity_matrix(args: &MatrixArgs) -> anyhow::Result<()> {
    let ds = load(&args.manifest)?;
    let projection = project_all(&ds, &args.channel, &args.projection)?;
    let (ids, matrix) = dissimilarity_matrix(&build_all(&projection));
    let mut w = csv::Writer::from_writer(create(&args.out)?);
    w.write_record(std::iter::once("case_id").chain(ids.iter().map(String::as_str)))?;
    for (id, row) in ids.iter().zip(&matrix) {
        w.write_record(std::iter::once(id.clone()).chain(row.iter().map(f64::to_string)))?;
    }
    w.flush()?;
    eprintln!("wrote {}x{} matrix to {}", ids.len(), ids.len(), args.out.display());
    Ok(())
}

pub fn convergence(args: &ConvergenceArgs) -> anyhow::Result<()> {
    if args.k == 0 {
        bail!("--k must be at least 1");
    }
    let ds = load(&args.manifest)?;
    let focused = build_all(&project_all(&ds, &args.channel, &args.projection)?);
    let table = convergence_table(&focused, args.k);
    let mut w = csv::Writer::from_writer(create(&args.out)?);
    w.write_record(["case_id", "n_points", "k_window", "tail_x", "tail_y", "radius"])?;
    for t in &focused {
        let s = &table[&t.case_id];
        w.write_record([
            t.case_id.clone(),
            t.len().to_string(),
            s.k_window.to_string(),
            s.tail_mean[0].to_string(),
            s.tail_mean[1].to_string(),
            s.radius.to_string(),
        ])?;
    }
    w.flush()?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "mean_radius={}", mean_convergence_radius(&focused, args.k)?)?;
    if let Some(base) = &args.baseline_channel {
        let baseline = build_all(&project_all(&ds, base, "pca")?);
        writeln!(out, "baseline_mean_radius={}", mean_convergence_radius(&baseline, args.k)?)?;
        writeln!(
            out,
            "reduction_pct={}",
            compare_embedding_variants(&focused, &baseline, args.k)?
        )?;
    }
    Ok(())
}

pub fn generate_fixture(args: &FixtureArgs) -> anyhow::Result<()> {
    let spec = ScenarioSpec::from_json_file(&args.spec)?;
    let data = generate(&spec, &args.out)?;
    eprintln!(
        "generated {} cases into {} (fingerprint {})",
        data.dataset.n_cases(),
        args.out.display(),
        data.dataset.fingerprint()
    );
    Ok(())
}
