use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use salp_core::archive::{load_archive, save_archive, SessionArchive};
use salp_core::featurize::{pca_fit, pca_transform, FitStatus};
use salp_core::opf::PropagationResult;
use salp_core::pipeline::{
    parse_report, propagate, render_report, render_table, run_protocols, summarize, ExperimentParams,
    Protocol, SessionState, Space, UserPolicy, DEFAULT_TAU,
};
use salp_core::projection::{project, Projection2D, TsneParams};
use salp_core::synth::{blobs, BlobSpec};
use salp_core::{load_dataset, stratified_split, Dataset, ErrorClass, Split};

#[derive(Parser)]
#[command(name = "salp", version, about = "Semi-automatic label propagation workbench")]
struct Cli {
    /// Seed for splitting, PCA, t-SNE and the simulated annotator.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file or directory (meaning depends on the command).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate Gaussian blobs as a dataset directory.
    Synth(SynthArgs),
    /// Reduce a dataset's features with PCA and write a new dataset.
    Featurize(FeaturizeArgs),
    /// Write a stratified S/U/T split.
    Split(SplitArgs),
    /// Embed S and U in 2D with exact t-SNE.
    Project(ProjectArgs),
    /// Run OPF-Semi and write a session archive ready for annotation.
    Propagate(PropagateArgs),
    /// Run protocols end to end over several seeds and write reports.
    Run(RunArgs),
    /// Tabulate several report files side by side.
    Compare(CompareArgs),
    /// Serve a session archive over HTTP until interrupted.
    Serve(ServeArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Number of blobs (classes).
    #[arg(long, default_value_t = 5)]
    blobs: usize,
    #[arg(long, default_value_t = 10)]
    dims: usize,
    /// Number of samples.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Distance between blob centres in standard deviations.
    #[arg(long, default_value_t = 6.0)]
    sep: f64,
}

#[derive(Args)]
struct FeaturizeArgs {
    /// Dataset manifest.
    #[arg(long)]
    dataset: PathBuf,
    /// Number of principal components to keep.
    #[arg(long)]
    pca: usize,
    /// Fit on this split's S and U only (default: all samples).
    #[arg(long)]
    split: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// S, U and T fractions.
    #[arg(long, value_delimiter = ',', default_values_t = [0.03, 0.67, 0.30])]
    fractions: Vec<f64>,
}

#[derive(Args, Clone)]
struct TsneArgs {
    #[arg(long, default_value_t = 40.0)]
    perplexity: f64,
    /// Gradient-descent iterations.
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long, default_value_t = 200.0)]
    learning_rate: f64,
}

impl TsneArgs {
    fn params(&self) -> TsneParams {
        TsneParams {
            perplexity: self.perplexity,
            max_iters: self.iters,
            learning_rate: self.learning_rate,
            ..TsneParams::default()
        }
    }
}

#[derive(Args)]
struct ProjectArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[command(flatten)]
    tsne: TsneArgs,
}

#[derive(Args)]
struct PropagateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    split: PathBuf,
    /// Projection file; required for the 2d space.
    #[arg(long)]
    projection: Option<PathBuf>,
    /// Space OPF-Semi runs in: 2d (projection) or nd (dataset features).
    #[arg(long, default_value = "2d")]
    space: String,
    #[arg(long, default_value = "salp")]
    protocol: String,
    /// Confidence threshold; ALP protocols ignore it and accept everything.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Protocols to run: nlp, alp2d, alpnd, ilp, salp.
    #[arg(long, value_delimiter = ',', default_value = "salp")]
    protocol: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [0.03, 0.67, 0.30])]
    fractions: Vec<f64>,
    /// Reduce features with PCA fitted on S and U of each split.
    #[arg(long)]
    pca: Option<usize>,
    /// Simulated annotator: oracle_all, oracle_fraction:<f> or abstain.
    #[arg(long, default_value = "oracle_all")]
    user: String,
    #[command(flatten)]
    tsne: TsneArgs,
}

#[derive(Args)]
struct CompareArgs {
    /// Report files written by `salp run`.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    /// Session archive directory.
    #[arg(long)]
    archive: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
}

/// A failure and the exit status it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self { code: 4, message: message.into() }
    }
}

impl From<salp_core::Error> for Failure {
    fn from(e: salp_core::Error) -> Self {
        let code = match e.class() {
            ErrorClass::Usage => 2,
            ErrorClass::Data => 3,
            ErrorClass::Runtime => 4,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

struct Ctx {
    seed: u64,
    out: Option<PathBuf>,
    quiet: bool,
}

impl Ctx {
    fn out(&self, what: &str) -> CliResult<&Path> {
        self.out.as_deref().ok_or_else(|| Failure::config(format!("--out <{what}> is required")))
    }

    fn info(&self, msg: impl std::fmt::Display) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }
}

fn existing(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::config(format!("{what} {} does not exist", path.display())))
    }
}

fn fractions(values: &[f64]) -> CliResult<[f64; 3]> {
    values.try_into().map_err(|_| Failure::config("--fractions takes exactly three values"))
}

fn check_tau(tau: f64) -> CliResult<()> {
    if (0.0..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(Failure::config(format!("--tau {tau} is outside [0, 1]")))
    }
}

fn load(path: &Path) -> CliResult<Dataset> {
    existing(path, "dataset")?;
    Ok(load_dataset(path)?)
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::from(salp_core::Error::Io { path: parent.into(), source: e }))?;
    }
    fs::write(path, text).map_err(|e| salp_core::Error::Io { path: path.into(), source: e }.into())
}

fn cmd_synth(ctx: &Ctx, args: &SynthArgs) -> CliResult {
    let spec = BlobSpec { n_classes: args.blobs, n_dims: args.dims, n_samples: args.n, separation: args.sep };
    let dataset = blobs(&spec, ctx.seed)?;
    let manifest = dataset.save(ctx.out("dir")?)?;
    ctx.info(format!("wrote {} ({} samples, {} classes)", manifest.display(), dataset.len(), dataset.n_classes));
    Ok(())
}

fn cmd_featurize(ctx: &Ctx, args: &FeaturizeArgs) -> CliResult {
    let dataset = load(&args.dataset)?;
    let fit_ids: Vec<usize> = match &args.split {
        Some(path) => {
            existing(path, "split")?;
            let split = Split::read(path)?;
            split.validate(dataset.len())?;
            split.training_ids()
        }
        None => (0..dataset.len()).collect(),
    };
    let (model, status) = pca_fit(&dataset.features.select_rows(&fit_ids)?, args.pca, ctx.seed)?;
    if status == FitStatus::Degenerate {
        ctx.info("warning: features have zero variance; components are arbitrary");
    }
    let reduced = dataset.with_features(pca_transform(&model, &dataset.features)?)?;
    let manifest = reduced.save(ctx.out("dir")?)?;
    let total: f64 = model.explained_variance.iter().sum();
    ctx.info(format!("wrote {} ({} components, variance {total:.4})", manifest.display(), model.k()));
    Ok(())
}

fn cmd_split(ctx: &Ctx, args: &SplitArgs) -> CliResult {
    let dataset = load(&args.dataset)?;
    let split = stratified_split(&dataset.samples, fractions(&args.fractions)?, ctx.seed)?;
    let out = ctx.out("file")?;
    write_file(out, &split.render())?;
    ctx.info(format!(
        "wrote {} (|S|={} |U|={} |T|={})",
        out.display(),
        split.s_ids.len(),
        split.u_ids.len(),
        split.t_ids.len()
    ));
    Ok(())
}

fn read_split(path: &Path, dataset: &Dataset) -> CliResult<Split> {
    existing(path, "split")?;
    let split = Split::read(path)?;
    split.validate(dataset.len()).map_err(|e| Failure { code: 3, message: format!("{}: {e}", path.display()) })?;
    Ok(split)
}

fn cmd_project(ctx: &Ctx, args: &ProjectArgs) -> CliResult {
    let dataset = load(&args.dataset)?;
    let split = read_split(&args.split, &dataset)?;
    let proj = project(&dataset.features, &split.training_ids(), &args.tsne.params(), ctx.seed)?;
    let out = ctx.out("file")?;
    write_file(out, &proj.render())?;
    if let (Some(kl), Some(after)) = (proj.final_kl(), proj.kl_after_exaggeration) {
        ctx.info(format!("wrote {} (KL {kl:.4}, {after:.4} after exaggeration)", out.display()));
    }
    Ok(())
}

fn cmd_propagate(ctx: &Ctx, args: &PropagateArgs) -> CliResult {
    let protocol: Protocol = args.protocol.parse()?;
    let space: Space = args.space.parse()?;
    check_tau(args.tau)?;
    let dataset = load(&args.dataset)?;
    let split = read_split(&args.split, &dataset)?;
    let projection = match &args.projection {
        Some(path) => {
            existing(path, "projection")?;
            Some(Projection2D::read(path)?)
        }
        None if space == Space::Projection && protocol.space().is_some() => {
            return Err(Failure::config("--projection is required to propagate in 2d"))
        }
        None => None,
    };
    let propagation = match protocol.space().map(|_| space) {
        None => PropagationResult { samples: Vec::new() },
        Some(Space::Projection) => {
            let proj = projection.as_ref().expect("checked above");
            propagate(&proj.points(), &proj.ids, &split, &dataset.samples)?
        }
        Some(Space::Latent) => {
            let ids = split.training_ids();
            propagate(&dataset.features.select_rows(&ids)?, &ids, &split, &dataset.samples)?
        }
    };
    let tau = if matches!(protocol, Protocol::Alp2d | Protocol::AlpNd) { 0.0 } else { args.tau };
    let session = SessionState::new(protocol, dataset.n_classes, ctx.seed, split, projection, propagation, tau)?;
    let (auto, residue) = (session.auto_set().len(), session.residue().len());
    let dataset_path = std::path::absolute(&args.dataset).unwrap_or_else(|_| args.dataset.clone());
    let out = ctx.out("dir")?;
    save_archive(out, &SessionArchive { dataset: dataset_path, session })?;
    ctx.info(format!("wrote session {} (|Lc|={auto}, residue {residue})", out.display()));
    Ok(())
}

fn cmd_run(ctx: &Ctx, args: &RunArgs) -> CliResult {
    let protocols = args.protocol.iter().map(|p| p.parse()).collect::<Result<Vec<Protocol>, _>>()?;
    let user: UserPolicy = args.user.parse()?;
    check_tau(args.tau)?;
    if args.seeds.is_empty() {
        return Err(Failure::config("--seeds needs at least one seed"));
    }
    let params = ExperimentParams {
        fractions: fractions(&args.fractions)?,
        tau: args.tau,
        tsne: args.tsne.params(),
        pca_dims: args.pca,
        user,
    };
    let out = ctx.out("dir")?.to_path_buf();
    let dataset = load(&args.dataset)?;
    let result = run_protocols(&dataset, &protocols, &args.seeds, &params)?;
    let table = render_table(&result.summaries);
    write_file(&out.join("report.txt"), &render_report(&dataset.fingerprint(), &result.reports))?;
    write_file(&out.join("summary.txt"), &table)?;
    if !ctx.quiet {
        for r in &result.reports {
            println!("{}", r.line());
        }
        println!();
        print!("{table}");
    }
    Ok(())
}

fn cmd_compare(ctx: &Ctx, args: &CompareArgs) -> CliResult {
    if args.reports.len() < 2 {
        return Err(Failure::config("compare needs at least two report files"));
    }
    let mut files = Vec::new();
    for path in &args.reports {
        existing(path, "report")?;
        let text = fs::read_to_string(path).map_err(|e| salp_core::Error::Io { path: path.clone(), source: e })?;
        files.push((path, parse_report(path, &text)?));
    }
    let seeds = |f: &salp_core::pipeline::ReportFile| {
        let mut s: Vec<u64> = f.reports.iter().map(|r| r.seed).collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    let (first_path, first) = &files[0];
    for (path, f) in &files[1..] {
        if f.dataset != first.dataset {
            return Err(Failure::config(format!(
                "{} was run on dataset {} but {} on {}",
                path.display(),
                f.dataset,
                first_path.display(),
                first.dataset
            )));
        }
        if seeds(f) != seeds(first) {
            return Err(Failure::config(format!(
                "{} and {} cover different seeds",
                path.display(),
                first_path.display()
            )));
        }
    }
    let summaries: Vec<_> = files.iter().flat_map(|(_, f)| summarize(&f.reports)).collect();
    let table = render_table(&summaries);
    if let Some(out) = &ctx.out {
        write_file(out, &table)?;
    }
    if !ctx.quiet {
        print!("{table}");
    }
    Ok(())
}

/// Resolves on Ctrl-C or SIGTERM. Handlers are installed before this returns,
/// so a signal arriving before the future is first polled is not lost.
#[cfg(unix)]
fn shutdown_signal() -> std::io::Result<impl std::future::Future<Output = ()>> {
    use tokio::signal::unix::{signal, SignalKind};
    let mut interrupt = signal(SignalKind::interrupt())?;
    let mut terminate = signal(SignalKind::terminate())?;
    Ok(async move {
        tokio::select! {
            _ = interrupt.recv() => {},
            _ = terminate.recv() => {},
        }
    })
}

#[cfg(not(unix))]
fn shutdown_signal() -> std::io::Result<impl std::future::Future<Output = ()>> {
    Ok(async {
        tokio::signal::ctrl_c().await.ok();
    })
}

fn cmd_serve(ctx: &Ctx, args: &ServeArgs) -> CliResult {
    existing(&args.archive, "archive")?;
    let archive = load_archive(&args.archive)?;
    let dataset = load(&archive.dataset_path(&args.archive))?;
    let state = salp_service::AppState::new(archive.session.clone(), dataset)?;

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::runtime(format!("cannot start runtime: {e}")))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((args.bind.as_str(), args.port))
            .await
            .map_err(|e| Failure::runtime(format!("cannot bind {}:{}: {e}", args.bind, args.port)))?;
        let addr = listener.local_addr().map_err(|e| Failure::runtime(e.to_string()))?;
        let shutdown = shutdown_signal().map_err(|e| Failure::runtime(format!("cannot install signal handlers: {e}")))?;
        // Always printed: scripts read the bound port from here.
        println!("listening on http://{addr}");
        std::io::stdout().flush().ok();
        salp_service::serve(listener, state.clone(), shutdown)
            .await
            .map_err(|e| Failure::runtime(format!("server failed: {e}")))
    })?;

    let session = state.session().snapshot();
    save_archive(&args.archive, &SessionArchive { dataset: archive.dataset, session })?;
    if let Some(report) = state.report() {
        ctx.info(report.line());
    }
    ctx.info(format!("saved session to {}", args.archive.display()));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = Ctx { seed: cli.seed, out: cli.out, quiet: cli.quiet };
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::Featurize(a) => cmd_featurize(&ctx, a),
        Command::Split(a) => cmd_split(&ctx, a),
        Command::Project(a) => cmd_project(&ctx, a),
        Command::Propagate(a) => cmd_propagate(&ctx, a),
        Command::Run(a) => cmd_run(&ctx, a),
        Command::Compare(a) => cmd_compare(&ctx, a),
        Command::Serve(a) => cmd_serve(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("salp: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
