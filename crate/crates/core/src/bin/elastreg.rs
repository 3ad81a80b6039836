//! Command-line driver: `register`, `evaluate`, `analyze`, `synth`.
//!
//! Exit codes: 0 success, 2 usage or validation, 3 runtime failure, 4 I/O.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use elastreg::io::{self, report};
use elastreg::metrics;
use elastreg::optimizer::register;
use elastreg::synth::{self, DeformationKind, LabelKind, SynthSpec, TextureKind};
use elastreg::{normalize_intensity, AdaptiveParams, Error, Regularizer, RegistrationConfig, SimilarityConfig};

#[derive(Parser, Debug)]
#[command(name = "elastreg", version, about = "Deformable 3D registration with adaptive elastic regularization")]
struct Cli {
    /// Worker threads; 0 picks one per core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Accepted for compatibility. Reductions already run in a fixed order,
    /// so output does not depend on the thread count.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Register a moving volume onto a fixed volume.
    Register(RegisterArgs),
    /// Score a displacement field against label maps.
    Evaluate(EvaluateArgs),
    /// Export adaptive-parameter curves and per-voxel analysis tables.
    Analyze(AnalyzeArgs),
    /// Generate a synthetic pair with a known deformation.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RegKind {
    Dare,
    Elastic,
    Diffusion,
    Tv,
    Bending,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SimKind {
    Lncc,
    Mi,
    Ssd,
}

#[derive(Args, Debug, Clone)]
struct ParamArgs {
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    lambda0: f64,
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    mu0: f64,
    /// Folding penalty weight.
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    c: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    delta: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    beta0: f64,
    #[arg(long, default_value_t = 0.05, allow_hyphen_values = true)]
    tau: f64,
    #[arg(long, default_value_t = 0.01, allow_hyphen_values = true)]
    kappa: f64,
    #[arg(long, default_value_t = 0.1, allow_hyphen_values = true)]
    theta: f64,
}

#[derive(Args, Debug)]
struct RegisterArgs {
    #[arg(long)]
    fixed: PathBuf,
    #[arg(long)]
    moving: PathBuf,
    /// Directory for `displacement.bin/.json`, `warped.*` and `trace.csv`.
    #[arg(long)]
    out_dir: PathBuf,
    /// JSON file whose keys override the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = RegKind::Dare)]
    regularizer: RegKind,
    #[arg(long, value_enum, default_value_t = SimKind::Lncc)]
    similarity: SimKind,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    reg_weight: f64,
    /// Folding weight; defaults to `--c` for dare and 0 for the baselines.
    #[arg(long, allow_hyphen_values = true)]
    folding_weight: Option<f64>,
    /// Elastic baseline Lamé parameters.
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    lambda: f64,
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    mu: f64,
    #[arg(long, default_value_t = 3)]
    levels: usize,
    #[arg(long, default_value_t = 200)]
    iters: usize,
    #[arg(long, default_value_t = 0.1, allow_hyphen_values = true)]
    step_size: f64,
    #[arg(long, default_value_t = 1e-4, allow_hyphen_values = true)]
    grad_tol: f64,
    #[arg(long)]
    line_search: bool,
    /// Window radius for LNCC and local MI (defaults 3 and 8).
    #[arg(long)]
    window_radius: Option<usize>,
    #[arg(long, default_value_t = 32)]
    mi_bins: usize,
    /// Recorded for reproducibility; registration itself is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Deserialize, Default, Debug)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    lambda0: Option<f64>,
    mu0: Option<f64>,
    c: Option<f64>,
    delta: Option<f64>,
    beta0: Option<f64>,
    tau: Option<f64>,
    kappa: Option<f64>,
    theta: Option<f64>,
    regularizer: Option<RegKind>,
    similarity: Option<SimKind>,
    reg_weight: Option<f64>,
    folding_weight: Option<f64>,
    lambda: Option<f64>,
    mu: Option<f64>,
    levels: Option<usize>,
    iters: Option<usize>,
    step_size: Option<f64>,
    grad_tol: Option<f64>,
    line_search: Option<bool>,
    window_radius: Option<usize>,
    mi_bins: Option<usize>,
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    fixed_labels: PathBuf,
    #[arg(long)]
    moving_labels: PathBuf,
    #[arg(long)]
    displacement: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Structures for the volume-change table; defaults to every label seen.
    #[arg(long, value_delimiter = ',')]
    structures: Vec<u32>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    displacement: Option<PathBuf>,
    /// Only write the analytic response curves.
    #[arg(long)]
    curves_only: bool,
    /// Upper end of the curve range; defaults to 1, or the largest observed
    /// gradient norm when a field is given.
    #[arg(long)]
    g_max: Option<f64>,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DeformArg {
    Bumps,
    Dilation,
    Translation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TextureArg {
    Blobs,
    Ramp,
    Checkerboard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Bin,
    Nii,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// Cube edge length, or `nx,ny,nz`.
    #[arg(long, value_delimiter = ',', default_value = "32")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = DeformArg::Bumps)]
    deformation: DeformArg,
    #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
    amplitude: f64,
    #[arg(long, default_value_t = 6.0, allow_hyphen_values = true)]
    sigma: f64,
    #[arg(long, default_value_t = 4)]
    bumps: usize,
    #[arg(long, default_value_t = 0.05, allow_hyphen_values = true)]
    dilation: f64,
    #[arg(long, value_delimiter = ',', default_value = "1,0,0", allow_hyphen_values = true)]
    translation: Vec<f64>,
    #[arg(long, value_enum, default_value_t = TextureArg::Blobs)]
    texture: TextureArg,
    #[arg(long, default_value_t = 48)]
    n_blobs: usize,
    #[arg(long, default_value_t = 4)]
    period: usize,
    /// Number of concentric label shells.
    #[arg(long, default_value_t = 3)]
    spheres: u32,
    #[arg(long, value_enum, default_value_t = FormatArg::Bin)]
    format: FormatArg,
}

/// Error with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::NonFiniteEnergy { .. } | Error::FoldFreeExhausted { .. } => 3,
            Error::Io { .. }
            | Error::BadMagic(_)
            | Error::UnsupportedNiftiVariant(_)
            | Error::UnsupportedDatatype { .. }
            | Error::Truncated { .. }
            | Error::BadHeader { .. }
            | Error::UnsupportedFormat(_)
            | Error::CompressedNifti(_) => 4,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| usage(format!("cannot configure thread pool: {e}")))?;
    }
    match cli.command {
        Command::Register(a) => cmd_register(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn require_input(path: &Path) -> CliResult<()> {
    let data = io::tensor_file::paths(path);
    let exists = match io::detect_format(path) {
        Ok(io::Format::Tensor) => data.0.exists() && data.1.exists(),
        _ => path.exists(),
    };
    if exists {
        Ok(())
    } else {
        Err(usage(format!("input not found: {}", path.display())))
    }
}

fn prepare_out_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::from(Error::Io { path: dir.to_path_buf(), source: e }))
}

fn adaptive_params(p: &ParamArgs) -> AdaptiveParams {
    AdaptiveParams {
        lambda0: p.lambda0,
        mu0: p.mu0,
        c: p.c,
        delta: p.delta,
        beta0: p.beta0,
        tau: p.tau,
        kappa: p.kappa,
        theta: p.theta,
    }
}

fn apply_config_file(a: &mut RegisterArgs) -> CliResult<()> {
    let Some(path) = a.config.clone() else { return Ok(()) };
    if !path.is_file() {
        return Err(usage(format!("input not found: {}", path.display())));
    }
    let text = std::fs::read(&path).map_err(|e| Failure::from(Error::Io { path: path.clone(), source: e }))?;
    let cfg: ConfigFile =
        serde_json::from_slice(&text).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?;
    macro_rules! take {
        ($($field:ident => $target:expr),* $(,)?) => {
            $(if let Some(v) = cfg.$field { $target = v; })*
        };
    }
    take!(
        lambda0 => a.params.lambda0, mu0 => a.params.mu0, c => a.params.c, delta => a.params.delta,
        beta0 => a.params.beta0, tau => a.params.tau, kappa => a.params.kappa, theta => a.params.theta,
        regularizer => a.regularizer, similarity => a.similarity, reg_weight => a.reg_weight,
        lambda => a.lambda, mu => a.mu, levels => a.levels, iters => a.iters, step_size => a.step_size,
        grad_tol => a.grad_tol, line_search => a.line_search, mi_bins => a.mi_bins, seed => a.seed,
    );
    if cfg.folding_weight.is_some() {
        a.folding_weight = cfg.folding_weight;
    }
    if cfg.window_radius.is_some() {
        a.window_radius = cfg.window_radius;
    }
    Ok(())
}

fn registration_config(a: &RegisterArgs) -> CliResult<RegistrationConfig> {
    let params = adaptive_params(&a.params);
    let regularizer = match a.regularizer {
        RegKind::Dare => Regularizer::adaptive(params),
        RegKind::Elastic => Regularizer::Elastic { lambda: a.lambda, mu: a.mu },
        RegKind::Diffusion => Regularizer::Diffusion,
        RegKind::Tv => Regularizer::tv(),
        RegKind::Bending => Regularizer::Bending,
    };
    let mut similarity = match a.similarity {
        SimKind::Lncc => SimilarityConfig::lncc(),
        SimKind::Mi => SimilarityConfig::local_mi(),
        SimKind::Ssd => SimilarityConfig::ssd(),
    };
    if let Some(r) = a.window_radius {
        similarity.window_radius = r;
    }
    similarity.mi_bins = a.mi_bins;
    let mut cfg = RegistrationConfig::with_regularizer(regularizer);
    cfg.similarity = similarity;
    if let Some(w) = a.folding_weight {
        cfg.folding_weight = w;
    }
    cfg.reg_weight = a.reg_weight;
    cfg.pyramid_levels = a.levels;
    cfg.iters_per_level = a.iters;
    cfg.step_size = a.step_size;
    cfg.grad_tol = a.grad_tol;
    cfg.line_search = a.line_search;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_register(mut a: RegisterArgs) -> CliResult<()> {
    apply_config_file(&mut a)?;
    let cfg = registration_config(&a)?;
    require_input(&a.fixed)?;
    require_input(&a.moving)?;
    let warped_name = match io::detect_format(&a.moving)? {
        io::Format::Nifti => "warped.nii",
        io::Format::Tensor => "warped.bin",
    };
    let fixed = io::read_volume(&a.fixed)?;
    let moving = io::read_volume(&a.moving)?;
    fixed.dims().check_same(&moving.dims())?;
    let f = normalize_intensity(&fixed)?;
    let m = normalize_intensity(&moving)?;
    let (u, trace) = register(&f, &m, &cfg)?;
    let warped = elastreg::warp::warp_trilinear(&moving, &u)?;

    prepare_out_dir(&a.out_dir)?;
    io::write_displacement(&a.out_dir.join("displacement.bin"), &u)?;
    io::write_volume(&a.out_dir.join(warped_name), &warped)?;
    report::write_text(&a.out_dir.join("trace.csv"), &report::trace_csv(&trace))?;
    let last = trace.levels.last().map(|l| l.final_energy.total).unwrap_or(f64::NAN);
    println!(
        "registered: mean |u| {} voxels, final energy {}, {} iterations",
        report::fmt_num(u.mean_norm()),
        report::fmt_num(last),
        trace.records.len()
    );
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult<()> {
    for p in [&a.fixed_labels, &a.moving_labels, &a.displacement] {
        require_input(p)?;
    }
    let fixed = io::read_labels(&a.fixed_labels)?;
    let moving = io::read_labels(&a.moving_labels)?;
    let u = io::read_displacement(&a.displacement)?;
    fixed.dims().check_same(&moving.dims())?;
    fixed.dims().check_same(&u.dims())?;
    let structures: Vec<u32> = if a.structures.is_empty() {
        let seen: BTreeSet<u32> = fixed.label_set().into_iter().chain(moving.label_set()).filter(|&l| l != 0).collect();
        seen.into_iter().collect()
    } else {
        a.structures.clone()
    };
    let rep = metrics::evaluate(&fixed, &moving, &u, &structures)?;
    for (s, v) in &rep.volume_changes {
        if v.is_none() {
            eprintln!("warning: structure {s} is absent from the moving labels; volume change undefined");
        }
    }
    prepare_out_dir(&a.out_dir)?;
    report::write_metrics(&a.out_dir, &rep)?;
    println!(
        "mean dice {}, %|J|>=1 {}, %|J|<=0 {}, SE {}",
        rep.mean_dice.map_or(report::UNDEFINED.to_string(), report::fmt_num),
        report::fmt_num(rep.pct_jac_ge1),
        report::fmt_num(rep.pct_jac_le0),
        report::fmt_num(rep.strain_energy)
    );
    Ok(())
}

fn cmd_analyze(a: AnalyzeArgs) -> CliResult<()> {
    let p = adaptive_params(&a.params);
    p.validate()?;
    if let Some(g) = a.g_max {
        if !(g > 0.0 && g.is_finite()) {
            return Err(usage(format!("--g-max must be > 0, got {g}")));
        }
    }
    if a.curves_only {
        let curves = metrics::response_curves(&p, a.g_max.unwrap_or(1.0), metrics::CURVE_POINTS);
        prepare_out_dir(&a.out_dir)?;
        report::write_text(&a.out_dir.join("curves.csv"), &report::curves_csv(&curves))?;
        return Ok(());
    }
    let Some(path) = a.displacement.as_ref() else {
        return Err(usage("analyze needs --displacement or --curves-only"));
    };
    require_input(path)?;
    let u = io::read_displacement(path)?;
    let mut table = metrics::parameter_energy_table(&u, &p)?;
    if let Some(g) = a.g_max {
        table.curves = metrics::response_curves(&p, g, metrics::CURVE_POINTS);
    }
    let js = metrics::jacobian_stats(&u);
    let sd = metrics::strain_distribution(&u, metrics::STRAIN_THRESHOLD);
    prepare_out_dir(&a.out_dir)?;
    report::write_text(&a.out_dir.join("curves.csv"), &report::curves_csv(&table.curves))?;
    report::write_text(&a.out_dir.join("scatter.csv"), &report::scatter_csv(&table.records))?;
    report::write_text(&a.out_dir.join("neg_jacobian_hist.csv"), &report::histogram_csv(&js.neg_histogram))?;
    report::write_text(&a.out_dir.join("strain_hist.csv"), &report::histogram_csv(&sd.histogram))?;
    Ok(())
}

fn synth_spec(a: &SynthArgs) -> CliResult<SynthSpec> {
    let dims = match a.dims.as_slice() {
        [n] => [*n; 3],
        [x, y, z] => [*x, *y, *z],
        _ => return Err(usage("--dims takes one value or three comma-separated values")),
    };
    let deformation = match a.deformation {
        DeformArg::Bumps => DeformationKind::GaussianBumps {
            count: a.bumps,
            max_amplitude: a.amplitude,
            sigma: a.sigma,
        },
        DeformArg::Dilation => DeformationKind::Dilation { s: a.dilation },
        DeformArg::Translation => match a.translation.as_slice() {
            [x, y, z] => DeformationKind::Translation { t: [*x, *y, *z] },
            _ => return Err(usage("--translation takes three comma-separated values")),
        },
    };
    let texture = match a.texture {
        TextureArg::Blobs => TextureKind::BlobPhantom { n_blobs: a.n_blobs },
        TextureArg::Ramp => TextureKind::Ramp,
        TextureArg::Checkerboard => TextureKind::Checkerboard { period: a.period },
    };
    let spec = SynthSpec {
        dims,
        seed: a.seed,
        deformation,
        texture,
        labels: LabelKind::ConcentricSpheres { k: a.spheres },
    };
    spec.validate()?;
    Ok(spec)
}

fn cmd_synth(a: SynthArgs) -> CliResult<()> {
    let spec = synth_spec(&a)?;
    let pair = synth::make_pair(&spec)?;
    let ext = match a.format {
        FormatArg::Bin => "bin",
        FormatArg::Nii => "nii",
    };
    prepare_out_dir(&a.out_dir)?;
    let d = &a.out_dir;
    io::write_volume(&d.join(format!("fixed.{ext}")), &pair.fixed)?;
    io::write_volume(&d.join(format!("moving.{ext}")), &pair.moving)?;
    io::write_labels(&d.join(format!("labels_fixed.{ext}")), &pair.labels_fixed)?;
    io::write_labels(&d.join(format!("labels_moving.{ext}")), &pair.labels_moving)?;
    io::write_displacement(&d.join("u_gt.bin"), &pair.u_gt)?;
    println!(
        "synthetic pair {:?}: max |u_gt| {} voxels, min det {}",
        spec.dims,
        report::fmt_num(pair.u_gt.max_norm()),
        report::fmt_num(synth::min_det(&pair.u_gt))
    );
    Ok(())
}
