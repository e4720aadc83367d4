//! Command-line driver for the perspective-transformation layer library.
//!
//! Subcommands: `warp` (single-image warp), `distort` (random-distortion
//! corpus preparation), `rectify` (train a layer stack to undo the
//! distortions), `gradcheck` (finite-difference gradient validation) and
//! `inspect` (print a homography file).
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod output;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use pt_layer::distort::{distort_corpus, read_manifest, write_manifest, DistortConfig};
use pt_layer::gradcheck::{run_suite, tolerance_for, SuiteConfig};
use pt_layer::image::{encode_pnm, load_image};
use pt_layer::optim::{
    corner_reprojection_error, train_rectifier, RectifierInit, TrainConfig,
};
use pt_layer::{Error as LibError, Homography, KernelSpec, PTLayer, Point2};

use output::StagedOutputs;

/// `println!` that shrugs off a closed stdout (e.g. piping into `head`)
/// instead of panicking.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

/// `print!` variant of [`say!`].
macro_rules! say_raw {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = write!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "ptlayer", version, about = "Perspective-transformation layer toolbox")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Warp one image through a homography.
    Warp {
        /// Input image (PGM/PPM; ASCII or binary).
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        /// Output image (binary PGM/PPM).
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Homography text file (3 lines of 3 numbers).
        #[arg(long, value_name = "FILE")]
        tm: Option<PathBuf>,
        /// The eight free parameters, comma separated, row-major.
        #[arg(long, value_name = "P1,..,P8", value_delimiter = ',', allow_hyphen_values = true)]
        params: Option<Vec<f64>>,
        /// Interpolation kernel: bilinear, bicubic or bicubic:<alpha>.
        #[arg(long, default_value = "bilinear", value_parser = parse_kernel)]
        kernel: KernelSpec,
        /// Maxval of the written file.
        #[arg(long, default_value_t = 255)]
        maxval: u32,
    },
    /// Apply random perspective distortions to a directory of images.
    Distort {
        /// Directory of input images.
        #[arg(long = "in", value_name = "DIR")]
        input: PathBuf,
        /// Output directory (distorted images plus manifest.csv).
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Max corner displacement as a fraction of min(H, W).
        #[arg(long, default_value_t = 0.15)]
        rho: f64,
        /// Fraction of images left unmodified.
        #[arg(long, default_value_t = 0.125)]
        keep: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Maxval of the written files.
        #[arg(long, default_value_t = 255)]
        maxval: u32,
    },
    /// Train a stack of single-TM layers to undo manifest distortions.
    Rectify {
        /// Manifest CSV written by `distort`.
        #[arg(long, value_name = "FILE")]
        pairs: PathBuf,
        /// Directory of the original (undistorted) images.
        #[arg(long = "in", value_name = "DIR")]
        originals: PathBuf,
        /// Directory of the distorted images (default: the manifest's directory).
        #[arg(long, value_name = "DIR")]
        distorted: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value_t = 300)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value = "bilinear", value_parser = parse_kernel)]
        kernel: KernelSpec,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Layer initialization: jitter or identity.
        #[arg(long, default_value = "jitter", value_parser = parse_init)]
        init: RectifierInit,
        /// Write the loss trace CSV (header: epoch,mse) here.
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
        /// Write learned homographies (layer<i>.tm, composite.tm) here.
        #[arg(long = "save-tms", value_name = "DIR")]
        save_tms: Option<PathBuf>,
        /// Write rectified images here.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Maxval of written images.
        #[arg(long, default_value_t = 255)]
        maxval: u32,
    },
    /// Validate every analytic gradient against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Randomized configurations per kernel.
        #[arg(long, default_value_t = 100)]
        configs: usize,
    },
    /// Print a homography file: matrix, inverse, determinant, unit-frame corners.
    Inspect {
        #[arg(long, value_name = "FILE")]
        tm: PathBuf,
    },
}

fn parse_kernel(s: &str) -> Result<KernelSpec, String> {
    match s {
        "bilinear" => Ok(KernelSpec::Bilinear),
        "bicubic" => Ok(KernelSpec::bicubic()),
        other => match other.strip_prefix("bicubic:") {
            Some(alpha) => {
                let alpha: f64 = alpha
                    .parse()
                    .map_err(|_| format!("bad bicubic alpha {alpha:?}"))?;
                if !alpha.is_finite() {
                    return Err("bicubic alpha must be finite".into());
                }
                Ok(KernelSpec::Bicubic { alpha })
            }
            None => Err(format!(
                "unknown kernel {other:?} (expected bilinear, bicubic or bicubic:<alpha>)"
            )),
        },
    }
}

fn parse_init(s: &str) -> Result<RectifierInit, String> {
    match s {
        "jitter" => Ok(RectifierInit::IdentityJitter),
        "identity" => Ok(RectifierInit::ExactIdentity),
        other => Err(format!("unknown init {other:?} (expected jitter or identity)")),
    }
}

enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Data(msg) | CliError::Numeric(msg) => {
                f.write_str(msg)
            }
        }
    }
}

impl From<LibError> for CliError {
    fn from(err: LibError) -> Self {
        match err {
            LibError::Io(_)
            | LibError::Format(_)
            | LibError::ShapeMismatch(_)
            | LibError::InvalidArgument(_) => CliError::Data(err.to_string()),
            LibError::SingularMatrix(_)
            | LibError::DegenerateCamera(_)
            | LibError::HorizonSingularity { .. }
            | LibError::CacheMismatch(_)
            | LibError::RejectionLimit(_)
            | LibError::ConfigRejected(_) => CliError::Numeric(err.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Data(err.to_string())
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = run(cli.command) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Warp {
            input,
            out,
            tm,
            params,
            kernel,
            maxval,
        } => warp(&input, &out, tm.as_deref(), params.as_deref(), kernel, maxval),
        Command::Distort {
            input,
            out,
            rho,
            keep,
            seed,
            maxval,
        } => distort(&input, &out, rho, keep, seed, maxval),
        Command::Rectify {
            pairs,
            originals,
            distorted,
            layers,
            epochs,
            lr,
            kernel,
            seed,
            init,
            report,
            save_tms,
            out,
            maxval,
        } => rectify(RectifyArgs {
            pairs,
            originals,
            distorted,
            layers,
            epochs,
            lr,
            kernel,
            seed,
            init,
            report,
            save_tms,
            out,
            maxval,
        }),
        Command::Gradcheck { seed, configs } => gradcheck(seed, configs),
        Command::Inspect { tm } => inspect(&tm),
    }
}

fn load_tm_file(path: &Path) -> Result<Homography, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(Homography::from_text(&text)?)
}

fn warp(
    input: &Path,
    out: &Path,
    tm: Option<&Path>,
    params: Option<&[f64]>,
    kernel: KernelSpec,
    maxval: u32,
) -> Result<(), CliError> {
    let homography = match (tm, params) {
        (Some(path), None) => load_tm_file(path)?,
        (None, Some(values)) => {
            let array: [f64; 8] = values.try_into().map_err(|_| {
                CliError::Usage(format!("--params needs 8 values, got {}", values.len()))
            })?;
            Homography::from_params(array)?
        }
        _ => {
            return Err(CliError::Usage(
                "provide exactly one of --tm or --params".into(),
            ))
        }
    };
    let image = load_image(input)?;
    let layer = PTLayer::from_tms(vec![homography], kernel)?;
    let (warped, _) = layer.forward(&image)?;
    let bytes = encode_pnm(&warped, maxval)?;
    let mut staged = StagedOutputs::new();
    staged.stage(out, &bytes)?;
    staged.commit()?;
    Ok(())
}

/// Image files in `dir`, sorted by file name so indices are stable.
fn list_images(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    let entries =
        fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "pnm"))
            .unwrap_or(false);
        if path.is_file() && is_image {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!(
            "no .pgm/.ppm/.pnm images in {}",
            dir.display()
        )));
    }
    Ok(files)
}

fn distort(
    input: &Path,
    out: &Path,
    rho: f64,
    keep: f64,
    seed: u64,
    maxval: u32,
) -> Result<(), CliError> {
    let config = DistortConfig::new(rho, keep, seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let files = list_images(input)?;
    let images = files
        .iter()
        .map(load_image)
        .collect::<Result<Vec<_>, _>>()?;
    let (distorted, manifest) = distort_corpus(&images, &config)?;

    let mut staged = StagedOutputs::new();
    for (file, image) in files.iter().zip(&distorted) {
        let name = file.file_name().expect("listed files have names");
        staged.stage(&out.join(name), &encode_pnm(image, maxval)?)?;
    }
    let mut manifest_bytes = Vec::new();
    write_manifest(&manifest, &mut manifest_bytes)?;
    staged.stage(&out.join("manifest.csv"), &manifest_bytes)?;
    staged.commit()?;

    let transformed = manifest.iter().filter(|e| e.transformed).count();
    say!(
        "distorted {} of {} images (rho {}, seed {}), manifest at {}",
        transformed,
        manifest.len(),
        rho,
        seed,
        out.join("manifest.csv").display()
    );
    Ok(())
}

struct RectifyArgs {
    pairs: PathBuf,
    originals: PathBuf,
    distorted: Option<PathBuf>,
    layers: usize,
    epochs: usize,
    lr: f64,
    kernel: KernelSpec,
    seed: u64,
    init: RectifierInit,
    report: Option<PathBuf>,
    save_tms: Option<PathBuf>,
    out: Option<PathBuf>,
    maxval: u32,
}

fn rectify(args: RectifyArgs) -> Result<(), CliError> {
    if args.layers == 0 || args.epochs == 0 {
        return Err(CliError::Usage("--layers and --epochs must be >= 1".into()));
    }
    if args.lr <= 0.0 || args.lr.is_nan() {
        return Err(CliError::Usage("--lr must be positive".into()));
    }
    let manifest_file = fs::File::open(&args.pairs)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.pairs.display())))?;
    let manifest = read_manifest(manifest_file)?;
    let distorted_dir = match &args.distorted {
        Some(dir) => dir.clone(),
        None => args
            .pairs
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    let distorted_files = list_images(&distorted_dir)?;

    let mut pairs = Vec::with_capacity(manifest.len());
    for entry in &manifest {
        let distorted_path = distorted_files.get(entry.index).ok_or_else(|| {
            CliError::Data(format!(
                "manifest index {} but only {} images in {}",
                entry.index,
                distorted_files.len(),
                distorted_dir.display()
            ))
        })?;
        let name = distorted_path.file_name().expect("listed files have names");
        let original_path = args.originals.join(name);
        let distorted_img = load_image(distorted_path)?;
        let original_img = load_image(&original_path)
            .map_err(|e| CliError::Data(format!("{}: {e}", original_path.display())))?;
        pairs.push((distorted_img, original_img));
    }

    let mut config = TrainConfig::new(args.epochs, args.lr, args.kernel, args.layers, args.seed);
    config.init = args.init;
    let (model, train_report) = train_rectifier(&pairs, &config)?;

    let composite = train_report.composite;
    let initial = train_report.loss_trace[0];
    let final_loss = *train_report.loss_trace.last().unwrap();
    say!("epochs {}: mse {initial:.6e} -> {final_loss:.6e}", args.epochs);

    // With the per-image distortions known, report how far the learned
    // stack is from inverting each of them at the image corners.
    let (h, w) = (pairs[0].0.height(), pairs[0].0.width());
    let mut worst_corner: Option<f64> = None;
    for entry in manifest.iter().filter(|e| e.transformed) {
        let distortion = entry.homography()?;
        let err = corner_reprojection_error(&composite, &distortion, w, h)?;
        worst_corner = Some(worst_corner.map_or(err, |cur: f64| cur.max(err)));
    }
    if let Some(err) = worst_corner {
        say!("max corner reprojection error vs manifest: {err:.4} px");
    }

    let mut staged = StagedOutputs::new();
    if let Some(report_path) = &args.report {
        let mut csv = Vec::new();
        train_report.write_loss_csv(&mut csv)?;
        staged.stage(report_path, &csv)?;
    }
    if let Some(tm_dir) = &args.save_tms {
        for (i, layer) in model.layers().iter().enumerate() {
            let path = tm_dir.join(format!("layer{i}.tm"));
            staged.stage(&path, layer.tms()[0].to_text().as_bytes())?;
        }
        staged.stage(&tm_dir.join("composite.tm"), composite.to_text().as_bytes())?;
    }
    if let Some(out_dir) = &args.out {
        for (file, (distorted_img, _)) in distorted_files.iter().zip(&pairs) {
            let rectified = model.forward(distorted_img)?;
            let name = file.file_name().expect("listed files have names");
            staged.stage(&out_dir.join(name), &encode_pnm(&rectified, args.maxval)?)?;
        }
    }
    staged.commit()?;
    Ok(())
}

fn gradcheck(seed: u64, configs: usize) -> Result<(), CliError> {
    if configs == 0 {
        return Err(CliError::Usage("--configs must be >= 1".into()));
    }
    let mut all_ok = true;
    for kernel in [KernelSpec::Bilinear, KernelSpec::bicubic()] {
        let suite = SuiteConfig::new(seed, configs, kernel);
        let report = run_suite(&suite)?;
        let tolerance = tolerance_for(kernel);
        let ok = report.within(tolerance);
        all_ok &= ok;
        say!(
            "{kernel:?} (tolerance {tolerance:.0e}): {}",
            if ok { "ok" } else { "FAILED" }
        );
        say_raw!("{}", report.to_table());
    }
    if all_ok {
        Ok(())
    } else {
        Err(CliError::Numeric("gradient check tolerance exceeded".into()))
    }
}

fn inspect(tm: &Path) -> Result<(), CliError> {
    let homography = load_tm_file(tm)?;
    say!("matrix:");
    say_raw!("{}", homography.to_text());
    say!("determinant: {:.16e}", homography.det());
    say!("inverse:");
    say_raw!("{}", homography.invert()?.to_text());
    say!("unit frame corners:");
    for corner in [
        Point2::new(0.0, 0.0),
        Point2::new(1.0, 0.0),
        Point2::new(1.0, 1.0),
        Point2::new(0.0, 1.0),
    ] {
        let mapped = homography.apply(corner)?;
        say!(
            "  ({}, {}) -> ({:.6}, {:.6})",
            corner.x, corner.y, mapped.x, mapped.y
        );
    }
    Ok(())
}
