use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};

use hazemix::airlight::{estimate_airlight_with_patch, DEFAULT_PATCH};
use hazemix::density::{estimate_density, wasserstein};
use hazemix::image::{synthesize_hazy, SyntheticHazeParams, TransmissionMap};
use hazemix::io::{load_image, read_pfm, save_image};
use hazemix::pipeline::{run_augment, DatasetManifest, Mode, RunConfig};
use hazemix::target::load_target_dir;
use hazemix::{to_brightness, AtmosphericLight, Error};

const EXIT_IO: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

#[derive(Parser)]
#[command(name = "hazemix", version, about = "Haze-density-aware mixup augmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print or save the 256-bin brightness density of an image.
    Density {
        image: PathBuf,
        /// Write the histogram sidecar here instead of printing it.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Estimate the atmospheric light as "R,G,B".
    Airlight {
        image: PathBuf,
        /// Dark-channel window size (odd).
        #[arg(long, default_value_t = DEFAULT_PATCH)]
        patch: usize,
    },
    /// Augment a paired dataset.
    Augment(AugmentArgs),
    /// Render a hazy image from a clean one.
    #[command(group(ArgGroup::new("transmission").required(true).args(["t", "depth"])))]
    Synth {
        #[arg(long)]
        clean: PathBuf,
        #[arg(long, value_parser = parse_airlight)]
        airlight: AtmosphericLight,
        /// Constant transmission in [0, 1].
        #[arg(long)]
        t: Option<f64>,
        /// Depth map: `ramp` (0 at the left edge to 1 at the right edge), a
        /// `.pfm` float map, or an 8-bit image read as brightness/255.
        #[arg(long, requires = "beta")]
        depth: Option<String>,
        /// Scattering coefficient applied to the depth map.
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Wasserstein distance between the brightness densities of two images.
    Distance {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        p: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Adapt,
    Generalize,
    ScalarAblation,
}

#[derive(clap::Args)]
struct AugmentArgs {
    /// Directory with `<id>_hazy.png` / `<id>_GT.png` pairs.
    #[arg(long, required_unless_present = "pairs")]
    source: Option<PathBuf>,
    /// JSON list of `{id, hazy, clean}` pairs, replacing directory scanning.
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Directory of target-domain hazy images.
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    samples_per_pair: usize,
    #[arg(long, value_enum, default_value = "adapt")]
    mode: ModeArg,
    /// Restrict each interpolation to a random subset of this many targets.
    #[arg(long)]
    subset: Option<usize>,
    /// Use this airlight instead of estimating it per image.
    #[arg(long, value_parser = parse_airlight)]
    airlight: Option<AtmosphericLight>,
    /// Also run the reference solver and record its objective.
    #[arg(long)]
    oracle: bool,
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    /// Control points of randomized targets (generalize mode).
    #[arg(long, default_value_t = 8)]
    control_points: usize,
    /// Write weight maps (.pfm) and histograms next to each sample.
    #[arg(long)]
    debug_dump: bool,
}

fn parse_airlight(s: &str) -> Result<AtmosphericLight, String> {
    AtmosphericLight::parse(s).map_err(|e| e.to_string())
}

fn depth_map(spec: &str, width: usize, height: usize) -> hazemix::Result<Vec<f64>> {
    if spec == "ramp" {
        let denom = (width.max(2) - 1) as f64;
        return Ok((0..height)
            .flat_map(|_| (0..width).map(move |x| x as f64 / denom))
            .collect());
    }
    let path = Path::new(spec);
    let (w, h, values) = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pfm")) {
        let (w, h, v) = read_pfm(path)?;
        (w, h, v.into_iter().map(f64::from).collect())
    } else {
        let img = to_brightness(&load_image(path)?);
        let v = img.as_raw().iter().map(|&b| f64::from(b) / 255.0).collect();
        (img.width(), img.height(), v)
    };
    if (w, h) != (width, height) {
        return Err(Error::DimensionMismatch {
            expected: (width, height),
            actual: (w, h),
        });
    }
    Ok(values)
}

fn run(cli: Cli) -> hazemix::Result<()> {
    match cli.command {
        Command::Density { image, json } => {
            let h = estimate_density(&to_brightness(&load_image(&image)?))?;
            match json {
                Some(out) => h.save(out)?,
                None => println!("{}", h.to_json()),
            }
        }
        Command::Airlight { image, patch } => {
            println!("{}", estimate_airlight_with_patch(&load_image(&image)?, patch)?);
        }
        Command::Synth {
            clean,
            airlight,
            t,
            depth,
            beta,
            out,
        } => {
            let clean = load_image(&clean)?;
            let (w, h) = clean.dims();
            let transmission = match (t, depth) {
                (Some(t), _) => TransmissionMap::constant(w, h, t)?,
                (None, Some(depth)) => {
                    let beta = beta.expect("clap enforces --beta with --depth");
                    TransmissionMap::from_depth(w, h, beta, &depth_map(&depth, w, h)?)?
                }
                (None, None) => unreachable!("clap requires --t or --depth"),
            };
            let params = SyntheticHazeParams {
                airlight: airlight.rgb(),
                transmission,
            };
            save_image(&synthesize_hazy(&clean, &params)?, out)?;
        }
        Command::Distance { a, b, p } => {
            let da = estimate_density(&to_brightness(&load_image(&a)?))?;
            let db = estimate_density(&to_brightness(&load_image(&b)?))?;
            println!("{}", wasserstein(&da, &db, p)?);
        }
        Command::Augment(args) => augment(args)?,
    }
    Ok(())
}

fn augment(args: AugmentArgs) -> hazemix::Result<()> {
    let mode = match args.mode {
        ModeArg::Adapt => Mode::Adapt,
        ModeArg::Generalize => Mode::Generalize,
        ModeArg::ScalarAblation => Mode::ScalarAblation,
    };
    let dataset = match (&args.pairs, &args.source) {
        (Some(list), _) => DatasetManifest::from_pairs_file(list)?,
        (None, Some(dir)) => DatasetManifest::scan(dir)?,
        (None, None) => unreachable!("clap requires --source or --pairs"),
    };
    let mut cfg = RunConfig::new(mode, args.seed, args.out);
    cfg.samples_per_pair = args.samples_per_pair;
    cfg.p = args.p;
    cfg.airlight_override = args.airlight;
    cfg.subset_k = args.subset;
    cfg.control_points = args.control_points;
    cfg.oracle = args.oracle;
    cfg.debug_dump = args.debug_dump;
    let domain = match (&args.target, mode) {
        (Some(dir), Mode::Adapt | Mode::ScalarAblation) => Some(load_target_dir(dir, cfg.grid)?),
        (None, Mode::Adapt) => {
            return Err(Error::InvalidArgument("adapt mode requires --target".into()))
        }
        _ => None,
    };
    let manifest = run_augment(&dataset, domain.as_ref(), &cfg)?;
    log::info!(
        "wrote {} samples for {} pairs to {}",
        manifest.samples.len(),
        dataset.pairs().len(),
        cfg.output_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { EXIT_IO } else { EXIT_VALIDATION })
        }
    }
}
