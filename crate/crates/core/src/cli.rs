//! The `splatc` command-line tool.
//!
//! Exit codes: 0 success, 1 unreadable or malformed input, 2 fit
//! divergence, 3 output write failure, 64 bad arguments or config.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{decode_gsf, decode_to_image, encode_gsf, GsfHeader};
use crate::corpus::{self, CorpusManifest};
use crate::error::Error;
use crate::fit::{fit, fit_batch, FitConfig, InitStrategy};
use crate::imageio::{encode_for_path, read_image};
use crate::metrics::{compression_ratio, compression_ratio_with_header, format_psnr, QualityReport};
use crate::model::ImageBuffer;
use crate::prune::{PruneConfig, PruneStats};
use crate::render::DEFAULT_TILE_SIZE;

pub const EXIT_INPUT: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_WRITE: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

/// Smallest accepted input side.
pub const MIN_SIDE: u32 = 8;

#[derive(Debug, Parser)]
#[command(name = "splatc", version, about = "2D Gaussian splatting image codec")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "SPLATC_WORKERS")]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit an image and write a .gsf file.
    Encode(EncodeArgs),
    /// Render a .gsf file to PNG or PPM.
    Decode(DecodeArgs),
    /// Print header fields and the compression ratio of a .gsf file.
    Info(InfoArgs),
    /// Fit a grid of configurations and write one CSV row per fit.
    Sweep(SweepArgs),
    /// Compare batched against one-at-a-time fitting throughput.
    Bench(BenchArgs),
}

/// Fit options shared by `encode` and `sweep`. Unset flags fall back to
/// the config file, then to the library defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct FitFlags {
    /// key=value file with fit settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(short = 'n', long = "gaussians")]
    pub gaussians: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    /// Base step size; positions and factors default to 0.1x and 0.3x of it.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_mu: Option<f64>,
    #[arg(long)]
    pub lr_chol: Option<f64>,
    #[arg(long)]
    pub lr_color: Option<f64>,
    #[arg(long)]
    pub l1: Option<f64>,
    #[arg(long)]
    pub init: Option<InitStrategy>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tile: Option<u32>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct PruneFlags {
    /// Fraction of splats to prune at 70% of the iterations.
    #[arg(long, conflicts_with = "prune_threshold")]
    pub prune_ratio: Option<f64>,
    /// Prune splats with luminance below this value.
    #[arg(long)]
    pub prune_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    pub input: PathBuf,
    #[arg(short = 'o', long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub fit: FitFlags,
    #[command(flatten)]
    pub prune: PruneFlags,
    /// Print a JSON report on stdout.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    pub input: PathBuf,
    /// Output image; `.ppm` writes P6, anything else PNG.
    #[arg(short = 'o', long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TILE_SIZE)]
    pub tile: u32,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct InfoArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Images to sweep over.
    pub images: Vec<PathBuf>,
    /// Corpus manifest whose entries are appended to the images.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Cache directory for fetched corpus entries.
    #[arg(long, default_value = "corpus/cache")]
    pub cache: PathBuf,
    /// Halve every image this many times before fitting.
    #[arg(long, default_value_t = 0)]
    pub downsample: u32,
    #[arg(long, value_delimiter = ',', default_values_t = [400usize, 784, 1600, 3136, 4900])]
    pub counts: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [InitStrategy::Structured, InitStrategy::Random])]
    pub inits: Vec<InitStrategy>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.2, 0.5, 0.8])]
    pub prune_ratios: Vec<f64>,
    #[command(flatten)]
    pub fit: FitFlags,
    /// CSV destination.
    #[arg(long, short = 'o')]
    pub csv: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8])]
    pub batch_sizes: Vec<usize>,
    #[arg(short = 'n', long = "gaussians", default_value_t = 400)]
    pub gaussians: usize,
    #[arg(long, default_value_t = 50)]
    pub iters: usize,
    /// Side of the square synthetic targets.
    #[arg(long, default_value_t = 64)]
    pub size: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

/// A failed command: exit code plus one-line diagnostic.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self { code: EXIT_INPUT, message: message.into() }
    }

    fn write(path: &Path, err: impl std::fmt::Display) -> Self {
        Self { code: EXIT_WRITE, message: format!("cannot write {}: {err}", path.display()) }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    fn fit(err: Error) -> Self {
        match err {
            Error::NonFiniteLoss(_) => Self { code: EXIT_DIVERGED, message: format!("fit diverged: {err}") },
            Error::InvalidConfig(_) => Self::usage(err.to_string()),
            other => Self::input(other.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodeReport {
    pub input: String,
    pub output: String,
    pub width: u32,
    pub height: u32,
    pub config: FitConfig,
    pub initial_psnr_db: Option<f64>,
    /// PSNR of the fitted set before float16 storage.
    pub final_psnr_db: Option<f64>,
    pub final_loss: f64,
    pub alive: usize,
    pub prune: Option<PruneStats>,
    /// Measured on the decoded file.
    pub quality: QualityReport,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeReport {
    pub input: String,
    pub output: String,
    pub width: u32,
    pub height: u32,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfoReport {
    pub width: u32,
    pub height: u32,
    pub count: usize,
    pub payload_bytes: usize,
    pub file_bytes: usize,
    pub colors_clamped: bool,
    pub compression_ratio: f64,
    pub compression_ratio_with_header: f64,
}

/// One sweep CSV row. Column order is the field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRow {
    pub image: String,
    pub n_gaussians: usize,
    pub init: InitStrategy,
    pub prune_ratio: f64,
    pub l1_weight: f64,
    pub final_psnr_db: f64,
    pub compression_ratio: f64,
    pub wall_time_s: f64,
    pub alive_after_prune: usize,
    /// PSNR lost against the unpruned row of the same image, count and
    /// init; empty when the sweep has no unpruned row.
    pub psnr_drop_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepReport {
    pub config: FitConfig,
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchRow {
    pub batch_size: usize,
    pub images_per_sec: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchReport {
    pub workers: usize,
    pub images: usize,
    pub config: FitConfig,
    pub rows: Vec<BenchRow>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return if e.use_stderr() {
                let _ = write!(err, "{e}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{e}");
                0
            };
        }
    };
    let result = match cli.workers {
        Some(0) => Err(Failure::usage("--workers must be at least 1")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli.command, out, err)),
            Err(e) => Err(Failure::usage(format!("cannot start {n} workers: {e}"))),
        },
        None => dispatch(&cli.command, out, err),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "splatc: {}", f.message);
            f.code
        }
    }
}

fn dispatch(command: &Command, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> CmdResult {
    match command {
        Command::Encode(a) => cmd_encode(a, out, err),
        Command::Decode(a) => cmd_decode(a, out),
        Command::Info(a) => cmd_info(a, out),
        Command::Sweep(a) => cmd_sweep(a, out, err),
        Command::Bench(a) => cmd_bench(a, out),
    }
}

/// Reads a `key=value` fit config; `#` starts a comment.
pub fn parse_config_file(text: &str, mut base: FitConfig) -> Result<FitConfig, String> {
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value", n + 1))?;
        let (key, value) = (key.trim(), value.trim());
        let bad = |e: &dyn std::fmt::Display| format!("line {}: {key}: {e}", n + 1);
        macro_rules! parse {
            () => {
                value.parse().map_err(|e| bad(&e))?
            };
        }
        match key {
            "gaussians" => base.num_gaussians = parse!(),
            "iters" => base.iterations = parse!(),
            "lr" => base.learning_rate = parse!(),
            "lr_mu" => base.lr_mu = Some(parse!()),
            "lr_chol" => base.lr_chol = Some(parse!()),
            "lr_color" => base.lr_color = Some(parse!()),
            "l1" => base.l1_weight = parse!(),
            "init" => base.init_strategy = parse!(),
            "init_sigma_scale" => base.init_sigma_scale = parse!(),
            "seed" => base.seed = parse!(),
            "tile" => base.tile_size = parse!(),
            "log_every" => base.log_every = parse!(),
            "prune_ratio" => base.prune = Some(PruneConfig::with_ratio(parse!())),
            "prune_threshold" => base.prune = Some(PruneConfig::with_threshold(parse!())),
            "prune_schedule" => {
                base.prune.get_or_insert_with(PruneConfig::default).schedule_fraction = parse!()
            }
            _ => return Err(format!("line {}: unknown key {key:?}", n + 1)),
        }
    }
    Ok(base)
}

/// Defaults, then the config file, then explicit flags.
pub fn effective_config(flags: &FitFlags, prune: &PruneFlags) -> Result<FitConfig, Failure> {
    let mut cfg = FitConfig::default();
    if let Some(path) = &flags.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::input(format!("cannot read config {}: {e}", path.display())))?;
        cfg = parse_config_file(&text, cfg).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    }
    if let Some(v) = flags.gaussians {
        cfg.num_gaussians = v;
    }
    if let Some(v) = flags.iters {
        cfg.iterations = v;
    }
    if let Some(v) = flags.lr {
        cfg.learning_rate = v;
    }
    cfg.lr_mu = flags.lr_mu.or(cfg.lr_mu);
    cfg.lr_chol = flags.lr_chol.or(cfg.lr_chol);
    cfg.lr_color = flags.lr_color.or(cfg.lr_color);
    if let Some(v) = flags.l1 {
        cfg.l1_weight = v;
    }
    if let Some(v) = flags.init {
        cfg.init_strategy = v;
    }
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = flags.tile {
        cfg.tile_size = v;
    }
    let schedule = cfg.prune.map(|p| p.schedule_fraction);
    let with_schedule = |mut p: PruneConfig| {
        if let Some(s) = schedule {
            p.schedule_fraction = s;
        }
        p
    };
    if let Some(r) = prune.prune_ratio {
        cfg.prune = Some(with_schedule(PruneConfig::with_ratio(r)));
    } else if let Some(t) = prune.prune_threshold {
        cfg.prune = Some(with_schedule(PruneConfig::with_threshold(t)));
    }
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(cfg)
}

fn load_input(path: &Path) -> Result<ImageBuffer, Failure> {
    let img = read_image(path).map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
    if img.width < MIN_SIDE || img.height < MIN_SIDE {
        return Err(Failure::input(format!(
            "{}: {}x{} is below the {MIN_SIDE}x{MIN_SIDE} minimum",
            path.display(),
            img.width,
            img.height
        )));
    }
    Ok(img)
}

/// Writes through a temporary file in the destination directory so a
/// failed command never leaves a partial output behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CmdResult {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Failure::write(path, e))?;
    tmp.write_all(bytes).map_err(|e| Failure::write(path, e))?;
    tmp.persist(path).map_err(|e| Failure::write(path, e.error))?;
    Ok(())
}

fn json_line<T: Serialize>(out: &mut (dyn Write + Send), value: &T) -> CmdResult {
    let text = serde_json::to_string(value).expect("reports serialize");
    writeln!(out, "{text}").map_err(|e| Failure::write(Path::new("<stdout>"), e))
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn cmd_encode(args: &EncodeArgs, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> CmdResult {
    let config = effective_config(&args.fit, &args.prune)?;
    let target = load_input(&args.input)?;
    if target.width > u16::MAX as u32 || target.height > u16::MAX as u32 {
        return Err(Failure::input(format!("{}: image too large for the container", args.input.display())));
    }
    let (set, report) = fit(&target, &config).map_err(Failure::fit)?;
    let bytes = encode_gsf(&set).map_err(|e| Failure::fit(Error::InvalidConfig(e.to_string())))?;
    let decoded = decode_to_image(&bytes, config.tile_size).map_err(|e| Failure::input(e.to_string()))?;
    let quality = QualityReport::measure(&decoded, &target, set.alive_count()).map_err(Failure::fit)?;
    write_atomic(&args.output, &bytes)?;

    let summary = format!(
        "{} -> {}: {}x{}, {} gaussians, psnr {} dB, ratio {:.2}, {:.1}s",
        args.input.display(),
        args.output.display(),
        target.width,
        target.height,
        set.alive_count(),
        format_psnr(quality.psnr_db.unwrap_or(f64::INFINITY)),
        quality.compression_ratio,
        report.wall_time
    );
    if args.json {
        let _ = writeln!(err, "{summary}");
        json_line(
            out,
            &EncodeReport {
                input: args.input.display().to_string(),
                output: args.output.display().to_string(),
                width: target.width,
                height: target.height,
                config,
                initial_psnr_db: finite(report.initial_psnr),
                final_psnr_db: finite(report.final_psnr),
                final_loss: report.final_loss,
                alive: set.alive_count(),
                prune: report.prune,
                quality,
                wall_time_s: report.wall_time,
            },
        )
    } else {
        writeln!(out, "{summary}").map_err(|e| Failure::write(Path::new("<stdout>"), e))
    }
}

fn read_gsf(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))
}

fn cmd_decode(args: &DecodeArgs, out: &mut (dyn Write + Send)) -> CmdResult {
    if args.tile == 0 {
        return Err(Failure::usage("--tile must be at least 1"));
    }
    let bytes = read_gsf(&args.input)?;
    let set = decode_gsf(&bytes).map_err(|e| Failure::input(format!("{}: {e}", args.input.display())))?;
    let img = decode_to_image(&bytes, args.tile).map_err(|e| Failure::input(format!("{}: {e}", args.input.display())))?;
    let encoded = encode_for_path(&img, &args.output).map_err(|e| Failure::write(&args.output, e))?;
    write_atomic(&args.output, &encoded)?;
    if args.json {
        json_line(
            out,
            &DecodeReport {
                input: args.input.display().to_string(),
                output: args.output.display().to_string(),
                width: set.width,
                height: set.height,
                count: set.len(),
            },
        )
    } else {
        writeln!(
            out,
            "{} -> {}: {}x{}, {} gaussians",
            args.input.display(),
            args.output.display(),
            set.width,
            set.height,
            set.len()
        )
        .map_err(|e| Failure::write(Path::new("<stdout>"), e))
    }
}

fn cmd_info(args: &InfoArgs, out: &mut (dyn Write + Send)) -> CmdResult {
    let bytes = read_gsf(&args.input)?;
    let header = GsfHeader::parse(&bytes).map_err(|e| Failure::input(format!("{}: {e}", args.input.display())))?;
    // validates the payload too
    decode_gsf(&bytes).map_err(|e| Failure::input(format!("{}: {e}", args.input.display())))?;
    let (w, h, n) = (header.width as u32, header.height as u32, header.count as usize);
    let info = InfoReport {
        width: w,
        height: h,
        count: n,
        payload_bytes: header.payload_bytes(),
        file_bytes: header.file_bytes(),
        colors_clamped: header.flags & crate::codec::FLAG_COLORS_CLAMPED != 0,
        compression_ratio: compression_ratio(w, h, n),
        compression_ratio_with_header: compression_ratio_with_header(w, h, n),
    };
    if args.json {
        return json_line(out, &info);
    }
    let ratio = if info.compression_ratio.is_finite() {
        format!("{:.2}", info.compression_ratio)
    } else {
        "inf".into()
    };
    writeln!(
        out,
        "width {}\nheight {}\ncount {}\npayload_bytes {}\nfile_bytes {}\nratio {ratio}",
        info.width, info.height, info.count, info.payload_bytes, info.file_bytes
    )
    .map_err(|e| Failure::write(Path::new("<stdout>"), e))
}

fn image_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn sweep_images(args: &SweepArgs) -> Result<Vec<(String, ImageBuffer)>, Failure> {
    let mut images = Vec::new();
    for path in &args.images {
        images.push((image_name(path), load_input(path)?));
    }
    if let Some(m) = &args.manifest {
        let manifest = CorpusManifest::load(m).map_err(|e| Failure::input(e.to_string()))?;
        images.extend(corpus::resolve(&manifest, &args.cache).map_err(|e| Failure::input(e.to_string()))?);
    }
    if images.is_empty() {
        return Err(Failure::usage("sweep needs at least one image"));
    }
    for _ in 0..args.downsample {
        for (_, img) in images.iter_mut() {
            *img = img.downsample2x();
        }
    }
    Ok(images)
}

/// Runs every (image, count, init, prune ratio) combination. Rows come
/// back in that nesting order.
pub fn run_sweep(images: &[(String, ImageBuffer)], args: &SweepArgs, base: &FitConfig) -> Result<Vec<SweepRow>, Failure> {
    if args.counts.is_empty() || args.inits.is_empty() || args.prune_ratios.is_empty() {
        return Err(Failure::usage("sweep lists must be non-empty"));
    }
    let mut jobs = Vec::new();
    for (k, (name, img)) in images.iter().enumerate() {
        for &n in &args.counts {
            for &init in &args.inits {
                for &ratio in &args.prune_ratios {
                    let cfg = FitConfig {
                        num_gaussians: n,
                        init_strategy: init,
                        prune: (ratio > 0.0).then(|| PruneConfig::with_ratio(ratio)),
                        ..base.clone()
                    };
                    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
                    jobs.push((k, name, img, ratio, cfg));
                }
            }
        }
    }
    let fitted: Vec<Result<SweepRow, Error>> = jobs
        .par_iter()
        .map(|(_, name, img, ratio, cfg)| {
            let started = Instant::now();
            let (set, report) = fit(img, cfg)?;
            let alive = set.alive_count();
            Ok(SweepRow {
                image: name.to_string(),
                n_gaussians: cfg.num_gaussians,
                init: cfg.init_strategy,
                prune_ratio: *ratio,
                l1_weight: cfg.l1_weight,
                final_psnr_db: report.final_psnr,
                compression_ratio: compression_ratio(img.width, img.height, alive),
                wall_time_s: started.elapsed().as_secs_f64(),
                alive_after_prune: alive,
                psnr_drop_db: None,
            })
        })
        .collect();
    let mut rows = Vec::with_capacity(fitted.len());
    for r in fitted {
        rows.push(r.map_err(Failure::fit)?);
    }
    let baselines: Vec<Option<f64>> = rows
        .iter()
        .map(|row| {
            rows.iter()
                .find(|b| b.prune_ratio == 0.0 && b.image == row.image && b.n_gaussians == row.n_gaussians && b.init == row.init)
                .map(|b| b.final_psnr_db)
        })
        .collect();
    for (row, base) in rows.iter_mut().zip(baselines) {
        row.psnr_drop_db = base.map(|b| b - row.final_psnr_db);
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

fn cmd_sweep(args: &SweepArgs, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> CmdResult {
    let base = effective_config(&args.fit, &PruneFlags::default())?;
    let images = sweep_images(args)?;
    let _ = writeln!(
        err,
        "sweeping {} images x {} counts x {} inits x {} prune ratios",
        images.len(),
        args.counts.len(),
        args.inits.len(),
        args.prune_ratios.len()
    );
    let rows = run_sweep(&images, args, &base)?;
    write_atomic(&args.csv, sweep_csv(&rows).as_bytes())?;
    if args.json {
        json_line(out, &SweepReport { config: base, rows })
    } else {
        writeln!(out, "wrote {} rows to {}", rows.len(), args.csv.display()).map_err(|e| Failure::write(Path::new("<stdout>"), e))
    }
}

/// Synthetic targets for benchmarking.
pub fn bench_targets(count: usize, size: u32, seed: u64) -> Vec<ImageBuffer> {
    (0..count)
        .map(|k| corpus::generate_synthetic("bandlimited-noise", seed.wrapping_add(k as u64), size, size).expect("known kind"))
        .collect()
}

/// Times fitting the same images in batches of each size. Batch size 1
/// is one-at-a-time fitting and is the speedup baseline.
pub fn run_bench(args: &BenchArgs) -> Result<BenchReport, Failure> {
    if args.batch_sizes.iter().any(|&b| b == 0) {
        return Err(Failure::usage("batch sizes must be positive"));
    }
    let config = FitConfig {
        num_gaussians: args.gaussians,
        iterations: args.iters,
        seed: args.seed,
        log_every: args.iters.max(1),
        ..FitConfig::default()
    };
    config.validate().map_err(|e| Failure::usage(e.to_string()))?;
    if args.size < MIN_SIDE {
        return Err(Failure::usage(format!("--size must be at least {MIN_SIDE}")));
    }
    let images = args.batch_sizes.iter().copied().max().unwrap_or(1);
    let targets = bench_targets(images, args.size, args.seed);
    let throughput = |batch: usize| -> Result<f64, Failure> {
        let started = Instant::now();
        for chunk in targets.chunks(batch) {
            fit_batch(chunk, &config).map_err(Failure::fit)?;
        }
        Ok(images as f64 / started.elapsed().as_secs_f64())
    };
    let baseline = throughput(1)?;
    let mut rows = Vec::new();
    for &b in &args.batch_sizes {
        let ips = if b == 1 { baseline } else { throughput(b)? };
        rows.push(BenchRow {
            batch_size: b,
            images_per_sec: ips,
            speedup: ips / baseline,
        });
    }
    Ok(BenchReport {
        workers: rayon::current_num_threads(),
        images,
        config,
        rows,
    })
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

fn cmd_bench(args: &BenchArgs, out: &mut (dyn Write + Send)) -> CmdResult {
    let report = run_bench(args)?;
    if let Some(path) = &args.csv {
        write_atomic(path, bench_csv(&report.rows).as_bytes())?;
    }
    if args.json {
        return json_line(out, &report);
    }
    let mut text = format!(
        "{} images, {} gaussians, {} iterations, {} workers\n{:>10} {:>14} {:>8}\n",
        report.images, args.gaussians, args.iters, report.workers, "batch_size", "images_per_sec", "speedup"
    );
    for r in &report.rows {
        text.push_str(&format!("{:>10} {:>14.3} {:>8.2}\n", r.batch_size, r.images_per_sec, r.speedup));
    }
    write!(out, "{text}").map_err(|e| Failure::write(Path::new("<stdout>"), e))
}
