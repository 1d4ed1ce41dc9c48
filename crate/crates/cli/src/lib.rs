//! The `adaq` command line.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on data or integrity
//! errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use adaq_core::bitstream::QuantMode;
use adaq_core::synth::{generate, load_corpus, read_manifest, write_corpus, ScaleProfile, SynthSpec};
use adaq_core::sweep::{ablation_report, ablation_to_csv, sweep, sweep_from_csv, sweep_to_csv, Method};
use adaq_core::{
    decode, decode_progressive, encode_with, AqtFile, Bitstream, CodecSetup, CodingResult, ContextModel, KnownParams,
    Mapping, RateControl, SliceLayout,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

pub const RATE_HEADER: &str = "image,d,bits,bpp,est_bits";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{stage}: {source}")]
    Data {
        stage: &'static str,
        #[source]
        source: adaq_core::Error,
    },
    #[error("{stage}: {message}")]
    Integrity { stage: &'static str, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data { .. } | CliError::Integrity { .. } => EXIT_DATA,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Attaches the failing stage to core errors.
trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T, E: Into<adaq_core::Error>> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|e| CliError::Data { stage, source: e.into() })
    }
}

#[derive(Debug, Parser)]
#[command(name = "adaq", version, about = "Scale-adaptive latent quantization codec")]
pub struct Cli {
    /// Worker threads for corpus commands (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode an .aqt file (or every image of a manifest) to .aqb.
    Encode(EncodeArgs),
    /// Decode an .aqb file to an .aqt holding the reconstruction.
    Decode(DecodeArgs),
    /// Sweep rate settings over a corpus and write RD curves as CSV.
    Sweep(SweepArgs),
    /// BD-rate report of each mapping against the non-adaptive baseline.
    Bdrate(BdrateArgs),
    /// Write a synthetic corpus.
    Synth(SynthArgs),
    /// Decode, re-encode and compare an .aqb file.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MappingArg {
    Linear,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ContextArg {
    Hyperprior,
    Toy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    Nonadaptive,
}

#[derive(Debug, Clone, Args)]
pub struct MappingOpts {
    #[arg(long, value_enum)]
    pub mapping: Option<MappingArg>,
    /// Sigmoid steepness.
    #[arg(long)]
    pub k: Option<f32>,
}

impl MappingOpts {
    fn resolve(&self) -> Result<Option<Mapping>, CliError> {
        match (self.mapping, self.k) {
            (None, Some(_)) | (Some(MappingArg::Linear), Some(_)) => Err(usage("--k requires --mapping sigmoid")),
            (None, None) => Ok(None),
            (Some(MappingArg::Linear), None) => Ok(Some(Mapping::Linear)),
            (Some(MappingArg::Sigmoid), k) => Mapping::sigmoid(k.unwrap_or(5.0))
                .map(Some)
                .map_err(|e| usage(e.to_string())),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct LayoutOpts {
    /// Either a slice count (equal split) or comma-separated channel counts.
    #[arg(long)]
    pub slices: Option<String>,
    #[arg(long, value_enum, default_value = "hyperprior")]
    pub context: ContextArg,
    /// Seed of the toy context model.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl LayoutOpts {
    fn layout(&self, channels: usize) -> Result<SliceLayout, CliError> {
        let spec = self.slices.as_deref().unwrap_or("5");
        let parts = parse_list::<usize>(spec, "--slices")?;
        let layout = if parts.len() == 1 {
            SliceLayout::equal(channels, parts[0])
        } else {
            SliceLayout::new(parts)
        };
        let layout = layout.map_err(|e| usage(format!("--slices: {e}")))?;
        layout
            .check_partitions(channels)
            .map_err(|e| usage(format!("--slices: {e}")))?;
        Ok(layout)
    }

    fn context(&self) -> Result<ContextModel, CliError> {
        match (self.context, self.seed) {
            (ContextArg::Hyperprior, Some(_)) => Err(usage("--seed applies to --context toy only")),
            (ContextArg::Hyperprior, None) => Ok(ContextModel::HyperpriorOnly),
            (ContextArg::Toy, seed) => Ok(ContextModel::ToyAutoregressive { seed: seed.unwrap_or(0) }),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EncodeArgs {
    /// An .aqt file, or a manifest.jsonl to encode a whole corpus.
    #[arg(long)]
    pub input: PathBuf,
    /// An .aqb file, or a directory for corpus input.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub d: Option<f32>,
    #[command(flatten)]
    pub mapping: MappingOpts,
    #[command(flatten)]
    pub layout: LayoutOpts,
    #[arg(long, value_enum)]
    pub baseline: Option<BaselineArg>,
    /// Global step of the non-adaptive baseline.
    #[arg(long)]
    pub step: Option<f32>,
    /// Source image pixel count used for bpp. Required for .aqt input.
    #[arg(long)]
    pub pixels: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// .aqt file holding mu, sigma and z for the image.
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Keep only the first n slices.
    #[arg(long)]
    pub progressive: Option<usize>,
    /// Expected rate setting; progressive decoding accepts only 1.
    #[arg(long)]
    pub d: Option<f32>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Corpus manifest.jsonl.
    #[arg(long)]
    pub input: PathBuf,
    /// CSV destination (stdout if omitted).
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value = "1,2,4,8")]
    pub d_list: String,
    /// Restrict the sweep to the baseline and this mapping.
    #[command(flatten)]
    pub mapping: MappingOpts,
    #[command(flatten)]
    pub layout: LayoutOpts,
}

#[derive(Debug, Clone, Args)]
pub struct BdrateArgs {
    /// Sweep CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Compare each method to the same method in this sweep CSV instead.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Corpus directory.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "edge-bands")]
    pub profile: ScaleProfile,
    #[arg(long, default_value_t = 16)]
    pub images: usize,
    /// Number of equal slices.
    #[arg(long, default_value_t = 5)]
    pub slices: usize,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub params: PathBuf,
}

fn parse_list<T: std::str::FromStr>(s: &str, flag: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| usage(format!("{flag}: cannot parse {p:?}"))))
        .collect()
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "adaq: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let body = move |out: &mut dyn Write| match cli.command {
        Command::Encode(a) => cmd_encode(&a, out),
        Command::Decode(a) => cmd_decode(&a, out),
        Command::Sweep(a) => cmd_sweep(&a, out),
        Command::Bdrate(a) => cmd_bdrate(&a, out),
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Verify(a) => cmd_verify(&a, out),
    };
    match cli.jobs {
        Some(0) => Err(usage("--jobs must be positive")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| usage(format!("--jobs: {e}")))?;
            let mut buf = Vec::new();
            pool.install(|| body(&mut buf))?;
            io_stage(out.write_all(&buf), "writing output")
        }
        None => body(out),
    }
}

fn io_stage<T>(r: std::io::Result<T>, stage: &'static str) -> Result<T, CliError> {
    r.stage(stage)
}

fn write_text(path: Option<&Path>, text: &str, out: &mut dyn Write) -> Result<(), CliError> {
    match path {
        Some(p) => io_stage(fs::write(p, text), "writing output"),
        None => io_stage(out.write_all(text.as_bytes()), "writing output"),
    }
}

fn rate_row(name: &str, rate_parameter: f32, res: &CodingResult) -> String {
    format!(
        "{name},{rate_parameter},{},{:.6},{:.1}",
        res.rate.total_bits(),
        res.rate.bpp(),
        res.rate.total_estimated_bits()
    )
}

fn image_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

impl EncodeArgs {
    fn quant_mode(&self) -> Result<QuantMode, CliError> {
        let mapping = self.mapping.resolve()?;
        match self.baseline {
            Some(BaselineArg::Nonadaptive) => {
                if self.d.is_some() || mapping.is_some() {
                    return Err(usage("--baseline nonadaptive takes --step, not --d/--mapping"));
                }
                let step = self.step.unwrap_or(1.0);
                if !(step.is_finite() && step > 0.0) {
                    return Err(usage(format!("--step must be > 0, got {step}")));
                }
                Ok(QuantMode::Uniform { step })
            }
            None => {
                if self.step.is_some() {
                    return Err(usage("--step requires --baseline nonadaptive"));
                }
                let rc = RateControl::new(self.d.unwrap_or(1.0), mapping.unwrap_or(Mapping::Linear))
                    .map_err(|e| usage(format!("--d: {e}")))?;
                Ok(QuantMode::Adaptive(rc))
            }
        }
    }
}

fn encode_one(
    input: &Path,
    output: &Path,
    pixels: u64,
    a: &EncodeArgs,
    quant: QuantMode,
) -> Result<String, CliError> {
    let f = AqtFile::read(input).stage("reading input")?;
    let y = f.require_y().stage("reading input")?;
    let params = f.params().stage("reading input")?;
    let z = f.hyper_latent().stage("reading input")?;
    let layout = a.layout.layout(y.channels())?;
    let setup = CodecSetup::new(layout, a.layout.context()?, pixels).map_err(|e| usage(e.to_string()))?;
    let (bs, res) = encode_with(y, &params, &z, &setup, quant).stage("encoding")?;
    let bytes = bs.to_bytes().stage("serializing bitstream")?;
    io_stage(fs::write(output, bytes), "writing output")?;
    Ok(rate_row(&image_name(input), quant.rate_parameter(), &res))
}

pub fn cmd_encode(a: &EncodeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let quant = a.quant_mode()?;
    a.layout.context()?;
    if a.pixels == Some(0) {
        return Err(usage("--pixels must be positive"));
    }
    let rows = if a.input.extension().is_some_and(|e| e == "jsonl") {
        let entries = read_manifest(&a.input).stage("reading manifest")?;
        io_stage(fs::create_dir_all(&a.output), "creating output directory")?;
        let dir = a.input.parent().unwrap_or(Path::new("."));
        entries
            .par_iter()
            .map(|e| {
                let src = dir.join(&e.image);
                let dst = a.output.join(Path::new(&e.image).with_extension("aqb"));
                encode_one(&src, &dst, a.pixels.unwrap_or(e.source_pixels), a, quant)
            })
            .collect::<Result<Vec<_>, _>>()?
    } else {
        let pixels = a.pixels.ok_or_else(|| usage("--pixels is required for .aqt input"))?;
        vec![encode_one(&a.input, &a.output, pixels, a, quant)?]
    };
    let mut text = format!("{RATE_HEADER}\n");
    for r in rows {
        text.push_str(&r);
        text.push('\n');
    }
    write_text(None, &text, out)
}

fn read_bitstream(path: &Path) -> Result<Bitstream, CliError> {
    let data = io_stage(fs::read(path), "reading bitstream")?;
    Bitstream::from_bytes(&data).stage("parsing bitstream")
}

fn known_params(path: &Path) -> Result<KnownParams, CliError> {
    let f = AqtFile::read(path).stage("reading parameters")?;
    Ok(KnownParams::new(
        f.params().stage("reading parameters")?,
        f.hyper_latent().stage("reading parameters")?,
    ))
}

pub fn cmd_decode(a: &DecodeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.progressive.is_some() && a.d.is_some_and(|d| d != 1.0) {
        return Err(usage("--progressive is defined at d = 1 only"));
    }
    let bs = read_bitstream(&a.input)?;
    let hyper = known_params(&a.params)?;
    let res = match a.progressive {
        Some(n) => decode_progressive(&bs, &hyper, n).stage("decoding")?,
        None => decode(&bs, &hyper).stage("decoding")?,
    };
    if let Some(d) = a.d {
        let coded = bs.header.quant.rate_parameter();
        if d != coded {
            return Err(usage(format!("--d {d} does not match the bitstream's {coded}")));
        }
    }
    let file = AqtFile {
        y: Some(res.y_hat.clone()),
        ..Default::default()
    };
    file.write(&a.output).stage("writing output")?;
    let text = format!("{RATE_HEADER}\n{}\n", rate_row(&image_name(&a.input), bs.header.quant.rate_parameter(), &res));
    write_text(None, &text, out)
}

pub fn cmd_verify(a: &VerifyArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let bs = read_bitstream(&a.input)?;
    let hyper = known_params(&a.params)?;
    let dec = decode(&bs, &hyper).stage("decoding")?;
    let setup = CodecSetup::new(bs.header.layout.clone(), bs.header.context, bs.header.source_pixels)
        .stage("re-encoding")?;
    let (again, res) = encode_with(&dec.y_hat, &hyper.params, &hyper.z, &setup, bs.header.quant).stage("re-encoding")?;
    if let Some(i) = res.symbols.iter().zip(&dec.symbols).position(|(a, b)| a != b) {
        let c = i / dec.y_hat.plane_len();
        let slice = bs.header.layout.ranges().position(|r| r.contains(&c)).map_or(0, |n| n + 1);
        return Err(CliError::Integrity {
            stage: "verify",
            message: format!("re-encoded symbols differ in slice {slice} (element {i})"),
        });
    }
    if res.symbols.len() != dec.symbols.len() {
        return Err(CliError::Integrity {
            stage: "verify",
            message: "re-encoded symbol count differs".into(),
        });
    }
    if again != bs {
        return Err(CliError::Integrity {
            stage: "verify",
            message: "re-encoded bitstream differs".into(),
        });
    }
    write_text(None, &format!("ok {} slices, {} symbols\n", bs.slices.len(), dec.symbols.len()), out)
}

pub fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let d_list = parse_list::<f32>(&a.d_list, "--d-list")?;
    if d_list.iter().any(|d| !(d.is_finite() && *d > 0.0)) || d_list.windows(2).any(|p| p[0] >= p[1]) {
        return Err(usage("--d-list must be positive and strictly increasing"));
    }
    let methods = match a.mapping.resolve()? {
        Some(m) => vec![Method::NonAdaptive, Method::Adaptive(m)],
        None => Method::ABLATION.to_vec(),
    };
    let context = a.layout.context()?;
    let corpus = load_corpus(&a.input).stage("loading corpus")?;
    let first = corpus
        .first()
        .ok_or_else(|| usage(format!("{} lists no images", a.input.display())))?;
    let layout = a.layout.layout(first.y.channels())?;
    let points = sweep(&corpus, &d_list, &methods, &layout, context).stage("sweeping")?;
    write_text(a.output.as_deref(), &sweep_to_csv(&points), out)
}

pub fn cmd_bdrate(a: &BdrateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let load = |p: &Path| -> Result<_, CliError> {
        let text = io_stage(fs::read_to_string(p), "reading curves")?;
        sweep_from_csv(&text).stage("parsing curves")
    };
    let points = load(&a.input)?;
    let reference = a.reference.as_deref().map(load).transpose()?;
    let rows = ablation_report(&points, reference.as_deref()).stage("computing bd-rate")?;
    write_text(a.output.as_deref(), &ablation_to_csv(&rows), out)
}

pub fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = SynthSpec {
        n_images: a.images,
        slices: a.slices,
        ..SynthSpec::desk_corpus(a.seed, a.profile)
    };
    if a.images == 0 {
        return Err(usage("--images must be positive"));
    }
    let images = generate(&spec).map_err(|e| usage(e.to_string()))?;
    let manifest = write_corpus(&a.output, &spec, &images).stage("writing corpus")?;
    write_text(None, &format!("{}\n", manifest.display()), out)
}
