use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tcemu::issm::{self, CaseStatus, GpuDump, MismatchRecord};
use tcemu::multiword::{log_grid, run_experiment};
use tcemu::presets::{self, supported, table_row};
use tcemu::{
    gemm, inner_product, lookup, parse_hexfloat, render_hexfloat, run_all, Dut, EngineDut, Format,
    Fp8Path, FpValue, Gpu, MatrixHandle, OracleDut, PresetKey, TcConfig,
};

/// Exit status when a comparison finds disagreements.
const MISMATCH: u8 = 2;

#[derive(Parser)]
#[command(name = "tcemu", version, about = "Bit-accurate tensor-core emulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the preset feature table.
    Models {
        /// Also list every resolvable preset key.
        #[arg(long)]
        keys: bool,
    },
    /// Compute D = alpha * A * B + beta * C on a model.
    Gemm(GemmArgs),
    /// Evaluate one inner product d = a . b + c.
    Innerprod(InnerprodArgs),
    /// Probe a model with the feature detectors.
    Detect(DetectArgs),
    /// Compare two devices on random vectors.
    Issm(IssmArgs),
    /// Replay a recorded hardware dump on a model.
    DumpVerify(DumpVerifyArgs),
    /// Write multi-word GEMM error curves.
    Multiword(MultiwordArgs),
}

/// Selects a preset by GPU and formats, or a custom config file.
#[derive(Args)]
struct ModelArgs {
    /// Preset GPU (v100, a100, a2, a30, l40s, ada_rtx1000, h100, h200, b200, b200rn).
    #[arg(long, conflicts_with = "config")]
    model: Option<Gpu>,
    /// Input format of the preset.
    #[arg(long = "in")]
    in_format: Option<Format>,
    /// Output format of the preset.
    #[arg(long = "out")]
    out_format: Option<Format>,
    /// Datapath for fp8 inputs (native or mma).
    #[arg(long)]
    fp8_path: Option<Fp8Path>,
    /// Custom config in `key = value` form.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

impl ModelArgs {
    fn resolve(&self, default_in: Format, default_out: Format) -> Result<TcConfig> {
        if let Some(path) = &self.config {
            if self.in_format.is_some() || self.out_format.is_some() || self.fp8_path.is_some() {
                bail!("--in, --out and --fp8-path apply to presets only; set formats in the config file");
            }
            return load_config(path);
        }
        let Some(gpu) = self.model else {
            bail!("one of --model or --config is required");
        };
        let mut key = PresetKey::new(
            gpu,
            self.in_format.unwrap_or(default_in),
            self.out_format.unwrap_or(default_out),
        );
        if let Some(p) = self.fp8_path {
            key = key.with_path(p);
        }
        Ok(lookup(&key)?)
    }

    fn label(&self) -> String {
        match (&self.model, &self.config) {
            (Some(gpu), _) => gpu.name().to_string(),
            (None, Some(path)) => path.display().to_string(),
            (None, None) => "custom".into(),
        }
    }
}

fn load_config(path: &Path) -> Result<TcConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    TcConfig::parse_params(&text).with_context(|| format!("in {}", path.display()))
}

#[derive(Args)]
struct GemmArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_name = "FILE")]
    a: PathBuf,
    #[arg(long, value_name = "FILE")]
    b: PathBuf,
    /// Addend matrix; zero when omitted.
    #[arg(long, value_name = "FILE")]
    c: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    beta: f64,
    /// Output file; stdout when omitted.
    #[arg(short, long, value_name = "FILE")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct InnerprodArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated hexadecimal literals.
    #[arg(long, allow_hyphen_values = true)]
    a: String,
    #[arg(long, allow_hyphen_values = true)]
    b: String,
    /// Addend as a hexadecimal literal.
    #[arg(long, default_value = "0", allow_hyphen_values = true)]
    c: String,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct IssmArgs {
    /// Device as `engine:TARGET` or `oracle:TARGET`; TARGET is a GPU name or a config file.
    #[arg(long)]
    left: String,
    #[arg(long)]
    right: String,
    #[arg(long = "in")]
    in_format: Option<Format>,
    #[arg(long = "out")]
    out_format: Option<Format>,
    #[arg(long)]
    fp8_path: Option<Fp8Path>,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    /// Vector length; twice the left block size when omitted.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Mismatch records to print.
    #[arg(long, default_value_t = 20)]
    show: usize,
    /// Also run the special-values suite on both devices.
    #[arg(long)]
    special: bool,
}

#[derive(Args)]
struct DumpVerifyArgs {
    /// Preset GPU; formats come from the dump.
    #[arg(long, conflicts_with = "config")]
    model: Option<Gpu>,
    #[arg(long)]
    fp8_path: Option<Fp8Path>,
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    dump: PathBuf,
    #[arg(long, default_value_t = 20)]
    show: usize,
}

#[derive(Args)]
struct MultiwordArgs {
    /// Word format: binary16, bfloat16 or fp8-e5m2.
    #[arg(long)]
    format: Format,
    /// Word counts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    words: Vec<usize>,
    /// GPU presets, comma separated.
    #[arg(long, value_delimiter = ',')]
    models: Vec<Gpu>,
    /// Largest inner dimension; a power of ten.
    #[arg(long, default_value_t = 100_000)]
    nmax: usize,
    /// Grid points per decade, starting at n = 10.
    #[arg(long, default_value_t = 4)]
    per_decade: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_name = "DIR")]
    outdir: PathBuf,
}

enum DutKind {
    Engine,
    Oracle,
}

fn make_dut(spec: &str, args: &IssmArgs) -> Result<(Box<dyn Dut>, TcConfig)> {
    let (kind, target) = spec.split_once(':').with_context(|| {
        format!("device `{spec}` is not of the form engine:TARGET or oracle:TARGET")
    })?;
    let kind = match kind {
        "engine" => DutKind::Engine,
        "oracle" => DutKind::Oracle,
        other => bail!("unknown device kind `{other}`; expected engine or oracle"),
    };
    let cfg = match target.parse::<Gpu>() {
        Ok(gpu) => {
            let mut key = PresetKey::new(
                gpu,
                args.in_format.unwrap_or(Format::Binary16),
                args.out_format.unwrap_or(Format::Binary32),
            );
            if let Some(p) = args.fp8_path {
                key = key.with_path(p);
            }
            lookup(&key)?
        }
        Err(_) if Path::new(target).is_file() => load_config(Path::new(target))?,
        Err(e) => return Err(e).with_context(|| format!("`{target}` is neither a GPU nor a file")),
    };
    let dut: Box<dyn Dut> = match kind {
        DutKind::Engine => Box::new(EngineDut::new(spec, cfg)),
        DutKind::Oracle => Box::new(OracleDut::new(spec, cfg)),
    };
    Ok((dut, cfg))
}

fn parse_vector(text: &str, format: Format) -> Result<Vec<FpValue>> {
    text.split(',')
        .map(|t| {
            parse_hexfloat(t.trim(), format).with_context(|| format!("literal `{}`", t.trim()))
        })
        .collect()
}

fn read_matrix(path: &Path) -> Result<MatrixHandle> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    MatrixHandle::parse(&text).with_context(|| format!("in {}", path.display()))
}

fn print_mismatches(out: &mut impl Write, found: &[MismatchRecord], show: usize) -> io::Result<()> {
    writeln!(out, "mismatches: {}", found.len())?;
    for m in found.iter().take(show) {
        writeln!(out, "{m}")?;
    }
    if found.len() > show {
        writeln!(out, "... {} more", found.len() - show)?;
    }
    Ok(())
}

fn models(keys: bool) -> Result<u8> {
    let mut out = io::stdout().lock();
    writeln!(out, "gpus | inputs | outputs | path | row")?;
    for row in presets::TABLE {
        let join = |v: Vec<String>| v.join(",");
        writeln!(
            out,
            "{} | {} | {} | {} | {}",
            join(row.gpus.iter().map(|g| g.to_string()).collect()),
            join(row.inputs.iter().map(|f| f.to_string()).collect()),
            join(row.outputs.iter().map(|f| f.to_string()).collect()),
            row.fp8_path.map_or("-".to_string(), |p| p.to_string()),
            row.render()
        )?;
    }
    if keys {
        for key in supported() {
            writeln!(out, "{key}")?;
        }
    }
    Ok(0)
}

fn run_gemm(args: &GemmArgs) -> Result<u8> {
    let cfg = args.model.resolve(Format::Binary16, Format::Binary32)?;
    eprintln!("config: {cfg}");
    let a = read_matrix(&args.a)?;
    let b = read_matrix(&args.b)?;
    let c = match &args.c {
        Some(path) => read_matrix(path)?,
        None => MatrixHandle::zeros(a.rows(), b.cols(), cfg.out_format)?,
    };
    let d = gemm(args.alpha, &a, &b, args.beta, &c, &cfg)?;
    match &args.output {
        Some(path) => {
            fs::write(path, d.render()).with_context(|| format!("writing {}", path.display()))?
        }
        None => io::stdout().lock().write_all(d.render().as_bytes())?,
    }
    Ok(0)
}

fn run_innerprod(args: &InnerprodArgs) -> Result<u8> {
    let cfg = args.model.resolve(Format::Binary16, Format::Binary32)?;
    let mut out = io::stdout().lock();
    writeln!(out, "config: {cfg}")?;
    let a = parse_vector(&args.a, cfg.in_format)?;
    let b = parse_vector(&args.b, cfg.in_format)?;
    let c = parse_hexfloat(args.c.trim(), cfg.out_format).context("literal for c")?;
    let d = inner_product(&a, &b, &c, &cfg)?;
    writeln!(out, "d = {} ({})", render_hexfloat(&d), d.to_f64())?;
    Ok(0)
}

fn run_detect(args: &DetectArgs) -> Result<u8> {
    let cfg = args.model.resolve(Format::Binary16, Format::Binary32)?;
    let mut out = io::stdout().lock();
    writeln!(out, "config: {cfg}")?;
    let dut = EngineDut::new(args.model.label(), cfg);
    let report = run_all(&dut)?;
    writeln!(out, "{}", report.to_key_values().trim_end())?;
    writeln!(out, "row: {}", report.table_row())?;
    if let Some(gpu) = args.model.model {
        let mut key = PresetKey::new(gpu, cfg.in_format, cfg.out_format);
        if let Some(p) = args.model.fp8_path {
            key = key.with_path(p);
        }
        if let Some(row) = table_row(&key) {
            writeln!(out, "table: {}", row.render())?;
        }
    }
    Ok(0)
}

fn run_issm(args: &IssmArgs) -> Result<u8> {
    let (left, lcfg) = make_dut(&args.left, args)?;
    let (right, rcfg) = make_dut(&args.right, args)?;
    let mut out = io::stdout().lock();
    writeln!(out, "left: {lcfg}")?;
    writeln!(out, "right: {rcfg}")?;
    let k = args.k.unwrap_or(2 * lcfg.nfma);
    writeln!(out, "trials: {} k: {k} seed: {}", args.trials, args.seed)?;
    let found = issm::compare(left.as_ref(), right.as_ref(), args.trials, k, args.seed)?;
    print_mismatches(&mut out, &found, args.show)?;
    let mut failed = !found.is_empty();
    if args.special {
        for (side, dut) in [("left", &left), ("right", &right)] {
            let report = issm::special_values_suite(dut.as_ref())?;
            let fails: Vec<_> = report
                .cases
                .iter()
                .filter_map(|c| match &c.status {
                    CaseStatus::Fail(why) => Some((c, why)),
                    _ => None,
                })
                .collect();
            writeln!(
                out,
                "special values ({side}): {} run, {} failed",
                report.executed(),
                fails.len()
            )?;
            for (case, why) in fails {
                writeln!(out, "  {}: {why}", case.name)?;
            }
            failed |= !report.all_passed();
        }
    }
    Ok(if failed { MISMATCH } else { 0 })
}

fn run_dump_verify(args: &DumpVerifyArgs) -> Result<u8> {
    let text = fs::read_to_string(&args.dump)
        .with_context(|| format!("reading {}", args.dump.display()))?;
    let dump = GpuDump::parse(&text).with_context(|| format!("in {}", args.dump.display()))?;
    let model = ModelArgs {
        model: args.model,
        in_format: None,
        out_format: None,
        fp8_path: args.fp8_path,
        config: args.config.clone(),
    };
    let cfg = model.resolve(dump.in_format, dump.out_format)?;
    let mut out = io::stdout().lock();
    writeln!(out, "config: {cfg}")?;
    writeln!(
        out,
        "dump: gpu {} k {} records {}",
        dump.gpu,
        dump.k,
        dump.records.len()
    )?;
    let dut = EngineDut::new(model.label(), cfg);
    let found = issm::verify_dump(&dut, &dump)?;
    print_mismatches(&mut out, &found, args.show)?;
    Ok(if found.is_empty() { 0 } else { MISMATCH })
}

fn run_multiword(args: &MultiwordArgs) -> Result<u8> {
    if args.models.is_empty() {
        bail!("--models needs at least one GPU");
    }
    let decades = (args.nmax as f64).log10().round() as u32;
    if args.nmax < 10 || 10usize.pow(decades) != args.nmax {
        bail!(
            "--nmax must be a power of ten of at least 10, got {}",
            args.nmax
        );
    }
    if args.per_decade == 0 {
        bail!("--per-decade must be positive");
    }
    let models = args
        .models
        .iter()
        .map(|&gpu| {
            let cfg = lookup(&PresetKey::new(gpu, args.format, Format::Binary32))?;
            Ok((gpu.name().to_string(), cfg))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = io::stdout().lock();
    for (name, cfg) in &models {
        writeln!(out, "config {name}: {cfg}")?;
    }
    fs::create_dir_all(&args.outdir)
        .with_context(|| format!("creating {}", args.outdir.display()))?;
    let grid = log_grid(1, decades, args.per_decade);
    for &w in &args.words {
        for series in run_experiment(args.format, w, &models, &grid, args.seed)? {
            let path = series.write(&args.outdir)?;
            writeln!(
                out,
                "wrote {} (saturated {})",
                path.display(),
                series.saturated
            )?;
        }
    }
    Ok(0)
}

fn set_threads() -> Result<()> {
    let Ok(value) = std::env::var("TC_EMU_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("TC_EMU_THREADS must be a positive integer, got `{value}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()?;
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<u8> {
    set_threads()?;
    match &cli.command {
        Command::Models { keys } => models(*keys),
        Command::Gemm(a) => run_gemm(a),
        Command::Innerprod(a) => run_innerprod(a),
        Command::Detect(a) => run_detect(a),
        Command::Issm(a) => run_issm(a),
        Command::DumpVerify(a) => run_dump_verify(a),
        Command::Multiword(a) => run_multiword(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e)
            if e.downcast_ref::<io::Error>()
                .is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) =>
        {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
