use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cape::attention::{AttentionParams, PosMode};
use cape::augment::{augment_grid, augment_positions_1d, AugmentationConfig};
use cape::bench::{bench_layer, to_csv};
use cape::check::{run_checks, Fault};
use cape::embedding::{embed_1d, embed_2d, Embedding, FrequencySpec, Modality};
use cape::io::{EmbeddingFile, PositionFile, VizRequest};
use cape::positions::{
    audio_positions, image_positions, plan_padding_free_batch, plan_padding_free_batch_quantized, text_positions,
    PositionSet1D,
};
use cape::{CapeError, RngStream};

const SEED_ENV: &str = "CAPE_SEED";

#[derive(Parser)]
#[command(name = "cape", version, about = "Continuous augmented positional embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the unaugmented embedding of generated positions.
    Embed {
        #[command(flatten)]
        gen: Generator,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Augment positions with a JSON config and write them with their embedding.
    Augment(AugmentArgs),
    /// Dump selected components of an image embedding as PGM files.
    Viz {
        #[arg(long)]
        grid: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 20)]
        stride: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the invariant suite.
    Check {
        /// Only run checks whose name contains this string.
        #[arg(long)]
        filter: Option<String>,
        /// Flip the sign of the shift in the shift checks; the suite must fail.
        #[arg(long)]
        self_test_negative: bool,
    },
    /// Time nopos and relpos attention layers; CSV on stdout.
    Bench {
        #[arg(long, value_delimiter = ',', required = true)]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 100)]
        relpos_context: usize,
        #[arg(long, default_value_t = 100)]
        repeats: usize,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Plan a padding-free audio batch; JSON on stdout.
    Plan {
        /// Durations in seconds.
        #[arg(long, value_delimiter = ',', required = true)]
        durations: Vec<f64>,
        #[arg(long, default_value_t = 0.01)]
        base_hop: f64,
        /// Round hops to whole samples at this rate.
        #[arg(long)]
        sample_rate: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct Generator {
    #[arg(long)]
    modality: Modality,
    #[arg(long)]
    dim: usize,
    /// Number of text tokens.
    #[arg(long)]
    length: Option<usize>,
    /// Patches per image side.
    #[arg(long)]
    grid: Option<usize>,
    /// Number of audio frames.
    #[arg(long)]
    frames: Option<usize>,
    /// Audio hop in seconds.
    #[arg(long)]
    hop: Option<f64>,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides CAPE_SEED and the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Read positions from a position file instead of generating them.
    #[arg(long)]
    positions: Option<PathBuf>,
    #[command(flatten)]
    gen: Generator,
    /// Copies of the generated positions to augment independently.
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long)]
    out_positions: PathBuf,
    #[arg(long)]
    out_embedding: PathBuf,
}

enum Failure {
    Usage(String),
    Runtime(String),
    Invariant,
}

impl From<CapeError> for Failure {
    fn from(e: CapeError) -> Self {
        match e {
            CapeError::Io(_) | CapeError::OutOfMemory { .. } | CapeError::NonDifferentiable(_) => {
                Failure::Runtime(e.to_string())
            }
            _ => Failure::Usage(e.to_string()),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invariant) => ExitCode::from(1),
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Outcome {
    match command {
        Command::Embed { gen, out } => {
            let (spec, positions) = gen.generate()?;
            let file = EmbeddingFile { modality: spec.modality(), embedding: positions.embed(&spec)? };
            write_or_print(&file.to_text(), out.as_deref())
        }
        Command::Augment(args) => augment(args),
        Command::Viz { grid, dim, stride, out_dir } => {
            for path in (VizRequest { grid_side: grid, dim, stride, out_dir }).run()? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Check { filter, self_test_negative } => {
            let fault = if self_test_negative { Fault::FlipShiftSign } else { Fault::None };
            let reports = run_checks(filter.as_deref(), fault);
            if reports.is_empty() {
                return Err(Failure::Usage(format!("no check matches {:?}", filter.unwrap_or_default())));
            }
            let failed = reports.iter().filter(|r| !r.passed).count();
            for r in &reports {
                println!("{}", r.line());
            }
            println!("{} checks, {} failed", reports.len(), failed);
            if failed > 0 {
                Err(Failure::Invariant)
            } else {
                Ok(())
            }
        }
        Command::Bench { lengths, dim, relpos_context, repeats, warmup, seed } => {
            let mut rng = RngStream::new(resolve_seed(seed, None)?);
            let params = AttentionParams::random(dim, PosMode::RelPos, relpos_context, &mut rng)?;
            let rows = bench_layer(&params, &lengths, repeats, warmup)?;
            print!("{}", to_csv(&rows));
            Ok(())
        }
        Command::Plan { durations, base_hop, sample_rate, seed } => {
            let mut rng = RngStream::new(resolve_seed(seed, None)?);
            let plan = match sample_rate {
                Some(rate) => plan_padding_free_batch_quantized(&durations, base_hop, rate, &mut rng)?,
                None => plan_padding_free_batch(&durations, base_hop, &mut rng)?,
            };
            println!("{}", plan.to_json()?);
            Ok(())
        }
    }
}

enum Positions {
    OneD(PositionSet1D),
    TwoD(cape::PositionGrid2D),
}

impl Positions {
    fn embed(&self, spec: &FrequencySpec) -> cape::Result<Embedding> {
        match self {
            Positions::OneD(p) => embed_1d(p.as_slice(), spec),
            Positions::TwoD(g) => embed_2d(g, spec),
        }
    }
}

impl Generator {
    fn spec(&self) -> Result<FrequencySpec, Failure> {
        Ok(FrequencySpec::for_modality(self.modality, self.dim)?)
    }

    fn check_flags(&self) -> Outcome {
        let given = [
            ("--length", self.length.is_some(), Modality::Text),
            ("--grid", self.grid.is_some(), Modality::Image),
            ("--frames", self.frames.is_some(), Modality::Audio),
            ("--hop", self.hop.is_some(), Modality::Audio),
        ];
        match given.iter().find(|(_, set, m)| *set && *m != self.modality) {
            Some((flag, _, _)) => Err(Failure::Usage(format!("{flag} does not apply to --modality {}", self.modality))),
            None => Ok(()),
        }
    }

    fn generate(&self) -> Result<(FrequencySpec, Positions), Failure> {
        self.check_flags()?;
        let spec = self.spec()?;
        let missing = |flag: &str| Failure::Usage(format!("--modality {} needs {flag}", self.modality));
        let positions = match self.modality {
            Modality::Text => Positions::OneD(text_positions(self.length.ok_or_else(|| missing("--length"))?)?),
            Modality::Image => {
                let p = self.grid.ok_or_else(|| missing("--grid"))?;
                Positions::TwoD(image_positions(p, p)?)
            }
            Modality::Audio => {
                let n = self.frames.ok_or_else(|| missing("--frames"))?;
                let hop = self.hop.ok_or_else(|| missing("--hop"))?;
                Positions::OneD(audio_positions(n, hop, 0.0)?)
            }
        };
        Ok((spec, positions))
    }
}

fn augment(args: AugmentArgs) -> Outcome {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg = AugmentationConfig::from_json(&text)?;
    cfg.seed = resolve_seed(args.seed, Some(cfg.seed))?;
    let spec = args.gen.spec()?;
    if args.batch == 0 {
        return Err(Failure::Usage("--batch must be >= 1".into()));
    }
    let input = match &args.positions {
        Some(path) => {
            if args.gen.length.is_some() || args.gen.grid.is_some() || args.gen.frames.is_some() {
                return Err(Failure::Usage("--positions conflicts with generator flags".into()));
            }
            match PositionFile::load(path)? {
                PositionFile::OneD(p) => Positions::OneD(p),
                PositionFile::TwoD(g) => Positions::TwoD(g),
            }
        }
        None => match args.gen.generate()?.1 {
            Positions::OneD(p) => {
                let rows: Vec<Vec<f64>> = (0..args.batch).map(|_| p.as_slice().to_vec()).collect();
                Positions::OneD(PositionSet1D::from_rows(&rows)?)
            }
            Positions::TwoD(g) => {
                let (x, y) = (g.x().repeat(args.batch), g.y().repeat(args.batch));
                Positions::TwoD(cape::PositionGrid2D::new(args.batch, g.nx(), g.ny(), x, y)?)
            }
        },
    };
    let is_2d = matches!(input, Positions::TwoD(_));
    if is_2d != (spec.modality() == Modality::Image) {
        return Err(Failure::Usage(format!("--modality {} does not match the positions", spec.modality())));
    }
    let mut rng = RngStream::new(cfg.seed);
    let augmented = match input {
        Positions::OneD(p) => Positions::OneD(augment_positions_1d(&p, &cfg, &mut rng)?),
        Positions::TwoD(g) => Positions::TwoD(augment_grid(&g, &cfg, &mut rng)?),
    };
    let embedding = augmented.embed(&spec)?;
    let file = match augmented {
        Positions::OneD(p) => PositionFile::OneD(p),
        Positions::TwoD(g) => PositionFile::TwoD(g),
    };
    file.save(&args.out_positions)?;
    EmbeddingFile { modality: spec.modality(), embedding }.save(&args.out_embedding)?;
    Ok(())
}

/// Explicit flag, then `CAPE_SEED`, then the fallback (config seed or 0).
fn resolve_seed(flag: Option<u64>, fallback: Option<u64>) -> Result<u64, Failure> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| Failure::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(fallback.unwrap_or(0)),
    }
}

fn write_or_print(text: &str, out: Option<&Path>) -> Outcome {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
