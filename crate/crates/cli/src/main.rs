use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ucodec_cli::commands::{self, SynthRequest};
use ucodec_cli::config::RunConfig;
use ucodec_cli::{CliError, Result};
use ucodec_core::bench::{to_csv, MacBreakdown};

#[derive(Parser, Debug)]
#[command(name = "ucodec", version, about = "Low frame-rate speech codec and token LM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration; desk-scale defaults when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides `train.seed`; every random choice derives from it
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file or directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Codec training and inference
    Codec {
        #[command(subcommand)]
        cmd: CodecCmd,
        #[command(flatten)]
        common: Common,
    },
    /// Token LM training and synthesis
    Lm {
        #[command(subcommand)]
        cmd: LmCmd,
        #[command(flatten)]
        common: Common,
    },
    /// Complexity and speed reports
    Bench {
        #[command(subcommand)]
        cmd: BenchCmd,
        #[command(flatten)]
        common: Common,
    },
    /// Print the header and code statistics of a .ucb file
    Inspect { file: PathBuf },
}

#[derive(Subcommand, Debug)]
enum CodecCmd {
    Train {
        /// Directory of 16 kHz mono PCM16 WAV files
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    Encode {
        #[arg(long)]
        ckpt: PathBuf,
        input: PathBuf,
    },
    Decode {
        #[arg(long)]
        ckpt: PathBuf,
        input: PathBuf,
    },
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        input: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum LmCmd {
    Train {
        /// Directory of `name.txt` / `name.ucb` pairs
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    Synth {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        text: String,
        /// Token stream whose frames condition generation
        #[arg(long)]
        prompt: Option<PathBuf>,
        #[arg(long)]
        max_frames: Option<usize>,
        #[arg(long)]
        k_top: Option<usize>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum BenchCmd {
    Macs {
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    Rtf {
        #[arg(long, default_value_t = 3)]
        runs: usize,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn required_out(common: &Common) -> Result<&Path> {
    common.out.as_deref().ok_or_else(|| CliError::Config("--out is required for this command".into()))
}

fn emit(common: &Common, text: &str) -> Result<()> {
    match &common.out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => {
            println!("{}", text.trim_end());
            Ok(())
        }
    }
}

fn json<S: serde::Serialize>(v: &S) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

fn rows(format: Format, rows: &[MacBreakdown]) -> Result<String> {
    match format {
        Format::Csv => Ok(to_csv(rows)),
        Format::Json => json(&rows),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("UCODEC_THREADS") else { return Ok(()) };
    let n: usize = v.parse().map_err(|_| CliError::Config(format!("UCODEC_THREADS={v:?} is not a count")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Codec { cmd, common } => match cmd {
            CodecCmd::Train { data, resume } => {
                let cfg = load_config(&common)?;
                let s = commands::codec_train(&cfg, &data, required_out(&common)?, resume.as_deref())?;
                println!("{}", json(&s)?);
            }
            CodecCmd::Encode { ckpt, input } => {
                let h = commands::codec_encode(&ckpt, &input, required_out(&common)?)?;
                eprintln!("{} frames, {:.1} bps", h.frames, h.achieved_bps());
            }
            CodecCmd::Decode { ckpt, input } => commands::codec_decode(&ckpt, &input, required_out(&common)?)?,
            CodecCmd::Eval { ckpt, input } => emit(&common, &json(&commands::codec_eval(&ckpt, &input)?)?)?,
        },
        Command::Lm { cmd, common } => match cmd {
            LmCmd::Train { data, resume } => {
                let cfg = load_config(&common)?;
                let s = commands::lm_train(&cfg, &data, required_out(&common)?, resume.as_deref())?;
                println!("{}", json(&s)?);
            }
            LmCmd::Synth { ckpt, codec, text, prompt, max_frames, k_top } => {
                let req = SynthRequest { text, prompt, seed: common.seed.unwrap_or(0), max_frames, k_top };
                let grid = commands::lm_synth(&ckpt, &codec, &req, required_out(&common)?)?;
                eprintln!("{} frames", grid.frames());
            }
        },
        Command::Bench { cmd, common } => match cmd {
            BenchCmd::Macs { format } => emit(&common, &rows(format, &commands::bench_macs())?)?,
            BenchCmd::Rtf { runs, format } => {
                let cfg = load_config(&common)?;
                let (row, report) = commands::bench_rtf(&cfg, cfg.train.seed, runs)?;
                let text = match format {
                    Format::Csv => to_csv(&[row]),
                    Format::Json => json(&serde_json::json!({ "row": row, "timing": report }))?,
                };
                emit(&common, &text)?;
            }
        },
        Command::Inspect { file } => println!("{}", json(&commands::inspect(&file)?)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
