use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use clonetts_cli::commands::{cmd_evaluate, cmd_pretrain, cmd_synthesize, cmd_train, cmd_train_grid, cmd_visualize};
use clonetts_cli::config::parse_schemes;
use clonetts_cli::{CliError, CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "clonetts", version, about = "Few-shot multi-speaker TTS pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Active schemes such as `vc+lookup`, overriding the config.
    #[arg(long)]
    schemes: Option<String>,
    /// Few-shot reference budget, overriding the config.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain the speaker encoders of the active pretrained schemes.
    Pretrain(Common),
    /// Train the acoustic model.
    Train {
        #[command(flatten)]
        common: Common,
        /// Train every evaluation configuration at every evaluation budget.
        #[arg(long)]
        grid: bool,
    },
    /// Synthesize mel files and WAVs from a phoneme-id file.
    Synthesize {
        #[command(flatten)]
        common: Common,
        /// One utterance per line, whitespace-separated phoneme ids.
        #[arg(long)]
        phonemes: PathBuf,
        /// Training speaker name, required when the lookup scheme is active.
        #[arg(long)]
        speaker: Option<String>,
        /// Reference WAV of the target speaker; repeat for several.
        #[arg(long = "ref")]
        refs: Vec<PathBuf>,
    },
    /// Speaker-verification evaluation of synthesized speech.
    Evaluate(Common),
    /// PCA scatter plots of speaker embeddings.
    Visualize(Common),
}

fn resolve(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let seed = common.seed.unwrap_or(cfg.seed);
    cfg = cfg.with_seed(seed);
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(s) = &common.schemes {
        cfg.schemes = parse_schemes(s)?;
    }
    if let Some(k) = common.k {
        cfg.k = k;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Pretrain(common) => {
            for path in cmd_pretrain(&resolve(&common)?)? {
                println!("{}", path.display());
            }
        }
        Command::Train { common, grid } => {
            let cfg = resolve(&common)?;
            let runs = if grid {
                cmd_train_grid(&cfg)?
            } else {
                vec![cmd_train(&cfg)?]
            };
            for run in runs {
                let first = run.log.first().map_or(f64::NAN, |r| r.mel);
                let last = run.log.last().map_or(f64::NAN, |r| r.mel);
                println!("{}\tmel L1 {first:.4} -> {last:.4}", run.checkpoint.display());
            }
        }
        Command::Synthesize {
            common,
            phonemes,
            speaker,
            refs,
        } => {
            let out = cmd_synthesize(&resolve(&common)?, &phonemes, speaker.as_deref(), &refs)?;
            for (mel, wav) in out.mels.iter().zip(&out.wavs) {
                println!("{}\t{}", mel.display(), wav.display());
            }
        }
        Command::Evaluate(common) => {
            let out = cmd_evaluate(&resolve(&common)?)?;
            print!("{}", out.table.to_tsv());
        }
        Command::Visualize(common) => {
            let out = cmd_visualize(&resolve(&common)?)?;
            print!("{}", std::fs::read_to_string(&out.separation).unwrap_or_default());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code: CliError = e;
            ExitCode::from(code.exit_code() as u8)
        }
    }
}
