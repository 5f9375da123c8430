use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use cueflow::config::{Mode, RunConfig};
use cueflow::dialogue::Conversation;
use cueflow::model::ModelBundle;
use cueflow::pipeline;
use cueflow::rng::Choice;
use cueflow::toy::{write_toy_corpus, ToyConfig};
use cueflow::Error;

#[derive(Parser, Debug)]
#[command(name = "cueflow", version, about = "Cue-word guided dialogue generation with a learned cue-word policy")]
struct Cli {
    /// Run configuration (TOML). Defaults apply when the default file is absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed for every random stream (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// rlcw, rlcw_e, rlcw_r, s2s or s2s_cw.
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// Model checkpoint to read instead of the stage default.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Output directory (overrides paths.out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override any config value, e.g. `--set rl.lr=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Filter the corpus and write vocabularies, instances and word vectors.
    Preprocess,
    /// Supervised pre-training of generator and policy.
    Pretrain,
    /// Reinforcement learning of the cue-word policy.
    RlTrain,
    /// Self-play between two copies of the trained model.
    Simulate,
    /// Score simulation logs.
    Evaluate {
        /// `LABEL=PATH` or `PATH`; defaults to this run's simulation log.
        logs: Vec<String>,
    },
    /// Interactive conversation with a trained model.
    Chat {
        /// Transcript file (appended).
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Sample replies instead of decoding greedily.
        #[arg(long)]
        sample: bool,
    },
    /// Write the synthetic toy corpus together with a matching config.
    ToyCorpus {
        dir: PathBuf,
        /// Number of sessions (default 300).
        #[arg(long)]
        sessions: Option<usize>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::MissingFile(_) | Error::Config { .. } | Error::MissingLexicon) => 2,
        Some(Error::Divergence(_) | Error::NonFiniteGradient { .. }) => 3,
        _ => 1,
    }
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    raw.iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| {
                    anyhow::Error::new(Error::Config {
                        key: kv.clone(),
                        message: "expected KEY=VALUE".into(),
                    })
                })
        })
        .collect()
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut overrides = parse_overrides(&cli.overrides)?;
    if let Some(seed) = cli.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(mode) = cli.mode {
        overrides.push(("mode".into(), format!("\"{}\"", mode.name())));
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path, &overrides)?,
        None if Path::new("config.toml").exists() => RunConfig::load(Path::new("config.toml"), &overrides)?,
        None => RunConfig::from_toml("", &overrides, None)?,
    };
    if let Some(out) = &cli.out {
        cfg.paths.out = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    if let Command::ToyCorpus { dir, sessions } = &cli.command {
        let defaults = ToyConfig::default();
        let config = ToyConfig {
            sessions: sessions.unwrap_or(defaults.sessions),
            seed: cli.seed.unwrap_or(0),
            ..defaults
        };
        write_toy_corpus(dir, &config)?;
        println!("toy corpus: {} sessions written to {}", config.sessions, dir.display());
        return Ok(());
    }

    let cfg = load_config(&cli)?;
    let checkpoint = cli.checkpoint.as_deref();
    match &cli.command {
        Command::Preprocess => {
            let s = pipeline::preprocess(&cfg)?;
            println!(
                "preprocess: {} sessions ({} train / {} valid / {} test), vocab {}, cue words {}, instances {} / {} / {}",
                s.sessions_read,
                s.split_sessions[0],
                s.split_sessions[1],
                s.split_sessions[2],
                s.vocab_size,
                s.cue_vocab_size,
                s.instances[0],
                s.instances[1],
                s.instances[2]
            );
        }
        Command::Pretrain => {
            let s = pipeline::pretrain_stage(&cfg)?;
            let last = s.epoch_losses.last().map_or("n/a".to_string(), |l| format!("{l:.4}"));
            println!(
                "pretrain: {} epochs, final loss {last}, checkpoint {}",
                s.epoch_losses.len(),
                s.checkpoint.display()
            );
        }
        Command::RlTrain => {
            let s = pipeline::rl_stage(&cfg, checkpoint)?;
            match s.final_mean_return {
                Some(r) => println!(
                    "rl-train: {} iterations, final mean return {r:.4}, checkpoint {}",
                    s.iterations,
                    s.checkpoint.display()
                ),
                None => println!("rl-train: skipped for mode {}, checkpoint {}", cfg.mode.name(), s.checkpoint.display()),
            }
        }
        Command::Simulate => {
            let s = pipeline::simulate_stage(&cfg, checkpoint)?;
            println!(
                "simulate: {} dialogues, average {:.2} turns, log {}",
                s.dialogues,
                s.avg_turns,
                s.log.display()
            );
        }
        Command::Evaluate { logs } => {
            let inputs: Vec<(String, PathBuf)> = if logs.is_empty() {
                vec![(cfg.mode.name().to_string(), cfg.paths.logs().join("simulate.jsonl"))]
            } else {
                logs.iter()
                    .map(|spec| match spec.split_once('=') {
                        Some((label, path)) => (label.to_string(), PathBuf::from(path)),
                        None => (spec.clone(), PathBuf::from(spec)),
                    })
                    .collect()
            };
            let rows = pipeline::evaluate_stage(&cfg, &inputs)?;
            print!("{}", cueflow::eval::markdown_table(&rows));
            println!("evaluate: report written to {}", cfg.paths.out.join("report.json").display());
        }
        Command::Chat { transcript, sample } => {
            let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| cfg.paths.trained());
            if !path.exists() {
                return Err(Error::MissingFile(path).into());
            }
            let bundle = ModelBundle::load(&path)?;
            let transcript = transcript.clone().unwrap_or_else(|| cfg.paths.logs().join("chat.txt"));
            chat(&bundle, &transcript, *sample, cfg.seed)?;
        }
        Command::ToyCorpus { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn chat(bundle: &ModelBundle, transcript: &Path, sample: bool, seed: u64) -> Result<()> {
    if let Some(dir) = transcript.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut log = std::fs::OpenOptions::new().create(true).append(true).open(transcript)?;
    let mut conv = Conversation::new(bundle, Vec::new(), Vec::new())?;
    let mut rng = cueflow::rng::seeded(seed);
    let stdin = std::io::stdin();
    let mut out = std::io::stdout();
    println!("type a message; /state shows the cue-word distribution, /quit leaves");
    loop {
        print!("> ");
        out.flush()?;
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 {
            break;
        }
        let line = line.trim();
        match line {
            "" => continue,
            "/quit" => break,
            "/state" => {
                let dist = conv.distribution()?;
                let mut ranked: Vec<(usize, f64)> = dist.into_iter().enumerate().collect();
                ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                for (cue, p) in ranked.into_iter().take(10) {
                    println!("  {:<20} {p:.4}", bundle.cues.word(cue));
                }
                continue;
            }
            _ => {}
        }
        let tokens: Vec<String> = line.split_whitespace().map(str::to_lowercase).collect();
        conv.push_external(tokens.clone())?;
        writeln!(log, "user: {}", tokens.join(" "))?;
        let mut decode = if sample { Choice::Sample(&mut rng) } else { Choice::Greedy };
        let turn = conv.step(&mut Choice::Greedy, &mut decode, None)?;
        let cue = bundle.cues.word(turn.cue);
        println!("[{cue}] {}", turn.tokens.join(" "));
        writeln!(log, "bot [{cue}]: {}", turn.tokens.join(" "))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CUEFLOW_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
