use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use simulmt::experiment::{
    cmd_gen_corpus, cmd_gen_labels, cmd_pipeline, cmd_report, cmd_sweep, cmd_train_policy, CmdError, CmdResult,
    ExperimentConfig, Inputs, PolicyChoice,
};

#[derive(Parser)]
#[command(name = "simulmt", version, about = "Simultaneous MT experiments on a synthetic oracle corpus")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a parallel corpus and its model file.
    GenCorpus {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Overwrite existing files.
        #[arg(long)]
        force: bool,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Write attention matrices and policy labels for a corpus.
    GenLabels {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the read/write policy and save its parameters.
    TrainPolicy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stream the corpus through simulated ASR and the decoder.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        decode: Decode,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        beam: Option<usize>,
        /// Directory for summary.json and traces.jsonl.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Evaluate a grid of delta values and beam sizes into a CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        decode: Decode,
        /// Comma-separated delta values.
        #[arg(long, value_delimiter = ',')]
        deltas: Option<Vec<f64>>,
        /// Comma-separated beam sizes.
        #[arg(long, value_delimiter = ',')]
        beams: Option<Vec<usize>>,
        /// Fail if teacher-forced latency is not monotone in delta.
        #[arg(long)]
        check_monotone: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a summary JSON (or pipeline directory) or sweep CSV as a table.
    Report { input: PathBuf },
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct Decode {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Trained policy parameters; trained on the fly when omitted.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Use a wait-k baseline instead of the learned policy.
    #[arg(long)]
    wait_k: Option<usize>,
    #[arg(long)]
    teacher_forced: bool,
}

impl Common {
    fn load(&self) -> CmdResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).map_err(|e| CmdError::Usage(e.to_string()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

impl Decode {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Inputs {
        if let Some(k) = self.wait_k {
            cfg.policy = PolicyChoice::WaitK { k };
        }
        cfg.teacher_forced |= self.teacher_forced;
        Inputs {
            corpus: self.corpus.clone(),
            policy: self.policy.clone(),
        }
    }
}

fn run(cmd: Cmd) -> CmdResult<()> {
    match cmd {
        Cmd::GenCorpus { common, out, force, count } => {
            let mut cfg = common.load()?;
            if let Some(c) = count {
                cfg.corpus.sentence_count = c;
            }
            let n = cmd_gen_corpus(&cfg, &out, force)?;
            eprintln!("wrote {n} sentences to {}", out.display());
        }
        Cmd::GenLabels { common, corpus, gamma, out } => {
            let mut cfg = common.load()?;
            if let Some(g) = gamma {
                cfg.labels.gamma = g;
            }
            let n = cmd_gen_labels(&cfg, corpus.as_deref(), &out)?;
            eprintln!("wrote labels for {n} sentences to {}", out.display());
        }
        Cmd::TrainPolicy { common, corpus, gamma, epochs, out } => {
            let mut cfg = common.load()?;
            if let Some(g) = gamma {
                cfg.labels.gamma = g;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            cmd_train_policy(&cfg, corpus.as_deref(), &out)?;
            eprintln!("wrote policy to {}", out.display());
        }
        Cmd::Pipeline { common, decode, delta, beam, out_dir } => {
            let mut cfg = common.load()?;
            let inputs = decode.apply(&mut cfg);
            if let Some(d) = delta {
                cfg.decoder.delta = d;
            }
            if let Some(b) = beam {
                cfg.decoder.beam_size = b;
            }
            cmd_pipeline(&cfg, &inputs, &out_dir)?;
            print!("{}", cmd_report(&out_dir)?);
        }
        Cmd::Sweep { common, decode, deltas, beams, check_monotone, out } => {
            let mut cfg = common.load()?;
            let inputs = decode.apply(&mut cfg);
            if let Some(d) = deltas {
                cfg.sweep.deltas = d;
            }
            if let Some(b) = beams {
                cfg.sweep.beams = b;
            }
            cfg.sweep.check_monotone |= check_monotone;
            let rows = cmd_sweep(&cfg, &inputs, &out)?;
            eprintln!("wrote {} rows to {}", rows.len(), out.display());
        }
        Cmd::Report { input } => print!("{}", cmd_report(Path::new(&input))?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
