use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fieldwise::commands::{cmd_analyze, cmd_eval, cmd_synth, cmd_train, cmd_trend, cmd_vocab};
use fieldwise::config::RunConfig;
use fieldwise::error::{Error, Result};

#[derive(Parser)]
#[command(
    name = "fieldwise",
    version,
    about = "Field-wise learning for multi-field categorical data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand)]
enum Command {
    /// Build a vocabulary from a data file
    Vocab,
    /// Split, encode, train and save the best model
    Train,
    /// Report Logloss and AUC of a model on a data file
    Eval,
    /// Write norms, the Rademacher bound and field importance of a model
    Analyze,
    /// Train one model per rank and tabulate norm sums against parameter counts
    Trend,
    /// Generate train/test sets from a planted model
    Synth,
}

#[derive(Args)]
struct Opts {
    /// Flat key = value config file; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    data: Option<String>,
    #[arg(long, global = true)]
    vocab: Option<String>,
    #[arg(long, global = true)]
    model_in: Option<String>,
    #[arg(long, global = true)]
    model_out: Option<String>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<String>,
    #[arg(long, global = true)]
    lr: Option<String>,
    #[arg(long, global = true)]
    lambda: Option<String>,
    #[arg(long, global = true)]
    weight_decay: Option<String>,
    #[arg(long, global = true)]
    batch_size: Option<String>,
    #[arg(long, global = true)]
    reg_period: Option<String>,
    /// Constant rank; 0 trains the bias-only model
    #[arg(long, global = true)]
    rank: Option<String>,
    #[arg(long, global = true)]
    rank_log_base: Option<String>,
    /// One threshold, or one per field separated by commas
    #[arg(long, global = true)]
    min_count: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    #[arg(long, global = true)]
    max_epochs: Option<String>,
    #[arg(long, global = true)]
    patience: Option<String>,
    /// Train,validation,test ratios, e.g. 0.8,0.1,0.1
    #[arg(long, global = true)]
    split: Option<String>,
    /// Sample size for the bound
    #[arg(long, global = true)]
    n: Option<String>,
    /// Train Logloss each trend run must reach
    #[arg(long, global = true)]
    target: Option<String>,
    /// Comma-separated ranks for the trend table
    #[arg(long, global = true)]
    ranks: Option<String>,
    /// Any other config key, as key=value; repeatable
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Opts {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let flags = [
            ("data", &self.data),
            ("vocab", &self.vocab),
            ("model_in", &self.model_in),
            ("model_out", &self.model_out),
            ("out", &self.out),
            ("lr", &self.lr),
            ("lambda", &self.lambda),
            ("weight_decay", &self.weight_decay),
            ("batch_size", &self.batch_size),
            ("reg_period", &self.reg_period),
            ("rank", &self.rank),
            ("rank_log_base", &self.rank_log_base),
            ("min_count", &self.min_count),
            ("seed", &self.seed),
            ("max_epochs", &self.max_epochs),
            ("patience", &self.patience),
            ("split", &self.split),
            ("n", &self.n),
            ("target", &self.target),
            ("ranks", &self.ranks),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = cli.opts.resolve()?;
    match cli.command {
        Command::Vocab => {
            let path = cmd_vocab(&cfg)?;
            println!("vocabulary={}", path.display());
        }
        Command::Train => {
            let o = cmd_train(&cfg)?;
            println!("model={}", o.model_path.display());
            println!("history={}", o.history_path.display());
            println!("best_epoch={}", o.history.best_epoch);
            println!("test {}", o.test);
        }
        Command::Eval => println!("{}", cmd_eval(&cfg)?),
        Command::Analyze => {
            let o = cmd_analyze(&cfg)?;
            o.bound.write_kv(std::io::stdout().lock())?;
            o.importance.write_tsv(std::io::stdout().lock())?;
        }
        Command::Trend => {
            let rows = cmd_trend(&cfg)?;
            fieldwise::analysis::write_trend_tsv(&rows, std::io::stdout().lock())?;
        }
        Command::Synth => {
            let o = cmd_synth(&cfg)?;
            println!("train={}", o.train_path.display());
            println!("test={}", o.test_path.display());
            println!("model={}", o.model_path.display());
            println!("bayes_logloss={}", o.bayes_logloss);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
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
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
