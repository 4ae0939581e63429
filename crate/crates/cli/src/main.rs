//! `utlab`: run unit-test scaling experiments from the command line.
//!
//! Exit status is 0 on success, 1 when an experiment fails on its data, and
//! 2 for configuration or environment problems.

mod artifacts;
mod settings;
mod stages;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use settings::{
    AllocateArgs, CorpusArgs, DemoArgs, Knobs, ProbeArgs, QcArgs, ScaleArgs, Settings, SharedArgs, TieArgs,
};

#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Experiment(anyhow::Error),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Experiment(_) => 1,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Experiment(e) => e,
        }
    }
}

#[derive(Parser)]
#[command(name = "utlab", version, about = "Unit-test scaling experiments over code-generation pools")]
struct Cli {
    #[command(flatten)]
    shared: SharedArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every solution against every generated test and the gold suite.
    Execute(CorpusArgs),
    /// Pick the most-voted solution per problem.
    Select(TieArgs),
    /// Best-of-n accuracy over an (n, m) grid, overall and by difficulty.
    Scale(ScaleArgs),
    /// Per-test and ensemble classifier metrics; false-positive filtering.
    Qc(QcArgs),
    /// Train the pass-rate probe on corpus feature vectors.
    Probe {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        probe: ProbeArgs,
    },
    /// Compare test-budget allocation strategies.
    Allocate(AllocateArgs),
    /// Generate a synthetic corpus and run every stage on it.
    Demo(DemoArgs),
    /// Serve one runner request over stdin/stdout (the default runner).
    #[command(hide = true)]
    MockRunner,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Execute(_) => "execute",
            Command::Select(_) => "select",
            Command::Scale(_) => "scale",
            Command::Qc(_) => "qc",
            Command::Probe { .. } => "probe",
            Command::Allocate(_) => "allocate",
            Command::Demo(_) => "demo",
            Command::MockRunner => "mock-runner",
        }
    }

    fn apply(&self, k: &mut Knobs) {
        match self {
            Command::Execute(c) => c.apply(k),
            Command::Select(t) => {
                if let Some(tie) = &t.tie {
                    k.tie = Some(tie.clone());
                }
            }
            Command::Scale(a) => a.apply(k),
            Command::Qc(a) => a.apply(k),
            Command::Probe { corpus, probe } => {
                corpus.apply(k);
                probe.apply(k);
            }
            Command::Allocate(a) => a.apply(k),
            Command::Demo(a) => a.apply(k),
            Command::MockRunner => {}
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut knobs = match &cli.shared.config {
        Some(path) => settings::read_config_file(path)?,
        None => Knobs::default(),
    };
    cli.shared.apply(&mut knobs);
    cli.command.apply(&mut knobs);
    let s = Settings::resolve(knobs)?;
    match cli.command {
        Command::Execute(_) => stages::execute(&s).map(drop),
        Command::Select(_) => stages::select(&s),
        Command::Scale(_) => stages::scale(&s),
        Command::Qc(_) => stages::qc(&s),
        Command::Probe { .. } => stages::probe(&s),
        Command::Allocate(_) => stages::allocate(&s),
        Command::Demo(_) => stages::demo(&s),
        Command::MockRunner => unreachable!("handled before settings"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if matches!(cli.command, Command::MockRunner) {
        return ExitCode::from(utlab::mock::serve_stdio().clamp(0, 255) as u8);
    }
    let name = cli.command.name();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("utlab {name}: error: {:#}", f.error());
            ExitCode::from(f.exit_code())
        }
    }
}
