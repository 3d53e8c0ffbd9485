//! Command-line pipeline: simulate, render, flow, discover, train, control,
//! gradcheck and the live `serve` endpoint.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod args;
mod commands;
pub mod manifest;
pub mod serve;
mod train_cmd;
pub mod view;

use clap::error::ErrorKind;
use clap::Parser;
use thiserror::Error;

use args::{Cli, Command};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] gsflow::Error),
    #[error("{0}")]
    Invalid(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

macro_rules! from_module_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.into())
            }
        }
    )*};
}

from_module_error!(
    gsflow::scene::SceneError,
    gsflow::render::RenderError,
    gsflow::flow::FlowError,
    gsflow::discovery::DiscoveryError,
    gsflow::control::ControlError,
    gsflow::train::TrainError
);

pub type CliResult<T> = Result<T, CliError>;

fn init_logging() {
    let env = env_logger::Env::new().filter_or("GSFLOW_LOG", "info");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}

/// Parse `argv` (including the program name), run the command and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    init_logging();
    if let Some(n) = cli.global.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 1;
        }
        gsflow::exec::set_threads(n);
    }
    gsflow::exec::set_serial(cli.global.serial);
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Simulate(a) => commands::simulate(cli, g, a),
        Command::Render(a) => commands::render(cli, g, a),
        Command::Flow(a) => commands::flow(cli, g, a),
        Command::Discover(a) => commands::discover(cli, g, a),
        Command::Train(a) => train_cmd::train(cli, g, a),
        Command::Control(a) => commands::control(cli, g, a),
        Command::Serve(a) => serve::run(cli, g, a),
        Command::Gradcheck(a) => commands::gradcheck(cli, g, a),
    }
}
