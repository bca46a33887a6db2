use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use vrmsi_cli::{config, execute, load_settings, Cli, CliError, Command};

fn run(cli: &Cli) -> Result<(), CliError> {
    if cli.command == Command::ShowConfig {
        let settings = load_settings(cli.config.as_deref(), &cli.overrides())?;
        println!("output_dir = {:?}\n", settings.output_dir.display().to_string());
        print!("{}", config::to_toml(&settings.experiment)?);
        return Ok(());
    }
    let start = Instant::now();
    execute(cli, &mut |m| eprintln!("[{:>7.1}s] {m}", start.elapsed().as_secs_f64()))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
