use clap::Parser;

use dosage_ts_cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    match run(cli.command, argv) {
        Ok(m) => log::info!("{} finished; {} outputs in {}", m.command.name(), m.outputs.len(), m.out_dir().display()),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}
