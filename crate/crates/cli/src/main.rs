use clap::Parser;

use privdiv_cli::Cli;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SECUREKL_LOG", "warn")).init();
    if let Err(e) = Cli::parse().execute() {
        eprintln!("privdiv: {e}");
        std::process::exit(e.exit_code());
    }
}
