use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = ficgan::cli::run(ficgan::cli::Cli::parse()) {
        eprintln!("error [{}]: {e}", e.code());
        std::process::exit(1);
    }
}
