use clap::Parser;

fn main() {
    let cli = dgan_cli::Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    if let Err(e) = dgan_cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(dgan_cli::exit_code(&e));
    }
}
