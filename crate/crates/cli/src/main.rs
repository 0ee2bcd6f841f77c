use clap::Parser;

fn main() {
    agentrl_cli::init_logging();
    let cli = agentrl_cli::Cli::parse();
    if let Err(e) = agentrl_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
