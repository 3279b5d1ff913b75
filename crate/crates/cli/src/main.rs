use clap::Parser;

fn main() {
    let cli = catanet_cli::Cli::parse();
    if let Err(e) = catanet_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(catanet_cli::exit_code(&e));
    }
}
