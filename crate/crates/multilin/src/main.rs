use clap::Parser;

fn main() {
    let cli = multilin::pipeline::Cli::parse();
    if let Err(e) = multilin::pipeline::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
