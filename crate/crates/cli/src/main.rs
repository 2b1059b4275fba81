use clap::Parser;

fn main() {
    let cli = perfolab_cli::commands::Cli::parse();
    std::process::exit(perfolab_cli::commands::main_with(cli));
}
