use clap::Parser;

fn main() {
    let code = skillab_cli::run(skillab_cli::Cli::parse());
    std::process::exit(code);
}
