use clap::Parser;

fn main() {
    let cli = vparisi_cli::Cli::parse();
    std::process::exit(vparisi_cli::run(cli));
}
