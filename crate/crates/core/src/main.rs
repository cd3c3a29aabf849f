use clap::Parser;

fn main() {
    usg::cli::init_logging();
    let cli = usg::cli::Cli::parse();
    std::process::exit(usg::cli::run(cli));
}
