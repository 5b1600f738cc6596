use clap::Parser;

fn main() {
    mllm_cli::init_logging();
    let cli = mllm_cli::Cli::parse();
    std::process::exit(mllm_cli::finish(mllm_cli::run(cli)));
}
