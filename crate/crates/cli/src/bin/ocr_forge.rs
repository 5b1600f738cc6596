//! Standalone OCR page converter: `ocr-forge --mode spotting --in pages.jsonl --out qa.jsonl`.

use clap::Parser;

#[derive(Debug, Parser)]
#[command(name = "ocr-forge", version, about = "Clean OCR page records and emit question/answer conversations")]
struct Cli {
    #[command(flatten)]
    args: mllm_cli::OcrArgs,
}

fn main() {
    mllm_cli::init_logging();
    let cli = Cli::parse();
    std::process::exit(mllm_cli::finish(mllm_cli::ocr(&cli.args)));
}
