//! Constant-velocity predictor speaking the line-delimited JSON protocol on
//! stdin/stdout. `--export-csv DIR` also writes each request as CSV.

use std::io::{stdin, stdout};
use std::path::PathBuf;

use clap::Parser;

#[derive(Parser)]
#[command(name = "trajfals-cv-adapter", version)]
struct Args {
    #[arg(long)]
    export_csv: Option<PathBuf>,
}

fn main() {
    let args = Args::parse();
    if let Err(e) = trajfals::protocol::serve(
        stdin().lock(),
        stdout().lock(),
        "cv-adapter",
        args.export_csv,
    ) {
        eprintln!("cv-adapter: {e}");
        std::process::exit(1);
    }
}
