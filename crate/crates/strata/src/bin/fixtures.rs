use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use strata::fixtures::{diff, read_tree, regenerate, write_tree, DEFAULT_SEED};

#[derive(Parser)]
#[command(name = "fixtures", about = "Regenerate or check the golden test files")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rebuild the fixture tree from a seed (replaces the output directory)
    Regen {
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures"))]
        out: PathBuf,
    },
    /// Compare a committed tree against a fresh regeneration
    Check {
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures"))]
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Command::Regen { seed, out } => regenerate(seed).and_then(|tree| {
            write_tree(&tree, &out)?;
            println!("wrote {} files to {}", tree.len(), out.display());
            Ok(true)
        }),
        Command::Check { seed, dir } => regenerate(seed).and_then(|fresh| {
            let changed = diff(&read_tree(&dir)?, &fresh);
            for path in &changed {
                println!("drift: {path}");
            }
            Ok(changed.is_empty())
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
