use clap::Parser;
use tcft_bed_cli::{run, Cli};

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    run(cli, &mut std::io::stdout().lock())?;
    Ok(())
}
