use clap::Parser;
use mtgp_cli::{commands, Cli};

fn main() {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("MTGP_NUM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        // Results do not depend on the thread count; this only bounds CPU use.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    if let Err(e) = commands::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
