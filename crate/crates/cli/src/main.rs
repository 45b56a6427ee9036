use clap::Parser;
use ergoloop_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            for f in out.files() {
                eprintln!("wrote {}", f.display());
            }
        }
        Err(e) => {
            eprintln!("ergoloop: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
