use clap::Parser;
use gamma_vae::cli::{init_thread_pool, run, Cli};

fn main() {
    init_thread_pool();
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        let code = err.exit_code();
        eprintln!("gvae: error[{code}]: {err}");
        std::process::exit(code);
    }
}
