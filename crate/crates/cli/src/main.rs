use clap::Parser;
use htsp_cli::args::{Cli, Command};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => htsp_cli::generate::run(a),
        Command::Train(a) => htsp_cli::train::run(a),
        Command::Solve(a) => htsp_cli::solve::run(a).map(|_| ()),
        Command::Eval(a) => htsp_cli::eval::run(a).map(|(_, s)| {
            println!("{} instances, mean gap {:.3}%", s.count, s.mean_gap_pct);
        }),
        Command::Report(a) => htsp_cli::report::run(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
