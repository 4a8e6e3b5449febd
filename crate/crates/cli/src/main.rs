use clap::Parser;

fn main() {
    let cli = adagraph_cli::Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match adagraph_cli::run(cli) {
        Ok(summary) => println!("{summary}"),
        Err(err) => {
            let (code, line) = adagraph_cli::error_line(&err);
            eprintln!("{line}");
            std::process::exit(code);
        }
    }
}
