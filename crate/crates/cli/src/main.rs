use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match hmdlf_cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { hmdlf_cli::EXIT_USER } else { hmdlf_cli::EXIT_OK });
        }
    };
    std::process::exit(hmdlf_cli::run(cli));
}
