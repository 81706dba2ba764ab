use clap::Parser;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    delvepo_cli::execute(delvepo_cli::Cli::parse())
}
