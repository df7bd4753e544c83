use clap::Parser;
use intent_canvas_server::config::{AnalyticsCommand, Cli, Command};
use tracing_subscriber::EnvFilter;

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Some(Command::Analytics(AnalyticsCommand::Export(args))) => {
            let engine = args.engine.build()?;
            let report = intent_canvas_server::export_analytics(&args, &engine)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Some(Command::Serve(args)) => run(args),
        None => run(cli.serve),
    }
}

fn run(args: intent_canvas_server::ServeArgs) -> anyhow::Result<()> {
    // Built before the runtime: live providers use blocking HTTP clients.
    let engine = args.engine.build()?;
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(intent_canvas_server::serve(args, engine))
}
