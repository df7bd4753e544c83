//! HTTP service over the exploration-block engine: sessions persisted as
//! per-directory event logs, a `/v1` JSON API and an analytics exporter.

pub mod api;
pub mod config;
pub mod error;
pub mod state;
pub mod store;

use std::sync::Arc;

use anyhow::Context;
use intent_canvas::analytics::{build_linkograph, import_manual_links, linkograph_metrics, session_diversity};
use intent_canvas::provider::DirImageStore;
use intent_canvas::{Engine, MetricsReport};
use serde_json::{json, Value};

pub use config::{Cli, Command, ServeArgs};
pub use state::AppState;

/// Bind, print the bound address on stdout, and serve until Ctrl-C.
pub async fn serve(args: ServeArgs, engine: Engine) -> anyhow::Result<()> {
    let state = AppState::open(engine, args.data_dir.clone(), args.seed)
        .with_context(|| format!("opening data dir {}", args.data_dir.display()))?;
    for (id, reason) in state.unhealthy() {
        tracing::warn!(session = %id, %reason, "not serving unhealthy session");
    }
    let listener = tokio::net::TcpListener::bind(args.addr())
        .await
        .with_context(|| format!("binding {}", args.addr()))?;
    let addr = listener.local_addr()?;
    println!("listening on http://{addr}");
    tracing::info!(%addr, sessions = state.session_ids().len(), "serving");
    axum::serve(listener, api::router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// Linkograph, metrics and output diversity of a stored session.
pub fn export_analytics(args: &config::ExportArgs, engine: &Engine) -> anyhow::Result<Value> {
    let dir = store::SessionDir::new(args.data_dir.join(&args.session));
    let loaded = dir.load().with_context(|| format!("loading session {}", args.session))?;
    let mut graph = build_linkograph(&loaded.session);
    let manual = match &args.manual_links {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            import_manual_links(&mut graph, &text)?
        }
        None => 0,
    };
    let metrics: MetricsReport = linkograph_metrics(&graph);
    let store = DirImageStore::new(dir.root.clone());
    let diversity = match session_diversity(&loaded.session, &store, &engine.embeddings) {
        Ok(d) => json!(d),
        Err(intent_canvas::Error::NotEnoughData(_)) => Value::Null,
        Err(e) => return Err(e.into()),
    };
    Ok(json!({
        "session_id": loaded.session.id(),
        "metrics": metrics,
        "linkograph": graph,
        "manual_links_added": manual,
        "max_cosine_distance": diversity,
    }))
}
