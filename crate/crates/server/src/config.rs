use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use intent_canvas::embedding::EmbeddingGateway;
use intent_canvas::provider::live::{LiveConfig, LiveProvider};
use intent_canvas::provider::{MemoryImageStore, ProviderGateway, TemplateSet};
use intent_canvas::{Engine, ImageMode, WordVectors};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderMode {
    /// Deterministic offline providers.
    Mock,
    /// OpenAI-compatible HTTP providers configured from the environment.
    Live,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ImageModeArg {
    /// Realize every image candidate before scoring.
    Full,
    /// Score image candidates by prompt text; realize only the suggestions.
    Economy,
}

impl From<ImageModeArg> for ImageMode {
    fn from(m: ImageModeArg) -> Self {
        match m {
            ImageModeArg::Full => ImageMode::Full,
            ImageModeArg::Economy => ImageMode::Economy,
        }
    }
}

/// Provider and pipeline settings shared by `serve` and `analytics export`.
#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    #[arg(long, value_enum, default_value = "mock", env = "INTENT_CANVAS_PROVIDER_MODE")]
    pub provider_mode: ProviderMode,
    #[arg(long, value_enum, default_value = "economy")]
    pub image_mode: ImageModeArg,
    /// Bound on concurrent provider calls per pipeline step.
    #[arg(long, default_value_t = intent_canvas::provider::DEFAULT_PARALLELISM as u16, value_parser = clap::value_parser!(u16).range(1..=64))]
    pub parallelism: u16,
    /// Word co-occurrence vectors (`token v1 v2 ...` per line) for text typicality.
    #[arg(long)]
    pub word_vectors: Option<PathBuf>,
    /// Directory of prompt-template overrides (`<template_id>.txt`).
    #[arg(long)]
    pub templates_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    #[arg(long, default_value = "./data", env = "INTENT_CANVAS_DATA_DIR")]
    pub data_dir: PathBuf,
    /// Default seed for sessions created without one.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub engine: EngineArgs,
}

impl ServeArgs {
    pub fn addr(&self) -> SocketAddr {
        SocketAddr::new(self.host, self.port)
    }
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[arg(long, default_value = "./data")]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub session: String,
    /// JSON list of `{i, j}` analyst links to add before computing metrics.
    #[arg(long)]
    pub manual_links: Option<PathBuf>,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Subcommand)]
pub enum AnalyticsCommand {
    /// Print the linkograph, its metrics and output diversity as JSON.
    Export(ExportArgs),
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service (the default).
    Serve(ServeArgs),
    #[command(subcommand)]
    Analytics(AnalyticsCommand),
}

#[derive(Debug, Parser)]
#[command(name = "intent-canvas", version, about = "Exploration-block engine and HTTP service")]
#[command(args_conflicts_with_subcommands = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
    #[command(flatten)]
    pub serve: ServeArgs,
}

impl EngineArgs {
    pub fn build(&self) -> anyhow::Result<Engine> {
        let words = match &self.word_vectors {
            Some(path) => Some(Arc::new(
                WordVectors::load(path).with_context(|| format!("loading word vectors from {}", path.display()))?,
            )),
            None => None,
        };
        let mut engine = match self.provider_mode {
            ProviderMode::Mock => Engine::mock(words),
            ProviderMode::Live => {
                let live = Arc::new(LiveProvider::new(LiveConfig::from_env()?)?);
                Engine {
                    providers: ProviderGateway::new(live.clone(), live.clone(), Arc::new(MemoryImageStore::default())),
                    embeddings: EmbeddingGateway {
                        words,
                        sentence: live.clone(),
                        joint: live,
                    },
                    image_mode: ImageMode::Economy,
                }
            }
        };
        engine.image_mode = self.image_mode.into();
        engine.providers.parallelism = usize::from(self.parallelism);
        if let Some(dir) = &self.templates_dir {
            engine.providers.templates = Arc::new(
                TemplateSet::with_overrides(dir).with_context(|| format!("loading templates from {}", dir.display()))?,
            );
        }
        Ok(engine)
    }
}
