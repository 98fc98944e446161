//! Benchmark harness for batch active learning on tabular regression data.

pub mod data;
pub mod fetch;
pub mod metrics;
pub mod report;
pub mod run;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("data: {0}")]
    Data(String),
    #[error("config: {0}")]
    Config(String),
    #[error("http: {0}")]
    Http(String),
    #[error("step {step}: {source}")]
    Step { step: usize, source: bmdal_core::Error },
    #[error(transparent)]
    Core(#[from] bmdal_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
