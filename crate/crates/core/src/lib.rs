//! Core engine of the millstone document search service: the document
//! model, similarity metrics, text encoder, HNSW and keyword indexes, the
//! durable document store and the ETL pipelines that feed them.

pub mod ann;
pub mod encoder;
pub mod engine;
pub mod etl;
pub mod fulltext;
pub mod metrics;
pub mod model;
pub mod store;
pub mod synthetic;
