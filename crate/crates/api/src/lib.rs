//! Authenticated query API over a document engine: a small query-language
//! parser with variables and field projection, HS256 bearer tokens and an
//! HTTP server exposing the nine retrieval, encoding and similarity
//! operations.

pub mod auth;
pub mod bind;
pub mod exec;
pub mod http;
pub mod query;
pub mod schema;

pub use exec::Api;
