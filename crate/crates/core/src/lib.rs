//! Benchmark engine for proactive and reactive document retrieval over
//! multi-party conversations.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`model`] and [`io`]: domain types and the line-delimited file formats.
//! * [`ingest`]: thread filtering, chain sampling, link mapping, splits and statistics.
//! * [`index`]: tokenizer, inverted index and BM25 search.
//! * [`metrics`]: reactive metrics and the proactive pDCG / npDCG family.
//! * [`harness`]: reactive and proactive run generation with pluggable policies.
//! * [`lmgr`]: language-model grounded retrieval.
//! * [`pooling`] and [`annotation`]: depth-k pools, label aggregation and the
//!   judgment store behind the annotation service.

pub mod annotation;
pub mod error;
pub mod harness;
pub mod index;
pub mod ingest;
pub mod io;
pub mod lmgr;
pub mod metrics;
pub mod model;
pub mod pooling;

pub use error::{Error, Result};
