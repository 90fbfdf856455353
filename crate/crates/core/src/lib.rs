//! Offline tracking-behavior analysis over paired HTTP crawl logs.
//!
//! The pipeline runs bottom-up: [`ingest`] parses crawl logs into
//! [`model::CrawlDataset`]s, [`cookies`] separates identifier cookies from
//! the rest by differencing two crawls, [`sharing`] and [`graph`] find
//! identifiers crossing domains and the request structure of each visit,
//! [`behavior`] assigns tracking categories, and [`filter`] plus [`report`]
//! measure what filter lists miss. [`synth`] generates labeled corpora.

pub mod behavior;
pub mod config;
pub mod cookies;
pub mod error;
pub mod filter;
pub mod graph;
pub mod ingest;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod pixel;
pub mod psl;
pub mod report;
pub mod sharing;
pub mod synth;

pub use error::{Error, Result};
