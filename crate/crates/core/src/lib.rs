pub mod aggregation;
pub mod concurrency;
pub mod config;
pub mod datamodel;
pub mod error;
pub mod extraction;
pub mod generation;
pub mod geometry;
pub mod http;
pub mod metrics;
pub mod pairing;
pub mod pipeline;
pub mod report;
pub mod text;
pub mod vocab;

pub use error::{Error, Result};
