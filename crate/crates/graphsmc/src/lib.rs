//! Sequential Monte Carlo graph filtering with a trainable Chebyshev GCN
//! transition model.
//!
//! The pipeline: sliding-window correlation graphs ([`ingest`]) feed an
//! ensemble of weighted graph particles ([`smc`]) whose state transition is a
//! Chebyshev spectral convolution ([`gcn`]); a mean/max readout and MLP head
//! ([`head`]) turn particle embeddings into per-window class probabilities.
//! Everything trainable is recorded on a reverse-mode tape ([`tape`]) so the
//! whole filter, soft resampling included, is differentiated end to end.

pub mod cli;
pub mod config;
pub mod error;
pub mod gcn;
pub mod harness;
pub mod head;
pub mod ingest;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod smc;
pub mod tape;
