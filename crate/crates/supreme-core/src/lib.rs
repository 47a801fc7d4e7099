//! End-to-end pipeline for supervised ECG-text pre-training:
//! free-text ECG reports are normalized into a standardized query vocabulary,
//! a 1D ViT encoder over multi-lead ECG signals is fused with query
//! embeddings through a cross-attention decoder, and the result is evaluated
//! zero-shot on arbitrary prompted query sets.

pub mod embed;
pub mod entities;
pub mod model;
pub mod nn;
pub mod rng;
pub mod signal;
pub mod train;
