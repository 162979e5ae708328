//! Train, evaluate, compare and sweep decision-time refinement experiments.

pub mod analysis;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod csv_io;
pub mod error;
