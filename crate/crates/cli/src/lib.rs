pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod corpus_file;
pub mod error;
pub mod reports;
