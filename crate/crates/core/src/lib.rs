pub mod corpus;
pub mod error;
pub mod tokenizer;
pub mod masking;
pub mod mixer;
pub mod translit;
pub mod metrics;
pub mod model;
pub mod trainer;
pub mod synth;
pub mod cli;
