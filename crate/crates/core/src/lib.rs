pub mod augment;
pub mod backend;
pub mod corpus;
pub mod evalharness;
pub mod finetune;
mod fsio;
pub mod ids;
pub mod infer;
pub mod looporchestrator;
pub mod prompt;
pub mod settings;
pub mod text;
pub mod workspace;
