pub mod evaluation;
pub mod extraction;
pub mod fsutil;
pub mod graph;
pub mod inference;
pub mod interview;
pub mod llm_json;
pub mod providers;
pub mod runner;
pub mod schema;
pub mod simulate;
pub mod taxonomy;
