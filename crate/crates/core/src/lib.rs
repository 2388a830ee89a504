pub mod llm;
pub mod cli;
pub mod eval;
pub mod executor;
pub mod optimizer;
pub mod pipeline;
pub mod plan;
pub mod table;
