//! Turns natural-language requests into validated dashboard widget
//! specifications.

pub mod catalog;
pub mod llm;
pub mod parser;
pub mod prompts;
pub mod resolver;
pub mod schema;
pub mod session;
pub mod similarity;
pub mod vocab;
