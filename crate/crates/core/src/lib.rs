//! Context-graph inference over relational sources and staged compilation of
//! natural-language questions into SQL.

pub mod access;
pub mod adjudicator;
pub mod builder;
pub mod config;
pub mod enrich;
pub mod eval;
pub mod fixtures;
pub mod joins;
pub mod model;
pub mod planner;
pub mod profile;
pub mod sqlref;
pub mod store;
pub mod text;
pub mod value;
