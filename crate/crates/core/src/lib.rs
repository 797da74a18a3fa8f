pub mod comparison;
pub mod coupling;
pub mod dynamics;
pub mod error;
pub mod exact;
pub mod experiment;
pub mod graph;
pub mod state_space;
pub mod suite;
