pub mod control;
pub mod fluid;
pub mod harness;
pub mod llm;
pub mod perception;
pub mod reasoning;
pub mod tissue;
