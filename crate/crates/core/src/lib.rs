//! Plantbot: a plant–robot hybrid driven by a network of language-model
//! role agents exchanging natural-language messages over OSC, grounded in
//! a simulated soil and robot world.

pub mod action;
pub mod agent;
pub mod bridge;
pub mod bus;
pub mod clock;
pub mod config;
pub mod console;
pub mod gateway;
pub mod llm;
pub mod osc;
pub mod roles;
pub mod telemetry;
pub mod world;
