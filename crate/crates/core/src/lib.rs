//! Coupled power/water network pump scheduling under load uncertainty.

pub mod backend;
pub mod pdn;
pub mod wdn;
pub mod uncertainty;
pub mod instance;
pub mod formulations;
pub mod montecarlo;
pub mod io;
pub mod config;
pub mod cases;
pub mod cli;
