pub mod behavior;
pub mod config;
pub mod process;
pub mod window;
pub mod plant;
pub mod controller;
pub mod scenario;
pub mod sim;
pub mod trace;
pub mod monitor;
pub mod cli;
