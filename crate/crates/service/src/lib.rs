//! Study service: embedded document store, HTTP API, scheduler ticks,
//! export and the operator tooling behind `reflectctl`.

pub mod admin;
pub mod config;
pub mod export;
pub mod http;
pub mod notify;
pub mod provider;
pub mod records;
pub mod service;
pub mod simulate;
pub mod store;
