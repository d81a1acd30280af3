pub mod analytics;
pub mod criteria;
pub mod dynsim;
pub mod engine;
pub mod fixtures;
pub mod netmodel;
pub mod policy;
pub mod powerflow;
pub mod screener;
