pub mod audit;
pub mod cli;
pub mod consent;
pub mod crypto;
pub mod explain;
pub mod gateway;
pub mod hitl;
pub mod ledger;
pub mod model;
pub mod offchain;
