pub mod agents;
pub mod builder;
pub mod corpus;
pub mod engine;
pub mod evalkit;
pub mod experiment;
pub mod gateway;
pub mod kb;
pub mod sim;
pub mod taxonomy;
pub mod util;
pub mod verify;
