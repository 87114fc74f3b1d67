pub mod fetcher;
pub mod graph;
pub mod index;
pub mod records;
pub mod layout;
pub mod chunking;
pub mod extraction;
pub mod topics;
pub mod unify;
pub mod pipeline;
pub mod qaloop;
pub mod verify;
