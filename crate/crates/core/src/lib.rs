#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod apps;
pub mod backend;
pub mod captioner;
pub mod corpus;
pub mod e2t;
pub mod emb;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod linalg;
pub mod optimizer;
pub mod tokenizer;
pub mod types;

pub use error::{Error, Result};
