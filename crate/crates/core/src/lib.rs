#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod curation;
pub mod evalsuite;
pub mod model;
pub mod moe;
pub mod numerics;
pub mod smiles;
pub mod tokenizer;
pub mod training;
