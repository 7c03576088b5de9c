#![allow(dead_code)]

pub mod backends;
pub mod frames;
pub mod gen;
pub mod harness;
