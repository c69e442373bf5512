#![allow(dead_code)]

pub mod gc_oracle;
pub mod mfs_model;
