#![allow(dead_code)]

pub mod ctc_oracle;
pub mod fixtures;
pub mod gradients;
