#![allow(dead_code)]

pub mod doubles;
pub mod gradient_suite;
