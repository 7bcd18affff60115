#![allow(dead_code)]

pub mod micro;
pub mod reference_eval;
