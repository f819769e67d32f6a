#![allow(dead_code)]

pub mod geom;
pub mod grad;
pub mod oracles;
