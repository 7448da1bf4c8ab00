#![allow(dead_code)]

pub mod brute;
pub mod fd;
pub mod toy;
