#![allow(dead_code)]

pub mod assignment;
pub mod kalman;
pub mod lifecycle;
pub mod lstq;
pub mod montecarlo;
pub mod scenarios;
