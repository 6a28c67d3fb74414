//! Measurement code shared by the suites here and the acceptance report.

#![allow(dead_code)]

pub mod grad;
pub mod labels;
pub mod programs;
