//! Experiment harness for distributionally robust safe sample screening:
//! LIBSVM ingestion, class-shift weight balls, screening sweeps, the screening
//! cost study and the parameter-shift study.

pub mod data;
pub mod experiments;
pub mod libsvm;
pub mod output;
pub mod weights;
