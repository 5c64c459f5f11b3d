#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Construction and verification of polynomial stage approximants for a
//! wandering domain with a prescribed visiting schedule.

pub mod approx;
pub mod branches;
pub mod driver;
pub mod exec;
pub mod geometry;
pub mod hexfloat;
pub mod models;
pub mod schedule;
pub mod verify;

pub use num_complex::Complex64 as C64;
