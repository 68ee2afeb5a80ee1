//! Test support: brute-force reference kernels written independently of the
//! engine, and a central finite-difference gradient checker.

pub mod gradcheck;
pub mod oracles;
pub mod suites;
