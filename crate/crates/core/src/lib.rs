//! Delay-optimal segment caching for device-to-device networks with
//! Poisson contacts.

pub mod contact;
pub mod harness;
pub mod model;
pub mod milp;
pub mod nlr;
pub mod scenario;
pub mod search;
