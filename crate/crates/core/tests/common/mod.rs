//! Test-side oracles and fixtures shared by the integration tests.

#![allow(dead_code)]

pub mod ba_scene;
pub mod brute_match;
pub mod descriptors;
pub mod gk_oracle;
pub mod pair;
