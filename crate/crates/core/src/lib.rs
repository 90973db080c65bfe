//! Desk-scale toolkit for studying generative image restoration through the
//! lens of information theory.
//!
//! The crate bundles a small f64 autodiff engine ([`tensor`]), the generator
//! and discriminator architectures under study ([`nn`]), their training
//! objectives and loops ([`train`]), procedural degradation datasets
//! ([`data`]), image and exact information-theoretic metrics ([`metrics`],
//! [`info`]), nonlinear regression helpers ([`fit`]), and the seeded
//! experiment runner behind the `restoreib` CLI ([`exp`]).

pub mod data;
pub mod exp;
pub mod fit;
pub mod info;
pub mod metrics;
pub mod nn;
pub mod tensor;
pub mod train;

#[cfg(test)]
pub(crate) mod testutil;

/// Stable 64-bit mix for deriving per-item seeds from (seed, salt, index)
/// so parallel generation stays order-independent.
pub fn derive_seed(seed: u64, salt: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(salt.wrapping_mul(0xbf58476d1ce4e5b9))
        .wrapping_add(index.wrapping_add(0x94d049bb133111eb));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
