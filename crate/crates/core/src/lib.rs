//! Simulation and analysis toolkit for the PeerSwap gossip peer-sampling protocol.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod clocks;
pub mod eigen;
pub mod error;
pub mod ideal;
pub mod interchange;
pub mod lockswap;
pub mod netsim;
pub mod rng;
pub mod topology;

pub use error::{Error, Result};
pub use topology::{NodeId, Permutation, Slot, Topology};
