// SPDX-License-Identifier: Apache-2.0

//! Redundant on-chip off-switch: security blocks that gate essential logic
//! behind single-use, cryptographically checked usage licenses, the
//! authority that issues those licenses, and a harness that measures how
//! much work each class of attack needs against a fleet of such chips.

pub mod attacks;
pub mod authorizer;
pub mod block;
pub mod chip;
pub mod crypto;
pub mod entropy;
pub mod fleet;
pub mod goldens;
pub mod ids;
pub mod modelcheck;
pub mod scenario;
pub mod transport;
pub mod variants;

pub use ids::{BatchId, BlockId, BlockKind};
