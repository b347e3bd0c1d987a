//! Chain-of-thought vision-and-language navigation harness.
//!
//! The pipeline: environments ([`env`]) are turned into textual action
//! options ([`vision`]), rendered into prompts and parsed back from
//! three-part reasoning strings ([`prompting`]). Ground-truth reasoning is
//! assembled by [`labels`] and exported as instruction-tuning data by
//! [`export`]. [`runtime`] drives closed-loop episodes against pluggable
//! reasoner backends and [`metrics`] scores the resulting trajectories.

pub mod env;
pub mod export;
pub mod http;
pub mod labels;
pub mod metrics;
pub mod prompting;
pub mod runtime;
pub mod util;
pub mod vision;
