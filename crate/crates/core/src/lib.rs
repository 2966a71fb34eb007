//! Emergence scoring for linearized computational circuits.
//!
//! A circuit is a DAG of nodes with dense or matrix-free linear edge maps.
//! The score combines a Gaussian effective-information emergence term with
//! a cellular-sheaf inconsistency penalty:
//!
//! ```text
//! EICS = ΔẼI / (1 + C_sh)
//! ```
//!
//! ```
//! use eics::circuit::{Circuit, EdgeSpec, NodeSpec, NodeVectors, Partition};
//! use eics::score::{eics_score, EicsConfig};
//! use nalgebra::{DMatrix, DVector};
//!
//! let c = Circuit::new(
//!     vec![NodeSpec::new("u", 2), NodeSpec::new("v", 2)],
//!     vec![EdgeSpec::new("u", "v", DMatrix::<f64>::identity(2, 2))],
//!     vec!["u".into()],
//!     vec!["v".into()],
//! );
//! let a = NodeVectors::from_pairs([
//!     ("u", DVector::from_vec(vec![1.0, 2.0])),
//!     ("v", DVector::from_vec(vec![1.0, 2.0])),
//! ]);
//! let r = eics_score(&c, &a, &Partition::per_node(&c), &EicsConfig::default()).unwrap();
//! assert_eq!(r.c_sh, 0.0);
//! ```

pub mod baselines;
pub mod circuit;
pub mod ei;
pub mod error;
pub mod io;
mod lanczos;
pub mod linear_map;
pub mod rng;
pub mod score;
pub mod sheaf;
pub mod toy;

pub use circuit::{ActivationState, Circuit, EdgeSpec, NodeSpec, NodeVectors, Part, Partition};
pub use error::{EicsError, Result};
pub use linear_map::{LinearMap, LinearOperator};
pub use score::{eics_score, EicsConfig, EicsResult};
