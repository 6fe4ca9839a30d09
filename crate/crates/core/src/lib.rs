//! Merit-function gradient flow for over-parametrized Burer-Monteiro
//! factorization
//!
//! ```text
//! min ||U||_F^2  subject to  A(UU^T) = b,  ||U|| <= xi,   U in R^{d x p}
//! ```
//!
//! together with manifold stationarity diagnostics, KKT dual certificates and
//! an operator-splitting solver for the convex relaxation used as a baseline.

pub mod error;
pub mod flow;
pub mod fmt;
pub mod harness;
pub mod merit;
pub mod operator;
pub mod sdp;
pub mod stationarity;

pub use error::{Error, Result};
pub use flow::{FlowParams, FlowRecord, FlowTrajectory, InitKind, StopReason};
pub use merit::{MeritParams, Multipliers};
pub use operator::{generate_instance, Factor, Instance, MeasurementOperator};
pub use sdp::{AdmmParams, SdpSolution};
pub use stationarity::{CertificateReport, ClassifyTolerances, StationarityReport, Verdict};
