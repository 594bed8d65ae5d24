//! Forward and inverse ray transforms over integral curves of planar
//! polynomial vector fields on the unit disc.
//!
//! The field X = mu d + conj(mu) dbar (dz/dt = mu(z)) defines a family of
//! curves; `transforms` computes ray and beam transforms of smooth compactly
//! supported phantoms over them, and `reconstruct` inverts the ray transform
//! by a Poisson-kernel-weighted filtered backprojection built on the
//! complexification of the rotation angle (`complexify`). `approx` provides
//! frequency-window truncation of analytic fields and the associated
//! stability experiments; `oracle` holds independent reference
//! implementations used only by tests.

pub mod approx;
pub mod complexify;
pub mod error;
pub mod field;
pub mod flow;
pub mod oracle;
pub mod reconstruct;
pub mod transforms;

pub use error::{FlowrayError, Result};
pub use field::{MembershipReport, PolyField};
pub use flow::{Chart, Curve, Labeling};
