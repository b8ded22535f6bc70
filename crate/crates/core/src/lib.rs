//! Exact arithmetic in the cyclotomic p-adic tower over `Q_p(zeta_{p^s})`, with
//! normalized traces, Kahler differentials and the completion of the perpendicular
//! parts, plus a harness that checks the structural estimates numerically.

pub mod completion;
pub mod constants;
pub mod differentials;
pub mod error;
pub mod lattice;
pub mod padic;
pub mod report;
pub mod sampling;
pub mod suites;
pub mod tower;

pub use error::{Error, Result};
pub use padic::{PadicScalar, Val};
pub use tower::{GaloisElement, RhoExpansion, Tower, TowerElement, TowerParams};
