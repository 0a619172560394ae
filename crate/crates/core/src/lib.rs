pub mod cli;
pub mod error;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod mi;
pub mod ndm;
pub mod partition;
pub mod preimage;
pub mod rng;
pub mod toy;

pub use error::{NdmError, Result};
pub use partition::Partition;
