//! Seeded random-variate kernels.
//!
//! Kernels accept any `rand::Rng`; [`RngStream`] is the reproducible stream the
//! samplers and CLI use. Scalar draws are computed in `f64` and converted to
//! the caller's scalar type.

mod ars;
mod gamma;
mod mvn;
mod polya_gamma;
mod stream;
mod truncnorm;

pub use ars::{sample_log_concave, LogConcaveDensity, Support};
pub use gamma::sample_gamma;
pub use mvn::{sample_precision_normal, sample_precision_normal_factored, standard_normal_vector};
pub use polya_gamma::sample_polya_gamma;
pub use stream::RngStream;
pub use truncnorm::{sample_truncated_normal, Side};
