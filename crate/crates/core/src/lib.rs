pub mod analysis;
pub mod constraint;
pub mod error;
pub mod exterior;
pub mod framecalc;
pub mod geometry;
pub mod grid;
pub mod hodge;
pub mod io;
pub mod minimizer;
pub mod optimality;
pub mod scalar;

pub use error::{Error, Result};
pub use exterior::{InnerProduct, MultiVector};
pub use grid::{Cochain, FormField, GridOperator, GridSpec, MetricSpec, TorusGrid, VectorField};
pub use scalar::{Real, Scalar};

pub type MultiVector64 = MultiVector<f64>;
pub type MultiVector32 = MultiVector<f32>;
pub type Cochain64 = Cochain<f64>;
pub type Cochain32 = Cochain<f32>;
pub type FormField64 = FormField<f64>;
