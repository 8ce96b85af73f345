pub mod accounting;
pub mod backbone;
pub mod calib;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod ops;
pub mod param;
pub mod real;
pub mod reference;
pub mod selftest;
pub mod tensor;
pub mod toybench;

pub use error::{Error, Result};
pub use param::{Param, ParamKind, Parameters};
pub use real::{DType, Real};
pub use tensor::{Shape, Tensor};
