mod binio;
pub mod checkpoint;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod networks;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod rng;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use optim::{OptimConfig, OptimState};
pub use params::ParamStore;
pub use rng::{Rng, RngState};
pub use tape::{Primitive, Tape, Var};
pub use tensor::Tensor;
