//! Personalized federated learning for CRNN text-line recognition.
//!
//! The crate is organised bottom-up: dense numerics ([`tensor`], [`nn`],
//! [`optim`]), the CTC objective ([`ctc`]), the CRNN-ECA network
//! ([`model`]), synthetic client data ([`datagen`]), the federated protocol
//! simulator ([`fedsim`]) and evaluation ([`eval`]).

pub mod ctc;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod fedsim;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{build_model, Crnn, ModelConfig};
pub use params::{Group, GroupSet, Param, ParamSet};
pub use tensor::{Scalar, Tensor};
