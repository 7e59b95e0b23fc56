//! Synthetic MIMO-OFDM channel data, angle-delay profiles, and a
//! from-scratch vision-transformer regressor for UE positioning.
//!
//! Pipeline: [`channel`] draws clustered-multipath CSI matrices with
//! ground-truth positions, [`adp`] turns them into angle-delay-profile
//! images, [`vit`] regresses (x, y) from those images on the autodiff
//! engine in [`tensor`], [`training`] runs the split/loss/optimizer loop,
//! and [`metrics`] reports RMSE and error-distance CDFs.

pub mod adp;
pub mod channel;
pub mod checkpoint;
pub mod cmat;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod tensor;
pub mod training;
pub mod vit;

pub use adp::AdpMatrix;
pub use channel::{ChannelSample, ScenarioConfig};
pub use error::{Error, Result};
pub use metrics::EvalReport;
pub use tensor::{Gradients, Tape, Tensor, Var};
pub use training::{LabelScaler, TrainConfig};
pub use vit::{Vit, VitConfig};
