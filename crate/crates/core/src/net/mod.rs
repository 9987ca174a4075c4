//! Split-convolutional recurrent reconstructor with angular attention.

pub mod checkpoint;
pub mod conv;
pub mod model;
pub mod tape;
pub mod tensor;
pub mod train;

pub use conv::ConvSpec;
pub use model::{Ablation, Activation, ConvKind, GradReport, Graph, GruVars, NetSpec, Network, Params};
pub use tape::{Grads, Tape, Var};
pub use tensor::{Scalar, Tensor};
pub use train::{Sample, TrainConfig, TrainOutcome, TrainStop};
pub use checkpoint::Checkpoint;
