//! Small neural engine: dense layers, losses, a point-cloud encoder, Adam and
//! a deterministic mini-batch trainer.

pub mod checkpoint;
pub mod encoder;
pub mod gradcheck;
pub mod loss;
pub mod mlp;
pub mod optim;
pub mod train;

pub use checkpoint::Checkpoint;
pub use encoder::{max_pool, points_to_array, Encoding, PointEncoder, DEFAULT_GLOBAL_DIM};
pub use gradcheck::{check_gradient, relative_error, GradCheck};
pub use loss::{chamfer_loss_grad, mse};
pub use mlp::{Activation, Dense, Gradients, Mlp, Tape};
pub use optim::{Adam, AdamConfig};
pub use train::{epoch_order, train, train_until, EpochRecord, Evaluation, LossCurve, Objective, TrainConfig, TrainState};
