//! Losses, optimizer and training loop for the feature encoders, and the
//! depth-only registration path that uses them.

mod augment;
mod loss;
mod optim;
mod register;
mod train;

pub use augment::{random_rotation, rotation_augment};
pub use loss::{registration_loss, registration_loss_value, simsiam_loss, weights_on_tape, RegistrationLoss};
pub use optim::{Adam, AdamConfig};
pub use register::{fit_features, prepare, register, register_prepared, FitMode, Prepared, RegisterConfig};
pub use train::{
    train, train_pairs, train_step, validate, JsonLines, LossReport, Model, TrainConfig, TrainPair, TrainSink,
    TrainState, ValidationReport, Variant,
};
