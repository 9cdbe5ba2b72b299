//! Gated recurrent network used to predict the next disturbance sample.

pub mod adam;
pub mod io;
pub mod loss;
pub mod network;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use io::{load_model, read_model, save_model, write_model};
pub use loss::{huber, huber_grad, huber_loss};
pub use network::{glorot_init, GruLayerParams, GruNetwork, HiddenState, Linear};
pub use train::{
    train, EarlyStopping, Normalization, RestartLog, TrainConfig, TrainedModel, TrainingLog,
};
