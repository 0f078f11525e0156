//! Federated-learning substrate: data, model, local training, aggregation.

pub mod aggregate;
pub mod data;
pub mod dump;
pub mod model;
pub mod train;

pub use aggregate::{fedavg, fedavg_equal, fedmedian_clustered, fedsgd_step};
pub use data::{dirichlet_partition, gen_synthetic, Dataset, GeneratorParams, Partition, Record, SyntheticSpec};
pub use model::{clip_params, Layout, Mlp, ModelParams};
pub use train::{eval_accuracy, local_gradient, mean_loss, train_local, LocalTraining, LocalVariant};
