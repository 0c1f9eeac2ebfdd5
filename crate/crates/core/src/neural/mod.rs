//! From-scratch feed-forward networks: the two-decoder separation model,
//! its permutation-invariant training loop, and the frozen-model
//! evaluation classifier.

pub mod checkpoint;
pub mod loss;
pub mod network;
pub mod optim;
pub mod separator;
pub mod train;

pub use loss::{cross_entropy_grad, pit_loss, pit_loss_grad, softmax, Assignment};
pub use network::{Activation, DenseNetwork};
pub use optim::{Adam, CosineSchedule};
pub use separator::{build_separator, build_to_budget, SeparatorModel, SeparatorPlan, Standardization};
pub use train::{
    classifier_accuracy, classifier_network, train_classifier, train_separator, EpochLog,
    SeparationDataset, TrainingSettings,
};
