//! Federated expectation-maximization for learning mixtures of shared
//! components across clients, in client-server and decentralized settings.

pub mod data;
pub mod em;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod surrogate;
pub mod synth;
pub mod topology;
pub mod train;

pub use data::{ClientDataset, Federation, Split};
pub use em::{ComponentBank, LrSchedule, MixtureRow, PosteriorTable, SolverConfig};
pub use error::{FedError, Result};
pub use model::{LossKind, Prediction, Sample};
pub use surrogate::{FederationWeights, SurrogateObjective};
pub use topology::{Graph, MixingMatrix, MixingSchedule};
