//! Client datasets and federations.

use crate::error::{FedError, Result};
use crate::model::{LossKind, Sample};
use crate::surrogate::FederationWeights;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// One client's samples, already divided into a train and a test split.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientDataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl ClientDataset {
    pub fn new(train: Vec<Sample>, test: Vec<Sample>) -> Self {
        ClientDataset { train, test }
    }

    /// Number of training samples, `n_t`.
    pub fn n_train(&self) -> usize {
        self.train.len()
    }

    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Federation {
    pub clients: Vec<ClientDataset>,
    pub loss: LossKind,
    /// Feature dimension `d`.
    pub dim: usize,
}

impl Federation {
    /// Validates feature lengths, labels and that every client has at least
    /// one training sample.
    pub fn new(clients: Vec<ClientDataset>, loss: LossKind, dim: usize) -> Result<Self> {
        if clients.is_empty() {
            return Err(FedError::input("federation has no clients"));
        }
        for (t, client) in clients.iter().enumerate() {
            if client.train.is_empty() {
                return Err(FedError::input(format!("client {t} has no training samples")));
            }
            for s in client.train.iter().chain(&client.test) {
                if s.x.len() != dim {
                    return Err(FedError::DimensionMismatch {
                        expected: dim,
                        got: s.x.len(),
                    });
                }
                loss.validate_label(s.y)?;
            }
        }
        Ok(Federation { clients, loss, dim })
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    /// Total training sample count `n`.
    pub fn total_train(&self) -> usize {
        self.clients.iter().map(ClientDataset::n_train).sum()
    }

    /// `ω_t = n_t / n`.
    pub fn weights(&self) -> FederationWeights {
        let n = self.total_train() as f64;
        FederationWeights::new_unchecked(
            self.clients
                .iter()
                .map(|c| c.n_train() as f64 / n)
                .collect(),
        )
    }

    pub fn param_len(&self) -> usize {
        self.loss.param_len(self.dim)
    }

    /// Moves clients `at..` into a new federation.
    pub fn split_off(&mut self, at: usize) -> Result<Federation> {
        if at == 0 || at >= self.clients.len() {
            return Err(FedError::input(format!(
                "cannot split {} clients at {at}",
                self.clients.len()
            )));
        }
        let rest = self.clients.split_off(at);
        Ok(Federation {
            clients: rest,
            loss: self.loss,
            dim: self.dim,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn client(n_train: usize) -> ClientDataset {
        let s = Sample::new(vec![1.0, 0.0], 1.0);
        ClientDataset::new(vec![s.clone(); n_train], vec![s])
    }

    #[test]
    fn weights_are_proportional_to_train_sizes() {
        let fed = Federation::new(vec![client(1), client(3)], LossKind::Logistic, 2).unwrap();
        assert_eq!(fed.total_train(), 4);
        assert_eq!(fed.weights().as_slice(), &[0.25, 0.75]);
    }

    #[test]
    fn rejects_bad_federations() {
        assert!(Federation::new(vec![], LossKind::Logistic, 2).is_err());
        assert!(Federation::new(vec![client(0)], LossKind::Logistic, 2).is_err());
        assert!(Federation::new(vec![client(2)], LossKind::Logistic, 3).is_err());
        let bad = ClientDataset::new(vec![Sample::new(vec![1.0, 1.0], 2.0)], vec![]);
        assert!(Federation::new(vec![bad], LossKind::Logistic, 2).is_err());
    }

    #[test]
    fn split_off_moves_tail() {
        let mut fed =
            Federation::new(vec![client(1), client(2), client(3)], LossKind::Logistic, 2).unwrap();
        let tail = fed.split_off(2).unwrap();
        assert_eq!(fed.num_clients(), 2);
        assert_eq!(tail.num_clients(), 1);
        assert_eq!(tail.clients[0].n_train(), 3);
        assert!(fed.split_off(0).is_err());
    }
}
