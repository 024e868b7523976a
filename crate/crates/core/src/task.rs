//! What a subnetwork is trained on: inputs, the subset partition and the
//! objective that turns a batch of subset members into a loss.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::adam::{adam_step, AdamState};
use crate::data::Partition;
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::network::{backward, forward, ParamSet};
use crate::rng::Rng;
use crate::tensor::{loss_and_grad, Activation, LossKind, Tensor};

/// How a batch drawn for one subset becomes network targets.
#[derive(Clone, Debug, PartialEq)]
pub enum Objective {
    /// One logit per subnetwork. A batch of subset members is paired with
    /// the same number of negatives drawn uniformly, with replacement, from
    /// all samples outside the subset.
    Detection,
    /// One logit per group; each sample's target is the one-hot of its
    /// group. Used by the single-network baseline.
    MultiLabel { groups: Vec<usize>, width: usize },
    /// Dense targets with squared error.
    Regression { targets: Tensor },
}

impl Objective {
    pub fn loss_kind(&self) -> LossKind {
        match self {
            Objective::Regression { .. } => LossKind::MeanSquaredError,
            _ => LossKind::BceWithLogits,
        }
    }

    pub fn output_width(&self) -> Option<usize> {
        match self {
            Objective::Detection => Some(1),
            Objective::MultiLabel { width, .. } => Some(*width),
            Objective::Regression { targets } => Some(targets.cols()),
        }
    }
}

/// Inputs plus the partition that defines the subnetworks.
#[derive(Clone, Debug)]
pub struct Task {
    pub inputs: Tensor,
    pub partition: Partition,
    pub objective: Objective,
    pub activation: Activation,
    complements: Vec<Vec<usize>>,
}

impl Task {
    pub fn new(inputs: Tensor, partition: Partition, objective: Objective, activation: Activation) -> Result<Self> {
        if inputs.rows() != partition.sample_count() {
            return Err(Error::Shape(format!(
                "{} input rows for a partition of {} samples",
                inputs.rows(),
                partition.sample_count()
            )));
        }
        match &objective {
            Objective::MultiLabel { groups, width } => {
                if groups.len() != inputs.rows() || groups.iter().any(|g| g >= width) {
                    return Err(Error::Shape("group labels do not match the inputs or head width".into()));
                }
            }
            Objective::Regression { targets } if targets.rows() != inputs.rows() => {
                return Err(Error::Shape(format!(
                    "{} target rows for {} inputs",
                    targets.rows(),
                    inputs.rows()
                )));
            }
            _ => {}
        }
        let complements = if matches!(objective, Objective::Detection) {
            let membership = partition.membership();
            (0..partition.len())
                .map(|k| (0..membership.len()).filter(|&i| membership[i] != k).collect())
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            inputs,
            partition,
            objective,
            activation,
            complements,
        })
    }

    pub fn subset_count(&self) -> usize {
        self.partition.len()
    }

    /// Checks that a network's output width fits the objective.
    pub fn check_network(&self, params: &ParamSet) -> Result<()> {
        if params.input_dim() != self.inputs.cols() {
            return Err(Error::Shape(format!(
                "network input width {} but task inputs have {} columns",
                params.input_dim(),
                self.inputs.cols()
            )));
        }
        if let Some(w) = self.objective.output_width() {
            if params.output_dim() != w {
                return Err(Error::Shape(format!(
                    "network output width {} but the objective needs {w}",
                    params.output_dim()
                )));
            }
        }
        Ok(())
    }

    /// Builds `(inputs, targets)` for a batch of members of subset `k`.
    pub fn batch(&self, k: usize, members: &[usize], rng: &mut Rng) -> (Tensor, Tensor) {
        match &self.objective {
            Objective::Detection => {
                let others = &self.complements[k];
                let mut rows = members.to_vec();
                if !others.is_empty() {
                    rows.extend((0..members.len()).map(|_| others[rng.random_range(0..others.len())]));
                }
                let mut target = vec![1.0; members.len()];
                target.resize(rows.len(), 0.0);
                let n = rows.len();
                (
                    self.inputs.select_rows(&rows),
                    Tensor::matrix(n, 1, target).expect("column target"),
                )
            }
            Objective::MultiLabel { groups, width } => {
                let mut target = vec![0.0; members.len() * width];
                for (r, &i) in members.iter().enumerate() {
                    target[r * width + groups[i]] = 1.0;
                }
                (
                    self.inputs.select_rows(members),
                    Tensor::matrix(members.len(), *width, target).expect("one-hot target"),
                )
            }
            Objective::Regression { targets } => (self.inputs.select_rows(members), targets.select_rows(members)),
        }
    }
}

/// Endless shuffled mini-batches over one subset; reshuffles whenever a
/// pass is exhausted. The last batch of a pass may be short.
pub struct BatchCursor<'a> {
    members: &'a [usize],
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
}

impl<'a> BatchCursor<'a> {
    pub fn new(members: &'a [usize], batch_size: usize) -> Self {
        Self {
            members,
            order: Vec::new(),
            pos: 0,
            batch_size: batch_size.max(1),
        }
    }

    pub fn next_batch(&mut self, rng: &mut Rng) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.order = self.members.to_vec();
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        batch
    }
}

/// One masked forward/backward/Adam update. Returns the batch loss.
pub fn train_step(
    params: &mut ParamSet,
    mask: &BinaryMask,
    state: &mut AdamState,
    input: &Tensor,
    target: &Tensor,
    loss: LossKind,
    activation: Activation,
) -> Result<f64> {
    let (out, cache) = forward(params, mask, input, activation)?;
    let (value, grad) = loss_and_grad(&out, target, loss)?;
    let grads = backward(&cache, &grad)?;
    adam_step(params, &grads, mask, state)?;
    if !params.is_finite() {
        return Err(Error::NonFinite("parameters after an update".into()));
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn two_subsets() -> Task {
        let inputs = Tensor::matrix(6, 1, (0..6).map(f64::from).collect()).unwrap();
        let partition = Partition::new(vec![0, 1], vec![vec![0, 1, 2, 3], vec![4, 5]], 6).unwrap();
        Task::new(inputs, partition, Objective::Detection, Activation::Relu).unwrap()
    }

    #[test]
    fn detection_batches_are_balanced() {
        let task = two_subsets();
        let mut r = rng::derive(0, &[9]);
        let (x, y) = task.batch(1, &[4, 5], &mut r);
        assert_eq!(x.rows(), 4);
        assert_eq!(y.data(), &[1.0, 1.0, 0.0, 0.0]);
        for i in 2..4 {
            assert!(x.row(i)[0] < 4.0, "negative drawn from inside the subset");
        }
    }

    #[test]
    fn multilabel_targets_are_one_hot() {
        let inputs = Tensor::matrix(3, 1, vec![0.0, 1.0, 2.0]).unwrap();
        let obj = Objective::MultiLabel {
            groups: vec![2, 0, 1],
            width: 3,
        };
        let task = Task::new(inputs, Partition::trivial(3).unwrap(), obj, Activation::Relu).unwrap();
        let (_, y) = task.batch(0, &[0, 1], &mut rng::derive(0, &[1]));
        assert_eq!(y.data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn cursor_covers_each_member_once_per_pass() {
        let members: Vec<usize> = (10..17).collect();
        let mut cursor = BatchCursor::new(&members, 3);
        let mut r = rng::derive(4, &[]);
        let mut seen: Vec<usize> = (0..3).flat_map(|_| cursor.next_batch(&mut r)).collect();
        seen.sort_unstable();
        assert_eq!(seen, members);
    }

    #[test]
    fn mismatched_rows_rejected() {
        let inputs = Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap();
        assert!(Task::new(inputs, Partition::trivial(3).unwrap(), Objective::Detection, Activation::Relu).is_err());
    }
}
