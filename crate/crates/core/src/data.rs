use nalgebra::{DMatrix, DVector};

use crate::error::{input_err, Result};

/// Inputs and noisy observations of one task.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskDataset {
    inputs: DMatrix<f64>,
    observations: DVector<f64>,
    pub task_id: usize,
}

impl TaskDataset {
    pub fn new(inputs: DMatrix<f64>, observations: DVector<f64>, task_id: usize) -> Result<Self> {
        if inputs.nrows() != observations.len() {
            return input_err(format!(
                "inputs have {} rows but there are {} observations",
                inputs.nrows(),
                observations.len()
            ));
        }
        if inputs.ncols() == 0 {
            return input_err("inputs must have at least one column");
        }
        if inputs.iter().chain(observations.iter()).any(|v| !v.is_finite()) {
            return input_err("dataset contains NaN or infinite entries");
        }
        Ok(Self { inputs, observations, task_id })
    }

    /// A dataset with no points in `dim` dimensions.
    pub fn empty(dim: usize, task_id: usize) -> Self {
        Self {
            inputs: DMatrix::zeros(0, dim),
            observations: DVector::zeros(0),
            task_id,
        }
    }

    /// Builds a dataset from row vectors.
    pub fn from_rows(rows: &[Vec<f64>], observations: &[f64], task_id: usize) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return input_err("rows have inconsistent lengths");
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(
            DMatrix::from_row_slice(rows.len(), dim, &flat),
            DVector::from_column_slice(observations),
            task_id,
        )
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn observations(&self) -> &DVector<f64> {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Appends one observation.
    pub fn push(&mut self, x: &[f64], y: f64) -> Result<()> {
        if x.len() != self.dim() {
            return input_err(format!("point has {} coordinates, dataset has {}", x.len(), self.dim()));
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return input_err("observation contains NaN or infinite entries");
        }
        let n = self.len();
        let inputs = std::mem::replace(&mut self.inputs, DMatrix::zeros(0, 0));
        let mut inputs = inputs.insert_row(n, 0.0);
        for (d, v) in x.iter().enumerate() {
            inputs[(n, d)] = *v;
        }
        self.inputs = inputs;
        let obs = std::mem::replace(&mut self.observations, DVector::zeros(0));
        self.observations = obs.push(y);
        Ok(())
    }

    /// A copy with the observations replaced.
    pub fn with_observations(&self, observations: DVector<f64>) -> Result<Self> {
        Self::new(self.inputs.clone(), observations, self.task_id)
    }

    /// Rows selected by index, in the given order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select_rows(idx),
            observations: self.observations.select_rows(idx),
            task_id: self.task_id,
        }
    }
}

/// Affine map between raw and normalized observations.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Normalization {
    pub const IDENTITY: Self = Self { mean: 0.0, std: 1.0 };

    pub fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| (v - self.mean) / self.std)
    }

    pub fn invert(&self, z: &DVector<f64>) -> DVector<f64> {
        z.map(|v| v * self.std + self.mean)
    }
}

/// Shifts to zero mean and scales to unit (population) standard deviation.
/// When the standard deviation is at most 1e-12 only the shift is applied.
pub fn normalize_targets(y: &DVector<f64>) -> (DVector<f64>, Normalization) {
    if y.is_empty() {
        return (y.clone(), Normalization::IDENTITY);
    }
    let n = y.len() as f64;
    let mean = y.sum() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    let norm = Normalization {
        mean,
        std: if sd > 1e-12 { sd } else { 1.0 },
    };
    (norm.apply(y), norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_input_passes_through() {
        let (z, n) = normalize_targets(&DVector::from_vec(vec![2.0, 2.0, 2.0]));
        assert_eq!(z.as_slice(), &[0.0, 0.0, 0.0]);
        assert_eq!(n.mean, 2.0);
        assert_eq!(n.std, 1.0);
    }

    #[test]
    fn already_normalized() {
        let (z, n) = normalize_targets(&DVector::from_vec(vec![-1.0, 1.0]));
        assert_eq!(z.as_slice(), &[-1.0, 1.0]);
        assert_eq!(n, Normalization { mean: 0.0, std: 1.0 });
    }

    #[test]
    fn rejects_mismatch_and_nan() {
        assert!(TaskDataset::new(DMatrix::zeros(2, 1), DVector::zeros(3), 0).is_err());
        assert!(TaskDataset::new(DMatrix::from_element(1, 1, f64::NAN), DVector::zeros(1), 0).is_err());
    }

    #[test]
    fn push_appends_rows() {
        let mut d = TaskDataset::empty(2, 7);
        d.push(&[1.0, 2.0], 3.0).unwrap();
        d.push(&[4.0, 5.0], 6.0).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.inputs()[(1, 0)], 4.0);
        assert_eq!(d.observations()[1], 6.0);
        assert!(d.push(&[1.0], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn normalize_roundtrip(y in prop::collection::vec(-1e3f64..1e3, 1..40)) {
            let y = DVector::from_vec(y);
            let (z, n) = normalize_targets(&y);
            prop_assert!((z.sum() / z.len() as f64).abs() < 1e-9);
            let back = n.invert(&z);
            for (a, b) in back.iter().zip(y.iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }
}
