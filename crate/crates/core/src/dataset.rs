use thiserror::Error;

/// Rows of encoded feature indices (one `u32` per feature) and targets in
/// original units. A dataset with zero features has a constant input.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    n_features: usize,
    features: Vec<u32>,
    targets: Vec<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("feature matrix has {got} entries, expected {rows} rows x {cols} features")]
    Shape { got: usize, rows: usize, cols: usize },
    #[error("row {row}: target {value} is not finite")]
    NonFiniteTarget { row: usize, value: f64 },
}

impl Dataset {
    pub fn new(n_features: usize, features: Vec<u32>, targets: Vec<f64>) -> Result<Self, DatasetError> {
        if features.len() != n_features * targets.len() {
            return Err(DatasetError::Shape { got: features.len(), rows: targets.len(), cols: n_features });
        }
        if let Some((row, &value)) = targets.iter().enumerate().find(|(_, y)| !y.is_finite()) {
            return Err(DatasetError::NonFiniteTarget { row, value });
        }
        Ok(Dataset { n_features, features, targets })
    }

    /// Fixed-input data: every row has the same (empty) feature vector.
    pub fn constant(targets: Vec<f64>) -> Self {
        Dataset { n_features: 0, features: Vec::new(), targets }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    /// Rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(idx.len() * self.n_features);
        for &i in idx {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            n_features: self.n_features,
            features,
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_checked() {
        assert!(Dataset::new(2, vec![0, 1, 2], vec![1.0, 2.0]).is_err());
        let d = Dataset::new(2, vec![0, 1, 2, 3], vec![1.0, 2.0]).unwrap();
        assert_eq!(d.row(1), &[2, 3]);
        let s = d.subset(&[1]);
        assert_eq!(s.targets(), &[2.0]);
        assert_eq!(s.row(0), &[2, 3]);
        assert!(matches!(
            Dataset::new(0, vec![], vec![f64::NAN]),
            Err(DatasetError::NonFiniteTarget { row: 0, .. })
        ));
    }
}
