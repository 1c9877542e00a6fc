/// Fixed-dimension embedding produced by either encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl Embedding {
    pub fn normalized(values: Vec<f64>) -> Self {
        Embedding {
            values,
            normalized: true,
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn bitwise_eq(&self, other: &Embedding) -> bool {
        self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Scales `values` to unit ℓ2 norm; a zero vector stays zero and unflagged.
pub fn l2_normalize(values: Vec<f64>) -> Embedding {
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        Embedding::normalized(values.into_iter().map(|v| v / norm).collect())
    } else {
        Embedding {
            values,
            normalized: false,
        }
    }
}
