use crate::NnError;

pub const MAX_RANK: usize = 5;

/// Contiguous row-major tensor of up to five dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self, NnError> {
        if dims.len() > MAX_RANK {
            return Err(NnError::Shape(format!("rank {} exceeds {MAX_RANK}", dims.len())));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(NnError::Shape(format!(
                "dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            data: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rounds every value through `f32`.
    pub fn to_f32_storage(&self) -> Vec<f32> {
        self.data.iter().map(|v| *v as f32).collect()
    }
}
