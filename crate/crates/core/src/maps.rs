//! Validated per-voxel fields shared by every metric.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_len(dims: &[usize], len: usize) -> Result<()> {
    let expected: usize = dims.iter().product();
    if dims.is_empty() || expected != len {
        return Err(Error::SizeMismatch {
            expected,
            actual: len,
        });
    }
    Ok(())
}

fn check_unit_interval(values: &[f64]) -> Result<()> {
    for (index, &v) in values.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange {
                index,
                value: v,
                range: "[0, 1]",
            });
        }
    }
    Ok(())
}

pub(crate) fn same_dims(a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::DimMismatch {
            left: a.to_vec(),
            right: b.to_vec(),
        });
    }
    Ok(())
}

fn f32_payload(t: &Tensor, what: &str) -> Result<Vec<f64>> {
    t.as_f32()
        .map(|v| v.iter().map(|&x| x as f64).collect())
        .ok_or_else(|| Error::InvalidTensor(format!("{what} must be float32")))
}

/// Per-voxel foreground probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl ProbMap {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        check_len(&dims, values.len())?;
        check_unit_interval(&values)?;
        Ok(Self { dims, values })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        Self::new(t.dims().to_vec(), f32_payload(t, "probability map")?)
    }

    pub(crate) fn from_parts_unchecked(dims: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        Self { dims, values }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Thresholds at 0.5; ties go to foreground.
    pub fn predict(&self) -> LabelMap {
        LabelMap {
            dims: self.dims.clone(),
            values: self.values.iter().map(|&p| u8::from(p >= 0.5)).collect(),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f32(self.dims.clone(), self.values.iter().map(|&v| v as f32).collect())
            .expect("probability map is a valid tensor")
    }
}

/// Per-voxel uncertainty normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl UncertaintyMap {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        check_len(&dims, values.len())?;
        check_unit_interval(&values)?;
        Ok(Self { dims, values })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        Self::new(t.dims().to_vec(), f32_payload(t, "uncertainty map")?)
    }

    pub(crate) fn from_parts_unchecked(dims: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        Self { dims, values }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Binary per-voxel labels (ground truth, predictions or masks).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    dims: Vec<usize>,
    values: Vec<u8>,
}

impl LabelMap {
    pub fn new(dims: Vec<usize>, values: Vec<u8>) -> Result<Self> {
        check_len(&dims, values.len())?;
        if let Some(index) = values.iter().position(|&v| v > 1) {
            return Err(Error::InvalidLabel {
                index,
                value: values[index],
            });
        }
        Ok(Self { dims, values })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let v = t
            .as_labels()
            .ok_or_else(|| Error::InvalidTensor("label map must be uint8".into()))?;
        Self::new(t.dims().to_vec(), v.to_vec())
    }

    pub fn from_bools(dims: Vec<usize>, values: impl IntoIterator<Item = bool>) -> Result<Self> {
        Self::new(dims, values.into_iter().map(u8::from).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_labels(self.dims.clone(), self.values.clone()).expect("label map is a valid tensor")
    }
}

/// Stack of probability maps along a leading sample axis (MC passes or ensemble members).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStack {
    n_samples: usize,
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl SampleStack {
    /// `dims` are the spatial dims of one slice; `data` holds `n_samples` slices back to back.
    pub fn new(n_samples: usize, dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if n_samples == 0 {
            return Err(Error::InvalidTensor("sample stack needs at least one sample".into()));
        }
        let slice: usize = dims.iter().product();
        check_len(&dims, data.len() / n_samples)?;
        if slice * n_samples != data.len() {
            return Err(Error::SizeMismatch {
                expected: slice * n_samples,
                actual: data.len(),
            });
        }
        for (index, &v) in data.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfRange {
                    index,
                    value: v as f64,
                    range: "[0, 1]",
                });
            }
        }
        Ok(Self {
            n_samples,
            dims,
            data,
        })
    }

    /// Splits the leading axis of a float tensor into samples.
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        let (dims, data) = t.into_parts();
        if dims.len() < 2 {
            return Err(Error::InvalidTensor("sample stack needs a leading sample axis".into()));
        }
        let data = match data {
            crate::tensor::TensorData::Float32(v) => v,
            _ => return Err(Error::InvalidTensor("sample stack must be float32".into())),
        };
        Self::new(dims[0], dims[1..].to_vec(), data)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn slice_len(&self) -> usize {
        self.data.len() / self.n_samples
    }

    pub fn sample(&self, t: usize) -> &[f32] {
        let n = self.slice_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn samples(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.slice_len())
    }

    pub fn to_tensor(&self) -> Tensor {
        let mut dims = Vec::with_capacity(self.dims.len() + 1);
        dims.push(self.n_samples);
        dims.extend_from_slice(&self.dims);
        Tensor::from_f32(dims, self.data.clone()).expect("sample stack is a valid tensor")
    }
}

/// Non-negative per-voxel field such as a predicted variance or raw auxiliary output.
#[derive(Debug, Clone, PartialEq)]
pub struct NonNegField {
    dims: Vec<usize>,
    values: Vec<f64>,
}

impl NonNegField {
    pub fn new(dims: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        check_len(&dims, values.len())?;
        for (index, &v) in values.iter().enumerate() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::OutOfRange {
                    index,
                    value: v,
                    range: "[0, inf)",
                });
            }
        }
        Ok(Self { dims, values })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        Self::new(t.dims().to_vec(), f32_payload(t, "variance/uncertainty field")?)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f32(self.dims.clone(), self.values.iter().map(|&v| v as f32).collect())
            .expect("non-negative field is a valid tensor")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predict_ties_to_foreground() {
        let p = ProbMap::new(vec![3], vec![0.4999, 0.5, 0.9]).unwrap();
        assert_eq!(p.predict().values(), &[0, 1, 1]);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(ProbMap::new(vec![2], vec![0.1, 1.1]).is_err());
        assert!(UncertaintyMap::new(vec![1], vec![-0.1]).is_err());
        assert!(NonNegField::new(vec![1], vec![-1e-9]).is_err());
        assert!(LabelMap::new(vec![2], vec![0, 3]).is_err());
        assert!(ProbMap::new(vec![2, 2], vec![0.1; 3]).is_err());
    }

    #[test]
    fn stack_from_tensor_splits_leading_axis() {
        let t = Tensor::from_f32(vec![3, 2, 2], (0..12).map(|i| i as f32 / 12.0).collect()).unwrap();
        let s = SampleStack::from_tensor(t.clone()).unwrap();
        assert_eq!(s.n_samples(), 3);
        assert_eq!(s.dims(), &[2, 2]);
        assert_eq!(s.sample(1), &[4.0 / 12.0, 5.0 / 12.0, 6.0 / 12.0, 7.0 / 12.0]);
        assert_eq!(s.to_tensor(), t);
        assert!(SampleStack::from_tensor(Tensor::from_f32(vec![4], vec![0.0; 4]).unwrap()).is_err());
    }
}
