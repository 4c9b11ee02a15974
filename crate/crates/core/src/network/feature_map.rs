use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

/// A `(batch, channels, height, width)` activation tensor held on the host in
/// double precision. This is the currency of the fusion stage.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("feature map dims must be positive: {shape:?}")));
        }
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "{} values for feature map of shape {shape:?}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("feature map contains non-finite values".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Result<Self> {
        Self::new(shape, vec![0.0; shape.iter().product()])
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// The `H x W` plane of channel `c` in batch item `b`, row-major.
    pub fn channel(&self, b: usize, c: usize) -> &[f64] {
        let plane = self.shape[2] * self.shape[3];
        let start = (b * self.shape[1] + c) * plane;
        &self.data[start..start + plane]
    }

    /// Batch item `b` as a standalone map with batch size one.
    pub fn item(&self, b: usize) -> FeatureMap {
        let per = self.shape[1] * self.shape[2] * self.shape[3];
        FeatureMap {
            shape: [1, self.shape[1], self.shape[2], self.shape[3]],
            data: self.data[b * per..(b + 1) * per].to_vec(),
        }
    }

    /// Stacks batch-one maps along the batch axis.
    pub fn stack(items: &[FeatureMap]) -> Result<FeatureMap> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidInput("cannot stack zero feature maps".into()))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::with_capacity(items.len() * c * h * w);
        for it in items {
            if it.shape != [1, c, h, w] {
                return Err(Error::Shape(format!(
                    "cannot stack {:?} with {:?}",
                    it.shape, first.shape
                )));
            }
            data.extend_from_slice(&it.data);
        }
        Ok(FeatureMap {
            shape: [items.len(), c, h, w],
            data,
        })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let dims = t.dims();
        if dims.len() != 4 {
            return Err(Error::Shape(format!("expected a 4D tensor, got {dims:?}")));
        }
        let data = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        Self::new([dims[0], dims[1], dims[2], dims[3]], data)
    }

    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        Ok(Tensor::from_slice(&self.data, self.shape.as_slice(), device)?.to_dtype(dtype)?)
    }

    pub(crate) fn ensure_same_shape(&self, other: &FeatureMap) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "feature maps differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}
