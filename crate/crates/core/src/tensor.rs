use crate::error::{Error, Result};

/// One image's post-ReLU convolutional activations, `C x H x W`, stored
/// channel-major then row-major: `values[c*H*W + y*W + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapTensor {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl FeatureMapTensor {
    /// Builds a tensor, rejecting empty dims, a payload of the wrong length,
    /// and any non-finite or negative activation.
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidShape(format!(
                "dims must be >= 1, got {channels}x{height}x{width}"
            )));
        }
        let expected = channels
            .checked_mul(height)
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| Error::InvalidShape("element count overflows".into()))?;
        if values.len() != expected {
            return Err(Error::DimMismatch {
                expected,
                found: values.len(),
            });
        }
        validate_activations(&values)?;
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(
            channels,
            height,
            width,
            vec![0.0; channels * height * width],
        )
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of spatial positions, `H * W`.
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    /// The `H * W` activation plane of one channel.
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.plane_len();
        &self.values[c * plane..(c + 1) * plane]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.values[c * self.plane_len() + y * self.width + x]
    }

    /// Multiplies every activation by `k >= 0`.
    pub fn scaled(&self, k: f32) -> Result<Self> {
        Self::new(
            self.channels,
            self.height,
            self.width,
            self.values.iter().map(|v| v * k).collect(),
        )
    }
}

pub(crate) fn validate_activations(values: &[f32]) -> Result<()> {
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite { index });
        }
        if value < 0.0 {
            return Err(Error::NegativeActivation { index, value });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_channel_major() {
        let t = FeatureMapTensor::new(2, 2, 3, (0..12).map(|v| v as f32).collect()).unwrap();
        assert_eq!(t.get(1, 1, 2), 11.0);
        assert_eq!(t.get(0, 1, 0), 3.0);
        assert_eq!(t.channel(1), &[6.0, 7.0, 8.0, 9.0, 10.0, 11.0]);
    }

    #[test]
    fn rejects_invalid_payloads() {
        assert!(matches!(
            FeatureMapTensor::new(1, 1, 2, vec![1.0]),
            Err(Error::DimMismatch {
                expected: 2,
                found: 1
            })
        ));
        assert!(matches!(
            FeatureMapTensor::new(1, 1, 2, vec![1.0, -0.5]),
            Err(Error::NegativeActivation { index: 1, .. })
        ));
        assert!(matches!(
            FeatureMapTensor::new(1, 1, 1, vec![f32::NAN]),
            Err(Error::NonFinite { index: 0 })
        ));
        assert!(matches!(
            FeatureMapTensor::new(0, 1, 1, vec![]),
            Err(Error::InvalidShape(_))
        ));
    }
}
