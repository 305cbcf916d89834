//! PCA compression and whitening of raw descriptors.
//!
//! Fitting l2-normalizes every training descriptor, centers on the training
//! mean, and takes the top principal directions of the centered matrix.
//! Applying maps a raw descriptor `r` to
//!
//! ```text
//! diag(sigma)^-1 * V * (r / |r| - mean)
//! ```
//!
//! followed by an optional final l2-normalization so that dot products are
//! cosines. `sigma_i` is the standard deviation (divide-by-`D` convention)
//! of the training projections on row `i` of `V`, so whitened training data
//! has unit variance per component.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::store::{to_u32, ByteReader, ByteWriter, DescriptorRecord};

pub const WHITENING_MAGIC: [u8; 4] = *b"PWAW";

/// Relative floor on singular values: directions with
/// `sigma_i <= epsilon * sigma_1` are dropped.
pub const DEFAULT_EPSILON: f64 = 1e-10;

/// Below this absolute spread the normalized training set is treated as
/// having no variation at all (normalized vectors have unit scale).
const ZERO_SPREAD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningModel {
    input_dim: usize,
    output_dim: usize,
    mean: Vec<f64>,
    projection: Vec<f64>,
    singular_values: Vec<f64>,
}

/// A fitted model plus what was asked for; `model.output_dim()` is smaller
/// than `requested_dim` when near-null directions were dropped.
#[derive(Debug, Clone)]
pub struct WhiteningFit {
    pub model: WhiteningModel,
    pub requested_dim: usize,
}

impl WhiteningFit {
    pub fn truncated(&self) -> bool {
        self.model.output_dim < self.requested_dim
    }
}

impl WhiteningModel {
    /// Assembles a model from its parts. Checks shapes and that the
    /// singular values are positive, finite and non-increasing.
    pub fn from_parts(
        mean: Vec<f64>,
        projection: Vec<f64>,
        singular_values: Vec<f64>,
    ) -> Result<Self> {
        let input_dim = mean.len();
        let output_dim = singular_values.len();
        if input_dim == 0 || output_dim == 0 || output_dim > input_dim {
            return Err(Error::InvalidShape(format!(
                "whitening {output_dim}x{input_dim} is not a valid projection"
            )));
        }
        if projection.len() != output_dim * input_dim {
            return Err(Error::DimMismatch {
                expected: output_dim * input_dim,
                found: projection.len(),
            });
        }
        if mean.iter().chain(&projection).any(|v| !v.is_finite()) {
            return Err(Error::Malformed {
                what: "whitening model",
                detail: "non-finite mean or projection entry".into(),
            });
        }
        if singular_values.iter().any(|s| !(s.is_finite() && *s > 0.0))
            || singular_values.windows(2).any(|w| w[1] > w[0])
        {
            return Err(Error::Malformed {
                what: "whitening model",
                detail: "singular values must be positive and non-increasing".into(),
            });
        }
        Ok(Self {
            input_dim,
            output_dim,
            mean,
            projection,
            singular_values,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Row `i` of the projection (the `i`-th principal direction).
    pub fn direction(&self, i: usize) -> &[f64] {
        &self.projection[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// Whitened coordinates of an already l2-normalized vector.
    pub fn whiten_normalized(&self, unit: &[f64]) -> Result<Vec<f64>> {
        if unit.len() != self.input_dim {
            return Err(Error::DimMismatch {
                expected: self.input_dim,
                found: unit.len(),
            });
        }
        let centered: Vec<f64> = unit.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        Ok((0..self.output_dim)
            .map(|i| dot(self.direction(i), &centered) / self.singular_values[i])
            .collect())
    }

    /// Keeps only the first `m` directions.
    pub fn truncate(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.output_dim {
            return Err(Error::InfeasibleDim {
                requested: m,
                max: self.output_dim,
            });
        }
        Self::from_parts(
            self.mean.clone(),
            self.projection[..m * self.input_dim].to_vec(),
            self.singular_values[..m].to_vec(),
        )
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Symmetric `rows * rows^T` for a row-major `n x d` matrix.
fn gram(data: &[f64], n: usize, d: usize, exec: Execution) -> DMatrix<f64> {
    let lower: Vec<Vec<f64>> = exec.map_range(n, |i| {
        let ri = &data[i * d..(i + 1) * d];
        (0..=i)
            .map(|j| dot(ri, &data[j * d..(j + 1) * d]))
            .collect()
    });
    let mut g = DMatrix::zeros(n, n);
    for (i, row) in lower.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Eigenpairs sorted by descending eigenvalue (ties by index).
fn sorted_eigen(matrix: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(matrix);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// Flips a direction so its largest-magnitude entry (first on ties) is positive.
fn canonical_sign(direction: &mut [f64]) {
    let mut best = 0;
    for (i, v) in direction.iter().enumerate() {
        if v.abs() > direction[best].abs() {
            best = i;
        }
    }
    if direction.get(best).is_some_and(|&v| v < 0.0) {
        direction.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Fits mean, principal directions and whitening scales on `training`.
pub fn fit_whitening<T>(
    training: &[T],
    m: usize,
    epsilon: f64,
    exec: Execution,
) -> Result<WhiteningFit>
where
    T: AsRef<[f64]> + Sync,
{
    let count = training.len();
    if count < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: count,
        });
    }
    let dim = training[0].as_ref().len();
    if let Some(bad) = training.iter().find(|t| t.as_ref().len() != dim) {
        return Err(Error::MixedDims {
            first: dim,
            other: bad.as_ref().len(),
        });
    }
    let max = dim.min(count - 1);
    if m == 0 || m > max {
        return Err(Error::InfeasibleDim { requested: m, max });
    }
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            detail: format!("must be finite and >= 0, got {epsilon}"),
        });
    }

    // l2-normalize, then center.
    let mut data = Vec::with_capacity(count * dim);
    for (i, t) in training.iter().enumerate() {
        let v = t.as_ref();
        let norm = l2_norm(v);
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::ZeroDescriptor(format!("training #{i}")));
        }
        data.extend(v.iter().map(|x| x / norm));
    }
    let mut mean = vec![0.0; dim];
    for row in data.chunks_exact(dim) {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    for row in data.chunks_exact_mut(dim) {
        row.iter_mut().zip(&mean).for_each(|(x, m)| *x -= m);
    }

    // Principal directions from whichever side of the SVD is smaller.
    let (eigenvalues, directions): (Vec<f64>, Vec<Vec<f64>>) = if count <= dim {
        let (values, u) = sorted_eigen(gram(&data, count, dim, exec));
        let dirs = exec.map_range(m, |k| {
            let s = values[k].max(0.0).sqrt();
            let mut v = vec![0.0; dim];
            if s > 0.0 {
                for (i, row) in data.chunks_exact(dim).enumerate() {
                    let coef = u[(i, k)] / s;
                    v.iter_mut().zip(row).for_each(|(acc, x)| *acc += coef * x);
                }
            }
            v
        });
        (values, dirs)
    } else {
        let mut transposed = vec![0.0; dim * count];
        for (i, row) in data.chunks_exact(dim).enumerate() {
            for (j, &x) in row.iter().enumerate() {
                transposed[j * count + i] = x;
            }
        }
        let (values, v) = sorted_eigen(gram(&transposed, dim, count, exec));
        let dirs = (0..m)
            .map(|k| v.column(k).iter().copied().collect())
            .collect();
        (values, dirs)
    };

    let scale = (count as f64).sqrt();
    let sigma: Vec<f64> = eigenvalues[..m]
        .iter()
        .map(|&l| l.max(0.0).sqrt() / scale)
        .collect();
    if sigma[0].is_nan() || sigma[0] <= ZERO_SPREAD {
        return Err(Error::ZeroSpread);
    }
    let keep = sigma
        .iter()
        .take_while(|&&s| s > epsilon * sigma[0])
        .count();

    let mut projection = Vec::with_capacity(keep * dim);
    for mut dir in directions.into_iter().take(keep) {
        canonical_sign(&mut dir);
        projection.extend(dir);
    }
    let model = WhiteningModel::from_parts(mean, projection, sigma[..keep].to_vec())?;
    Ok(WhiteningFit {
        model,
        requested_dim: m,
    })
}

/// Post-processes one raw descriptor into a retrieval descriptor.
pub fn apply_postprocess(
    image_id: &str,
    raw: &[f64],
    model: &WhiteningModel,
    renormalize: bool,
) -> Result<DescriptorRecord> {
    if raw.len() != model.input_dim {
        return Err(Error::DimMismatch {
            expected: model.input_dim,
            found: raw.len(),
        });
    }
    let norm = l2_norm(raw);
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::ZeroDescriptor(image_id.to_owned()));
    }
    let unit: Vec<f64> = raw.iter().map(|x| x / norm).collect();
    let mut out = model.whiten_normalized(&unit)?;
    if renormalize {
        let n = l2_norm(&out);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::ZeroDescriptor(image_id.to_owned()));
        }
        out.iter_mut().for_each(|v| *v /= n);
    }
    Ok(DescriptorRecord::new(
        image_id,
        out.into_iter().map(|v| v as f32).collect(),
    ))
}

/// Batch variant of [`apply_postprocess`].
pub fn apply_postprocess_batch<T>(
    raws: &[T],
    model: &WhiteningModel,
    renormalize: bool,
    exec: Execution,
) -> Result<Vec<DescriptorRecord>>
where
    T: std::borrow::Borrow<crate::aggregation::RawDescriptor> + Sync,
{
    exec.try_map(raws, |r| {
        let r = r.borrow();
        apply_postprocess(&r.image_id, &r.values, model, renormalize)
    })
}

pub fn encode_whitening(model: &WhiteningModel) -> Result<Vec<u8>> {
    let mut w = ByteWriter::with_header(WHITENING_MAGIC);
    w.u32(to_u32(model.input_dim, "input dim")?);
    w.u32(to_u32(model.output_dim, "output dim")?);
    for &v in model
        .mean
        .iter()
        .chain(&model.projection)
        .chain(&model.singular_values)
    {
        w.f64(v);
    }
    Ok(w.finish())
}

pub fn decode_whitening(bytes: &[u8]) -> Result<WhiteningModel> {
    let mut r = ByteReader::with_header(bytes, WHITENING_MAGIC)?;
    let d = r.u32("input dim")? as usize;
    let m = r.u32("output dim")? as usize;
    let needed = d
        .checked_mul(m)
        .and_then(|p| p.checked_add(d + m))
        .and_then(|n| n.checked_mul(8))
        .ok_or(Error::Truncated("whitening payload"))?;
    if needed > r.remaining() {
        return Err(Error::Truncated("whitening payload"));
    }
    let mean = r.f64_vec(d, "mean")?;
    let projection = r.f64_vec(d * m, "projection")?;
    let sigma = r.f64_vec(m, "singular values")?;
    r.finish()?;
    WhiteningModel::from_parts(mean, projection, sigma)
}

pub fn save_whitening(path: impl AsRef<Path>, model: &WhiteningModel) -> Result<()> {
    fs::write(path, encode_whitening(model)?)?;
    Ok(())
}

pub fn load_whitening(path: impl AsRef<Path>) -> Result<WhiteningModel> {
    decode_whitening(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(dim: usize, i: usize, scale: f64) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = scale;
        v
    }

    #[test]
    fn one_hot_training_set() {
        let dim = 5;
        let train = vec![
            one_hot(dim, 0, 3.0),
            one_hot(dim, 1, 0.2),
            one_hot(dim, 2, 7.5),
        ];
        let fit = fit_whitening(&train, 2, DEFAULT_EPSILON, Execution::Sequential).unwrap();
        let model = &fit.model;
        assert!(!fit.truncated());
        let third = 1.0 / 3.0;
        for (i, m) in model.mean().iter().enumerate() {
            let expect = if i < 3 { third } else { 0.0 };
            assert!((m - expect).abs() < 1e-15);
        }
        // Centered one-hots have covariance (I - J/3)/3 on the first three
        // coordinates: eigenvalue 1/3 twice, so sigma = sqrt(1/3) for both.
        for &s in model.singular_values() {
            assert!((s - third.sqrt()).abs() < 1e-12, "{s}");
        }
        for i in 0..2 {
            let d = model.direction(i);
            assert!(d[3].abs() < 1e-12 && d[4].abs() < 1e-12);
            assert!(
                (d[0] + d[1] + d[2]).abs() < 1e-12,
                "direction leaves the simplex plane"
            );
        }
        let whitened: Vec<Vec<f64>> = train
            .iter()
            .map(|t| {
                let n = l2_norm(t);
                let unit: Vec<f64> = t.iter().map(|x| x / n).collect();
                model.whiten_normalized(&unit).unwrap()
            })
            .collect();
        for k in 0..2 {
            let var: f64 = whitened.iter().map(|w| w[k] * w[k]).sum::<f64>() / 3.0;
            assert!((var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_and_infeasible() {
        let same = vec![vec![1.0, 2.0, 3.0]; 4];
        assert!(matches!(
            fit_whitening(&same, 1, DEFAULT_EPSILON, Execution::Sequential),
            Err(Error::ZeroSpread)
        ));
        let train = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        assert!(matches!(
            fit_whitening(&train, 3, DEFAULT_EPSILON, Execution::Sequential),
            Err(Error::InfeasibleDim {
                requested: 3,
                max: 2
            })
        ));
        assert!(matches!(
            fit_whitening(&train[..1], 1, DEFAULT_EPSILON, Execution::Sequential),
            Err(Error::TooFewSamples { .. })
        ));
        let with_zero = vec![vec![1.0, 0.0], vec![0.0, 0.0], vec![1.0, 1.0]];
        assert!(matches!(
            fit_whitening(&with_zero, 1, DEFAULT_EPSILON, Execution::Sequential),
            Err(Error::ZeroDescriptor(_))
        ));
    }

    #[test]
    fn near_null_directions_are_dropped() {
        // Four points on a line through the origin-free plane: rank 1 after centering.
        let train = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
        ];
        let fit = fit_whitening(&train, 2, DEFAULT_EPSILON, Execution::Sequential).unwrap();
        assert!(fit.truncated());
        assert_eq!(fit.model.output_dim(), 1);
    }

    #[test]
    fn identity_model_keeps_leading_components() {
        let d = 4;
        let m = 2;
        let mut projection = vec![0.0; m * d];
        projection[0] = 1.0;
        projection[d + 1] = 1.0;
        let model = WhiteningModel::from_parts(vec![0.0; d], projection, vec![1.0; m]).unwrap();
        let raw = [0.6, 0.0, 0.8, 0.0];
        let out = apply_postprocess("q", &raw, &model, true).unwrap();
        assert!((out.values[0] - 1.0).abs() < 1e-7);
        assert_eq!(out.values[1], 0.0);
        // The whitened vector is zero: renormalization must refuse.
        let orth = [0.0, 0.0, 0.0, 1.0];
        assert!(matches!(
            apply_postprocess("z", &orth, &model, true),
            Err(Error::ZeroDescriptor(_))
        ));
        assert!(matches!(
            apply_postprocess("z", &[0.0; 4], &model, true),
            Err(Error::ZeroDescriptor(_))
        ));
        assert!(matches!(
            apply_postprocess("z", &[1.0; 3], &model, true),
            Err(Error::DimMismatch {
                expected: 4,
                found: 3
            })
        ));
    }

    #[test]
    fn both_eigen_routes_agree() {
        // 6 samples in 4 dims uses the covariance route; the same data
        // padded to 10 dims with zeros uses the Gram route.
        let raw: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                (0..4)
                    .map(|j| ((i * 7 + j * 3) % 5) as f64 + 0.1 * j as f64)
                    .collect()
            })
            .collect();
        let padded: Vec<Vec<f64>> = raw
            .iter()
            .map(|r| {
                r.iter()
                    .copied()
                    .chain(std::iter::repeat_n(0.0, 6))
                    .collect()
            })
            .collect();
        let a = fit_whitening(&raw, 3, DEFAULT_EPSILON, Execution::Sequential)
            .unwrap()
            .model;
        let b = fit_whitening(&padded, 3, DEFAULT_EPSILON, Execution::Parallel)
            .unwrap()
            .model;
        for i in 0..3 {
            assert!((a.singular_values()[i] - b.singular_values()[i]).abs() < 1e-10);
            for j in 0..4 {
                assert!((a.direction(i)[j] - b.direction(i)[j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn model_file_round_trip() {
        let train: Vec<Vec<f64>> = (0..5)
            .map(|i| {
                (0..3)
                    .map(|j| ((i + 1) * (j + 2)) as f64 + (i * j) as f64 * 0.3)
                    .collect()
            })
            .collect();
        let model = fit_whitening(&train, 2, DEFAULT_EPSILON, Execution::Sequential)
            .unwrap()
            .model;
        let bytes = encode_whitening(&model).unwrap();
        assert_eq!(&bytes[..4], b"PWAW");
        assert_eq!(bytes.len(), 16 + 8 * (3 + 2 * 3 + 2));
        assert_eq!(decode_whitening(&bytes).unwrap(), model);
        assert!(matches!(
            decode_whitening(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated(_))
        ));
        let t = model.truncate(1).unwrap();
        assert_eq!(t.output_dim(), 1);
        assert_eq!(t.direction(0), model.direction(0));
    }
}
