//! Synthetic datasets.

use crate::error::{Error, Result};
use crate::tensor::{checked_product, matmul, mode_k_product, Rng, Tensor};

/// Paired inputs and targets, batched along axis 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub y: Tensor,
}

impl Dataset {
    pub fn new(x: Tensor, y: Tensor) -> Result<Self> {
        if x.rank() < 2 || y.rank() < 2 || x.dims()[0] != y.dims()[0] {
            return Err(Error::InvalidArgument(format!(
                "inputs {:?} and targets {:?} must be batched with equal leading dims",
                x.dims(),
                y.dims()
            )));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        Ok(Self {
            x: self.x.gather_rows(rows)?,
            y: self.y.gather_rows(rows)?,
        })
    }

    /// First `n` rows and the rest.
    pub fn split_at(&self, n: usize) -> Result<(Self, Self)> {
        if n == 0 || n >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "split point {n} leaves an empty side of {} samples",
                self.len()
            )));
        }
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        Ok((self.select(&head)?, self.select(&tail)?))
    }

    /// Shuffled train/test split; the train side gets
    /// `round(fraction·len)` rows, clamped so neither side is empty.
    pub fn split(&self, train_fraction: f64, rng: &mut Rng) -> Result<(Self, Self)> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train fraction must lie in (0, 1), got {train_fraction}"
            )));
        }
        if self.len() < 2 {
            return Err(Error::InvalidArgument(
                "need at least two samples to split".into(),
            ));
        }
        let mut rows: Vec<usize> = (0..self.len()).collect();
        rng.shuffle(&mut rows);
        let n_train =
            ((train_fraction * self.len() as f64).round() as usize).clamp(1, self.len() - 1);
        Ok((
            self.select(&rows[..n_train])?,
            self.select(&rows[n_train..])?,
        ))
    }
}

/// Data whose targets are a mode-wise linear map of the inputs.
#[derive(Debug, Clone)]
pub struct SeparableTask {
    pub data: Dataset,
    /// Ground-truth factors `G_k` of shape `(d_k, h_k)`.
    pub factors: Vec<Tensor>,
}

/// `T = X ×₁ G_1 ×₂ G_2 … + σ·ε`, with `ε` standard normal.
pub fn separable_targets(
    x: &Tensor,
    factors: &[Tensor],
    sigma: f64,
    rng: &mut Rng,
) -> Result<Tensor> {
    let mut t = x.clone();
    for (k, g) in factors.iter().enumerate() {
        t = mode_k_product(&t, g, k + 1)?;
    }
    if sigma != 0.0 {
        for v in t.data_mut() {
            *v += sigma * rng.normal();
        }
    }
    Ok(t)
}

/// Standard-normal inputs of shape `(n, in_dims…)`, factors with entries
/// `N(0, 1/d_k)` so targets stay at unit scale, and Gaussian target noise.
pub fn gen_separable_regression(
    rng: &mut Rng,
    n: usize,
    in_dims: &[usize],
    out_dims: &[usize],
    noise_sigma: f64,
) -> Result<SeparableTask> {
    if in_dims.is_empty() || in_dims.len() != out_dims.len() || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "need n >= 1 and matching non-empty dims, got n={n}, {in_dims:?} -> {out_dims:?}"
        )));
    }
    let factors = in_dims
        .iter()
        .zip(out_dims)
        .map(|(&d, &h)| Ok(Tensor::randn(rng, &[d, h])?.scale(1.0 / (d as f64).sqrt())))
        .collect::<Result<Vec<_>>>()?;
    let mut x_dims = vec![n];
    x_dims.extend(in_dims);
    let x = Tensor::randn(rng, &x_dims)?;
    let y = separable_targets(&x, &factors, noise_sigma, rng)?;
    Ok(SeparableTask {
        data: Dataset::new(x, y)?,
        factors,
    })
}

/// Classification data that a linear model separates exactly: each label
/// is the argmax of a hidden random linear score of the flattened input.
/// Targets are one-hot rows of width `classes`.
pub fn gen_linear_classification(
    rng: &mut Rng,
    n: usize,
    feature_dims: &[usize],
    classes: usize,
) -> Result<Dataset> {
    if classes < 2 || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "need n >= 1 and at least two classes, got n={n}, classes={classes}"
        )));
    }
    let width = checked_product(feature_dims).ok_or(Error::CountOverflow("feature count"))?;
    let scorer = Tensor::randn(rng, &[width, classes])?;
    let mut x_dims = vec![n];
    x_dims.extend(feature_dims);
    let x = Tensor::randn(rng, &x_dims)?;
    let scores = matmul(&x.reshape(&[n, width])?, &scorer)?;
    let mut y = vec![0.0; n * classes];
    for (row, out) in scores
        .data()
        .chunks_exact(classes)
        .zip(y.chunks_exact_mut(classes))
    {
        let best = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("classes >= 2");
        out[best] = 1.0;
    }
    Dataset::new(x, Tensor::from_vec(&[n, classes], y)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_factors_without_noise_reproduce_inputs() {
        let mut rng = Rng::new(1);
        let x = Tensor::randn(&mut rng, &[4, 3, 2]).unwrap();
        let eyes = [Tensor::eye(3).unwrap(), Tensor::eye(2).unwrap()];
        assert_eq!(separable_targets(&x, &eyes, 0.0, &mut rng).unwrap(), x);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_separable_regression(&mut Rng::new(5), 16, &[3, 4], &[2, 2], 0.1).unwrap();
        let b = gen_separable_regression(&mut Rng::new(5), 16, &[3, 4], &[2, 2], 0.1).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.factors, b.factors);
        assert_eq!(a.data.y.dims(), &[16, 2, 2]);
    }

    #[test]
    fn classification_labels_are_one_hot() {
        let d = gen_linear_classification(&mut Rng::new(2), 50, &[11, 1], 3).unwrap();
        assert_eq!(d.x.dims(), &[50, 11, 1]);
        for row in d.y.data().chunks_exact(3) {
            assert_eq!(row.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn split_sizes() {
        let d = gen_linear_classification(&mut Rng::new(3), 10, &[2], 2).unwrap();
        let (train, test) = d.split(0.8, &mut Rng::new(0)).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        assert!(d.split(1.0, &mut Rng::new(0)).is_err());
        assert!(d.split_at(0).is_err());
        let (a, b) = d.split_at(3).unwrap();
        assert_eq!((a.len(), b.len()), (3, 7));
    }
}
