use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::{DiffError, Tensor};

/// Random matrix with orthonormal rows (when `rows <= cols`) or orthonormal
/// columns (otherwise), from Gram-Schmidt on a Gaussian draw.
pub fn init_orthonormal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    assert!(rows >= 1 && cols >= 1, "orthonormal init needs a non-empty shape");
    // Orthonormalise the shorter side: `k` vectors of length `n`.
    let (k, n) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        // two passes of modified Gram-Schmidt keep the Gram matrix at identity
        // to machine precision
        for _ in 0..2 {
            for b in &basis {
                let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= proj * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    let mut data = vec![0.0; rows * cols];
    for (i, b) in basis.iter().enumerate() {
        for (j, &x) in b.iter().enumerate() {
            if rows <= cols {
                data[i * cols + j] = x;
            } else {
                data[j * cols + i] = x;
            }
        }
    }
    Tensor::matrix(rows, cols, data)
}

/// Glorot-uniform matrix, used for feed-forward and convolution weights.
pub fn init_glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect())
}

/// Gaussian matrix with the given standard deviation (embedding tables).
pub fn init_normal<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    Tensor::matrix(rows, cols, data)
}

/// Inverted-dropout mask with entries in `{0, 1/(1-rate)}`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Result<Vec<f64>, DiffError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(DiffError::InvalidDropoutRate(rate));
    }
    if rate == 0.0 {
        return Ok(vec![1.0; len]);
    }
    let keep = 1.0 / (1.0 - rate);
    Ok((0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect())
}
