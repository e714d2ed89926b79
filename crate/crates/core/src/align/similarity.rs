use crate::error::{Error, Result};

/// `B × B` cosine matrix between EEG rows `Z_i` and image rows `Y_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityBatch {
    pub size: usize,
    /// Row-major, entry `(i, j)` at `i * size + j`.
    pub matrix: Vec<f64>,
}

impl SimilarityBatch {
    pub fn from_matrix(size: usize, matrix: Vec<f64>) -> Result<Self> {
        if matrix.len() != size * size {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {size}x{size} similarity matrix",
                matrix.len()
            )));
        }
        Ok(Self { size, matrix })
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.size + j]
    }

    /// Matched-pair similarities `s_i`.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.size).map(|i| self.at(i, i)).collect()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Unit-normalize, failing on an exactly zero vector.
pub fn normalize(v: &[f64], what: &'static str) -> Result<(Vec<f64>, f64)> {
    let n = norm(v);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::ZeroNorm(what));
    }
    Ok((v.iter().map(|x| x / n).collect(), n))
}

pub fn cosine_similarity_matrix(z: &[Vec<f64>], y: &[Vec<f64>]) -> Result<SimilarityBatch> {
    if z.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} EEG embeddings vs {} image embeddings",
            z.len(),
            y.len()
        )));
    }
    let zn: Vec<Vec<f64>> = z.iter().map(|v| normalize(v, "similarity").map(|r| r.0)).collect::<Result<_>>()?;
    let yn: Vec<Vec<f64>> = y.iter().map(|v| normalize(v, "similarity").map(|r| r.0)).collect::<Result<_>>()?;
    if zn.iter().chain(&yn).any(|v| v.len() != zn[0].len()) {
        return Err(Error::DimensionMismatch("embedding dimensions differ".into()));
    }
    let b = z.len();
    let mut matrix = Vec::with_capacity(b * b);
    for zi in &zn {
        for yj in &yn {
            matrix.push(zi.iter().zip(yj).map(|(a, c)| a * c).sum::<f64>().clamp(-1.0, 1.0));
        }
    }
    Ok(SimilarityBatch { size: b, matrix })
}

/// Backpropagate `∂L/∂sim` to the (unnormalized) rows of `z` and `y`.
pub fn cosine_backward(z: &[Vec<f64>], y: &[Vec<f64>], d_sim: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let b = z.len();
    let zn: Vec<(Vec<f64>, f64)> = z.iter().map(|v| normalize(v, "similarity")).collect::<Result<_>>()?;
    let yn: Vec<(Vec<f64>, f64)> = y.iter().map(|v| normalize(v, "similarity")).collect::<Result<_>>()?;
    let d = zn[0].0.len();
    // gradients w.r.t. the unit vectors
    let mut gz = vec![vec![0.0; d]; b];
    let mut gy = vec![vec![0.0; d]; b];
    for i in 0..b {
        for j in 0..b {
            let g = d_sim[i * b + j];
            if g == 0.0 {
                continue;
            }
            for k in 0..d {
                gz[i][k] += g * yn[j].0[k];
                gy[j][k] += g * zn[i].0[k];
            }
        }
    }
    let project = |g: &[f64], (u, n): &(Vec<f64>, f64)| -> Vec<f64> {
        let dot: f64 = g.iter().zip(u).map(|(a, b)| a * b).sum();
        g.iter().zip(u).map(|(a, b)| (a - dot * b) / n).collect()
    };
    Ok((
        gz.iter().zip(&zn).map(|(g, u)| project(g, u)).collect(),
        gy.iter().zip(&yn).map(|(g, u)| project(g, u)).collect(),
    ))
}
