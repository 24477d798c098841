use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Quadrature on `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule<T> {
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Scalar> QuadratureRule<T> {
    /// `points`-point Gauss–Legendre rule, exact for polynomials of degree `2·points - 1`.
    ///
    /// Nodes are the eigenvalues of the symmetric Jacobi matrix of the Legendre
    /// recurrence; weights come from the first eigenvector components.
    pub fn gauss_legendre(points: usize) -> Result<Self> {
        if points == 0 {
            return Err(Error::InvalidArgument("quadrature needs at least one point".into()));
        }
        let jacobi = DMatrix::<f64>::from_fn(points, points, |i, j| {
            if i + 1 == j || j + 1 == i {
                let k = i.max(j) as f64;
                k / (4.0 * k * k - 1.0).sqrt()
            } else {
                0.0
            }
        });
        let eig = jacobi.symmetric_eigen();
        let mut pairs: Vec<(f64, f64)> = (0..points)
            .map(|i| {
                let v0 = eig.eigenvectors[(0, i)];
                (0.5 * (eig.eigenvalues[i] + 1.0), v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        Ok(Self {
            nodes: pairs.iter().map(|p| lit(p.0)).collect(),
            weights: pairs.iter().map(|p| lit(p.1)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Highest polynomial degree integrated exactly.
    pub fn exactness(&self) -> usize {
        2 * self.nodes.len() - 1
    }
}
