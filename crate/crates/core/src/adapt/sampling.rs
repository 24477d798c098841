//! Selection of the rows on which the DEIM basis is corrected.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, thin_svd};
use crate::scalar::{as_f64, Scalar};

/// How many sampling rows to keep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SamplingPolicy {
    /// Exactly `m_s` rows.
    Fixed(usize),
    /// Rows whose score exceeds `τ_s`, at least `m` of them.
    Tolerance(f64),
}

/// Row score used to rank candidate sampling rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingStrategy {
    /// Row norms of `Rℂ`, the residual projected on the row space of `C`.
    Projection,
    /// Row norms of `R`.
    Residual,
    /// Uniform draw; the count follows the projection scores.
    Random(u64),
}

impl SamplingStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplingStrategy::Projection => "projection",
            SamplingStrategy::Residual => "residual",
            SamplingStrategy::Random(_) => "random",
        }
    }
}

/// Distinct row indices, sorted ascending, out of `d`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplingSet {
    indices: Vec<usize>,
    d: usize,
}

impl SamplingSet {
    pub fn new(mut indices: Vec<usize>, d: usize) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|p| p[0] == p[1]) {
            return Err(Error::InvalidArgument("duplicate sampling indices".into()));
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= d) {
            return Err(Error::IndexOutOfRange { index: i, len: d });
        }
        if 2 * indices.len() > d {
            log::warn!("{} sampling rows out of {d}: more than half of all rows", indices.len());
        }
        Ok(Self { indices, d })
    }

    pub fn all(d: usize) -> Self {
        Self {
            indices: (0..d).collect(),
            d,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Rows not sampled.
    pub fn complement(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.d - self.indices.len());
        let mut it = self.indices.iter().peekable();
        for i in 0..self.d {
            if it.peek() == Some(&&i) {
                it.next();
            } else {
                out.push(i);
            }
        }
        out
    }
}

/// Orthonormal basis `Ṽ` of the row space of `C`, so that `ℂ = ṼṼᵀ`.
pub fn row_space_basis<T: Scalar>(c: &DMatrix<T>) -> Result<DMatrix<T>> {
    if c.nrows() == 0 || c.ncols() == 0 {
        return Ok(DMatrix::zeros(c.ncols(), 0));
    }
    let (_, sigma, v) = thin_svd(c)?;
    let q = numerical_rank(&sigma, c.nrows(), c.ncols());
    Ok(v.columns(0, q).into_owned())
}

/// Per-row scores: norms of `RṼ` (projection) or of `R` (residual and random).
pub fn sampling_scores<T: Scalar>(residual: &DMatrix<T>, c: &DMatrix<T>, strategy: SamplingStrategy) -> Result<DVector<T>> {
    if residual.ncols() != c.ncols() {
        return Err(Error::dims("residual columns", c.ncols(), residual.ncols()));
    }
    let scored = match strategy {
        SamplingStrategy::Projection | SamplingStrategy::Random(_) => residual * row_space_basis(c)?,
        SamplingStrategy::Residual => residual.clone(),
    };
    Ok(DVector::from_iterator(scored.nrows(), scored.row_iter().map(|r| r.norm())))
}

/// Indices of the `count` largest scores; ties go to the smaller index.
pub fn top_rows<T: Scalar>(scores: &DVector<T>, count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| {
        scores[j]
            .partial_cmp(&scores[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    order.truncate(count.min(scores.len()));
    order
}

/// Number of rows the policy asks for, given scores and the DEIM size `m`.
pub fn sampling_count<T: Scalar>(scores: &DVector<T>, policy: SamplingPolicy, m: usize) -> usize {
    let d = scores.len();
    match policy {
        SamplingPolicy::Fixed(ms) => ms.min(d),
        SamplingPolicy::Tolerance(tau) => scores.iter().filter(|&&s| as_f64(s) > tau).count().max(m).min(d),
    }
}

/// New sampling set from the full window residual `R` and coefficients `C`.
pub fn adapt_sampling<T: Scalar, G: Rng + ?Sized>(
    residual: &DMatrix<T>,
    c: &DMatrix<T>,
    m: usize,
    policy: SamplingPolicy,
    strategy: SamplingStrategy,
    rng: &mut G,
) -> Result<SamplingSet> {
    let d = residual.nrows();
    let projected = sampling_scores(residual, c, SamplingStrategy::Projection)?;
    let count = sampling_count(&projected, policy, m);
    let picked = match strategy {
        SamplingStrategy::Projection => top_rows(&projected, count),
        SamplingStrategy::Residual => top_rows(&sampling_scores(residual, c, strategy)?, count),
        SamplingStrategy::Random(_) => rand::seq::index::sample(rng, d, count).into_vec(),
    };
    SamplingSet::new(picked, d)
}
