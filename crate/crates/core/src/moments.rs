//! View covariances, the symmetrizing maps on the first two views, and the
//! second/third moments of the symmetrized views.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matrix_to_rows, truncated_pinv};
use crate::pomdp::{MemorylessPolicy, PomdpModel};
use crate::tensor::Tensor3;
use crate::views::{
    true_views_and_weights, ActionViewSamples, View, ViewDistribution, ViewEncoding, ViewMatrices,
};

/// The ordered view pairs whose covariances the pipeline needs.
pub const COVARIANCE_PAIRS: [(View, View); 6] = [
    (View::First, View::Second),
    (View::Second, View::First),
    (View::Third, View::First),
    (View::First, View::Third),
    (View::Third, View::Second),
    (View::Second, View::Third),
];

/// `K_{ν,ν'} = Σ_t w_t e_{s_ν(t)} e_{s_ν'(t)}ᵀ` over a weighted set of triples.
pub fn covariance_from_distribution(dist: &ViewDistribution, a: View, b: View) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(dist.encoding.dim(a), dist.encoding.dim(b));
    for (triple, w) in &dist.entries {
        k[(triple.get(a), triple.get(b))] += w;
    }
    k
}

/// Normalized co-occurrence table of views `a` and `b` over the samples.
pub fn empirical_covariance(samples: &ActionViewSamples, a: View, b: View) -> Result<DMatrix<f64>> {
    if samples.count() == 0 {
        return Err(Error::InsufficientSamples {
            action: samples.action,
            reason: "N(l) = 0, covariance undefined".into(),
        });
    }
    let mut k = DMatrix::zeros(samples.encoding.dim(a), samples.encoding.dim(b));
    for t in &samples.triples {
        k[(t.get(a), t.get(b))] += 1.0;
    }
    Ok(k / samples.count() as f64)
}

/// `K_{ν,ν'} = V_ν diag(ω^{(l)}) V_ν'ᵀ` for a known model.
pub fn exact_covariance(
    model: &PomdpModel,
    policy: &MemorylessPolicy,
    l: usize,
    a: View,
    b: View,
) -> Result<DMatrix<f64>> {
    let (views, weights) = true_views_and_weights(model, policy, l)?;
    Ok(covariance_from_views(&views, &weights, a, b))
}

pub fn covariance_from_views(views: &ViewMatrices, weights: &DVector<f64>, a: View, b: View) -> DMatrix<f64> {
    views.get(a) * DMatrix::from_diagonal(weights) * views.get(b).transpose()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSet {
    pub action: usize,
    matrices: BTreeMap<(View, View), DMatrix<f64>>,
}

impl CovarianceSet {
    pub fn from_distribution(action: usize, dist: &ViewDistribution) -> Self {
        let matrices = COVARIANCE_PAIRS
            .iter()
            .map(|&(a, b)| ((a, b), covariance_from_distribution(dist, a, b)))
            .collect();
        Self { action, matrices }
    }

    pub fn empirical(samples: &ActionViewSamples) -> Result<Self> {
        Ok(Self::from_distribution(samples.action, &ViewDistribution::empirical(samples)?))
    }

    pub fn exact(views: &ViewMatrices, weights: &DVector<f64>) -> Self {
        let matrices = COVARIANCE_PAIRS
            .iter()
            .map(|&(a, b)| ((a, b), covariance_from_views(views, weights, a, b)))
            .collect();
        Self { action: views.action, matrices }
    }

    /// `K_{a,b}`; panics for a pair outside [`COVARIANCE_PAIRS`].
    pub fn get(&self, a: View, b: View) -> &DMatrix<f64> {
        self.matrices
            .get(&(a, b))
            .unwrap_or_else(|| panic!("covariance K_{{{},{}}} is not tracked", a.number(), b.number()))
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&(View, View), &DMatrix<f64>)> {
        self.matrices.iter()
    }
}

/// The composite maps `K_{3,2} K_{1,2}†` (on view 1) and `K_{3,1} K_{2,1}†` (on view 2).
///
/// Views are one-hot, so the modified view of a sample is a column of the map.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetrizationOperators {
    /// `d3 × d1`
    pub first: DMatrix<f64>,
    /// `d3 × d2`
    pub second: DMatrix<f64>,
}

impl SymmetrizationOperators {
    /// Modified first and second views of a sample with indices `(s1, s2)`.
    pub fn modified_views(&self, s1: usize, s2: usize) -> (DVector<f64>, DVector<f64>) {
        (self.first.column(s1).into_owned(), self.second.column(s2).into_owned())
    }
}

fn pinv_named(cov: &CovarianceSet, a: View, b: View, rank: usize) -> Result<DMatrix<f64>> {
    truncated_pinv(
        cov.get(a, b),
        rank,
        &format!("K_{{{},{}}} for action {}", a.number(), b.number(), cov.action),
    )
}

/// Builds the symmetrizing maps with rank-`states` pseudo-inverses.
pub fn symmetrize(cov: &CovarianceSet, states: usize) -> Result<SymmetrizationOperators> {
    let first = cov.get(View::Third, View::Second) * pinv_named(cov, View::First, View::Second, states)?;
    let second = cov.get(View::Third, View::First) * pinv_named(cov, View::Second, View::First, states)?;
    Ok(SymmetrizationOperators { first, second })
}

/// Second and third moments of the symmetrized views for one action.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentPair {
    pub action: usize,
    /// `d3 × d3`
    pub m2: DMatrix<f64>,
    /// `d3 × d3 × d3`
    pub m3: Tensor3,
    /// `N(l)` when estimated from samples.
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentDocument {
    pub action: usize,
    pub d3: usize,
    pub samples: Option<usize>,
    #[serde(rename = "M2")]
    pub m2: Vec<Vec<f64>>,
    #[serde(rename = "M3")]
    pub m3: Vec<Vec<Vec<f64>>>,
}

impl MomentPair {
    pub fn to_document(&self) -> MomentDocument {
        MomentDocument {
            action: self.action,
            d3: self.m2.nrows(),
            samples: self.samples,
            m2: matrix_to_rows(&self.m2),
            m3: self.m3.to_nested(),
        }
    }
}

/// `M̂2 = Σ w ṽ1 ṽ2ᵀ`, `M̂3 = Σ w ṽ1 ⊗ ṽ2 ⊗ v3` over a weighted triple set.
///
/// With empirical frequencies as weights this is the sample average over `N(l)` windows.
pub fn empirical_moments(
    ops: &SymmetrizationOperators,
    dist: &ViewDistribution,
    action: usize,
    samples: Option<usize>,
) -> MomentPair {
    let d3 = ops.first.nrows();
    let mut m2 = DMatrix::zeros(d3, d3);
    let mut m3 = Tensor3::zeros(d3, d3, d3);
    let mut onehot = vec![0.0; d3];
    for (triple, w) in &dist.entries {
        let (u, v) = ops.modified_views(triple.s1, triple.s2);
        m2 += (&u * v.transpose()) * *w;
        onehot[triple.s3] = 1.0;
        m3.add_outer(*w, u.as_slice(), v.as_slice(), &onehot);
        onehot[triple.s3] = 0.0;
    }
    MomentPair { action, m2, m3, samples }
}

/// `M2 = Σ_i ω_i μ_i μ_iᵀ`, `M3 = Σ_i ω_i μ_i⊗μ_i⊗μ_i` for columns `μ_i` of `v3`.
pub fn moments_from_components(action: usize, weights: &DVector<f64>, v3: &DMatrix<f64>) -> MomentPair {
    let d3 = v3.nrows();
    let mut m2 = DMatrix::zeros(d3, d3);
    let mut m3 = Tensor3::zeros(d3, d3, d3);
    for i in 0..weights.len() {
        let mu = v3.column(i);
        m2 += (mu * mu.transpose()) * weights[i];
        m3.add_outer(weights[i], mu.as_slice(), mu.as_slice(), mu.as_slice());
    }
    MomentPair { action, m2, m3, samples: None }
}

pub fn exact_moments(model: &PomdpModel, policy: &MemorylessPolicy, l: usize) -> Result<MomentPair> {
    let (views, weights) = true_views_and_weights(model, policy, l)?;
    Ok(moments_from_components(l, &weights, &views.v3))
}

/// Exact joint law of the views for action `l`, usable in place of an empirical one.
pub fn exact_view_distribution(model: &PomdpModel, policy: &MemorylessPolicy, l: usize) -> Result<ViewDistribution> {
    let (views, weights) = true_views_and_weights(model, policy, l)?;
    Ok(ViewDistribution::exact(&views, &weights, ViewEncoding::for_model(model)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::views::ViewTriple;

    fn samples(triples: &[(usize, usize, usize)]) -> ActionViewSamples {
        ActionViewSamples {
            action: 0,
            encoding: ViewEncoding::new(2, 2, 2),
            triples: triples.iter().map(|&(s1, s2, s3)| ViewTriple { s1, s2, s3 }).collect(),
        }
    }

    #[test]
    fn single_sample_covariance_is_an_indicator() {
        let s = samples(&[(5, 2, 1)]);
        let k = empirical_covariance(&s, View::First, View::Second).unwrap();
        assert_eq!(k.shape(), (8, 4));
        assert_eq!(k.sum(), 1.0);
        assert_eq!(k[(5, 2)], 1.0);
        let twice = samples(&[(5, 2, 1), (5, 2, 1)]);
        assert_eq!(empirical_covariance(&twice, View::First, View::Second).unwrap(), k);
    }

    #[test]
    fn empty_samples_are_an_error() {
        let s = samples(&[]);
        assert!(matches!(
            empirical_covariance(&s, View::Third, View::First),
            Err(Error::InsufficientSamples { action: 0, .. })
        ));
    }

    #[test]
    fn empirical_covariances_are_transposes() {
        let s = samples(&[(0, 1, 1), (3, 2, 0), (7, 3, 1), (3, 2, 1)]);
        let cov = CovarianceSet::empirical(&s).unwrap();
        for (a, b) in COVARIANCE_PAIRS {
            assert_eq!(cov.get(a, b), &cov.get(b, a).transpose());
            assert!((cov.get(a, b).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_sample_moments() {
        let s = samples(&[(3, 1, 0)]);
        let dist = ViewDistribution::empirical(&s).unwrap();
        let ops = SymmetrizationOperators {
            first: DMatrix::from_fn(2, 8, |r, c| (r + c) as f64 * 0.1),
            second: DMatrix::from_fn(2, 4, |r, c| (r * c) as f64 + 0.5),
        };
        let m = empirical_moments(&ops, &dist, 0, Some(1));
        let (u, v) = ops.modified_views(3, 1);
        assert_eq!(m.m2, &u * v.transpose());
        assert_eq!(m.m3.get(1, 0, 0), u[1] * v[0]);
        assert_eq!(m.m3.get(1, 0, 1), 0.0);
    }

    #[test]
    fn orthogonal_indicator_components() {
        let v3 = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let w = DVector::from_vec(vec![0.5, 0.5]);
        let m = moments_from_components(0, &w, &v3);
        assert_eq!(m.m2, DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.5, 0.0])));
        assert_eq!(m.m3.get(0, 0, 0), 0.5);
        assert_eq!(m.m3.get(0, 1, 1), 0.0);
    }
}
