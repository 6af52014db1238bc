//! Orthogonal decomposition of the symmetric moments: whitening of `M2`,
//! robust tensor power iteration with deflation on the whitened `M3`, and
//! the map back to mixture weights and component vectors.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::clip_and_normalize;
use crate::moments::MomentPair;
use crate::tensor::Tensor3;

/// Smallest admissible eigenvalue of `M2` on the latent subspace.
pub const WHITEN_EIG_TOL: f64 = 1e-12;
/// Eigenvalues at or below this make a component degenerate when unwhitening.
pub const LAMBDA_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    /// `d3 × X`, with `Wᵀ M2 W = I`.
    pub w: DMatrix<f64>,
    /// `B = M2 W`, `d3 × X`.
    pub unwhiten: DMatrix<f64>,
    /// Top-`X` eigenvalues of the symmetrized `M2`, descending.
    pub eigenvalues: Vec<f64>,
}

/// Rank-`states` whitening `W = U_X D_X^{-1/2}` of `(M2 + M2ᵀ)/2`.
pub fn whiten(m2: &DMatrix<f64>, states: usize) -> Result<WhiteningTransform> {
    let (d, d2) = m2.shape();
    if d != d2 {
        return Err(Error::Dimension(format!("M2 must be square, got {d}x{d2}")));
    }
    if states == 0 || states > d {
        return Err(Error::Dimension(format!("cannot whiten a {d}x{d} moment to rank {states}")));
    }
    let sym = (m2 + m2.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top: Vec<usize> = order[..states].to_vec();
    let eigenvalues: Vec<f64> = top.iter().map(|&i| eig.eigenvalues[i]).collect();
    let smallest = eigenvalues[states - 1];
    if !(smallest > WHITEN_EIG_TOL) {
        return Err(Error::RankDeficient {
            what: format!("M2 (eigenvalue {states} is {smallest:.3e})"),
            rank: eigenvalues.iter().filter(|&&v| v > WHITEN_EIG_TOL).count(),
            required: states,
        });
    }
    let w = DMatrix::from_fn(d, states, |r, c| eig.eigenvectors[(r, top[c])] / eigenvalues[c].sqrt());
    let unwhiten = &sym * &w;
    Ok(WhiteningTransform { w, unwhiten, eigenvalues })
}

/// `T̃ = M3(W, W, W)`.
pub fn whitened_tensor(m3: &Tensor3, w: &DMatrix<f64>) -> Tensor3 {
    m3.multilinear(w, w, w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerIterationConfig {
    pub restarts: usize,
    pub sweeps: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for PowerIterationConfig {
    fn default() -> Self {
        Self { restarts: 50, sweeps: 100, tol: 1e-10, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub lambda: f64,
    pub vector: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDiagnostics {
    pub lambda: f64,
    /// Restarts whose iteration met the tolerance within the sweep budget.
    pub converged_restarts: usize,
    pub restarts: usize,
    /// Change between the last two iterates of the selected vector.
    pub final_change: f64,
    /// Frobenius norm of the tensor after deflating this component.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenComponents {
    pub pairs: Vec<EigenPair>,
    pub diagnostics: Vec<ComponentDiagnostics>,
}

impl EigenComponents {
    /// Frobenius norm of what remains after removing every component.
    pub fn final_residual(&self) -> f64 {
        self.diagnostics.last().map_or(0.0, |d| d.residual)
    }

    pub fn reconstruct(&self, dim: usize) -> Tensor3 {
        let mut t = Tensor3::zeros(dim, dim, dim);
        for p in &self.pairs {
            let v = p.vector.as_slice();
            t.add_outer(p.lambda, v, v, v);
        }
        t
    }
}

struct Candidate {
    vector: DVector<f64>,
    lambda: f64,
    change: f64,
    converged: bool,
}

fn iterate(t: &Tensor3, mut u: DVector<f64>, sweeps: usize, tol: f64) -> Candidate {
    let mut change = f64::INFINITY;
    for _ in 0..sweeps {
        let next = t.contract_last_two(&u);
        let norm = next.norm();
        if norm == 0.0 {
            // nothing left along u: a zero eigenvalue
            change = 0.0;
            break;
        }
        if !norm.is_finite() {
            break;
        }
        let next = next / norm;
        change = (&next - &u).norm();
        u = next;
        if change < tol {
            break;
        }
    }
    let mut lambda = t.contract_all(&u);
    if lambda < 0.0 {
        u = -u;
        lambda = -lambda;
    }
    Candidate { converged: change < tol, vector: u, lambda, change }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
        let norm: f64 = v.norm();
        if norm > 1e-8 {
            return v / norm;
        }
    }
}

/// Extracts `dim` eigenpairs `(λ, u)` of a symmetric `dim × dim × dim` tensor
/// by power iteration with random restarts and deflation.
///
/// The tensor is first averaged over its index permutations. Each restart
/// draws its start from an independent ChaCha stream indexed by
/// `(component, restart)`, so results depend only on `config.seed`.
pub fn tensor_power_iteration(tensor: &Tensor3, config: &PowerIterationConfig) -> Result<EigenComponents> {
    let [dim, _, _] = tensor.dims();
    if config.restarts == 0 || config.sweeps == 0 {
        return Err(Error::InvalidParameter("restarts and sweeps must be positive".into()));
    }
    let mut work = tensor.symmetrized();
    let mut pairs = Vec::with_capacity(dim);
    let mut diagnostics = Vec::with_capacity(dim);

    for component in 0..dim {
        let candidates: Vec<Candidate> = (0..config.restarts)
            .into_par_iter()
            .map(|restart| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream((component * config.restarts + restart) as u64);
                let start = random_unit(&mut rng, dim);
                iterate(&work, start, config.sweeps, config.tol)
            })
            .collect();
        let converged_restarts = candidates.iter().filter(|c| c.converged).count();

        // best by largest λ, converged runs first; ties keep the earliest restart
        let best = largest(candidates.iter().filter(|c| c.converged))
            .or_else(|| largest(candidates.iter()))
            .expect("at least one restart");
        let best = if best.converged {
            Candidate { vector: best.vector.clone(), ..*best }
        } else {
            iterate(&work, best.vector.clone(), config.sweeps, config.tol)
        };
        if !best.converged {
            return Err(Error::NotConverged { component, residual: best.change });
        }

        let v = best.vector.as_slice().to_vec();
        work.add_outer(-best.lambda, &v, &v, &v);
        diagnostics.push(ComponentDiagnostics {
            lambda: best.lambda,
            converged_restarts,
            restarts: config.restarts,
            final_change: best.change,
            residual: work.frobenius_norm(),
        });
        pairs.push(EigenPair { lambda: best.lambda, vector: best.vector });
    }
    Ok(EigenComponents { pairs, diagnostics })
}

fn largest<'a>(pool: impl Iterator<Item = &'a Candidate>) -> Option<&'a Candidate> {
    pool.fold(None, |best: Option<&Candidate>, c| match best {
        Some(b) if b.lambda >= c.lambda => Some(b),
        _ => Some(c),
    })
}

/// Mixture weights and third-view columns recovered from the eigenpairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Unwhitened {
    /// `ω̂_i = λ_i^{-2}`
    pub weights: DVector<f64>,
    /// `μ̂_i = λ_i B u_i`, as computed.
    pub v3_raw: DMatrix<f64>,
    /// Columns of `v3_raw` clipped at zero and rescaled to unit mass.
    pub v3: DMatrix<f64>,
    /// Columns that had no positive mass and were replaced by the uniform law.
    pub degenerate_columns: Vec<usize>,
}

pub fn unwhiten(components: &EigenComponents, transform: &WhiteningTransform) -> Result<Unwhitened> {
    let d3 = transform.unwhiten.nrows();
    let x = components.pairs.len();
    let mut weights = DVector::zeros(x);
    let mut v3_raw = DMatrix::zeros(d3, x);
    for (i, pair) in components.pairs.iter().enumerate() {
        if !(pair.lambda > LAMBDA_TOL) {
            return Err(Error::DegenerateComponent { component: i, value: pair.lambda });
        }
        weights[i] = pair.lambda.powi(-2);
        v3_raw.set_column(i, &(&transform.unwhiten * &pair.vector * pair.lambda));
    }
    let mut v3 = DMatrix::zeros(d3, x);
    let mut degenerate_columns = Vec::new();
    for i in 0..x {
        let col: Vec<f64> = v3_raw.column(i).iter().copied().collect();
        let normalized = clip_and_normalize(&col).unwrap_or_else(|| {
            degenerate_columns.push(i);
            vec![1.0 / d3 as f64; d3]
        });
        v3.set_column(i, &DVector::from_vec(normalized));
    }
    Ok(Unwhitened { weights, v3_raw, v3, degenerate_columns })
}

/// Whitening, power iteration and unwhitening in one call.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub transform: WhiteningTransform,
    pub components: EigenComponents,
    pub recovered: Unwhitened,
}

pub fn decompose(moments: &MomentPair, states: usize, config: &PowerIterationConfig) -> Result<Decomposition> {
    let transform = whiten(&moments.m2, states)?;
    let tensor = whitened_tensor(&moments.m3, &transform.w);
    let components = tensor_power_iteration(&tensor, config)?;
    let recovered = unwhiten(&components, &transform)?;
    Ok(Decomposition { transform, components, recovered })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn whitening_residual(m2: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
        (w.transpose() * m2 * w - DMatrix::identity(w.ncols(), w.ncols())).norm()
    }

    #[test]
    fn identity_whitening() {
        let m2 = DMatrix::<f64>::identity(3, 3);
        let t = whiten(&m2, 3).unwrap();
        assert!(whitening_residual(&m2, &t.w) < 1e-14);
    }

    #[test]
    fn diagonal_whitening() {
        let m2 = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let t = whiten(&m2, 2).unwrap();
        assert!(whitening_residual(&m2, &t.w) < 1e-14);
        assert!((t.w[(0, 0)].abs() - 0.5).abs() < 1e-14);
        assert!((t.w[(1, 1)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn low_rank_whitening() {
        // M2 = A Aᵀ with A of rank 2
        let a = DMatrix::from_row_slice(5, 2, &[1.0, 0.2, 0.3, 1.1, -0.4, 0.5, 0.9, -0.7, 0.1, 0.3]);
        let m2 = &a * a.transpose();
        let t = whiten(&m2, 2).unwrap();
        assert!(whitening_residual(&m2, &t.w) <= 1e-10);
        assert!(matches!(whiten(&m2, 3), Err(Error::RankDeficient { required: 3, .. })));
    }

    #[test]
    fn whitened_tensor_rank_one_scaling() {
        let mut m3 = Tensor3::zeros(3, 3, 3);
        m3.set(0, 0, 0, 1.0);
        let w = DMatrix::from_row_slice(3, 2, &[2.0, 0.0, 0.3, 0.1, -0.5, 0.2]);
        let t = whitened_tensor(&m3, &w);
        assert_eq!(t.get(0, 0, 0), 8.0);
        assert_eq!(t.get(1, 1, 1), 0.0);
        let eye = DMatrix::identity(3, 3);
        assert_eq!(whitened_tensor(&m3, &eye), m3);
    }

    #[test]
    fn single_basis_tensor() {
        let mut t = Tensor3::zeros(2, 2, 2);
        t.set(0, 0, 0, 1.0);
        let cfg = PowerIterationConfig { restarts: 5, ..Default::default() };
        let comps = tensor_power_iteration(&t, &cfg).unwrap();
        let first = &comps.pairs[0];
        assert!((first.lambda - 1.0).abs() < 1e-12);
        assert!((first.vector[0].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_orthonormal_components() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let a = [s, s, 0.0];
        let b = [s, -s, 0.0];
        let c = [0.0, 0.0, 1.0];
        let mut t = Tensor3::zeros(3, 3, 3);
        t.add_outer(2.0, &a, &a, &a);
        t.add_outer(1.0, &b, &b, &b);
        t.add_outer(0.5, &c, &c, &c);
        let comps = tensor_power_iteration(&t, &PowerIterationConfig::default()).unwrap();
        let lambdas: Vec<f64> = comps.pairs.iter().map(|p| p.lambda).collect();
        assert!((lambdas[0] - 2.0).abs() < 1e-8 && (lambdas[1] - 1.0).abs() < 1e-8);
        let dist = |v: &DVector<f64>, w: &[f64; 3]| {
            let w = DVector::from_row_slice(w);
            (v - &w).norm().min((v + &w).norm())
        };
        assert!(dist(&comps.pairs[0].vector, &a) < 1e-8);
        assert!(dist(&comps.pairs[1].vector, &b) < 1e-8);
        assert!(comps.final_residual() < 1e-8);
    }

    #[test]
    fn seeds_agree_up_to_order_on_exact_tensors() {
        let mut t = Tensor3::zeros(2, 2, 2);
        t.add_outer(1.5, &[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]);
        t.add_outer(1.2, &[0.0, 1.0], &[0.0, 1.0], &[0.0, 1.0]);
        let a = tensor_power_iteration(&t, &PowerIterationConfig { seed: 1, ..Default::default() }).unwrap();
        let b = tensor_power_iteration(&t, &PowerIterationConfig { seed: 99, ..Default::default() }).unwrap();
        for (p, q) in a.pairs.iter().zip(&b.pairs) {
            assert!((p.lambda - q.lambda).abs() < 1e-6);
            assert!((&p.vector - &q.vector).norm() < 1e-6);
        }
    }

    #[test]
    fn same_seed_is_bitwise_reproducible() {
        let t = Tensor3::from_fn(3, 3, 3, |i, j, k| ((i + 1) * (j + 1) * (k + 1)) as f64 * 0.01).symmetrized();
        let cfg = PowerIterationConfig { seed: 5, ..Default::default() };
        let a = tensor_power_iteration(&t, &cfg);
        let b = tensor_power_iteration(&t, &cfg);
        match (a, b) {
            (Ok(a), Ok(b)) => assert_eq!(a.pairs, b.pairs),
            (Err(_), Err(_)) => {}
            _ => panic!("same seed produced different outcomes"),
        }
    }

    #[test]
    fn single_component_unwhitening() {
        let mu = DVector::from_vec(vec![0.2, 0.5, 0.3]);
        let m2 = &mu * mu.transpose();
        let mut m3 = Tensor3::zeros(3, 3, 3);
        m3.add_outer(1.0, mu.as_slice(), mu.as_slice(), mu.as_slice());
        let moments = MomentPair { action: 0, m2, m3, samples: None };
        let d = decompose(&moments, 1, &PowerIterationConfig::default()).unwrap();
        assert!((d.recovered.weights[0] - 1.0).abs() < 1e-10);
        assert!((d.recovered.v3.column(0) - &mu).norm() < 1e-10);
    }

    #[test]
    fn zero_lambda_is_degenerate() {
        let comps = EigenComponents {
            pairs: vec![EigenPair { lambda: 0.0, vector: DVector::from_vec(vec![1.0]) }],
            diagnostics: vec![],
        };
        let t = WhiteningTransform {
            w: DMatrix::identity(1, 1),
            unwhiten: DMatrix::identity(1, 1),
            eigenvalues: vec![1.0],
        };
        assert!(matches!(unwhiten(&comps, &t), Err(Error::DegenerateComponent { component: 0, .. })));
    }
}
