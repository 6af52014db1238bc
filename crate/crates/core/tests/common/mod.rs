#![allow(dead_code)]

use nalgebra::DMatrix;
use spectral_pomdp::{MemorylessPolicy, PomdpModel, Tensor3};

/// The standard two-state fixture, written out literally so that the tests do
/// not depend on the generator's random stream.
pub fn f1() -> (PomdpModel, MemorylessPolicy) {
    let t = vec![
        vec![vec![0.25023975233669454, 0.8409694729962648], vec![0.7497602476633055, 0.15903052700373513]],
        vec![vec![0.4371953216956011, 0.07231201044842873], vec![0.562804678304399, 0.9276879895515713]],
    ];
    let o = [
        [0.10426987533365957, 0.5039384034563704],
        [0.6244275758910489, 0.028971217868893843],
        [0.1409175223435315, 0.07471402814331417],
        [0.13038502643176, 0.3923763505314216],
    ];
    let g = vec![
        vec![vec![0.8875943988830938, 0.11240560111690619], vec![0.5626932744685467, 0.4373067255314533]],
        vec![vec![0.5772401859135342, 0.4227598140864656], vec![0.2399623107784717, 0.7600376892215283]],
    ];
    let pi = [
        [0.46204678974228036, 0.5379532102577196],
        [0.6777010911573278, 0.32229890884267226],
        [0.2916410302406591, 0.7083589697593409],
        [0.5903133015652174, 0.4096866984347826],
    ];
    let model = PomdpModel::new(
        Tensor3::from_nested(&t).unwrap(),
        DMatrix::from_fn(4, 2, |n, i| o[n][i]),
        Tensor3::from_nested(&g).unwrap(),
        vec![0.0, 1.0],
    )
    .unwrap();
    let policy = MemorylessPolicy::new(DMatrix::from_fn(4, 2, |n, l| pi[n][l])).unwrap();
    (model, policy)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

pub fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Brute-force joint law of the three views for action `l`, summed over every
/// latent path `(x_{t-1}, x_t, x_{t+1})` and every emitted symbol, starting
/// from the stationary distribution `omega`. Returns `(d1, d2, d3)`-indexed
/// probabilities normalized by `P(a_t = l)`.
pub fn enumerate_view_law(model: &PomdpModel, policy: &MemorylessPolicy, omega: &[f64], l: usize) -> Vec<Vec<Vec<f64>>> {
    let (x, y, a, r) = (model.states(), model.observations(), model.actions(), model.rewards());
    let mut joint = vec![vec![vec![0.0; y]; y * r]; a * y * r];
    for xp in 0..x {
        for yp in 0..y {
            for ap in 0..a {
                for rp in 0..r {
                    for xc in 0..x {
                        let base = omega[xp]
                            * model.o(yp, xp)
                            * policy.prob(yp, ap)
                            * model.gamma(xp, ap, rp)
                            * model.t(xp, xc, ap);
                        for yc in 0..y {
                            for rc in 0..r {
                                for xn in 0..x {
                                    for yn in 0..y {
                                        joint[(ap * y + yp) * r + rp][yc * r + rc][yn] += base
                                            * model.o(yc, xc)
                                            * policy.prob(yc, l)
                                            * model.gamma(xc, l, rc)
                                            * model.t(xc, xn, l)
                                            * model.o(yn, xn);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let total: f64 = joint.iter().flatten().flatten().sum();
    for v in joint.iter_mut().flatten().flatten() {
        *v /= total;
    }
    joint
}
