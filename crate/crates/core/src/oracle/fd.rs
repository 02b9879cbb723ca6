use super::objective::objective_batch;
use super::EnumOptions;
use crate::error::{Error, Result};
use crate::math::symmetric_spectral_norm;
use crate::nmdp::{EnumerableNmdp, ReturnSpec};
use crate::policy::AsmPolicy;

/// Largest parameter dimension accepted by [`fd_hessian`].
pub const MAX_HESSIAN_DIM: usize = 200;

fn check_step(h: f64) -> Result<()> {
    if h.is_finite() && h > 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("finite-difference step must be positive, got {h}")))
    }
}

/// Central differences `(J(θ + h e_i) − J(θ − h e_i)) / 2h` of the exact objective.
pub fn fd_gradient<N: EnumerableNmdp + ?Sized>(
    nmdp: &N,
    policy: &dyn AsmPolicy,
    spec: &ReturnSpec,
    h: f64,
    opts: &EnumOptions,
) -> Result<Vec<f64>> {
    check_step(h)?;
    let theta = policy.params();
    let thetas: Vec<Vec<f64>> = (0..theta.len())
        .flat_map(|i| {
            [h, -h].map(|d| {
                let mut x = theta.to_vec();
                x[i] += d;
                x
            })
        })
        .collect();
    let values = objective_batch(nmdp, policy, &thetas, spec, opts)?;
    Ok(values.chunks_exact(2).map(|v| (v[0] - v[1]) / (2.0 * h)).collect())
}

/// Central-difference Hessian of the exact objective.
///
/// Entry `(i, j)` is `(J(++) − J(+−) − J(−+) + J(−−)) / 4h²`; the diagonal uses
/// the same formula with `i = j`, which is the second difference at step `2h`.
pub fn fd_hessian<N: EnumerableNmdp + ?Sized>(
    nmdp: &N,
    policy: &dyn AsmPolicy,
    spec: &ReturnSpec,
    h: f64,
    opts: &EnumOptions,
) -> Result<Vec<Vec<f64>>> {
    check_step(h)?;
    let theta = policy.params();
    let n = theta.len();
    if n > MAX_HESSIAN_DIM {
        return Err(Error::Shape(format!(
            "finite-difference Hessian needs dim <= {MAX_HESSIAN_DIM}, got {n}"
        )));
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let signs = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];
    let mut hess = vec![vec![0.0; n]; n];
    // Batches keep memory bounded: each point builds a kernel table.
    for chunk in pairs.chunks(64) {
        let thetas: Vec<Vec<f64>> = chunk
            .iter()
            .flat_map(|&(i, j)| {
                signs.map(|(si, sj)| {
                    let mut x = theta.to_vec();
                    x[i] += si * h;
                    x[j] += sj * h;
                    x
                })
            })
            .collect();
        let values = objective_batch(nmdp, policy, &thetas, spec, opts)?;
        for (&(i, j), v) in chunk.iter().zip(values.chunks_exact(4)) {
            let d = (v[0] - v[1] - v[2] + v[3]) / (4.0 * h * h);
            hess[i][j] = d;
            hess[j][i] = d;
        }
    }
    Ok(hess)
}

/// Spectral norm of [`fd_hessian`].
pub fn fd_hessian_norm<N: EnumerableNmdp + ?Sized>(
    nmdp: &N,
    policy: &dyn AsmPolicy,
    spec: &ReturnSpec,
    h: f64,
    opts: &EnumOptions,
) -> Result<f64> {
    let hess = fd_hessian(nmdp, policy, spec, h, opts)?;
    let flat: Vec<f64> = hess.concat();
    Ok(symmetric_spectral_norm(hess.len(), &flat))
}
