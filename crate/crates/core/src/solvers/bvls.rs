//! Bounded-variable linear least squares: `min |Ax - b|^2` with
//! `l <= x <= u`, solved by an active-set method.
//!
//! Variables move between a free set and the two bound sets. Each outer
//! iteration solves the unconstrained problem on the free set (through the
//! normal equations; the parameter counts here are tens, not thousands),
//! truncates the move at the first bound crossing, and frees the bound
//! variable with the largest KKT violation. Terminates when the KKT
//! residual drops below `kkt_tol` scaled by the gradient magnitude at zero.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Free,
    AtLower,
    AtUpper,
}

#[derive(Debug, Clone)]
pub struct BvlsSolution {
    pub x: DVector<f64>,
    /// Largest KKT violation at the returned point.
    pub kkt_residual: f64,
    pub iterations: usize,
}

pub const DEFAULT_KKT_TOL: f64 = 1e-10;

/// Solves `min |Ax - b|^2` subject to `l <= x <= u`.
///
/// The zero vector must be feasible (true for the symmetric coefficient
/// boxes this crate uses); the iterate never increases the residual, so the
/// result is always at least as good as `x = 0`.
pub fn solve(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    kkt_tol: f64,
) -> Result<BvlsSolution> {
    let n = a.ncols();
    if b.len() != a.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "rhs length {} does not match {} rows",
            b.len(),
            a.nrows()
        )));
    }
    if lower.len() != n || upper.len() != n {
        return Err(Error::DimensionMismatch(
            "bound vectors must match column count".into(),
        ));
    }
    for j in 0..n {
        if lower[j] > 0.0 || upper[j] < 0.0 || lower[j] > upper[j] {
            return Err(Error::InvalidArgument(format!(
                "bounds [{}, {}] for variable {j} do not contain zero",
                lower[j], upper[j]
            )));
        }
    }

    // Gram system; n is small so forming it is cheaper than repeated QR.
    let gram = a.tr_mul(a);
    let atb = a.tr_mul(b);
    let grad_scale = atb.amax().max(1.0);

    let mut x = DVector::zeros(n);
    let mut state = vec![VarState::Free; n];
    let max_outer = 10 * n + 50;
    let mut last_bound: Option<usize> = None;

    for outer in 0..max_outer {
        // Inner loop: optimize over the free set, clipping at bounds.
        let mut guard = 0;
        loop {
            guard += 1;
            if guard > n + 2 {
                break;
            }
            let free: Vec<usize> = (0..n).filter(|&j| state[j] == VarState::Free).collect();
            if free.is_empty() {
                break;
            }
            let target = solve_free_subproblem(&gram, &atb, &x, &state, &free);

            // Step from x_F toward the subproblem optimum, stopping at the
            // first bound crossing.
            let mut t_max: f64 = 1.0;
            let mut crossing: Option<(usize, VarState)> = None;
            for (fi, &j) in free.iter().enumerate() {
                let d = target[fi] - x[j];
                if d > 0.0 && x[j] + d > upper[j] {
                    let t = (upper[j] - x[j]) / d;
                    if t < t_max {
                        t_max = t;
                        crossing = Some((j, VarState::AtUpper));
                    }
                } else if d < 0.0 && x[j] + d < lower[j] {
                    let t = (lower[j] - x[j]) / d;
                    if t < t_max {
                        t_max = t;
                        crossing = Some((j, VarState::AtLower));
                    }
                }
            }

            for (fi, &j) in free.iter().enumerate() {
                x[j] += t_max * (target[fi] - x[j]);
            }
            match crossing {
                Some((j, bound_state)) => {
                    x[j] = match bound_state {
                        VarState::AtUpper => upper[j],
                        _ => lower[j],
                    };
                    state[j] = bound_state;
                    last_bound = Some(j);
                }
                None => break, // free set solved exactly
            }
        }

        // KKT check: w = A'(b - Ax); bound variables may only be released
        // when the gradient pushes them into the interior.
        let w = &atb - &gram * &x;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            let violation = match state[j] {
                VarState::Free => 0.0,
                VarState::AtLower => w[j].max(0.0),
                VarState::AtUpper => (-w[j]).max(0.0),
            };
            if violation > kkt_tol * grad_scale {
                // Avoid immediately re-freeing what the inner loop just
                // bound; that is the classic cycling pattern.
                if last_bound == Some(j) && best.is_some() {
                    continue;
                }
                if best.map_or(true, |(_, v)| violation > v) {
                    best = Some((j, violation));
                }
            }
        }

        match best {
            None => {
                let kkt = kkt_residual(&w, &state, n);
                return Ok(BvlsSolution {
                    x,
                    kkt_residual: kkt,
                    iterations: outer + 1,
                });
            }
            Some((j, _)) => {
                if last_bound == Some(j) {
                    // Releasing the variable we just bound would cycle;
                    // accept the current (feasible, monotone) iterate.
                    let kkt = kkt_residual(&w, &state, n);
                    return Ok(BvlsSolution {
                        x,
                        kkt_residual: kkt,
                        iterations: outer + 1,
                    });
                }
                state[j] = VarState::Free;
                last_bound = None;
            }
        }
    }

    let w = &atb - &gram * &x;
    Err(Error::NonConvergence {
        iterations: max_outer,
        message: format!(
            "bounded least squares stalled with KKT residual {:.3e}",
            kkt_residual(&w, &state, n)
        ),
    })
}

fn kkt_residual(w: &DVector<f64>, state: &[VarState], n: usize) -> f64 {
    (0..n)
        .map(|j| match state[j] {
            VarState::Free => w[j].abs(),
            VarState::AtLower => w[j].max(0.0),
            VarState::AtUpper => (-w[j]).max(0.0),
        })
        .fold(0.0, f64::max)
}

/// Unconstrained minimizer over the free coordinates with the bound ones
/// held fixed: solves `G_FF z = (A'b)_F - G_FB x_B`.
fn solve_free_subproblem(
    gram: &DMatrix<f64>,
    atb: &DVector<f64>,
    x: &DVector<f64>,
    state: &[VarState],
    free: &[usize],
) -> DVector<f64> {
    let nf = free.len();
    let mut gff = DMatrix::zeros(nf, nf);
    let mut rhs = DVector::zeros(nf);
    for (fi, &j) in free.iter().enumerate() {
        let mut r = atb[j];
        for (k, s) in state.iter().enumerate() {
            if *s != VarState::Free {
                r -= gram[(j, k)] * x[k];
            }
        }
        rhs[fi] = r;
        for (fk, &k) in free.iter().enumerate() {
            gff[(fi, fk)] = gram[(j, k)];
        }
    }
    match gff.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        // Rank-deficient free set: fall back to the pseudo-inverse.
        None => gff.svd(true, true).solve(&rhs, 1e-12).unwrap_or_else(|_| {
            DVector::from_iterator(nf, free.iter().map(|&j| x[j]))
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Projected gradient descent on |Ax-b|^2, run to tight tolerance.
    /// Independent of the active-set path; used as the oracle.
    fn projected_gradient_oracle(
        a: &DMatrix<f64>,
        b: &DVector<f64>,
        lower: &DVector<f64>,
        upper: &DVector<f64>,
    ) -> DVector<f64> {
        let gram = a.tr_mul(a);
        let atb = a.tr_mul(b);
        // Lipschitz constant of the gradient.
        let lip = 2.0 * gram.symmetric_eigenvalues().amax();
        let step = 1.0 / lip;
        let mut x = DVector::zeros(a.ncols());
        for _ in 0..200_000 {
            let grad = &gram * &x - &atb;
            let mut next = &x - grad * (2.0 * step);
            for j in 0..next.len() {
                next[j] = next[j].clamp(lower[j], upper[j]);
            }
            let delta = (&next - &x).norm();
            x = next;
            if delta < 1e-14 {
                break;
            }
        }
        x
    }

    fn random_problem(
        rng: &mut ChaCha8Rng,
        m: usize,
        n: usize,
    ) -> (DMatrix<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
        let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
        let b = DVector::from_fn(m, |_, _| rng.gen_range(-2.0..2.0));
        let bound = DVector::from_fn(n, |_, _| rng.gen_range(0.1..1.5));
        (a, b, -bound.clone(), bound)
    }

    #[test]
    fn unconstrained_optimum_inside_box_is_found() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = DMatrix::from_fn(20, 4, |_, _| rng.gen_range(-1.0..1.0));
        let x_true = DVector::from_vec(vec![0.3, -0.2, 0.1, 0.25]);
        let b = &a * &x_true;
        let big = DVector::repeat(4, 10.0);
        let sol = solve(&a, &b, &(-big.clone()), &big, DEFAULT_KKT_TOL).unwrap();
        assert!((sol.x - x_true).norm() < 1e-10);
    }

    #[test]
    fn matches_projected_gradient_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..40 {
            let (a, b, lo, hi) = random_problem(&mut rng, 30, 6);
            let sol = solve(&a, &b, &lo, &hi, DEFAULT_KKT_TOL).unwrap();
            let oracle = projected_gradient_oracle(&a, &b, &lo, &hi);
            let cost = (&a * &sol.x - &b).norm_squared();
            let cost_oracle = (&a * &oracle - &b).norm_squared();
            assert!(
                cost <= cost_oracle + 1e-9 * (1.0 + cost_oracle),
                "trial {trial}: active set cost {cost} worse than oracle {cost_oracle}"
            );
            assert!(
                (&sol.x - &oracle).amax() < 1e-6,
                "trial {trial}: solutions diverge: {:?} vs {:?}",
                sol.x,
                oracle
            );
        }
    }

    #[test]
    fn active_bounds_are_respected_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..40 {
            let (a, b, lo, hi) = random_problem(&mut rng, 12, 8);
            let sol = solve(&a, &b, &lo, &hi, DEFAULT_KKT_TOL).unwrap();
            for j in 0..8 {
                assert!(sol.x[j] >= lo[j] - 1e-12 && sol.x[j] <= hi[j] + 1e-12);
            }
        }
    }

    #[test]
    fn never_worse_than_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..40 {
            let (a, b, lo, hi) = random_problem(&mut rng, 10, 12); // underdetermined too
            let sol = solve(&a, &b, &lo, &hi, DEFAULT_KKT_TOL).unwrap();
            let cost = (&a * &sol.x - &b).norm_squared();
            assert!(cost <= b.norm_squared() + 1e-12);
        }
    }

    #[test]
    fn rejects_boxes_excluding_zero() {
        let a = DMatrix::identity(2, 2);
        let b = DVector::zeros(2);
        let lo = DVector::from_vec(vec![0.5, -1.0]);
        let hi = DVector::from_vec(vec![1.0, 1.0]);
        assert!(solve(&a, &b, &lo, &hi, DEFAULT_KKT_TOL).is_err());
    }
}
