//! Quadratic programs over the probability simplex and the nonnegative orthant.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Outcome of [`solve_simplex_qp`].
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub weights: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Scale-free KKT residual (divided by the largest diagonal entry of `M`).
    pub kkt_residual: f64,
}

pub const KKT_TOL: f64 = 1e-8;

/// Minimizes `wᵀ M w` subject to `Σ w = 1`, `w ≥ 0`.
///
/// Primal active-set method started from the best vertex; each step solves the
/// equality-constrained problem on the working face. Falls back to accelerated
/// projected gradient if the face systems become numerically singular.
pub fn solve_simplex_qp(m: &DMatrix<f64>) -> Result<QpSolution> {
    let n = check_square_symmetric(m)?;
    let scale = (0..n).map(|i| m[(i, i)]).fold(0.0f64, f64::max);
    if scale == 0.0 {
        // every vertex is optimal; the zero matrix has no preferred point
        let mut w = vec![0.0; n];
        w[0] = 1.0;
        return Ok(QpSolution {
            weights: w,
            objective: 0.0,
            iterations: 0,
            kkt_residual: 0.0,
        });
    }
    let a = m / scale;
    let sol = match active_set(&a) {
        Ok(s) if s.kkt_residual <= KKT_TOL => s,
        first => {
            let pg = projected_gradient(&a, first.as_ref().ok().map(|s| s.weights.clone()));
            match (first, pg) {
                (Ok(s), Ok(p)) => {
                    if p.objective < s.objective {
                        p
                    } else {
                        s
                    }
                }
                (_, Ok(p)) => p,
                (Ok(s), Err(_)) => s,
                (Err(_), Err(e)) => return Err(e),
            }
        }
    };
    if sol.kkt_residual > KKT_TOL {
        return Err(Error::Convergence {
            context: format!("simplex QP stalled with KKT residual {:e}", sol.kkt_residual),
            iterations: sol.iterations,
            best: sol.weights,
        });
    }
    Ok(QpSolution {
        objective: sol.objective * scale,
        ..sol
    })
}

fn check_square_symmetric(m: &DMatrix<f64>) -> Result<usize> {
    let n = m.nrows();
    if n == 0 || m.ncols() != n {
        return Err(Error::domain(format!("QP matrix must be square and nonempty, got {}x{}", n, m.ncols())));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("QP matrix has non-finite entries"));
    }
    let big = m.amax().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * big {
                return Err(Error::domain(format!("QP matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(n)
}

fn objective(a: &DMatrix<f64>, w: &[f64]) -> f64 {
    let v = DVector::from_column_slice(w);
    (v.transpose() * a * &v)[(0, 0)]
}

/// Max violation of the simplex KKT conditions for `min wᵀAw`.
///
/// Gradient `g = 2Aw`; with `λ = wᵀg` the conditions are `g_i = λ` on the
/// support and `g_j ≥ λ` elsewhere.
pub(crate) fn kkt_residual(a: &DMatrix<f64>, w: &[f64]) -> f64 {
    let v = DVector::from_column_slice(w);
    let g = a * &v * 2.0;
    let lambda = g.dot(&v);
    let mut r = 0.0f64;
    for i in 0..w.len() {
        let slack = g[i] - lambda;
        if w[i] > 0.0 {
            r = r.max(slack.abs());
        } else {
            r = r.max((-slack).max(0.0));
        }
    }
    r
}

fn solve_face(a: &DMatrix<f64>, face: &[usize]) -> Option<Vec<f64>> {
    let k = face.len();
    let sub = DMatrix::from_fn(k, k, |i, j| a[(face[i], face[j])]);
    let trace = (0..k).map(|i| sub[(i, i)]).sum::<f64>() / k as f64;
    let ones = DVector::from_element(k, 1.0);
    let mut jitter = 0.0;
    for _ in 0..8 {
        let mut s = sub.clone();
        for i in 0..k {
            s[(i, i)] += jitter;
        }
        if let Some(ch) = s.cholesky() {
            let x = ch.solve(&ones);
            let total = x.sum();
            if total > 0.0 && x.iter().all(|v| v.is_finite()) {
                return Some(x.iter().map(|v| v / total).collect());
            }
        }
        jitter = if jitter == 0.0 { 1e-14 * trace.max(1e-300) } else { jitter * 100.0 };
    }
    None
}

fn active_set(a: &DMatrix<f64>) -> Result<QpSolution> {
    let n = a.nrows();
    let start = (0..n)
        .min_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]))
        .expect("nonempty");
    let mut w = vec![0.0; n];
    w[start] = 1.0;
    let mut face = vec![start];
    let max_iter = 20 * n + 100;

    for iter in 1..=max_iter {
        let p = solve_face(a, &face).ok_or_else(|| Error::Conditioning {
            context: "simplex QP face system is singular".into(),
            smallest_pivot: 0.0,
        })?;
        if p.iter().all(|&x| x >= 0.0) {
            for (&i, &x) in face.iter().zip(&p) {
                w[i] = x;
            }
            let g = a * DVector::from_column_slice(&w);
            let lambda = face.iter().map(|&i| g[i]).sum::<f64>() / face.len() as f64;
            let entering = (0..n)
                .filter(|i| !face.contains(i))
                .map(|j| (j, g[j] - lambda))
                .min_by(|x, y| x.1.total_cmp(&y.1));
            match entering {
                Some((j, mu)) if mu < -1e-13 => face.push(j),
                _ => {
                    return Ok(QpSolution {
                        objective: objective(a, &w),
                        kkt_residual: kkt_residual(a, &w),
                        weights: w,
                        iterations: iter,
                    })
                }
            }
        } else {
            // step from the feasible w toward p until the first coordinate hits zero
            let mut alpha = 1.0;
            let mut blocking = None;
            for (idx, (&i, &pi)) in face.iter().zip(&p).enumerate() {
                if pi < 0.0 {
                    let t = w[i] / (w[i] - pi);
                    if t < alpha {
                        alpha = t;
                        blocking = Some(idx);
                    }
                }
            }
            for (&i, &pi) in face.iter().zip(&p) {
                w[i] += alpha * (pi - w[i]);
            }
            let drop_at = blocking.expect("a negative coordinate bounds the step");
            w[face[drop_at]] = 0.0;
            face.remove(drop_at);
            face.retain(|&i| w[i] > 0.0);
            if face.is_empty() {
                return Err(Error::Conditioning {
                    context: "simplex QP lost its working face".into(),
                    smallest_pivot: 0.0,
                });
            }
            let total: f64 = face.iter().map(|&i| w[i]).sum();
            for &i in &face {
                w[i] /= total;
            }
        }
    }
    Err(Error::Convergence {
        context: "simplex QP active set hit the iteration cap".into(),
        iterations: max_iter,
        best: w,
    })
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i as f64 + 1.0);
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn largest_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lam = 0.0;
    for _ in 0..200 {
        let av = a * &v;
        let norm = av.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&av);
        v = av / norm;
        if (next - lam).abs() <= 1e-10 * next.abs() {
            return norm.max(next);
        }
        lam = next;
    }
    lam.max(a.diagonal().max())
}

fn projected_gradient(a: &DMatrix<f64>, start: Option<Vec<f64>>) -> Result<QpSolution> {
    let n = a.nrows();
    let step = 1.0 / (2.0 * largest_eigenvalue(a)).max(f64::MIN_POSITIVE);
    let mut x = start.unwrap_or_else(|| vec![1.0 / n as f64; n]);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut best = (objective(a, &x), x.clone());
    let max_iter = 50_000;
    for iter in 1..=max_iter {
        let g = a * DVector::from_column_slice(&y) * 2.0;
        let trial: Vec<f64> = y.iter().zip(g.iter()).map(|(yi, gi)| yi - step * gi).collect();
        let next = project_simplex(&trial);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / t_next;
        y = next.iter().zip(&x).map(|(n, o)| n + mom * (n - o)).collect();
        x = next;
        t = t_next;
        let f = objective(a, &x);
        if f < best.0 {
            best = (f, x.clone());
        } else if f > best.0 * (1.0 + 1e-12) {
            // restart momentum when it overshoots
            y = x.clone();
            t = 1.0;
        }
        if iter % 50 == 0 && kkt_residual(a, &best.1) <= KKT_TOL {
            return Ok(QpSolution {
                weights: best.1.clone(),
                objective: best.0,
                iterations: iter,
                kkt_residual: kkt_residual(a, &best.1),
            });
        }
    }
    Ok(QpSolution {
        kkt_residual: kkt_residual(a, &best.1),
        weights: best.1,
        objective: best.0,
        iterations: max_iter,
    })
}

/// Lawson–Hanson nonnegative least squares: `min ‖Ax − b‖²` subject to `x ≥ 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let (rows, n) = a.shape();
    if b.len() != rows {
        return Err(Error::domain(format!("NNLS dimension mismatch: {rows} rows vs {} targets", b.len())));
    }
    if a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
        return Err(Error::domain("NNLS inputs must be finite"));
    }
    let tol = 10.0 * f64::EPSILON * a.amax().max(1.0) * (rows.max(n) as f64);
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let max_iter = 3 * n + 30;

    let solve_passive = |passive: &[bool]| -> Option<DVector<f64>> {
        let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
        let sub = a.select_columns(&idx);
        let sol = sub.svd(true, true).solve(b, 1e-13).ok()?;
        let mut z = DVector::zeros(n);
        for (k, &i) in idx.iter().enumerate() {
            z[i] = sol[k];
        }
        Some(z)
    };

    for _ in 0..max_iter {
        let grad = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&i| !passive[i])
            .max_by(|&i, &j| grad[i].total_cmp(&grad[j]));
        let j = match candidate {
            Some(j) if grad[j] > tol => j,
            _ => return Ok(x),
        };
        passive[j] = true;
        loop {
            let z = solve_passive(&passive).ok_or_else(|| Error::Conditioning {
                context: "NNLS least-squares subproblem failed".into(),
                smallest_pivot: 0.0,
            })?;
            if (0..n).filter(|&i| passive[i]).all(|i| z[i] > 0.0) {
                x = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            for i in (0..n).filter(|&i| passive[i] && z[i] <= 0.0) {
                alpha = alpha.min(x[i] / (x[i] - z[i]));
            }
            x += (z - &x) * alpha;
            for i in 0..n {
                if passive[i] && x[i] <= tol {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    Err(Error::Convergence {
        context: "NNLS hit the iteration cap".into(),
        iterations: max_iter,
        best: x.iter().copied().collect(),
    })
}
