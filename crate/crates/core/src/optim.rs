//! Derivative-free minimization.

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when the spread of simplex values is below `f_tol·(|f_best| + f_tol)`.
    pub f_tol: f64,
    /// ... and every vertex lies within `x_tol` of the best one (max norm).
    pub x_tol: f64,
    pub initial_step: f64,
    /// Number of restarts from the current best point.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_evals: 4000,
            f_tol: 1e-12,
            x_tol: 1e-9,
            initial_step: 0.25,
            restarts: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Nelder–Mead with dimension-adaptive coefficients and restarts.
///
/// Non-finite objective values are treated as `+∞`, so callers can encode
/// constraints by returning `NaN` or `∞` outside the feasible set.
pub fn nelder_mead(f: impl Fn(&[f64]) -> f64, x0: &[f64], opts: &NelderMeadOptions) -> Minimum {
    let mut best = Minimum {
        x: x0.to_vec(),
        f: clean(f(x0)),
        evals: 1,
        converged: false,
    };
    for _ in 0..=opts.restarts {
        let budget = opts.max_evals.saturating_sub(best.evals);
        if budget == 0 {
            break;
        }
        let run = single_run(&f, &best.x, opts, budget);
        let evals = best.evals + run.evals;
        let improved = run.f < best.f;
        if improved || run.converged {
            best = Minimum { evals, ..run };
        } else {
            best.evals = evals;
        }
        if best.converged && !improved {
            break;
        }
    }
    best
}

fn clean(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

fn single_run(f: &impl Fn(&[f64]) -> f64, x0: &[f64], opts: &NelderMeadOptions, budget: usize) -> Minimum {
    let n = x0.len();
    if n == 0 {
        return Minimum {
            x: Vec::new(),
            f: clean(f(x0)),
            evals: 1,
            converged: true,
        };
    }
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf);

    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        clean(f(x))
    };
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += if p[i] != 0.0 { opts.initial_step * p[i].abs().max(1.0) } else { opts.initial_step };
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p)).collect();
    let mut converged = false;

    while evals.get() < budget {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let spread = vals[n] - vals[0];
        let size = pts[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if vals[0].is_finite() && spread <= opts.f_tol * (vals[0].abs() + opts.f_tol) && size <= opts.x_tol {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n).map(|j| pts[..n].iter().map(|p| p[j]).sum::<f64>() / nf).collect();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&pts[n]).map(|(c, w)| c + t * (c - w)).collect() };

        let xr = along(alpha);
        let fr = eval(&xr);
        if fr < vals[0] {
            let xe = along(alpha * gamma);
            let fe = eval(&xe);
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[n] {
            let xc = along(alpha * rho);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(-rho);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < vals[n].min(fr) {
            pts[n] = xc;
            vals[n] = fc;
            continue;
        }
        for i in 1..=n {
            pts[i] = pts[0].iter().zip(&pts[i]).map(|(b, p)| b + sigma * (p - b)).collect();
            vals[i] = eval(&pts[i]);
        }
    }
    let ib = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    Minimum {
        x: pts[ib].clone(),
        f: vals[ib],
        evals: evals.get(),
        converged,
    }
}

/// Golden-section search for a minimum of a unimodal function on `[a, b]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (clean(f(c)), clean(f(d)));
    while (b - a).abs() > tol * (1.0 + c.abs() + d.abs()) {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = clean(f(c));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = clean(f(d));
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}
