//! Sieve maximum-likelihood fitting: alternating range search and weight ascent.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{lift_weights, SieveCovariance};
use crate::error::{Error, Result};
use crate::gp_core::{ProfileLikelihood, ProfilePoint, SpatialDataset};
use crate::qp::project_simplex;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum RhoBoundsPolicy {
    /// `[h_min, h_max]` from the smallest positive and largest pairwise distance.
    ObservedRange,
    User { min: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Stop the alternation when the profile objective improves by at most this fraction.
    ///
    /// Relative gains here and in `m_stop_rel_gain` are taken on the
    /// per-observation log-likelihood with the `−½ log 2π` constant removed.
    pub rel_tol: f64,
    pub rho_search_draws: usize,
    pub rho_bounds_policy: RhoBoundsPolicy,
    pub m_schedule_exponents: Vec<f64>,
    /// Stop walking the order schedule when the best likelihood improves by less than this fraction.
    pub m_stop_rel_gain: f64,
    pub include_nugget: bool,
    pub seed: u64,
    pub max_outer_iters: usize,
    pub max_weight_iters: usize,
    /// Per-observation KKT tolerance for the weight subproblem.
    pub weight_kkt_tol: f64,
    /// Starting nugget ratio `τ²/σ²` when the nugget is estimated.
    pub initial_nugget_ratio: f64,
    /// Also start each order from the lifted previous optimum and keep the better fit.
    pub warm_start: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            rel_tol: 1e-3,
            rho_search_draws: 64,
            rho_bounds_policy: RhoBoundsPolicy::ObservedRange,
            m_schedule_exponents: (1..=18).map(|i| i as f64 / 20.0).collect(),
            m_stop_rel_gain: 1e-3,
            include_nugget: false,
            seed: 0,
            max_outer_iters: 50,
            max_weight_iters: 300,
            weight_kkt_tol: 1e-6,
            initial_nugget_ratio: 0.1,
            warm_start: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || !(self.m_stop_rel_gain > 0.0) {
            return Err(Error::validation("relative tolerances must be positive"));
        }
        let e = &self.m_schedule_exponents;
        if e.is_empty() || e.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) || e.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::validation("schedule exponents must be increasing in (0, 1]"));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::validation("max_outer_iters must be positive"));
        }
        if let RhoBoundsPolicy::User { min, max } = self.rho_bounds_policy {
            if !(min > 0.0 && max >= min && max.is_finite()) {
                return Err(Error::validation(format!("invalid range bounds [{min}, {max}]")));
            }
        }
        if !(self.initial_nugget_ratio > 0.0) {
            return Err(Error::validation("initial nugget ratio must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub loglik_per_obs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCandidate {
    pub m: usize,
    /// `None` when the fit at this order failed.
    pub loglik_per_obs: Option<f64>,
    pub model: Option<SieveCovariance>,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: SieveCovariance,
    pub loglik_per_obs: f64,
    pub trace: Vec<TracePoint>,
    pub m_candidates: Vec<MCandidate>,
    pub converged: bool,
    #[serde(skip)]
    pub wallclock: Duration,
}

/// The state the alternation moves through; `eta` is the nugget ratio `τ²/σ²`.
#[derive(Debug, Clone, PartialEq)]
pub struct SieveState {
    pub weights: Vec<f64>,
    pub rho: f64,
    pub eta: f64,
}

/// Distinct orders `1 + ⌊N^a⌋` in increasing order.
pub fn m_schedule(n_obs: usize, exponents: &[f64]) -> Vec<usize> {
    let mut out: Vec<usize> = exponents
        .iter()
        .map(|&a| 1 + (n_obs as f64).powf(a).floor() as usize)
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

fn check_data(data: &SpatialDataset) -> Result<()> {
    data.validate()?;
    if data.n_obs() < 3 {
        return Err(Error::validation(format!("need at least 3 observations, got {}", data.n_obs())));
    }
    if data.n_sites() < 2 {
        return Err(Error::validation("need at least two sites"));
    }
    if data.obs.iter().all(|&y| y == data.obs[(0, 0)]) {
        return Err(Error::validation("observations have zero variance"));
    }
    Ok(())
}

fn rho_bounds(data: &SpatialDataset, cfg: &FitConfig) -> Result<(f64, f64)> {
    match cfg.rho_bounds_policy {
        RhoBoundsPolicy::User { min, max } => Ok((min, max)),
        RhoBoundsPolicy::ObservedRange => {
            let s = data.distance_summary()?;
            Ok((s.min_positive, s.max))
        }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Random search over `ρ` at fixed weights: the incumbent plus log-uniform draws.
///
/// Ties go to the incumbent, so the likelihood never decreases. Candidates that
/// fail to factorize are skipped; if every one fails the incumbent is kept.
pub fn update_rho(
    data: &SpatialDataset,
    weights: &[f64],
    rho: f64,
    nugget_ratio: f64,
    cfg: &FitConfig,
    rng: &mut impl Rng,
) -> Result<(f64, Option<ProfilePoint>)> {
    let pl = ProfileLikelihood::new(data);
    update_rho_with(&pl, weights, rho, nugget_ratio, cfg, rng)
}

fn update_rho_with(
    pl: &ProfileLikelihood<'_>,
    weights: &[f64],
    rho: f64,
    eta: f64,
    cfg: &FitConfig,
    rng: &mut impl Rng,
) -> Result<(f64, Option<ProfilePoint>)> {
    let incumbent = pl.evaluate(weights, rho, eta).ok();
    if cfg.rho_search_draws == 0 {
        return Ok((rho, incumbent));
    }
    let (lo, hi) = rho_bounds(pl.data(), cfg)?;
    let (llo, lhi) = (lo.ln(), hi.ln());
    let draws: Vec<f64> = (0..cfg.rho_search_draws)
        .map(|_| if lhi > llo { rng.random_range(llo..lhi).exp() } else { lo })
        .collect();
    let scored: Vec<Option<ProfilePoint>> = draws.par_iter().map(|&r| pl.evaluate(weights, r, eta).ok()).collect();

    let mut best = (rho, incumbent);
    for (&r, p) in draws.iter().zip(scored) {
        if let Some(p) = p {
            let better = match best.1 {
                Some(b) => p.loglik > b.loglik,
                None => true,
            };
            if better {
                best = (r, Some(p));
            }
        }
    }
    Ok(best)
}

/// Result of the weight (and nugget) ascent at fixed `ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightUpdate {
    pub weights: Vec<f64>,
    pub eta: f64,
    pub point: ProfilePoint,
    pub kkt_residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Per-observation KKT residual of `max l(w, θ)` over the simplex (and `θ = ln η` when free).
fn ascent_kkt(w: &[f64], gw: &[f64], g_theta: Option<f64>, theta_at_bound: bool, n_obs: f64) -> f64 {
    let lambda: f64 = w.iter().zip(gw).map(|(w, g)| w * g).sum();
    let mut r = 0.0f64;
    for (w, g) in w.iter().zip(gw) {
        let slack = g - lambda;
        r = r.max(if *w > 0.0 { slack.abs() } else { slack.max(0.0) });
    }
    if let Some(gt) = g_theta {
        if !theta_at_bound {
            r = r.max(gt.abs());
        }
    }
    r / n_obs
}

const LN_ETA_MIN: f64 = -18.420_680_743_952_367; // ln 1e-8
const LN_ETA_MAX: f64 = 9.210_340_371_976_184; // ln 1e4

/// Projected-gradient ascent with Barzilai–Borwein steps and Armijo backtracking.
///
/// Weights live on the simplex; the nugget ratio moves on a log scale. Every
/// accepted step increases the profile likelihood, so the returned value is at
/// least the starting value.
pub fn update_weights(
    data: &SpatialDataset,
    rho: f64,
    weights0: &[f64],
    nugget_ratio: f64,
    estimate_nugget: bool,
    cfg: &FitConfig,
) -> Result<WeightUpdate> {
    let pl = ProfileLikelihood::new(data);
    update_weights_with(&pl, rho, weights0, nugget_ratio, estimate_nugget, cfg)
}

fn update_weights_with(
    pl: &ProfileLikelihood<'_>,
    rho: f64,
    weights0: &[f64],
    eta0: f64,
    free_eta: bool,
    cfg: &FitConfig,
) -> Result<WeightUpdate> {
    let m = weights0.len();
    let n_obs = pl.data().n_obs() as f64;
    let free_w = m > 1;
    let mut w = weights0.to_vec();
    let mut theta = if free_eta { eta0.max(1e-8).ln() } else { 0.0 };
    let eta_of = |t: f64| if free_eta { t.exp() } else { eta0 };

    let (mut point, mut grad) = pl.evaluate_with_gradient(&w, rho, eta_of(theta))?;
    if !free_w && !free_eta {
        return Ok(WeightUpdate {
            weights: w,
            eta: eta0,
            point,
            kkt_residual: 0.0,
            converged: true,
            iterations: 0,
        });
    }
    let g_theta = |g: f64, t: f64| if free_eta { Some(g * t.exp()) } else { None };
    let at_bound = |t: f64, gt: f64| (t <= LN_ETA_MIN && gt < 0.0) || (t >= LN_ETA_MAX && gt > 0.0);

    let mut gt = g_theta(grad.eta, theta);
    let mut kkt = ascent_kkt(&w, &grad.weights, gt, gt.is_some_and(|g| at_bound(theta, g)), n_obs);
    let gmax = grad.weights.iter().map(|g| g.abs()).fold(gt.map_or(0.0, f64::abs), f64::max);
    let mut step = if gmax > 0.0 { 0.1 / gmax } else { 1.0 };
    let mut converged = kkt <= cfg.weight_kkt_tol;
    let mut iterations = 0;

    while !converged && iterations < cfg.max_weight_iters {
        iterations += 1;
        let mut accepted = None;
        let mut alpha = step;
        for _ in 0..50 {
            let w_new = if free_w {
                let trial: Vec<f64> = w.iter().zip(&grad.weights).map(|(w, g)| w + alpha * g).collect();
                project_simplex(&trial)
            } else {
                w.clone()
            };
            let t_new = match gt {
                Some(g) => (theta + alpha * g).clamp(LN_ETA_MIN, LN_ETA_MAX),
                None => theta,
            };
            let mut ascent: f64 = w_new.iter().zip(&w).zip(&grad.weights).map(|((a, b), g)| (a - b) * g).sum();
            if let Some(g) = gt {
                ascent += (t_new - theta) * g;
            }
            if ascent <= 0.0 {
                break;
            }
            if let Ok((p, g)) = pl.evaluate_with_gradient(&w_new, rho, eta_of(t_new)) {
                if p.loglik >= point.loglik + 1e-4 * ascent {
                    accepted = Some((w_new, t_new, p, g));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((w_new, t_new, p, g)) = accepted else {
            // no ascent direction survives backtracking: stationary to working precision
            break;
        };

        // Barzilai–Borwein step for the next iteration (ascent form)
        let mut ss = 0.0;
        let mut sy = 0.0;
        for k in 0..m {
            let s = w_new[k] - w[k];
            ss += s * s;
            sy += s * (g.weights[k] - grad.weights[k]);
        }
        let gt_new = g_theta(g.eta, t_new);
        if let (Some(a), Some(b)) = (gt, gt_new) {
            let s = t_new - theta;
            ss += s * s;
            sy += s * (b - a);
        }
        step = if sy < 0.0 { (ss / -sy).clamp(1e-12, 1e12) } else { alpha * 4.0 };

        let gain = p.loglik - point.loglik;
        w = w_new;
        theta = t_new;
        point = p;
        grad = g;
        gt = gt_new;
        kkt = ascent_kkt(&w, &grad.weights, gt, gt.is_some_and(|g| at_bound(theta, g)), n_obs);
        converged = kkt <= cfg.weight_kkt_tol;
        if gain <= 1e-13 * point.loglik.abs() {
            break;
        }
    }

    // polish: drop negligible weights when that does not lower the likelihood
    if free_w && w.iter().any(|&x| x > 0.0 && x < 1e-8) {
        let kept: Vec<f64> = w.iter().map(|&x| if x < 1e-8 { 0.0 } else { x }).collect();
        let s: f64 = kept.iter().sum();
        let kept: Vec<f64> = kept.iter().map(|x| x / s).collect();
        if let Ok(p) = pl.evaluate(&kept, rho, eta_of(theta)) {
            if p.loglik >= point.loglik {
                w = kept;
                point = p;
            }
        }
    }

    Ok(WeightUpdate {
        weights: w,
        eta: eta_of(theta),
        point,
        kkt_residual: kkt,
        converged,
        iterations,
    })
}

/// Relative change of the profile objective `−(1/2N) log det(σ̂²S) − 1/2`,
/// i.e. the per-observation log-likelihood without the `−½ log 2π` constant.
fn relative_gain(before: f64, after: f64) -> f64 {
    let base = before + 0.5 * std::f64::consts::TAU.ln();
    (after - before) / base.abs()
}

/// Alternating fit from a given starting state.
///
/// `stream` selects the random-search stream so that distinct starts draw
/// independent range candidates from the same seed.
pub fn fit_from(data: &SpatialDataset, init: SieveState, cfg: &FitConfig, stream: u64) -> Result<FitResult> {
    let started = Instant::now();
    check_data(data)?;
    cfg.validate()?;
    let pl = ProfileLikelihood::new(data);
    let n_obs = data.n_obs();
    let eta0 = if cfg.include_nugget { init.eta.max(1e-8) } else { 0.0 };
    let mut state = SieveState { eta: eta0, ..init };
    let mut rng = stream_rng(cfg.seed, stream);

    // a start that cannot be factorized is repaired by the range search
    let mut point = pl.evaluate(&state.weights, state.rho, state.eta).ok();
    let mut trace = Vec::new();
    if let Some(p) = point {
        trace.push(TracePoint {
            iteration: 0,
            loglik_per_obs: p.per_obs(n_obs),
        });
    }
    let mut converged = false;
    let mut step = 0;
    for _ in 0..cfg.max_outer_iters {
        let before = point.map(|p| p.per_obs(n_obs));

        let (rho, p) = update_rho_with(&pl, &state.weights, state.rho, state.eta, cfg, &mut rng)?;
        let Some(p) = p else {
            return Err(Error::Conditioning {
                context: "no range candidate gives a factorizable covariance".into(),
                smallest_pivot: f64::NAN,
            });
        };
        state.rho = rho;
        step += 1;
        trace.push(TracePoint {
            iteration: step,
            loglik_per_obs: p.per_obs(n_obs),
        });

        let upd = update_weights_with(&pl, state.rho, &state.weights, state.eta, cfg.include_nugget, cfg)?;
        state.weights = upd.weights;
        state.eta = upd.eta;
        point = Some(upd.point);
        step += 1;
        trace.push(TracePoint {
            iteration: step,
            loglik_per_obs: upd.point.per_obs(n_obs),
        });

        let after = upd.point.per_obs(n_obs);
        if let Some(b) = before {
            if relative_gain(b, after) <= cfg.rel_tol {
                converged = true;
                break;
            }
        }
    }
    debug_assert!(trace.windows(2).all(|p| p[1].loglik_per_obs >= p[0].loglik_per_obs));

    let p = point.expect("set by the first weight update");
    let model = SieveCovariance::new(state.weights, state.rho, p.sigma2, state.eta * p.sigma2)?;
    let loglik_per_obs = p.per_obs(n_obs);
    Ok(FitResult {
        m_candidates: vec![MCandidate {
            m: model.m,
            loglik_per_obs: Some(loglik_per_obs),
            model: Some(model.clone()),
            converged,
            error: None,
        }],
        model,
        loglik_per_obs,
        trace,
        converged,
        wallclock: started.elapsed(),
    })
}

fn initial_state(data: &SpatialDataset, m: usize, cfg: &FitConfig) -> Result<SieveState> {
    if m == 0 {
        return Err(Error::domain("sieve order must be at least 1"));
    }
    Ok(SieveState {
        weights: vec![1.0 / m as f64; m],
        rho: data.distance_summary()?.median,
        eta: cfg.initial_nugget_ratio,
    })
}

/// Fit at a fixed order from uniform weights and the median pairwise distance.
pub fn fit_given_m(data: &SpatialDataset, m: usize, cfg: &FitConfig) -> Result<FitResult> {
    check_data(data)?;
    let init = initial_state(data, m, cfg)?;
    fit_from(data, init, cfg, stream_id(m, false))
}

fn stream_id(m: usize, warm: bool) -> u64 {
    ((m as u64) << 1) | warm as u64
}

fn lift_to(weights: &[f64], m: usize) -> Result<Vec<f64>> {
    let mut w = weights.to_vec();
    while w.len() < m {
        w = lift_weights(&w)?;
    }
    Ok(w)
}

/// Walks the order schedule and keeps the fit with the largest likelihood.
pub fn fit_auto_m(data: &SpatialDataset, cfg: &FitConfig) -> Result<FitResult> {
    let started = Instant::now();
    check_data(data)?;
    cfg.validate()?;
    let schedule = m_schedule(data.n_obs(), &cfg.m_schedule_exponents);

    let mut candidates = Vec::new();
    let mut best: Option<FitResult> = None;
    let mut previous_ll: Option<f64> = None;
    for &m in &schedule {
        let cold = fit_given_m(data, m, cfg);
        let warm = match (&best, cfg.warm_start) {
            (Some(b), true) => Some(lift_to(&b.model.weights, m).and_then(|w| {
                let init = SieveState {
                    weights: w,
                    rho: b.model.rho,
                    eta: if cfg.include_nugget { (b.model.nugget / b.model.sigma2).max(1e-8) } else { 0.0 },
                };
                fit_from(data, init, cfg, stream_id(m, true))
            })),
            _ => None,
        };
        let fit = match (cold, warm) {
            (Ok(c), Some(Ok(w))) => Ok(if w.loglik_per_obs > c.loglik_per_obs { w } else { c }),
            (Ok(c), _) => Ok(c),
            (Err(_), Some(Ok(w))) => Ok(w),
            (Err(e), _) => Err(e),
        };
        match fit {
            Ok(f) => {
                candidates.push(MCandidate {
                    m,
                    loglik_per_obs: Some(f.loglik_per_obs),
                    model: Some(f.model.clone()),
                    converged: f.converged,
                    error: None,
                });
                let ll = f.loglik_per_obs;
                if best.as_ref().is_none_or(|b| ll > b.loglik_per_obs) {
                    best = Some(f);
                }
                // a drop below the best order so far does not end the walk
                if let Some(prev) = previous_ll {
                    let gain = relative_gain(prev, ll);
                    if (0.0..cfg.m_stop_rel_gain).contains(&gain) {
                        break;
                    }
                }
                previous_ll = Some(previous_ll.map_or(ll, |p: f64| p.max(ll)));
            }
            Err(e) => candidates.push(MCandidate {
                m,
                loglik_per_obs: None,
                model: None,
                converged: false,
                error: Some(e.to_string()),
            }),
        }
    }
    let mut best = best.ok_or_else(|| Error::Convergence {
        context: "every order in the schedule failed".into(),
        iterations: candidates.len(),
        best: Vec::new(),
    })?;
    best.m_candidates = candidates;
    best.wallclock = started.elapsed();
    Ok(best)
}
