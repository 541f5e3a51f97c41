//! Back-propagated gradients of the partial loss, projected SGD (proper,
//! split-sequence and improper), the least-squares window baseline and
//! Monte-Carlo gradient diagnostics.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acq::{default_grid, AcqPolytope, Cone, PROJECTION_TOL};
use crate::error::{Error, Result};
use crate::gen::{sample_trajectory, stream_rng, H0Policy, InputDist};
use crate::lds::{SystemParams, Trajectory};
use crate::risk::{central_difference, empirical_partial_loss, idealized_risk_time, population_risk_closed};

/// Descent direction for `(â, Ĉ, D̂)`; half the gradient of the partial loss.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientTriple {
    pub g_a: Vec<f64>,
    pub g_c: Vec<f64>,
    pub g_d: Vec<f64>,
}

impl GradientTriple {
    pub fn flatten(&self) -> Vec<f64> {
        self.g_a.iter().chain(&self.g_c).chain(&self.g_d).copied().collect()
    }

    pub fn norm(&self) -> f64 {
        self.g_a
            .iter()
            .chain(&self.g_c)
            .chain(&self.g_d)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.g_a.iter().chain(&self.g_c).chain(&self.g_d).all(|v| v.is_finite())
    }
}

/// Gradient of `½ ℓ` where `ℓ = (1/(T−T1)) Σ_{t>T1} ‖ỹ_t − y_t‖²` and `ỹ` runs
/// from a zero state.
pub fn backprop_gradient(est: &SystemParams, traj: &Trajectory, t1: usize) -> Result<GradientTriple> {
    if est.l_in != traj.l_in || est.l_out != traj.l_out {
        return Err(Error::DimensionMismatch("model and trajectory widths differ".into()));
    }
    let t_len = traj.t_len;
    if t1 >= t_len {
        return Err(Error::InvalidArgument(format!("T1 = {t1} must be below T = {t_len}")));
    }
    let (n, l_in, l_out) = (est.n, est.l_in, est.l_out);
    let s_dim = est.state_dim();
    let scale = 1.0 / (t_len - t1) as f64;

    // states[t] = h_t, with h_0 = 0.
    let mut states = vec![0.0; (t_len + 1) * s_dim];
    let mut delta = vec![0.0; t_len * l_out];
    let mut y_hat = vec![0.0; l_out];
    for t in 0..t_len {
        let (prev, next) = states.split_at_mut((t + 1) * s_dim);
        let h = &prev[t * s_dim..];
        est.output(h, traj.x(t), &mut y_hat);
        if t >= t1 {
            for o in 0..l_out {
                delta[t * l_out + o] = scale * (y_hat[o] - traj.y(t)[o]);
            }
        }
        let h_next = &mut next[..s_dim];
        h_next.copy_from_slice(h);
        est.step_state(h_next, traj.x(t));
    }

    let mut g_c = vec![0.0; l_out * s_dim];
    let mut g_d = vec![0.0; l_out * l_in];
    for t in t1..t_len {
        let h = &states[t * s_dim..(t + 1) * s_dim];
        for o in 0..l_out {
            let dv = delta[t * l_out + o];
            if dv == 0.0 {
                continue;
            }
            for (gc, hv) in g_c[o * s_dim..(o + 1) * s_dim].iter_mut().zip(h) {
                *gc += dv * hv;
            }
            for i in 0..l_in {
                g_d[o * l_in + i] += dv * traj.x(t)[i];
            }
        }
    }

    // Adjoint: g_t = ∂/∂h_t, g_T = 0, g_t = Ĉᵀ Δ_{t+1} + Âᵀ g_{t+1}.
    let mut g_a = vec![0.0; n];
    let mut adj = vec![0.0; s_dim];
    let mut next_adj = vec![0.0; s_dim];
    let last = (n - 1) * l_in;
    for t in (1..t_len).rev() {
        // adj currently holds g_{t+1}; build g_t in next_adj.
        next_adj.iter_mut().for_each(|v| *v = 0.0);
        for j in 1..n {
            for i in 0..l_in {
                next_adj[j * l_in + i] = adj[(j - 1) * l_in + i];
            }
        }
        for j in 0..n {
            let coef = est.a[n - 1 - j];
            for i in 0..l_in {
                next_adj[j * l_in + i] -= coef * adj[last + i];
            }
        }
        // Δ_{t+1} is stored at row t (0-based step t is time t+1).
        for o in 0..l_out {
            let dv = delta[t * l_out + o];
            if dv != 0.0 {
                for col in 0..s_dim {
                    next_adj[col] += est.c[o * s_dim + col] * dv;
                }
            }
        }
        std::mem::swap(&mut adj, &mut next_adj);
        // adj = g_t; h_{t−1} = states[t−1].
        let h_prev = &states[(t - 1) * s_dim..t * s_dim];
        for j in 1..=n {
            let mut acc = 0.0;
            for i in 0..l_in {
                acc += adj[last + i] * h_prev[(n - j) * l_in + i];
            }
            g_a[j - 1] -= acc;
        }
    }
    Ok(GradientTriple { g_a, g_c, g_d })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LearningRate {
    Constant { eta: f64 },
    /// `η = R/√(VK)` when `K ≥ 4R²Γ²/(Vτ²)`, otherwise `η = τ/(2Γ)`.
    TheoryRule { v: f64, gamma: f64, tau: f64 },
}

impl LearningRate {
    pub fn resolve(&self, radius_bound: f64, steps: usize) -> Result<f64> {
        let eta = match *self {
            LearningRate::Constant { eta } => eta,
            LearningRate::TheoryRule { v, gamma, tau } => {
                let k = steps.max(1) as f64;
                let r = radius_bound;
                if k >= 4.0 * r * r * gamma * gamma / (v * tau * tau) {
                    r / (v * k).sqrt()
                } else {
                    tau / (2.0 * gamma)
                }
            }
        };
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {eta}")));
        }
        Ok(eta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub alpha: f64,
    #[serde(default)]
    pub cone: Option<Cone>,
    #[serde(default)]
    pub grid: Option<usize>,
}

impl ProjectionSpec {
    pub fn build(&self, n: usize) -> Result<AcqPolytope> {
        let cone = self.cone.unwrap_or_default();
        AcqPolytope::build(n, self.alpha, &cone, self.grid.unwrap_or_else(|| default_grid(n)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: LearningRate,
    #[serde(default = "one")]
    pub passes: usize,
    #[serde(default = "quarter")]
    pub t1_fraction: f64,
    #[serde(default = "one_f")]
    pub radius_bound: f64,
    #[serde(default = "ten")]
    pub split_beta: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub random_iterate: bool,
    #[serde(default)]
    pub projection: Option<ProjectionSpec>,
    /// Keep a copy of the iterate every this many steps.
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
}

fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn ten() -> usize {
    10
}
fn quarter() -> f64 {
    0.25
}

impl SgdConfig {
    pub fn constant(eta: f64) -> Self {
        SgdConfig {
            learning_rate: LearningRate::Constant { eta },
            passes: 1,
            t1_fraction: 0.25,
            radius_bound: 1.0,
            split_beta: 10,
            seed: 0,
            random_iterate: false,
            projection: None,
            checkpoint_every: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.t1_fraction) {
            return Err(Error::InvalidArgument(format!("t1_fraction {} not in [0, 1)", self.t1_fraction)));
        }
        if self.passes == 0 {
            return Err(Error::InvalidArgument("passes must be ≥ 1".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::InvalidArgument("checkpoint_every must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Teacher used to log the closed-form population risk along training.
#[derive(Clone, Debug)]
pub struct Monitor {
    pub teacher: SystemParams,
    pub sigma: f64,
    pub t_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iter: usize,
    pub partial_loss: f64,
    pub pop_risk_closed: Option<f64>,
    pub grad_norm: f64,
    pub projected: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: SystemParams,
    pub history: Vec<HistoryRecord>,
    /// Index of the returned iterate (the last one unless random-iterate mode).
    pub selected: usize,
    /// `(steps taken, iterate)` pairs.
    pub checkpoints: Vec<(usize, SystemParams)>,
}

/// Projected SGD with one fresh trajectory per step. The loss recorded at
/// step `k` is evaluated before the update.
pub fn sgd_train(
    stream: &[Trajectory],
    config: &SgdConfig,
    init: &SystemParams,
    monitor: Option<&Monitor>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let polytope = config.projection.as_ref().map(|p| p.build(init.n)).transpose()?;
    let steps = stream.len() * config.passes;
    let eta = config.learning_rate.resolve(config.radius_bound, steps)?;

    let mut params = init.clone();
    if let Some(poly) = &polytope {
        params.a = poly.project(&params.a, PROJECTION_TOL)?.point;
    }
    let mut history = Vec::with_capacity(steps);
    let mut iterates = Vec::new();
    if config.random_iterate {
        iterates.reserve(steps + 1);
        iterates.push(params.clone());
    }
    let mut checkpoints = Vec::new();
    let mut iter = 0;
    for _ in 0..config.passes {
        for traj in stream {
            let t1 = (config.t1_fraction * traj.t_len as f64).floor() as usize;
            let loss = empirical_partial_loss(&params, traj, t1)?;
            let grad = backprop_gradient(&params, traj, t1)?;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::Divergence { iter });
            }
            let grad_norm = grad.norm();
            for (p, g) in params.a.iter_mut().zip(&grad.g_a) {
                *p -= eta * g;
            }
            for (p, g) in params.c.iter_mut().zip(&grad.g_c) {
                *p -= eta * g;
            }
            for (p, g) in params.d.iter_mut().zip(&grad.g_d) {
                *p -= eta * g;
            }
            let mut projected = false;
            if let Some(poly) = &polytope {
                let pr = poly.project(&params.a, PROJECTION_TOL)?;
                projected = pr.moved;
                params.a = pr.point;
            }
            if params.flatten().iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { iter });
            }
            let pop_risk_closed = match monitor {
                Some(m) => Some(population_risk_closed(&params, &m.teacher, m.t_len, m.sigma)?),
                None => None,
            };
            history.push(HistoryRecord { iter, partial_loss: loss, pop_risk_closed, grad_norm, projected });
            if config.random_iterate {
                iterates.push(params.clone());
            }
            iter += 1;
            if config.checkpoint_every.is_some_and(|c| iter % c == 0) {
                checkpoints.push((iter, params.clone()));
            }
        }
    }
    let (params, selected) = if config.random_iterate && !iterates.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let j = rng.random_range(0..iterates.len());
        (iterates.swap_remove(j), j)
    } else {
        (params, steps)
    };
    Ok(TrainOutcome { params, history, selected, checkpoints })
}

/// Cuts every trajectory into chunks of length `β n`, dropping the remainder
/// and the recorded initial state.
pub fn split_sequences(trajs: &[Trajectory], beta: usize, n: usize) -> Result<Vec<Trajectory>> {
    let len = beta.checked_mul(n).filter(|&l| l > 0).ok_or_else(|| {
        Error::InvalidArgument("split length β·n must be positive".into())
    })?;
    let mut out = Vec::new();
    for tr in trajs {
        if len > tr.t_len {
            return Err(Error::InvalidArgument(format!("β·n = {len} exceeds T = {}", tr.t_len)));
        }
        for k in 0..tr.t_len / len {
            let (a, b) = (k * len, (k + 1) * len);
            out.push(Trajectory::new(
                tr.inputs[a * tr.l_in..b * tr.l_in].to_vec(),
                tr.outputs[a * tr.l_out..b * tr.l_out].to_vec(),
                tr.l_in,
                tr.l_out,
                None,
                tr.noise_sigma,
            )?);
        }
    }
    Ok(out)
}

/// SGD with `m` states starting from the zero system; the projection, if any,
/// is built at order `m`.
pub fn improper_train(
    stream: &[Trajectory],
    config: &SgdConfig,
    m: usize,
    monitor: Option<&Monitor>,
) -> Result<TrainOutcome> {
    let first = stream.first().ok_or_else(|| Error::InvalidArgument("empty stream".into()))?;
    let init = SystemParams::zeros(m, first.l_in, first.l_out)?;
    sgd_train(stream, config, &init, monitor)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinRegReport {
    pub window: usize,
    /// Row-major `l_out × (ℓ+1)·l_in`; block `j` multiplies `x_{k−j}`.
    pub coeffs: Vec<f64>,
    /// Mean squared residual per output, the bias floor.
    pub residual: f64,
    pub rows: usize,
}

/// Ordinary least squares from `[x_k, x_{k−1}, …, x_{k−ℓ}]` to `y_k`.
pub fn linreg_baseline(trajs: &[Trajectory], window: usize) -> Result<LinRegReport> {
    let first = trajs.first().ok_or_else(|| Error::InvalidArgument("no trajectories".into()))?;
    let (l_in, l_out) = (first.l_in, first.l_out);
    let p = (window + 1) * l_in;
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DMatrix::<f64>::zeros(p, l_out);
    let mut yy = 0.0;
    let mut rows = 0;
    let mut feat = DVector::<f64>::zeros(p);
    for tr in trajs {
        if tr.l_in != l_in || tr.l_out != l_out {
            return Err(Error::DimensionMismatch("trajectory widths differ".into()));
        }
        if tr.t_len <= window {
            return Err(Error::InvalidArgument(format!("T = {} not above window {window}", tr.t_len)));
        }
        for k in window..tr.t_len {
            for j in 0..=window {
                for i in 0..l_in {
                    feat[j * l_in + i] = tr.x(k - j)[i];
                }
            }
            xtx.ger(1.0, &feat, &feat, 1.0);
            for o in 0..l_out {
                let y = tr.y(k)[o];
                for r in 0..p {
                    xty[(r, o)] += feat[r] * y;
                }
                yy += y * y;
            }
            rows += 1;
        }
    }
    if rows < p {
        return Err(Error::RankDeficient { rows, cols: p });
    }
    let chol = xtx.clone().cholesky().ok_or(Error::RankDeficient { rows, cols: p })?;
    let beta = chol.solve(&xty);
    // ‖y − Xβ‖² = yᵀy − 2βᵀXᵀy + βᵀXᵀXβ
    let fit = (beta.transpose() * &xty).trace();
    let quad = (beta.transpose() * &xtx * &beta).trace();
    let rss = (yy - 2.0 * fit + quad).max(0.0);
    let coeffs = (0..l_out).flat_map(|o| (0..p).map(move |r| (o, r))).map(|(o, r)| beta[(r, o)]).collect();
    Ok(LinRegReport { window, coeffs, residual: rss / (rows * l_out) as f64, rows })
}

#[derive(Clone, Debug, Serialize)]
pub struct GradientStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub trials: usize,
}

impl GradientStats {
    pub fn total_variance(&self) -> f64 {
        self.variance.iter().sum()
    }

    /// Norm of the per-component standard errors of the mean.
    pub fn standard_error(&self) -> f64 {
        (self.total_variance() / self.trials as f64).sqrt()
    }
}

/// Settings for Monte-Carlo gradient probes.
#[derive(Clone, Debug)]
pub struct ProbeSetup {
    pub t_len: usize,
    pub sigma: f64,
    pub trials: usize,
    pub seed: u64,
    pub h0: H0Policy,
}

/// Backprop gradients (`T1 = ⌊T/4⌋`) over fresh trajectories of `truth`;
/// trial `i` uses stream `i` of the seed and the reduction is sequential.
pub fn gradient_samples(est: &SystemParams, truth: &SystemParams, setup: &ProbeSetup) -> Result<GradientStats> {
    if setup.trials < 2 {
        return Err(Error::InvalidArgument("need at least two trials".into()));
    }
    let t1 = setup.t_len / 4;
    let grads: Vec<Vec<f64>> = (0..setup.trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(setup.seed, i as u64);
            let tr = sample_trajectory(truth, setup.t_len, setup.sigma, InputDist::Gaussian, setup.h0, &mut rng)?;
            Ok(backprop_gradient(est, &tr, t1)?.flatten())
        })
        .collect::<Result<_>>()?;
    let dim = grads[0].len();
    let k = grads.len() as f64;
    let mut mean = vec![0.0; dim];
    for g in &grads {
        for (m, v) in mean.iter_mut().zip(g) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k);
    let mut variance = vec![0.0; dim];
    for g in &grads {
        for ((s, v), m) in variance.iter_mut().zip(g).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    variance.iter_mut().for_each(|s| *s /= k - 1.0);
    Ok(GradientStats { mean, variance, trials: grads.len() })
}

/// Per-component empirical variance of the backprop gradient.
pub fn gradient_variance_probe(est: &SystemParams, truth: &SystemParams, setup: &ProbeSetup) -> Result<Vec<f64>> {
    if setup.trials < 100 {
        return Err(Error::InvalidArgument("variance probe needs ≥ 100 trials".into()));
    }
    Ok(gradient_samples(est, truth, setup)?.variance)
}

#[derive(Clone, Debug, Serialize)]
pub struct UnbiasReport {
    pub mean_gradient: Vec<f64>,
    /// `½ ∇(g + ‖D̂ − D‖²)` by central differences.
    pub target: Vec<f64>,
    pub gap: f64,
    pub standard_error: f64,
}

/// `½ ∇(idealized risk + ‖D̂ − D‖²)` at `est`, by central differences.
pub fn idealized_gradient(est: &SystemParams, truth: &SystemParams) -> Result<Vec<f64>> {
    let f = |v: &[f64]| -> Result<f64> {
        let e = est.unflatten(v)?;
        let d: f64 = e.d.iter().zip(&truth.d).map(|(x, y)| (x - y).powi(2)).sum();
        Ok(idealized_risk_time(&e, truth, 0)?.value + d)
    };
    Ok(central_difference(f, &est.flatten(), 1e-6)?.into_iter().map(|g| 0.5 * g).collect())
}

pub fn unbiasedness_probe(est: &SystemParams, truth: &SystemParams, setup: &ProbeSetup) -> Result<UnbiasReport> {
    let stats = gradient_samples(est, truth, setup)?;
    let target = idealized_gradient(est, truth)?;
    let gap = stats.mean.iter().zip(&target).map(|(m, t)| (m - t).powi(2)).sum::<f64>().sqrt();
    Ok(UnbiasReport { standard_error: stats.standard_error(), mean_gradient: stats.mean, target, gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{random_acquiescent, Strategy};
    use crate::lds::{simulate, Noise};
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn random_params(rng: &mut ChaCha8Rng, n: usize, l_in: usize, l_out: usize) -> SystemParams {
        random_acquiescent(n, 0.9, &Cone::default(), Strategy::L1Ball, l_in, l_out, rng).unwrap().params
    }

    fn random_traj(rng: &mut ChaCha8Rng, truth: &SystemParams, t_len: usize) -> Trajectory {
        sample_trajectory(truth, t_len, 0.3, InputDist::Gaussian, H0Policy::Gaussian(1.0), rng).unwrap()
    }

    fn loss_of<'t>(est: &SystemParams, traj: &'t Trajectory, t1: usize) -> impl Fn(&[f64]) -> Result<f64> + 't {
        let est = est.clone();
        move |v| empirical_partial_loss(&est.unflatten(v)?, traj, t1)
    }

    #[test]
    fn zero_gradient_at_exact_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sys = random_params(&mut rng, 3, 1, 1);
        let x: Vec<f64> = (0..20).map(|_| StandardNormal.sample(&mut rng)).collect();
        let tr = simulate(&sys, &x, None, Noise::None).unwrap();
        let g = backprop_gradient(&sys, &tr, 5).unwrap();
        assert!(g.norm() < 1e-14);
    }

    #[test]
    fn d_gradient_by_hand() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth = random_params(&mut rng, 2, 1, 1);
        let est = random_params(&mut rng, 2, 1, 1);
        let tr = random_traj(&mut rng, &truth, 4);
        let g = backprop_gradient(&est, &tr, 1).unwrap();
        let sim = simulate(&est, &tr.inputs, None, Noise::None).unwrap();
        let hand: f64 = (1..4).map(|k| (sim.outputs[k] - tr.outputs[k]) * tr.inputs[k]).sum::<f64>() / 3.0;
        assert!((g.g_d[0] - hand).abs() < 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(n, li, lo) in &[(1, 1, 1), (2, 1, 1), (3, 1, 1), (5, 1, 1), (2, 2, 2), (3, 2, 2)] {
            for &t_len in &[8, 40] {
                let truth = random_params(&mut rng, n, li, lo);
                let est = random_params(&mut rng, n, li, lo);
                let tr = random_traj(&mut rng, &truth, t_len);
                let t1 = t_len / 4;
                let g = backprop_gradient(&est, &tr, t1).unwrap().flatten();
                let fd = central_difference(loss_of(&est, &tr, t1), &est.flatten(), 1e-5).unwrap();
                for (a, b) in g.iter().zip(&fd) {
                    assert!((2.0 * a - b).abs() <= 1e-5 * b.abs().max(1.0), "{} vs {b}", 2.0 * a);
                }
            }
        }
    }

    #[test]
    fn zero_learning_rate_keeps_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth = random_params(&mut rng, 2, 1, 1);
        let init = random_params(&mut rng, 2, 1, 1);
        let stream: Vec<_> = (0..10).map(|_| random_traj(&mut rng, &truth, 16)).collect();
        let mut cfg = SgdConfig::constant(0.0);
        cfg.projection = Some(ProjectionSpec { alpha: 0.9, cone: None, grid: None });
        let out = sgd_train(&stream, &cfg, &init, None).unwrap();
        assert_eq!(out.params, init);
        assert_eq!(out.history.len(), 10);
    }

    #[test]
    fn theory_rule_regimes() {
        let lr = LearningRate::TheoryRule { v: 1.0, gamma: 2.0, tau: 0.5 };
        // 4R²Γ²/(Vτ²) = 64 for R = 1.
        assert_eq!(lr.resolve(1.0, 100).unwrap(), 0.1);
        assert_eq!(lr.resolve(1.0, 10).unwrap(), 0.125);
    }

    #[test]
    fn split_arithmetic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = random_params(&mut rng, 3, 1, 1);
        let tr = random_traj(&mut rng, &truth, 125);
        let parts = split_sequences(std::slice::from_ref(&tr), 10, 3).unwrap();
        assert_eq!(parts.len(), 4);
        assert!(parts.iter().all(|p| p.t_len == 30 && p.h0.is_none()));
        let joined: Vec<f64> = parts.iter().flat_map(|p| p.inputs.clone()).collect();
        assert_eq!(joined[..], tr.inputs[..120]);
        assert!(split_sequences(&[tr], 50, 3).is_err());
    }

    #[test]
    fn linreg_window_zero_is_scalar_regression() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let truth = random_params(&mut rng, 2, 1, 1);
        let trajs: Vec<_> = (0..20).map(|_| random_traj(&mut rng, &truth, 50)).collect();
        let rep = linreg_baseline(&trajs, 0).unwrap();
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for tr in &trajs {
            for k in 0..tr.t_len {
                sxy += tr.inputs[k] * tr.outputs[k];
                sxx += tr.inputs[k] * tr.inputs[k];
            }
        }
        assert!((rep.coeffs[0] - sxy / sxx).abs() < 1e-10);
        assert!(matches!(linreg_baseline(&trajs[..1], 49), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn linreg_delay_line_reaches_noise_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let truth = SystemParams::siso(vec![0.0; 3], vec![0.5, -0.3, 0.8], 0.2).unwrap();
        let trajs: Vec<_> = (0..50)
            .map(|_| sample_trajectory(&truth, 100, 0.1, InputDist::Gaussian, H0Policy::Zero, &mut rng).unwrap())
            .collect();
        let rep = linreg_baseline(&trajs, 3).unwrap();
        assert!((rep.residual - 0.01).abs() < 0.002, "{}", rep.residual);
        // x_k, x_{k−1}, x_{k−2}, x_{k−3} carry D, c_3, c_2, c_1.
        let expect = [0.2, 0.8, -0.3, 0.5];
        for (c, e) in rep.coeffs.iter().zip(expect) {
            assert!((c - e).abs() < 0.01);
        }
    }

    #[test]
    fn variance_vanishes_at_truth_without_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let truth = random_params(&mut rng, 2, 1, 1);
        let setup = ProbeSetup { t_len: 32, sigma: 0.0, trials: 100, seed: 1, h0: H0Policy::Zero };
        let v = gradient_variance_probe(&truth, &truth, &setup).unwrap();
        assert!(v.iter().all(|x| *x < 1e-24));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn sgd_is_deterministic_and_feasible(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = random_params(&mut rng, 2, 1, 1);
            let stream: Vec<_> = (0..30).map(|_| random_traj(&mut rng, &truth, 32)).collect();
            let mut cfg = SgdConfig::constant(0.05);
            cfg.projection = Some(ProjectionSpec { alpha: 0.9, cone: None, grid: None });
            let init = SystemParams::zeros(2, 1, 1).unwrap();
            let a = sgd_train(&stream, &cfg, &init, None).unwrap();
            let b = sgd_train(&stream, &cfg, &init, None).unwrap();
            prop_assert_eq!(&a.history, &b.history);
            let poly = cfg.projection.as_ref().unwrap().build(2).unwrap();
            prop_assert!(poly.max_violation(&a.params.a) <= PROJECTION_TOL);
        }
    }
}
