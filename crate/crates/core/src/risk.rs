//! Risk functionals: idealized risk (impulse-response and frequency forms),
//! closed-form population risk, empirical partial loss, and the
//! quasi-convexity and smoothness probes.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lds::{impulse_response, simulate, transfer_eval, Noise, SystemParams, Trajectory};
use crate::poly::{char_poly, unit_circle};

/// Largest root modulus accepted by the idealized-risk routines.
pub const STABILITY_MARGIN: f64 = 1e-6;
const TAIL_TARGET: f64 = 1e-10;
const MAX_HORIZON: usize = 1 << 24;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub idealized: f64,
    pub idealized_freq: f64,
    pub population: f64,
    pub empirical: Option<f64>,
    pub d_term: f64,
    pub tail_bound: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeRisk {
    pub value: f64,
    pub tail_bound: f64,
    pub horizon: usize,
}

fn check_shapes(est: &SystemParams, truth: &SystemParams) -> Result<()> {
    if est.l_in != truth.l_in || est.l_out != truth.l_out {
        return Err(Error::DimensionMismatch(format!(
            "estimate is {}×{}, truth is {}×{}",
            est.l_out, est.l_in, truth.l_out, truth.l_in
        )));
    }
    Ok(())
}

fn spectral_radius(sys: &SystemParams) -> Result<f64> {
    Ok(char_poly(&sys.a)?.roots()?.max_modulus())
}

fn stable_radius(sys: &SystemParams) -> Result<f64> {
    let radius = spectral_radius(sys)?;
    if radius > 1.0 - STABILITY_MARGIN {
        return Err(Error::DivergentRisk { radius });
    }
    Ok(radius)
}

/// Smallest `K` with `ρ^{2K} n / ((1 − ρ²) τ1²) < 1e-10`.
pub fn auto_horizon(rho: f64, n: usize, tau1: f64) -> usize {
    if rho <= 0.0 {
        return n.max(1);
    }
    let scale = n as f64 / ((1.0 - rho * rho) * tau1 * tau1);
    let k = ((TAIL_TARGET / scale).ln() / (2.0 * rho.ln())).ceil();
    if !k.is_finite() || k < 1.0 {
        return n.max(1);
    }
    (k as usize).clamp(n.max(1), MAX_HORIZON)
}

fn frob_sq_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `Σ_{k≥0} ‖Ĉ Â^k B − C A^k B‖²_F`, truncated at `max(k, auto)`.
pub fn idealized_risk_time(est: &SystemParams, truth: &SystemParams, k: usize) -> Result<TimeRisk> {
    check_shapes(est, truth)?;
    let rho = stable_radius(est)?.max(stable_radius(truth)?);
    let n = est.n.max(truth.n);
    let tau1 = crate::acq::Cone::default().tau1;
    let horizon = k.max(auto_horizon(rho, n, tau1));
    let r_est = impulse_response(est, horizon);
    let r_true = impulse_response(truth, horizon);
    let value = r_est.iter().zip(&r_true).map(|(a, b)| frob_sq_diff(a, b)).sum();
    let c_mass: f64 = est.c.iter().chain(&truth.c).map(|v| v * v).sum();
    let tail_bound = 2.0 * c_mass * rho.powi(2 * horizon as i32) * n as f64
        / ((1.0 - rho * rho) * tau1 * tau1);
    Ok(TimeRisk { value, tail_bound, horizon })
}

/// Mean over `m` unit-circle points of `‖Ĝ − G‖²_F`; equal to the time-domain
/// sum by Parseval.
pub fn idealized_risk_freq(est: &SystemParams, truth: &SystemParams, m: usize) -> Result<f64> {
    check_shapes(est, truth)?;
    if m < 512 {
        return Err(Error::InvalidArgument(format!("frequency grid needs M ≥ 512, got {m}")));
    }
    stable_radius(est)?;
    stable_radius(truth)?;
    let mut total = 0.0;
    for z in unit_circle(m) {
        let ge = transfer_eval(est, z)?;
        let gt = transfer_eval(truth, z)?;
        total += ge.iter().zip(&gt).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
    }
    Ok(total / m as f64)
}

/// `‖D̂ − D‖² + Σ_{k=1}^{T−1} (1 − k/T) ‖r̂_{k−1} − r_{k−1}‖² + σ² ℓ_out`.
pub fn population_risk_closed(est: &SystemParams, truth: &SystemParams, t_len: usize, sigma: f64) -> Result<f64> {
    check_shapes(est, truth)?;
    if t_len == 0 {
        return Err(Error::InvalidArgument("T must be ≥ 1".into()));
    }
    let d_term = frob_sq_diff(&est.d, &truth.d);
    let r_est = impulse_response(est, t_len - 1);
    let r_true = impulse_response(truth, t_len - 1);
    let t = t_len as f64;
    let sum: f64 = (1..t_len)
        .map(|k| (1.0 - k as f64 / t) * frob_sq_diff(&r_est[k - 1], &r_true[k - 1]))
        .sum();
    Ok(d_term + sum + sigma * sigma * truth.l_out as f64)
}

/// Population risk at another sequence length.
pub fn longer_sequence_risk(est: &SystemParams, truth: &SystemParams, t_prime: usize, sigma: f64) -> Result<f64> {
    population_risk_closed(est, truth, t_prime, sigma)
}

fn check_traj(est: &SystemParams, traj: &Trajectory) -> Result<()> {
    if est.l_in != traj.l_in || est.l_out != traj.l_out {
        return Err(Error::DimensionMismatch("model and trajectory widths differ".into()));
    }
    Ok(())
}

/// `(1/(T−T1)) Σ_{t>T1} ‖ỹ_t − y_t‖²` with `ỹ` simulated from a zero state.
pub fn empirical_partial_loss(est: &SystemParams, traj: &Trajectory, t1: usize) -> Result<f64> {
    check_traj(est, traj)?;
    if t1 >= traj.t_len {
        return Err(Error::InvalidArgument(format!("T1 = {t1} must be below T = {}", traj.t_len)));
    }
    let sim = simulate(est, &traj.inputs, None, Noise::None)?;
    let start = t1 * traj.l_out;
    let sum = frob_sq_diff(&sim.outputs[start..], &traj.outputs[start..]);
    Ok(sum / (traj.t_len - t1) as f64)
}

/// `(1/T) Σ_t ‖ŷ_t − y_t‖²` with `ŷ` simulated from the recorded initial state.
pub fn empirical_full_loss(est: &SystemParams, traj: &Trajectory) -> Result<f64> {
    check_traj(est, traj)?;
    let h0 = traj.h0.as_deref().filter(|h| h.len() == est.state_dim());
    let sim = simulate(est, &traj.inputs, h0, Noise::None)?;
    Ok(frob_sq_diff(&sim.outputs, &traj.outputs) / traj.t_len as f64)
}

/// `2 · min_grid Re(p_a(z) / p_â(z))`.
pub fn wqc_margin(a_true: &[f64], a_est: &[f64], m: usize) -> Result<f64> {
    let p = char_poly(a_true)?;
    let p_hat = char_poly(a_est)?;
    let floor = 1e-12 * p_hat.coeff_norm();
    let mut worst = f64::INFINITY;
    for z in unit_circle(m) {
        let den = p_hat.eval(z);
        if den.norm() <= floor {
            return Err(Error::EstimatePoleOnCircle { angle: z.arg() });
        }
        worst = worst.min((p.eval(z) / den).re);
    }
    Ok(2.0 * worst)
}

/// Pointwise `Re(p_a(z)/p_â(z))` on the grid, used for reporting.
pub fn wqc_ratio_curve(a_true: &[f64], a_est: &[f64], m: usize) -> Result<Vec<Complex64>> {
    let p = char_poly(a_true)?;
    let p_hat = char_poly(a_est)?;
    Ok(unit_circle(m).into_iter().map(|z| p.eval(z) / p_hat.eval(z)).collect())
}

/// Central-difference gradient with step `h`.
pub fn central_difference<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = f(&probe)?;
        probe[i] = x[i] - h;
        let fm = f(&probe)?;
        probe[i] = x[i];
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WqcProbe {
    /// `⟨∇f(θ), θ − θ*⟩`.
    pub lhs: f64,
    /// `τ (f(θ) − f(θ*))`.
    pub rhs: f64,
    pub excess: f64,
    /// `‖∇f(θ)‖² / (f(θ) − f(θ*))`, infinite when the excess vanishes.
    pub smoothness_ratio: f64,
}

/// Evaluates both sides of `∇f(θ)ᵀ(θ − θ*) ≥ τ (f(θ) − f(θ*))` with a
/// finite-difference gradient.
pub fn wqc_inequality_probe<F>(f: F, theta: &[f64], theta_star: &[f64], tau: f64) -> Result<WqcProbe>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if theta.len() != theta_star.len() {
        return Err(Error::DimensionMismatch("θ and θ* lengths differ".into()));
    }
    let excess = f(theta)? - f(theta_star)?;
    if theta == theta_star {
        return Ok(WqcProbe { lhs: 0.0, rhs: 0.0, excess: 0.0, smoothness_ratio: f64::INFINITY });
    }
    let grad = central_difference(&f, theta, 1e-6)?;
    let lhs = grad.iter().zip(theta.iter().zip(theta_star)).map(|(g, (x, y))| g * (x - y)).sum();
    let gsq: f64 = grad.iter().map(|g| g * g).sum();
    let smoothness_ratio = if excess > 0.0 { gsq / excess } else { f64::INFINITY };
    Ok(WqcProbe { lhs, rhs: tau * excess, excess, smoothness_ratio })
}

impl RiskReport {
    /// Every risk of `est` against `truth`; `trajs` feeds the empirical
    /// partial loss with `T1 = ⌊T/4⌋`.
    pub fn compute(
        est: &SystemParams,
        truth: &SystemParams,
        t_len: usize,
        sigma: f64,
        trajs: &[Trajectory],
    ) -> Result<Self> {
        let time = idealized_risk_time(est, truth, 0)?;
        let idealized_freq = idealized_risk_freq(est, truth, 4096)?;
        let population = population_risk_closed(est, truth, t_len, sigma)?;
        let empirical = if trajs.is_empty() {
            None
        } else {
            let mut total = 0.0;
            for tr in trajs {
                total += empirical_partial_loss(est, tr, tr.t_len / 4)?;
            }
            Some(total / trajs.len() as f64)
        };
        Ok(RiskReport {
            idealized: time.value,
            idealized_freq,
            population,
            empirical,
            d_term: frob_sq_diff(&est.d, &truth.d),
            tail_bound: time.tail_bound,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::Polynomial;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(a: f64, c: f64, d: f64) -> SystemParams {
        SystemParams::siso(vec![a], vec![c], d).unwrap()
    }

    fn random_stable(rng: &mut ChaCha8Rng, n: usize, l_in: usize, l_out: usize, radius: f64) -> SystemParams {
        let mut roots = Vec::new();
        while roots.len() + 2 <= n {
            let z = Complex64::from_polar(radius * rng.random::<f64>().sqrt(), rng.random_range(0.0..std::f64::consts::PI));
            roots.push(z);
            roots.push(z.conj());
        }
        if roots.len() < n {
            roots.push(Complex64::new(rng.random_range(-radius..radius), 0.0));
        }
        let p = Polynomial::from_roots(&roots);
        let a = p.coeffs()[..n].iter().rev().copied().collect();
        let c = (0..l_out * n * l_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d = (0..l_out * l_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        SystemParams::new(a, c, d, l_in, l_out).unwrap()
    }

    #[test]
    fn idealized_examples() {
        let t = scalar(-0.5, 1.0, 0.0);
        let e = scalar(-0.5, 2.0, 0.0);
        assert_eq!(idealized_risk_time(&t, &t, 0).unwrap().value, 0.0);
        assert!((idealized_risk_time(&e, &t, 0).unwrap().value - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(idealized_risk_freq(&t, &t, 4096).unwrap(), 0.0);
        assert!((idealized_risk_freq(&e, &t, 4096).unwrap() - 4.0 / 3.0).abs() < 1e-6);
        assert!(matches!(
            idealized_risk_time(&scalar(-1.2, 1.0, 0.0), &t, 0),
            Err(Error::DivergentRisk { .. })
        ));
        assert!(idealized_risk_freq(&e, &t, 256).is_err());
    }

    #[test]
    fn freq_grid_refinement_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = random_stable(&mut rng, 4, 1, 1, 0.9);
        let t = random_stable(&mut rng, 4, 1, 1, 0.9);
        let v1 = idealized_risk_freq(&e, &t, 4096).unwrap();
        let v2 = idealized_risk_freq(&e, &t, 8192).unwrap();
        assert!((v1 - v2).abs() < 1e-8, "{v1} vs {v2}");
    }

    #[test]
    fn population_examples() {
        let t = scalar(-0.5, 1.0, 0.0);
        assert!((population_risk_closed(&t, &t, 50, 0.3).unwrap() - 0.09).abs() < 1e-15);
        let e = scalar(-0.5, 2.0, 0.7);
        assert!((population_risk_closed(&e, &t, 1, 0.2).unwrap() - (0.49 + 0.04)).abs() < 1e-15);
        let e = scalar(-0.5, 2.0, 0.0);
        assert!((population_risk_closed(&e, &t, 2, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(longer_sequence_risk(&e, &t, 9, 0.1).unwrap(), population_risk_closed(&e, &t, 9, 0.1).unwrap());
    }

    #[test]
    fn partial_loss_examples() {
        let sys = scalar(-0.5, 1.0, 0.3);
        let x: Vec<f64> = (0..12).map(|k| (k as f64).sin()).collect();
        let tr = simulate(&sys, &x, None, Noise::None).unwrap();
        assert_eq!(empirical_partial_loss(&sys, &tr, 3).unwrap(), 0.0);
        let mut shifted = tr.clone();
        shifted.outputs.iter_mut().for_each(|v| *v += 0.7);
        assert!((empirical_partial_loss(&sys, &shifted, 3).unwrap() - 0.49).abs() < 1e-12);
        assert!(empirical_partial_loss(&sys, &tr, 12).is_err());
    }

    #[test]
    fn wqc_margin_examples() {
        assert_eq!(wqc_margin(&[0.3, -0.1], &[0.3, -0.1], 512).unwrap(), 2.0);
        assert!(wqc_margin(&[0.0], &[0.99], 512).unwrap() > 0.0);
        assert!(wqc_margin(&[-1.7, 0.81], &[1.7, 0.81], 512).unwrap() < 0.0);
        assert!(matches!(wqc_margin(&[0.0], &[1.0], 512), Err(Error::EstimatePoleOnCircle { .. })));
    }

    #[test]
    fn wqc_probe_at_truth_is_zero() {
        let f = |x: &[f64]| -> Result<f64> { Ok(x.iter().map(|v| v * v).sum()) };
        let p = wqc_inequality_probe(f, &[0.5, 0.1], &[0.5, 0.1], 1.0).unwrap();
        assert_eq!((p.lhs, p.rhs), (0.0, 0.0));
    }

    #[test]
    fn report_at_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_stable(&mut rng, 3, 1, 1, 0.8);
        let r = RiskReport::compute(&t, &t, 64, 0.1, &[]).unwrap();
        assert_eq!(r.idealized, 0.0);
        assert!((r.population - 0.01).abs() < 1e-15);
        assert_eq!(r.empirical, None);
    }

    proptest! {
        #[test]
        fn parseval_identity(seed in any::<u64>(), n in 1usize..=6, mimo in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (li, lo) = if mimo { (2, 2) } else { (1, 1) };
            let e = random_stable(&mut rng, n, li, lo, 0.9);
            let t = random_stable(&mut rng, n, li, lo, 0.9);
            let time = idealized_risk_time(&e, &t, 0).unwrap().value;
            let freq = idealized_risk_freq(&e, &t, 4096).unwrap();
            prop_assert!((time - freq).abs() / time.max(1e-12) <= 1e-4);
        }

        #[test]
        fn population_excess_bounds(seed in any::<u64>(), n in 1usize..=5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e = random_stable(&mut rng, n, 1, 1, 0.9);
            let mut t = random_stable(&mut rng, n, 1, 1, 0.9);
            t.d = e.d.clone();
            let sigma = 0.2;
            let ideal = idealized_risk_time(&e, &t, 0).unwrap().value;
            let mut prev = 0.0;
            for len in [1, 2, 5, 10, 40, 200] {
                let excess = population_risk_closed(&e, &t, len, sigma).unwrap() - sigma * sigma;
                prop_assert!(excess >= prev - 1e-12);
                prop_assert!(excess <= ideal + 1e-12);
                prev = excess;
            }
        }
    }
}
