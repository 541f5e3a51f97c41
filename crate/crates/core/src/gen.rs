//! Synthetic teachers and data: random acquiescent systems, random-roots
//! polynomials, the artificial construction and trajectory sampling.

use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acq::{default_grid, is_acquiescent, Cone};
use crate::error::{Error, Result};
use crate::lds::{simulate, to_transfer, Noise, SystemParams, Trajectory};
use crate::poly::{h2_norm, Polynomial, RootSet};

pub const REJECTION_CAP: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    GaussianCoeff,
    L1Ball,
    RandomRoots,
    Artificial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputDist {
    #[default]
    Gaussian,
    Rademacher,
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "scale")]
pub enum H0Policy {
    #[default]
    Zero,
    Gaussian(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub n: usize,
    pub alpha: f64,
    pub strategy: Strategy,
    #[serde(default)]
    pub input_dist: InputDist,
    pub sigma: f64,
    pub t_len: usize,
    pub count: usize,
    pub seed: u64,
    #[serde(default = "one")]
    pub l_in: usize,
    #[serde(default = "one")]
    pub l_out: usize,
    #[serde(default)]
    pub h0: H0Policy,
}

fn one() -> usize {
    1
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.l_in == 0 || self.l_out == 0 || self.t_len == 0 {
            return Err(Error::InvalidArgument("n, l_in, l_out and T must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!("α must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("σ must be ≥ 0, got {}", self.sigma)));
        }
        if let H0Policy::Gaussian(s) = self.h0 {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::InvalidArgument(format!("h0 scale {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub params: SystemParams,
    pub attempts: usize,
}

impl Generated {
    pub fn acceptance_rate(&self) -> f64 {
        1.0 / self.attempts as f64
    }
}

/// Default standard deviation of Gaussian coefficients, `0.1/√(n ln(n+1))`.
pub fn gaussian_coeff_scale(n: usize) -> f64 {
    0.1 / (n as f64 * (n as f64 + 1.0).ln()).sqrt()
}

/// ℓ1 radius whose ball lies inside `B_α` for `cone`: the largest disk around
/// 1 inside the cone, shrunk by `α^n`, and never above `√2/2`.
pub fn l1_radius(n: usize, alpha: f64, cone: &Cone) -> f64 {
    let disk = (1.0 / (1.0 + (1.0 + cone.tau0).powi(2)).sqrt())
        .min(1.0 - cone.tau1)
        .min(cone.tau2 - 1.0);
    (SQRT_2 / 2.0).min(disk * alpha.powi(n as i32))
}

fn l1_ball_point<R: Rng + ?Sized>(rng: &mut R, n: usize, radius: f64) -> Vec<f64> {
    // Uniform in the simplex-with-slack, then random signs.
    let e: Vec<f64> = (0..=n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = e.iter().sum();
    e[..n]
        .iter()
        .map(|v| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * radius * v / total
        })
        .collect()
}

/// Random `a ∈ B_α` by rejection sampling, with `C` scaled to `‖G‖_H2 = 1`
/// and standard normal `D`.
pub fn random_acquiescent<R: Rng + ?Sized>(
    n: usize,
    alpha: f64,
    cone: &Cone,
    strategy: Strategy,
    l_in: usize,
    l_out: usize,
    rng: &mut R,
) -> Result<Generated> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be ≥ 1".into()));
    }
    let m = default_grid(n);
    let mut attempts = 0;
    let a = loop {
        if attempts == REJECTION_CAP {
            return Err(Error::RejectionCapExceeded { attempts, acceptance_rate: 0.0 });
        }
        attempts += 1;
        let a = match strategy {
            Strategy::GaussianCoeff => {
                let s = gaussian_coeff_scale(n);
                (0..n).map(|_| s * { let v: f64 = StandardNormal.sample(rng); v }).collect::<Vec<f64>>()
            }
            Strategy::L1Ball => l1_ball_point(rng, n, l1_radius(n, alpha, cone)),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "{other:?} is not a rejection-sampling strategy"
                )))
            }
        };
        if is_acquiescent(&a, alpha, cone, m)?.member {
            break a;
        }
    };
    let params = teacher_from_coefficients(a, l_in, l_out, rng)?;
    Ok(Generated { params, attempts })
}

/// Teacher with the given `a`, `C` standard normal rescaled to unit H2 norm
/// and standard normal `D`.
pub fn teacher_from_coefficients<R: Rng + ?Sized>(
    a: Vec<f64>,
    l_in: usize,
    l_out: usize,
    rng: &mut R,
) -> Result<SystemParams> {
    let n = a.len();
    let c: Vec<f64> = (0..l_out * n * l_in).map(|_| StandardNormal.sample(rng)).collect();
    let d: Vec<f64> = (0..l_out * l_in).map(|_| StandardNormal.sample(rng)).collect();
    let mut sys = SystemParams::new(a, c, d, l_in, l_out)?;
    let norm = system_h2_norm(&sys)?;
    if norm == 0.0 {
        return Err(Error::InvalidArgument("zero transfer function cannot be normalized".into()));
    }
    sys.c.iter_mut().for_each(|v| *v /= norm);
    Ok(sys)
}

/// `‖G‖_H2` of the strictly proper part, summed over all channels.
pub fn system_h2_norm(sys: &SystemParams) -> Result<f64> {
    let tf = to_transfer(sys);
    let mut total = 0.0;
    for num in &tf.numerators {
        total += h2_norm(num, &tf.denominator)?.powi(2);
    }
    Ok(total.sqrt())
}

#[derive(Clone, Debug)]
pub struct RandomRootsPoly {
    pub poly: Polynomial,
    pub roots: Vec<Complex64>,
    pub gamma: f64,
    pub h2: f64,
}

/// Monic degree-`2·n_half` polynomial with conjugate root pairs at uniform
/// angles on the radius-`α` circle.
pub fn random_roots_poly<R: Rng + ?Sized>(n_half: usize, alpha: f64, rng: &mut R) -> Result<RandomRootsPoly> {
    if n_half == 0 {
        return Err(Error::InvalidArgument("n_half must be ≥ 1".into()));
    }
    let mut roots = Vec::with_capacity(2 * n_half);
    for _ in 0..n_half {
        let z = Complex64::from_polar(alpha, rng.random_range(0.0..PI));
        roots.push(z);
        roots.push(z.conj());
    }
    let poly = Polynomial::from_roots(&roots);
    let gamma = RootSet::new(roots.clone()).gamma().unwrap_or(f64::INFINITY);
    let h2 = poly.coeff_norm();
    Ok(RandomRootsPoly { poly, roots, gamma, h2 })
}

/// `p(z) = z³ Π_{j∉{1,n−1,n}} (z − αω^j)` and `u(z) = (z − αω)(z − α)(z − αω̄)`,
/// so that `p(z)u(z) = z³(z^n − α^n)`.
pub fn artificial_construction(n: usize, alpha: f64) -> Result<(Polynomial, Polynomial)> {
    if n < 4 {
        return Err(Error::InvalidArgument(format!("artificial construction needs n ≥ 4, got {n}")));
    }
    let omega = |j: usize| Complex64::from_polar(alpha, 2.0 * PI * j as f64 / n as f64);
    let mut roots = vec![Complex64::new(0.0, 0.0); 3];
    roots.extend((2..n - 1).map(omega));
    let p = Polynomial::from_roots(&roots);
    let u = Polynomial::from_roots(&[omega(1), Complex64::new(alpha, 0.0), omega(1).conj()]);
    Ok((p, u))
}

/// `a = (a_1, …, a_n)` of a monic polynomial.
pub fn coefficients_of(p: &Polynomial) -> Result<Vec<f64>> {
    if !p.is_monic() {
        return Err(Error::NotMonic { leading: p.leading() });
    }
    let n = p.degree();
    Ok(p.coeffs()[..n].iter().rev().copied().collect())
}

fn draw_input<R: Rng + ?Sized>(rng: &mut R, dist: InputDist) -> f64 {
    match dist {
        InputDist::Gaussian => StandardNormal.sample(rng),
        InputDist::Rademacher => {
            if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            }
        }
    }
}

/// One trajectory of length `t_len` driven by i.i.d. inputs.
pub fn sample_trajectory<R: Rng + ?Sized>(
    sys: &SystemParams,
    t_len: usize,
    sigma: f64,
    input_dist: InputDist,
    h0: H0Policy,
    rng: &mut R,
) -> Result<Trajectory> {
    let x: Vec<f64> = (0..t_len * sys.l_in).map(|_| draw_input(rng, input_dist)).collect();
    let h0 = match h0 {
        H0Policy::Zero => vec![0.0; sys.state_dim()],
        H0Policy::Gaussian(s) => (0..sys.state_dim())
            .map(|_| s * { let v: f64 = StandardNormal.sample(rng); v })
            .collect(),
    };
    let noise: Vec<f64> = (0..t_len * sys.l_out)
        .map(|_| sigma * { let v: f64 = StandardNormal.sample(rng); v })
        .collect();
    let mut tr = simulate(sys, &x, Some(&h0), Noise::Given(&noise))?;
    tr.noise_sigma = sigma;
    Ok(tr)
}

/// RNG for item `index` of a run seeded with `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `spec.count` independent trajectories; trajectory `i` uses stream `i` of
/// `spec.seed`, so the output does not depend on scheduling.
pub fn sample_trajectories(sys: &SystemParams, spec: &GenSpec) -> Result<Vec<Trajectory>> {
    spec.validate()?;
    if sys.l_in != spec.l_in || sys.l_out != spec.l_out {
        return Err(Error::DimensionMismatch("teacher widths differ from the generator settings".into()));
    }
    (0..spec.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(spec.seed, i as u64 + 1);
            sample_trajectory(sys, spec.t_len, spec.sigma, spec.input_dist, spec.h0, &mut rng)
        })
        .collect()
}

/// Monte-Carlo mean of `ln|x − ρ|` for `x` uniform on the radius-`r` circle.
pub fn log_distance_expectation(rho: f64, r: f64, trials: usize, seed: u64) -> f64 {
    const CHUNKS: usize = 64;
    let per = trials.div_ceil(CHUNKS);
    let sums: Vec<(f64, usize)> = (0..CHUNKS)
        .into_par_iter()
        .map(|c| {
            let count = per.min(trials.saturating_sub(c * per));
            let mut rng = stream_rng(seed, c as u64);
            let lambda = Complex64::new(rho, 0.0);
            let s: f64 = (0..count)
                .map(|_| (Complex64::from_polar(r, rng.random_range(0.0..2.0 * PI)) - lambda).norm().ln())
                .sum();
            (s, count)
        })
        .collect();
    let (s, k) = sums.into_iter().fold((0.0, 0), |(a, b), (c, d)| (a + c, b + d));
    s / k as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acq::spectral_radius_ok;
    use crate::poly::unit_circle;

    fn spec(n: usize) -> GenSpec {
        GenSpec {
            n,
            alpha: 0.9,
            strategy: Strategy::L1Ball,
            input_dist: InputDist::Gaussian,
            sigma: 0.1,
            t_len: 32,
            count: 8,
            seed: 7,
            l_in: 1,
            l_out: 1,
            h0: H0Policy::Zero,
        }
    }

    #[test]
    fn l1_first_order_always_accepted() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let g = random_acquiescent(1, 1.0, &Cone::default(), Strategy::L1Ball, 1, 1, &mut rng).unwrap();
            assert_eq!(g.attempts, 1);
            assert!(g.params.a[0].abs() <= SQRT_2 / 2.0);
        }
    }

    #[test]
    fn generated_teachers_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for strategy in [Strategy::L1Ball, Strategy::GaussianCoeff] {
            for (n, li, lo) in [(1, 1, 1), (3, 1, 1), (4, 2, 2)] {
                let g = random_acquiescent(n, 0.9, &Cone::default(), strategy, li, lo, &mut rng).unwrap();
                assert!(is_acquiescent(&g.params.a, 0.9, &Cone::default(), default_grid(n)).unwrap().member);
                assert!(spectral_radius_ok(&g.params.a, 0.9).unwrap());
                let h2 = system_h2_norm(&g.params).unwrap();
                assert!((h2 - 1.0).abs() <= 1e-9, "{h2}");
            }
        }
        assert!(random_acquiescent(2, 0.9, &Cone::default(), Strategy::Artificial, 1, 1, &mut rng).is_err());
    }

    #[test]
    fn random_roots_pair_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = random_roots_poly(1, 0.8, &mut rng).unwrap();
        let theta = r.roots[0].arg();
        let expect = [0.64, -1.6 * theta.cos(), 1.0];
        for (x, y) in r.poly.coeffs().iter().zip(expect) {
            assert!((x - y).abs() < 1e-12);
        }
        for k in 1..=10 {
            let r = random_roots_poly(k, 0.9, &mut rng).unwrap();
            for root in r.poly.roots().unwrap().as_slice() {
                assert!((root.norm() - 0.9).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn artificial_identity_small() {
        for n in [4, 8, 12, 20] {
            for alpha in [0.3, 0.5, 0.9] {
                let (p, u) = artificial_construction(n, alpha).unwrap();
                assert_eq!(p.degree(), n);
                assert_eq!(u.degree(), 3);
                let pu = p.mul(&u);
                for z in unit_circle(1024) {
                    let lhs = pu.eval(z) / z.powi(n as i32 + 3);
                    let rhs = 1.0 - alpha.powi(n as i32) / z.powi(n as i32);
                    assert!((lhs - rhs).norm() <= 1e-9);
                }
            }
        }
        assert!(artificial_construction(3, 0.5).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_zero_safe() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sys = random_acquiescent(2, 0.9, &Cone::default(), Strategy::L1Ball, 1, 1, &mut rng).unwrap().params;
        let a = sample_trajectories(&sys, &spec(2)).unwrap();
        let b = sample_trajectories(&sys, &spec(2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);

        let zero = SystemParams::zeros(2, 1, 1).unwrap();
        let tr = simulate(&zero, &[0.0; 16], None, Noise::None).unwrap();
        assert!(tr.outputs.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn log_distance_degenerate_case() {
        assert!(log_distance_expectation(0.0, 1.0, 1000, 1).abs() < 1e-15);
    }
}
