//! Real-coefficient polynomials, their roots, and the root-based constructions
//! used by improper learning (partial fractions, inverse approximation,
//! square-root extension).
//!
//! Coefficients are stored constant term first: `coeffs[k]` multiplies `z^k`.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::acq::Cone;
use crate::error::{Error, Result};

/// Pairwise root distance below which roots are treated as repeated.
pub const DISTINCT_ROOT_TOL: f64 = 1e-9;

/// Default number of unit-circle points for H2 quadrature.
pub const H2_GRID: usize = 4096;

const MONIC_TOL: f64 = 1e-12;

/// `m` uniformly spaced points `e^{2πik/m}` on the unit circle.
pub fn unit_circle(m: usize) -> Vec<Complex64> {
    circle(1.0, m)
}

pub fn circle(radius: f64, m: usize) -> Vec<Complex64> {
    (0..m)
        .map(|k| Complex64::from_polar(radius, 2.0 * PI * k as f64 / m as f64))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    /// Builds a polynomial, dropping exact trailing zeros of the leading end.
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.len() > 1 && coeffs[coeffs.len() - 1] == 0.0 {
            coeffs.pop();
        }
        if coeffs.is_empty() {
            coeffs.push(0.0);
        }
        Polynomial { coeffs }
    }

    pub fn zero() -> Self {
        Polynomial { coeffs: vec![0.0] }
    }

    pub fn constant(c: f64) -> Self {
        Polynomial::new(vec![c])
    }

    /// `z^k`.
    pub fn monomial(k: usize) -> Self {
        let mut coeffs = vec![0.0; k + 1];
        coeffs[k] = 1.0;
        Polynomial { coeffs }
    }

    /// Monic polynomial `Π (z − λ)`; imaginary parts of the expanded
    /// coefficients are discarded, so `roots` should be conjugate-closed.
    pub fn from_roots(roots: &[Complex64]) -> Self {
        let mut acc = vec![Complex64::new(1.0, 0.0)];
        for &r in roots {
            let mut next = vec![Complex64::new(0.0, 0.0); acc.len() + 1];
            for (k, &c) in acc.iter().enumerate() {
                next[k + 1] += c;
                next[k] -= c * r;
            }
            acc = next;
        }
        Polynomial::new(acc.into_iter().map(|c| c.re).collect())
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn leading(&self) -> f64 {
        self.coeffs[self.coeffs.len() - 1]
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.len() == 1 && self.coeffs[0] == 0.0
    }

    pub fn is_monic(&self) -> bool {
        (self.leading() - 1.0).abs() <= MONIC_TOL
    }

    /// Divides through by the leading coefficient.
    pub fn monic(&self) -> Self {
        self.scale(1.0 / self.leading())
    }

    pub fn scale(&self, s: f64) -> Self {
        Polynomial::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    pub fn add(&self, other: &Polynomial) -> Self {
        let len = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..len)
            .map(|k| self.coeffs.get(k).unwrap_or(&0.0) + other.coeffs.get(k).unwrap_or(&0.0))
            .collect();
        Polynomial::new(coeffs)
    }

    pub fn sub(&self, other: &Polynomial) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Polynomial) -> Self {
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Polynomial::new(out)
    }

    /// Multiplies by `z^k`.
    pub fn shift(&self, k: usize) -> Self {
        let mut coeffs = vec![0.0; k];
        coeffs.extend_from_slice(&self.coeffs);
        Polynomial::new(coeffs)
    }

    pub fn pow(&self, k: usize) -> Self {
        (0..k).fold(Polynomial::constant(1.0), |acc, _| acc.mul(self))
    }

    pub fn derivative(&self) -> Self {
        if self.coeffs.len() == 1 {
            return Polynomial::zero();
        }
        Polynomial::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| k as f64 * c)
                .collect(),
        )
    }

    /// Horner evaluation at a complex point.
    pub fn eval(&self, z: Complex64) -> Complex64 {
        self.coeffs
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
    }

    pub fn eval_real(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    /// Euclidean norm of the coefficient vector.
    pub fn coeff_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("polynomial serialization is infallible")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// All roots with multiplicity, as eigenvalues of the companion matrix
    /// followed by a few guarded Newton steps on the polynomial itself.
    pub fn roots(&self) -> Result<RootSet> {
        let n = self.degree();
        if n == 0 {
            return Err(Error::ConstantPolynomial);
        }
        let monic = self.monic();
        let c = monic.coeffs();

        let zeros = c.iter().take_while(|&&x| x == 0.0).count();
        let mut roots = vec![Complex64::new(0.0, 0.0); zeros];
        let reduced = &c[zeros..];
        let m = reduced.len() - 1;
        match m {
            0 => {}
            1 => roots.push(Complex64::new(-reduced[0], 0.0)),
            _ => {
                let mut comp = DMatrix::<f64>::zeros(m, m);
                for i in 0..m - 1 {
                    comp[(i, i + 1)] = 1.0;
                }
                for j in 0..m {
                    comp[(m - 1, j)] = -reduced[j];
                }
                let schur = Schur::try_new(comp, 1e-15, 100_000).ok_or(Error::EigenFailure)?;
                let eig = schur.complex_eigenvalues();
                let reduced_poly = Polynomial::new(reduced.to_vec());
                let dp = reduced_poly.derivative();
                for &z0 in eig.iter() {
                    roots.push(newton_polish(&reduced_poly, &dp, z0));
                }
            }
        }
        Ok(RootSet::new_conjugate_paired(roots))
    }

    /// Γ(p) = Σ_j |λ_j^n / Π_{i≠j}(λ_i − λ_j)|, the root-separation quantity.
    pub fn gamma_quantity(&self) -> Result<f64> {
        self.roots()?.gamma()
    }

    /// Partial-fraction weights of `1/p` for a monic `p` with distinct roots.
    pub fn partial_fractions(&self) -> Result<PartialFractions> {
        if !self.is_monic() {
            return Err(Error::NotMonic { leading: self.leading() });
        }
        let roots = self.roots()?;
        roots.ensure_distinct()?;
        let poles = roots.into_vec();
        let weights = (0..poles.len())
            .map(|j| {
                let prod: Complex64 = (0..poles.len())
                    .filter(|&i| i != j)
                    .map(|i| poles[j] - poles[i])
                    .product();
                prod.inv()
            })
            .collect();
        Ok(PartialFractions { poles, weights })
    }
    /// Monic degree-`d` polynomial `h` approximating `z^{n+d}/p(z)` on the unit
    /// circle, built from the nonnegative Fourier coefficients of `z^{n+d}/p`.
    pub fn inverse_approx(&self, d: usize) -> Result<Polynomial> {
        let pf = self.partial_fractions()?;
        let radius = pf.max_pole_modulus();
        if radius >= 1.0 {
            return Err(Error::Unstable { radius });
        }
        let n = self.degree();
        let m = n + d;
        let mut beta = vec![0.0; d + 1];
        for (k, b) in beta.iter_mut().enumerate().take(d) {
            let exp = (m - k - 1) as i32;
            let s: Complex64 = pf
                .poles
                .iter()
                .zip(&pf.weights)
                .map(|(l, t)| t * l.powi(exp))
                .sum();
            *b = s.re;
        }
        beta[d] = 1.0;
        Ok(Polynomial::new(beta))
    }

    /// Square-root extension for a strictly input-passive denominator: returns
    /// `u` with `p·u/z^{deg(pu)}` inside a (certified) acquiescence cone.
    ///
    /// `u` is `z^{nk}` times the `k`-term binomial series of `(p/z^n)^{-1/2}`
    /// expanded around `τ2`, rescaled to be monic.
    pub fn sqrt_extension(&self, cone: &Cone, k_terms: usize) -> Result<SqrtExtension> {
        const GRID: usize = 512;
        let n = self.degree();
        let grid = unit_circle(GRID);
        for z in &grid {
            let w = self.eval(*z) / z.powi(n as i32);
            if !cone.contains_plus(w) {
                return Err(Error::NotPassiveOnGrid { angle: z.arg() });
            }
        }

        let tau2 = cone.tau2;
        // x(z) = p(z)/(τ2 z^n) − 1 = q(z) / (τ2 z^n)
        let q = self.sub(&Polynomial::monomial(n).scale(tau2));
        let mut raw = Polynomial::zero();
        let mut binom = 1.0;
        let mut q_pow = Polynomial::constant(1.0);
        for j in 0..=k_terms {
            let term = q_pow.shift(n * (k_terms - j)).scale(binom / tau2.powi(j as i32));
            raw = raw.add(&term);
            binom *= (-0.5 - j as f64) / (j as f64 + 1.0);
            q_pow = q_pow.mul(&q);
        }
        let raw = raw.scale(tau2.powf(-0.5));
        let scale = raw.leading();
        if !(scale.abs() > 1e-300) || raw.is_zero() {
            return Err(Error::NotCertified("vanishing leading coefficient".into()));
        }
        let u = raw.scale(1.0 / scale);

        let norm_pow = (n + u.degree()) as i32;
        let pu = self.mul(&u);
        let mut max_deviation: f64 = 0.0;
        let (mut lo, mut hi, mut slope) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY);
        for z in &grid {
            let w = self.eval(*z) / z.powi(n as i32);
            let raw_val = w * raw.eval(*z) / z.powi((n * k_terms) as i32);
            max_deviation = max_deviation.max((raw_val - w.sqrt()).norm());
            let v = pu.eval(*z) / z.powi(norm_pow);
            lo = lo.min(v.re);
            hi = hi.max(v.re);
            if v.im != 0.0 {
                slope = slope.min(v.re / v.im.abs());
            }
        }
        let tau0 = (slope - 1.0).min(1e12);
        if !(lo > 0.0) || !(tau0 > 0.0) {
            return Err(Error::NotCertified(format!(
                "min Re {lo}, min Re/|Im| {slope}"
            )));
        }
        let certified = Cone::new(tau0 * (1.0 - 1e-9), lo * (1.0 - 1e-9), hi * (1.0 + 1e-9))?;
        Ok(SqrtExtension { u, scale, certified, max_deviation })
    }

    /// Extension degree suggested by the separated-roots bound,
    /// `max{log(√n Γ ‖p‖_H2)/(1 − α), 0}` with unit constant. Reported only.
    pub fn suggested_extension_degree(&self) -> Result<usize> {
        let roots = self.roots()?;
        let alpha = roots.max_modulus();
        if alpha >= 1.0 {
            return Err(Error::Unstable { radius: alpha });
        }
        let gamma = self.gamma_quantity()?;
        let n = self.degree() as f64;
        let v = (n.sqrt() * gamma * self.coeff_norm()).ln() / (1.0 - alpha);
        Ok(if v.is_finite() && v > 0.0 { v.ceil() as usize } else { 0 })
    }
}

fn newton_polish(p: &Polynomial, dp: &Polynomial, mut z: Complex64) -> Complex64 {
    let mut fz = p.eval(z).norm();
    for _ in 0..8 {
        let d = dp.eval(z);
        if d.norm() < 1e-300 || fz == 0.0 {
            break;
        }
        let cand = z - p.eval(z) / d;
        let fc = p.eval(cand).norm();
        if fc < fz {
            z = cand;
            fz = fc;
        } else {
            break;
        }
    }
    z
}

impl TryFrom<Vec<f64>> for Polynomial {
    type Error = Error;

    fn try_from(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Parse("empty coefficient array".into()));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Parse("non-finite coefficient".into()));
        }
        Ok(Polynomial::new(coeffs))
    }
}

impl From<Polynomial> for Vec<f64> {
    fn from(p: Polynomial) -> Self {
        p.coeffs
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (k, &c) in self.coeffs.iter().enumerate().rev() {
            if c == 0.0 && !(first && k == 0) {
                continue;
            }
            if !first {
                write!(f, " {} ", if c < 0.0 { '-' } else { '+' })?;
            } else if c < 0.0 {
                write!(f, "-")?;
            }
            let a = c.abs();
            match k {
                0 => write!(f, "{a}")?,
                1 if a == 1.0 => write!(f, "z")?,
                1 => write!(f, "{a}z")?,
                _ if a == 1.0 => write!(f, "z^{k}")?,
                _ => write!(f, "{a}z^{k}")?,
            }
            first = false;
        }
        Ok(())
    }
}

/// `p_a(z) = z^n + a_1 z^{n−1} + … + a_n`, the characteristic polynomial of
/// the companion matrix built from `a = (a_1, …, a_n)`.
pub fn char_poly(a: &[f64]) -> Result<Polynomial> {
    if a.is_empty() {
        return Err(Error::InvalidArgument("empty coefficient vector".into()));
    }
    let mut coeffs: Vec<f64> = a.iter().rev().copied().collect();
    coeffs.push(1.0);
    Ok(Polynomial::new(coeffs))
}

/// Roots of a real polynomial; non-real roots come in conjugate pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct RootSet {
    roots: Vec<Complex64>,
}

impl RootSet {
    pub fn new(roots: Vec<Complex64>) -> Self {
        RootSet { roots }
    }

    /// Snaps near-real roots to the axis and matches the rest into exact
    /// conjugate pairs.
    fn new_conjugate_paired(mut roots: Vec<Complex64>) -> Self {
        for r in roots.iter_mut() {
            if r.im.abs() <= 1e-14 * r.norm().max(1.0) {
                r.im = 0.0;
            }
        }
        let (mut upper, rest): (Vec<_>, Vec<_>) = roots.into_iter().partition(|r| r.im > 0.0);
        let (mut lower, real): (Vec<_>, Vec<_>) = rest.into_iter().partition(|r| r.im < 0.0);
        let mut out = real;
        if upper.len() == lower.len() {
            upper.sort_by(|a, b| a.re.total_cmp(&b.re));
            for u in upper.drain(..) {
                let (idx, _) = lower
                    .iter()
                    .enumerate()
                    .min_by(|(_, a), (_, b)| {
                        (u - a.conj()).norm().total_cmp(&(u - b.conj()).norm())
                    })
                    .expect("equal counts");
                let l = lower.swap_remove(idx);
                let avg = (u + l.conj()) * 0.5;
                out.push(avg);
                out.push(avg.conj());
            }
        } else {
            out.extend(upper);
            out.extend(lower);
        }
        RootSet { roots: out }
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.roots
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.roots
    }

    pub fn len(&self) -> usize {
        self.roots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }

    pub fn max_modulus(&self) -> f64 {
        self.roots.iter().map(|r| r.norm()).fold(0.0, f64::max)
    }

    pub fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.roots.len() {
            for j in i + 1..self.roots.len() {
                best = best.min((self.roots[i] - self.roots[j]).norm());
            }
        }
        best
    }

    pub fn ensure_distinct(&self) -> Result<()> {
        let separation = self.min_separation();
        if separation <= DISTINCT_ROOT_TOL {
            return Err(Error::RepeatedRoots { separation });
        }
        Ok(())
    }

    /// `Σ_j |λ_j^n / Π_{i≠j}(λ_i − λ_j)|` with `n` the number of roots.
    pub fn gamma(&self) -> Result<f64> {
        self.ensure_distinct()?;
        let r = &self.roots;
        let n = r.len() as i32;
        Ok((0..r.len())
            .map(|j| {
                let denom: f64 = (0..r.len())
                    .filter(|&i| i != j)
                    .map(|i| (r[i] - r[j]).norm())
                    .product();
                r[j].norm().powi(n) / denom
            })
            .sum())
    }

    /// Monic polynomial with exactly these roots.
    pub fn expand(&self) -> Polynomial {
        Polynomial::from_roots(&self.roots)
    }
}

/// `1/p(z) = Σ_j t_j / (z − λ_j)`.
#[derive(Clone, Debug)]
pub struct PartialFractions {
    pub poles: Vec<Complex64>,
    pub weights: Vec<Complex64>,
}

impl PartialFractions {
    pub fn eval(&self, z: Complex64) -> Complex64 {
        self.poles
            .iter()
            .zip(&self.weights)
            .map(|(l, t)| t / (z - l))
            .sum()
    }

    pub fn max_pole_modulus(&self) -> f64 {
        self.poles.iter().map(|r| r.norm()).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct SqrtExtension {
    /// Monic multiplier.
    pub u: Polynomial,
    /// Leading coefficient divided out of the raw series polynomial.
    pub scale: f64,
    /// Cone containing `p·u/z^{deg(pu)}` on the 512-point grid.
    pub certified: Cone,
    /// Grid sup of `|p·u_raw/z^{n+nk} − √(p/z^n)|` for the unnormalized series.
    pub max_deviation: f64,
}

/// H2 norm of the scalar rational function `num/den` by trapezoid quadrature
/// on `grid` unit-circle points.
pub fn h2_norm_with_grid(num: &Polynomial, den: &Polynomial, grid: usize) -> Result<f64> {
    if den.is_zero() {
        return Err(Error::InvalidArgument("zero denominator".into()));
    }
    if den.degree() >= 1 {
        let radius = den.roots()?.max_modulus();
        if radius > 1.0 - 1e-6 {
            return Err(Error::Unstable { radius });
        }
    }
    if grid == 0 {
        return Err(Error::InvalidArgument("empty quadrature grid".into()));
    }
    let sum: f64 = unit_circle(grid)
        .into_iter()
        .map(|z| (num.eval(z) / den.eval(z)).norm_sqr())
        .sum();
    Ok((sum / grid as f64).sqrt())
}

pub fn h2_norm(num: &Polynomial, den: &Polynomial) -> Result<f64> {
    h2_norm_with_grid(num, den, H2_GRID)
}
