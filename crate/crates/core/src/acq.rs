//! Acquiescence: the cone `C(τ0, τ1, τ2)`, the sets `B_α`, their grid-polytope
//! relaxation with Euclidean projection, and structural validators.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::char_poly;

pub const PROJECTION_TOL: f64 = 1e-8;
pub const MAX_SWEEPS: usize = 100_000;
const POLISH_EVERY: usize = 50;

/// Grid size used when none is given: `max(20n, 64)`.
pub fn default_grid(n: usize) -> usize {
    (20 * n).max(64)
}

/// `{Re w ≥ (1+τ0)|Im w|} ∩ {τ1 < Re w < τ2}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConeRepr", into = "ConeRepr")]
pub struct Cone {
    pub tau0: f64,
    pub tau1: f64,
    pub tau2: f64,
}

#[derive(Serialize, Deserialize)]
struct ConeRepr {
    tau0: f64,
    tau1: f64,
    tau2: f64,
}

impl TryFrom<ConeRepr> for Cone {
    type Error = Error;
    fn try_from(r: ConeRepr) -> Result<Self> {
        Cone::new(r.tau0, r.tau1, r.tau2)
    }
}

impl From<Cone> for ConeRepr {
    fn from(c: Cone) -> Self {
        ConeRepr { tau0: c.tau0, tau1: c.tau1, tau2: c.tau2 }
    }
}

impl Default for Cone {
    fn default() -> Self {
        Cone { tau0: 0.1, tau1: 0.1, tau2: 10.0 }
    }
}

impl Cone {
    pub fn new(tau0: f64, tau1: f64, tau2: f64) -> Result<Self> {
        if !(tau0 > 0.0 && tau1 > 0.0 && tau2 > tau1 && tau2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "cone needs τ0 > 0, 0 < τ1 < τ2 < ∞ (got {tau0}, {tau1}, {tau2})"
            )));
        }
        Ok(Cone { tau0, tau1, tau2 })
    }

    /// Membership; the slope bound is non-strict, the real-part interval is
    /// open when `strict_interval` is set and closed otherwise.
    pub fn contains(&self, w: Complex64, strict_interval: bool) -> bool {
        let slope = w.re >= (1.0 + self.tau0) * w.im.abs();
        let interval = if strict_interval {
            self.tau1 < w.re && w.re < self.tau2
        } else {
            self.tau1 <= w.re && w.re <= self.tau2
        };
        slope && interval
    }

    /// Half-cone `C⁺ = {|w| ≤ τ2, Re w ≥ τ1, Re w ≥ τ0|Im w|}`.
    pub fn contains_plus(&self, w: Complex64) -> bool {
        w.norm() <= self.tau2 && w.re >= self.tau1 && w.re >= self.tau0 * w.im.abs()
    }

    /// Signed margins `[slope, lower, upper]`; all positive inside.
    pub fn margins(&self, w: Complex64) -> [f64; 3] {
        [
            w.re - (1.0 + self.tau0) * w.im.abs(),
            w.re - self.tau1,
            self.tau2 - w.re,
        ]
    }

    /// The relaxed cone `(τ0/2, τ1/2, 2τ2)`.
    pub fn relaxed(&self) -> Cone {
        Cone { tau0: self.tau0 / 2.0, tau1: self.tau1 / 2.0, tau2: 2.0 * self.tau2 }
    }

    /// Midpoints between this cone and its relaxation.
    pub fn sandwich_kappa(&self) -> Cone {
        Cone { tau0: 0.75 * self.tau0, tau1: 0.75 * self.tau1, tau2: 1.5 * self.tau2 }
    }
}

/// `q_a(w) = 1 + Σ_j a_j w^j`, equal to `p_a(z)/z^n` at `w = 1/z`.
pub fn q_eval(a: &[f64], w: Complex64) -> Complex64 {
    a.iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| (acc + c) * w)
        + 1.0
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AcqReport {
    pub member: bool,
    /// Minimum over the grid of each margin family `[slope, lower, upper]`.
    pub worst: [f64; 3],
    /// Angle θ of `z = αe^{iθ}` where the smallest margin occurs.
    pub worst_angle: f64,
    pub grid: usize,
}

/// Grid check of `p_a(z)/z^n ∈ C` on `m` points of the radius-`α` circle.
pub fn is_acquiescent(a: &[f64], alpha: f64, cone: &Cone, m: usize) -> Result<AcqReport> {
    if a.is_empty() {
        return Err(Error::InvalidArgument("empty coefficient vector".into()));
    }
    if !(alpha > 0.0) || m == 0 {
        return Err(Error::InvalidArgument("need α > 0 and a nonempty grid".into()));
    }
    let mut worst = [f64::INFINITY; 3];
    let mut member = true;
    let mut smallest = f64::INFINITY;
    let mut worst_angle = 0.0;
    for k in 0..m {
        let theta = 2.0 * PI * k as f64 / m as f64;
        let w = Complex64::from_polar(1.0 / alpha, -theta);
        let v = q_eval(a, w);
        let mg = cone.margins(v);
        for f in 0..3 {
            worst[f] = worst[f].min(mg[f]);
        }
        if !cone.contains(v, true) {
            member = false;
        }
        let lo = mg[0].min(mg[1]).min(mg[2]);
        if lo < smallest {
            smallest = lo;
            worst_angle = theta;
        }
    }
    Ok(AcqReport { member, worst, worst_angle, grid: m })
}

/// Largest root modulus of `p_a` is at most `α + 1e-8`.
pub fn spectral_radius_ok(a: &[f64], alpha: f64) -> Result<bool> {
    Ok(spectral_radius(a)? <= alpha + 1e-8)
}

pub fn spectral_radius(a: &[f64]) -> Result<f64> {
    Ok(char_poly(a)?.roots()?.max_modulus())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum BlowupStatus {
    Holds,
    /// `a ∉ B_α` on the default grid; the inequalities were not evaluated.
    PreconditionFailed,
    /// First step `k` at which an inequality failed.
    Violated { k: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlowupReport {
    pub status: BlowupStatus,
    /// `Σ_k ‖α^{−k} A^k B‖²`.
    pub scaled_sum: f64,
    /// `2πn α^{−2n} / τ1²`.
    pub scaled_bound: f64,
    /// `Σ_k ‖A^k B‖²`.
    pub plain_sum: f64,
}

impl BlowupReport {
    pub fn ok(&self) -> bool {
        self.status == BlowupStatus::Holds
    }
}

/// Checks `Σ_k ‖α^{−k}A^kB‖² ≤ 2πnα^{−2n}/τ1²` and the per-step envelope
/// `‖A^kB‖² ≤ min{2πn/τ1², 2πnα^{2k−2n}/τ1²}` for `k ≤ K`.
pub fn no_blowup_ok(a: &[f64], alpha: f64, cone: &Cone, k_max: usize) -> Result<BlowupReport> {
    let n = a.len();
    let scaled_bound = 2.0 * PI * n as f64 * alpha.powi(-2 * n as i32) / (cone.tau1 * cone.tau1);
    if !is_acquiescent(a, alpha, cone, default_grid(n))?.member {
        return Ok(BlowupReport {
            status: BlowupStatus::PreconditionFailed,
            scaled_sum: f64::NAN,
            scaled_bound,
            plain_sum: f64::NAN,
        });
    }
    let flat = 2.0 * PI * n as f64 / (cone.tau1 * cone.tau1);
    // u_k = α^{−k} A^k B, advanced with the companion shift.
    let mut u = vec![0.0; n];
    u[n - 1] = 1.0;
    let mut scaled_sum = 0.0;
    let mut plain_sum = 0.0;
    let mut status = BlowupStatus::Holds;
    for k in 0..=k_max {
        let s: f64 = u.iter().map(|v| v * v).sum();
        let plain = s * alpha.powi(2 * k as i32);
        scaled_sum += s;
        plain_sum += plain;
        let envelope_ok = plain <= flat * (1.0 + 1e-12) && s <= scaled_bound * (1.0 + 1e-12);
        if status == BlowupStatus::Holds && (!envelope_ok || scaled_sum > scaled_bound * (1.0 + 1e-12)) {
            status = BlowupStatus::Violated { k };
        }
        let last: f64 = -(0..n).map(|j| a[n - 1 - j] * u[j]).sum::<f64>();
        u.rotate_left(1);
        u[n - 1] = last;
        for v in u.iter_mut() {
            *v /= alpha;
        }
    }
    Ok(BlowupReport { status, scaled_sum, scaled_bound, plain_sum })
}

/// Half-space relaxation of `B_α`: four affine constraints `g·a ≤ h` per
/// grid point, written on `q_a(w)` with `w = e^{−iθ}/α`.
#[derive(Clone, Debug)]
pub struct AcqPolytope {
    n: usize,
    alpha: f64,
    cone: Cone,
    kappa: Cone,
    m: usize,
    normals: Vec<f64>,
    offsets: Vec<f64>,
    norms_sq: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolytopeExport {
    pub n: usize,
    pub alpha: f64,
    pub grid: usize,
    pub cone: Cone,
    pub kappa: Cone,
    pub angles: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Projection {
    pub point: Vec<f64>,
    pub moved: bool,
    pub sweeps: usize,
    /// Largest constraint violation at the returned point (≤ 0 when strictly feasible).
    pub max_violation: f64,
}

impl AcqPolytope {
    /// Polytope with the sandwich levels `κ = (0.75τ0, 0.75τ1, 1.5τ2)`.
    pub fn build(n: usize, alpha: f64, cone: &Cone, m: usize) -> Result<Self> {
        Self::with_kappa(n, alpha, cone, cone.sandwich_kappa(), m)
    }

    pub fn with_kappa(n: usize, alpha: f64, cone: &Cone, kappa: Cone, m: usize) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidArgument("polytope needs n ≥ 1 and M ≥ 1".into()));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("radius must be positive, got {alpha}")));
        }
        let mut normals = Vec::with_capacity(4 * m * n);
        let mut offsets = Vec::with_capacity(4 * m);
        let k0 = 1.0 + kappa.tau0;
        for k in 0..m {
            let theta = 2.0 * PI * k as f64 / m as f64;
            let w = Complex64::from_polar(1.0 / alpha, -theta);
            let mut pw = Complex64::new(1.0, 0.0);
            let powers: Vec<Complex64> = (0..n)
                .map(|_| {
                    pw *= w;
                    pw
                })
                .collect();
            normals.extend(powers.iter().map(|p| -p.re + k0 * p.im));
            offsets.push(1.0);
            normals.extend(powers.iter().map(|p| -p.re - k0 * p.im));
            offsets.push(1.0);
            normals.extend(powers.iter().map(|p| -p.re));
            offsets.push(1.0 - kappa.tau1);
            normals.extend(powers.iter().map(|p| p.re));
            offsets.push(kappa.tau2 - 1.0);
        }
        let norms_sq = normals.chunks(n).map(|g| g.iter().map(|v| v * v).sum()).collect();
        Ok(AcqPolytope { n, alpha, cone: *cone, kappa, m, normals, offsets, norms_sq })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn cone(&self) -> &Cone {
        &self.cone
    }

    pub fn kappa(&self) -> &Cone {
        &self.kappa
    }

    pub fn grid_size(&self) -> usize {
        self.m
    }

    pub fn num_constraints(&self) -> usize {
        self.offsets.len()
    }

    /// `(normal, offset)` of constraint `i`.
    pub fn halfspace(&self, i: usize) -> (&[f64], f64) {
        (&self.normals[i * self.n..(i + 1) * self.n], self.offsets[i])
    }

    /// `g_i·a − h_i` for every constraint.
    pub fn constraint_values(&self, a: &[f64]) -> Vec<f64> {
        (0..self.offsets.len()).map(|i| self.value(i, a)).collect()
    }

    fn value(&self, i: usize, a: &[f64]) -> f64 {
        let g = &self.normals[i * self.n..(i + 1) * self.n];
        g.iter().zip(a).map(|(g, a)| g * a).sum::<f64>() - self.offsets[i]
    }

    pub fn max_violation(&self, a: &[f64]) -> f64 {
        (0..self.offsets.len()).map(|i| self.value(i, a)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, a: &[f64], tol: f64) -> bool {
        a.len() == self.n && self.max_violation(a) <= tol
    }

    pub fn export(&self) -> PolytopeExport {
        PolytopeExport {
            n: self.n,
            alpha: self.alpha,
            grid: self.m,
            cone: self.cone,
            kappa: self.kappa,
            angles: (0..self.m).map(|k| 2.0 * PI * k as f64 / self.m as f64).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.export()).expect("polytope export is serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let e: PolytopeExport = serde_json::from_str(s)?;
        if e.angles.len() != e.grid {
            return Err(Error::Parse(format!(
                "grid size {} but {} angles",
                e.grid,
                e.angles.len()
            )));
        }
        if e.n > 4096 || e.grid > 1 << 20 || e.n.saturating_mul(e.grid) > 1 << 22 {
            return Err(Error::InvalidArgument("polytope too large".into()));
        }
        Self::with_kappa(e.n, e.alpha, &e.cone, e.kappa, e.grid)
    }

    /// Euclidean projection by dual coordinate ascent (Hildreth) with a
    /// periodic active-set polish; stops once the point is feasible within
    /// `tol` and the duality gap certifies distance `tol` to the minimizer.
    pub fn project(&self, a: &[f64], tol: f64) -> Result<Projection> {
        if a.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "projecting length {} onto order-{} polytope",
                a.len(),
                self.n
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite point".into()));
        }
        let start_viol = self.max_violation(a);
        if start_viol <= tol {
            return Ok(Projection { point: a.to_vec(), moved: false, sweeps: 0, max_violation: start_viol });
        }
        let rows = self.offsets.len();
        let mut lambda = vec![0.0; rows];
        let mut x = a.to_vec();
        for sweep in 1..=MAX_SWEEPS {
            for i in 0..rows {
                let viol = self.value(i, &x);
                let delta = (viol / self.norms_sq[i]).max(-lambda[i]);
                if delta != 0.0 {
                    lambda[i] += delta;
                    let g = &self.normals[i * self.n..(i + 1) * self.n];
                    for (xj, gj) in x.iter_mut().zip(g) {
                        *xj -= delta * gj;
                    }
                }
            }
            if lambda.iter().any(|l| *l > 1e15) {
                return Err(Error::Infeasible);
            }
            let viol = self.max_violation(&x);
            if viol <= tol {
                let gap: f64 = (0..rows).map(|i| -lambda[i] * self.value(i, &x)).sum();
                if (2.0 * gap.max(0.0)).sqrt() <= tol {
                    return Ok(Projection { point: x, moved: true, sweeps: sweep, max_violation: viol });
                }
            }
            if sweep % POLISH_EVERY == 0 || sweep == 1 {
                if let Some(y) = self.polish(a, &lambda, tol) {
                    let max_violation = self.max_violation(&y);
                    return Ok(Projection { point: y, moved: true, sweeps: sweep, max_violation });
                }
            }
        }
        Err(Error::ProjectionNotConverged { sweeps: MAX_SWEEPS, residual: self.max_violation(&x) })
    }

    /// Active-set refinement seeded with the largest multipliers. Keeps the
    /// working set linearly independent and returns a KKT point or `None`.
    fn polish(&self, a: &[f64], lambda: &[f64], tol: f64) -> Option<Vec<f64>> {
        let mut order: Vec<usize> = (0..lambda.len()).filter(|&i| lambda[i] > 0.0).collect();
        order.sort_by(|&i, &j| lambda[j].total_cmp(&lambda[i]));
        let mut work: Vec<usize> = Vec::new();
        for i in order {
            if work.len() == self.n {
                break;
            }
            if self.independent_of(&work, i) {
                work.push(i);
            }
        }
        for _ in 0..(4 * self.n + 16) {
            if work.is_empty() {
                return None;
            }
            let (y, mu) = self.equality_projection(a, &work)?;
            let scale = mu.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let (neg_idx, neg) = mu
                .iter()
                .enumerate()
                .fold((0, 0.0), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) });
            if neg < -1e-12 * scale {
                work.remove(neg_idx);
                continue;
            }
            let (worst, viol) = (0..self.offsets.len())
                .map(|i| (i, self.value(i, &y)))
                .fold((0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
            if viol > tol.min(1e-12) {
                if work.len() == self.n || !self.independent_of(&work, worst) {
                    return None;
                }
                work.push(worst);
                continue;
            }
            return Some(y);
        }
        None
    }

    fn independent_of(&self, set: &[usize], i: usize) -> bool {
        let n = self.n;
        let (gi, _) = self.halfspace(i);
        let mut r: Vec<f64> = gi.to_vec();
        let norm0 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        // Modified Gram-Schmidt against an orthonormal basis of the set.
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(set.len());
        for &j in set {
            let mut q = self.halfspace(j).0.to_vec();
            for b in &basis {
                let d: f64 = q.iter().zip(b).map(|(x, y)| x * y).sum();
                q.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
            let nq = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nq > 0.0 {
                basis.push(q.into_iter().map(|v| v / nq).collect());
            }
        }
        for b in &basis {
            let d: f64 = r.iter().zip(b).map(|(x, y)| x * y).sum();
            r.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        debug_assert_eq!(r.len(), n);
        r.iter().map(|v| v * v).sum::<f64>().sqrt() > 1e-8 * norm0
    }

    /// Projection onto `{g_i·y = h_i, i ∈ S}` and its minimum-norm multipliers.
    fn equality_projection(&self, a: &[f64], set: &[usize]) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = self.n;
        let g = DMatrix::from_fn(set.len(), n, |r, c| self.normals[set[r] * n + c]);
        let rhs = DVector::from_iterator(set.len(), set.iter().map(|&i| self.value(i, a)));
        let ggt = &g * g.transpose();
        let eps = 1e-12 * ggt.norm().max(1.0);
        let pinv = ggt.pseudo_inverse(eps).ok()?;
        let mu = pinv * rhs;
        let step = g.transpose() * &mu;
        let y: Vec<f64> = a.iter().zip(step.iter()).map(|(a, s)| a - s).collect();
        let resid = set.iter().map(|&i| self.value(i, &y).abs()).fold(0.0, f64::max);
        if !(resid <= 1e-9) {
            return None;
        }
        Some((y, mu.iter().copied().collect()))
    }

    /// Exact projection by enumerating every linearly independent subset of
    /// at most `n` constraints. Exponential; intended for `n ≤ 3`.
    pub fn project_enumerate(&self, a: &[f64]) -> Result<Vec<f64>> {
        if a.len() != self.n {
            return Err(Error::DimensionMismatch("point/polytope order".into()));
        }
        if self.n > 3 {
            return Err(Error::InvalidArgument("enumeration projection limited to n ≤ 3".into()));
        }
        if self.max_violation(a) <= 0.0 {
            return Ok(a.to_vec());
        }
        let rows = self.distinct_rows();
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut consider = |set: &[usize]| {
            if let Some((y, _)) = self.equality_projection(a, set) {
                let d: f64 = y.iter().zip(a).map(|(y, a)| (y - a).powi(2)).sum();
                if best.as_ref().is_none_or(|(bd, _)| d < *bd) && self.max_violation(&y) <= 1e-10 {
                    best = Some((d, y));
                }
            }
        };
        for (ii, &i) in rows.iter().enumerate() {
            consider(&[i]);
            if self.n >= 2 {
                for (jj, &j) in rows.iter().enumerate().skip(ii + 1) {
                    consider(&[i, j]);
                    if self.n >= 3 {
                        for &k in rows.iter().skip(jj + 1) {
                            consider(&[i, j, k]);
                        }
                    }
                }
            }
        }
        best.map(|(_, y)| y).ok_or(Error::Infeasible)
    }

    /// Indices of constraints with pairwise different `(g, h)` up to 1e-12.
    fn distinct_rows(&self) -> Vec<usize> {
        let mut keep: Vec<usize> = Vec::new();
        'outer: for i in 0..self.offsets.len() {
            let (gi, hi) = self.halfspace(i);
            for &j in &keep {
                let (gj, hj) = self.halfspace(j);
                if (hi - hj).abs() < 1e-12 && gi.iter().zip(gj).all(|(x, y)| (x - y).abs() < 1e-12) {
                    continue 'outer;
                }
            }
            keep.push(i);
        }
        keep
    }
}
