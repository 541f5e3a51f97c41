//! Linear systems in controllable canonical form (SISO and the MIMO
//! `CC(a) ⊗ I` form), simulation, impulse responses and transfer functions.
//!
//! Timing: `y_t = C h_{t−1} + D x_t + ξ_t`, then `h_t = A h_{t−1} + B x_t`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{char_poly, Polynomial};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRepr", into = "ParamsRepr")]
pub struct SystemParams {
    pub n: usize,
    pub l_in: usize,
    pub l_out: usize,
    /// `(a_1, …, a_n)`.
    pub a: Vec<f64>,
    /// Row-major `l_out × n·l_in`; column `j·l_in + i` is block `j`, input `i`.
    pub c: Vec<f64>,
    /// Row-major `l_out × l_in`.
    pub d: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamsRepr {
    n: usize,
    l_in: usize,
    l_out: usize,
    a: Vec<f64>,
    #[serde(rename = "C")]
    c: Vec<f64>,
    #[serde(rename = "D")]
    d: Vec<f64>,
}

impl TryFrom<ParamsRepr> for SystemParams {
    type Error = Error;
    fn try_from(r: ParamsRepr) -> Result<Self> {
        SystemParams::new(r.a, r.c, r.d, r.l_in, r.l_out).and_then(|p| {
            if p.n != r.n {
                Err(Error::DimensionMismatch(format!("n = {} but {} coefficients", r.n, p.n)))
            } else {
                Ok(p)
            }
        })
    }
}

impl From<SystemParams> for ParamsRepr {
    fn from(p: SystemParams) -> Self {
        ParamsRepr { n: p.n, l_in: p.l_in, l_out: p.l_out, a: p.a, c: p.c, d: p.d }
    }
}

impl SystemParams {
    pub fn new(a: Vec<f64>, c: Vec<f64>, d: Vec<f64>, l_in: usize, l_out: usize) -> Result<Self> {
        let n = a.len();
        if n == 0 || l_in == 0 || l_out == 0 {
            return Err(Error::DimensionMismatch("n, l_in and l_out must be positive".into()));
        }
        if n.checked_mul(l_in).and_then(|s| s.checked_mul(l_out)).is_none_or(|s| s > 1 << 24) {
            return Err(Error::DimensionMismatch("system dimensions too large".into()));
        }
        if c.len() != l_out * n * l_in {
            return Err(Error::DimensionMismatch(format!(
                "C has {} entries, expected {}×{}",
                c.len(),
                l_out,
                n * l_in
            )));
        }
        if d.len() != l_out * l_in {
            return Err(Error::DimensionMismatch(format!(
                "D has {} entries, expected {}×{}",
                d.len(),
                l_out,
                l_in
            )));
        }
        if a.iter().chain(&c).chain(&d).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        Ok(SystemParams { n, l_in, l_out, a, c, d })
    }

    pub fn siso(a: Vec<f64>, c: Vec<f64>, d: f64) -> Result<Self> {
        Self::new(a, c, vec![d], 1, 1)
    }

    pub fn zeros(n: usize, l_in: usize, l_out: usize) -> Result<Self> {
        Self::new(vec![0.0; n], vec![0.0; l_out * n * l_in], vec![0.0; l_out * l_in], l_in, l_out)
    }

    pub fn state_dim(&self) -> usize {
        self.n * self.l_in
    }

    pub fn is_siso(&self) -> bool {
        self.l_in == 1 && self.l_out == 1
    }

    pub fn char_poly(&self) -> Polynomial {
        char_poly(&self.a).expect("n ≥ 1 by construction")
    }

    /// `C[o, col]`.
    pub fn c_at(&self, o: usize, col: usize) -> f64 {
        self.c[o * self.state_dim() + col]
    }

    pub fn same_shape(&self, other: &SystemParams) -> bool {
        self.n == other.n && self.l_in == other.l_in && self.l_out == other.l_out
    }

    /// `h ← A h + B x` using the block-shift structure.
    pub fn step_state(&self, h: &mut [f64], x: &[f64]) {
        let (n, l) = (self.n, self.l_in);
        let mut last = vec![0.0; l];
        for j in 0..n {
            let coef = self.a[n - 1 - j];
            for i in 0..l {
                last[i] -= coef * h[j * l + i];
            }
        }
        h.copy_within(l.., 0);
        for i in 0..l {
            h[(n - 1) * l + i] = last[i] + x[i];
        }
    }

    /// `C h + D x`, written into `out`.
    pub fn output(&self, h: &[f64], x: &[f64], out: &mut [f64]) {
        let s = self.state_dim();
        for o in 0..self.l_out {
            let row = &self.c[o * s..(o + 1) * s];
            let mut v: f64 = row.iter().zip(h).map(|(c, h)| c * h).sum();
            for i in 0..self.l_in {
                v += self.d[o * self.l_in + i] * x[i];
            }
            out[o] = v;
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("parameters are serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Flat view `(a, C, D)` used for finite differences and distances.
    pub fn flatten(&self) -> Vec<f64> {
        self.a.iter().chain(&self.c).chain(&self.d).copied().collect()
    }

    pub fn unflatten(&self, v: &[f64]) -> Result<Self> {
        let (na, nc) = (self.a.len(), self.c.len());
        if v.len() != na + nc + self.d.len() {
            return Err(Error::DimensionMismatch("flat parameter length".into()));
        }
        Self::new(
            v[..na].to_vec(),
            v[na..na + nc].to_vec(),
            v[na + nc..].to_vec(),
            self.l_in,
            self.l_out,
        )
    }
}

/// `CC(a)`: ones on the superdiagonal, last row `[−a_n, …, −a_1]`.
pub fn companion(a: &[f64]) -> DMatrix<f64> {
    mimo_companion(a, 1)
}

/// `CC(a) ⊗ I_{l_in}`.
pub fn mimo_companion(a: &[f64], l_in: usize) -> DMatrix<f64> {
    let n = a.len();
    let s = n * l_in;
    let mut m = DMatrix::zeros(s, s);
    for j in 0..n.saturating_sub(1) {
        for i in 0..l_in {
            m[(j * l_in + i, (j + 1) * l_in + i)] = 1.0;
        }
    }
    for j in 0..n {
        for i in 0..l_in {
            m[((n - 1) * l_in + i, j * l_in + i)] = -a[n - 1 - j];
        }
    }
    m
}

/// `e_n ⊗ I_{l_in}`.
pub fn input_matrix(n: usize, l_in: usize) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(n * l_in, l_in);
    for i in 0..l_in {
        b[((n - 1) * l_in + i, i)] = 1.0;
    }
    b
}

/// One input/output sample; matrices are row-major with one row per step.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub inputs: Vec<f64>,
    pub outputs: Vec<f64>,
    pub t_len: usize,
    pub l_in: usize,
    pub l_out: usize,
    pub h0: Option<Vec<f64>>,
    pub noise_sigma: f64,
}

impl Trajectory {
    pub fn new(
        inputs: Vec<f64>,
        outputs: Vec<f64>,
        l_in: usize,
        l_out: usize,
        h0: Option<Vec<f64>>,
        noise_sigma: f64,
    ) -> Result<Self> {
        if l_in == 0 || l_out == 0 || !inputs.len().is_multiple_of(l_in) {
            return Err(Error::DimensionMismatch("input width".into()));
        }
        let t_len = inputs.len() / l_in;
        if t_len == 0 {
            return Err(Error::DimensionMismatch("trajectory length must be ≥ 1".into()));
        }
        if outputs.len() != t_len * l_out {
            return Err(Error::DimensionMismatch(format!(
                "{} inputs steps but {} output values for width {}",
                t_len,
                outputs.len(),
                l_out
            )));
        }
        if !(noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise sigma {noise_sigma}")));
        }
        Ok(Trajectory { inputs, outputs, t_len, l_in, l_out, h0, noise_sigma })
    }

    /// Input at step `t` (0-based).
    pub fn x(&self, t: usize) -> &[f64] {
        &self.inputs[t * self.l_in..(t + 1) * self.l_in]
    }

    pub fn y(&self, t: usize) -> &[f64] {
        &self.outputs[t * self.l_out..(t + 1) * self.l_out]
    }
}

pub enum Noise<'a> {
    None,
    /// Row-major `T × l_out`.
    Given(&'a [f64]),
    Gaussian { sigma: f64, rng: &'a mut dyn RngCore },
}

/// Runs the system on `inputs` (row-major `T × l_in`) from `h0` (zero if absent).
pub fn simulate(
    sys: &SystemParams,
    inputs: &[f64],
    h0: Option<&[f64]>,
    noise: Noise<'_>,
) -> Result<Trajectory> {
    if !inputs.len().is_multiple_of(sys.l_in) || inputs.is_empty() {
        return Err(Error::DimensionMismatch("inputs are not T × l_in".into()));
    }
    let t_len = inputs.len() / sys.l_in;
    let s = sys.state_dim();
    let mut h = match h0 {
        Some(h0) if h0.len() != s => {
            return Err(Error::DimensionMismatch(format!("h0 has {} entries, expected {s}", h0.len())))
        }
        Some(h0) => h0.to_vec(),
        None => vec![0.0; s],
    };
    let mut outputs = vec![0.0; t_len * sys.l_out];
    let mut sigma = 0.0;
    let mut noise = noise;
    if let Noise::Given(xi) = &noise {
        if xi.len() != outputs.len() {
            return Err(Error::DimensionMismatch("noise is not T × l_out".into()));
        }
    }
    if let Noise::Gaussian { sigma: sg, .. } = &noise {
        if !(*sg >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise sigma {sg}")));
        }
        sigma = *sg;
    }
    for t in 0..t_len {
        let x = &inputs[t * sys.l_in..(t + 1) * sys.l_in];
        let y = &mut outputs[t * sys.l_out..(t + 1) * sys.l_out];
        sys.output(&h, x, y);
        match &mut noise {
            Noise::None => {}
            Noise::Given(xi) => {
                for (o, v) in y.iter_mut().enumerate() {
                    *v += xi[t * sys.l_out + o];
                }
            }
            Noise::Gaussian { sigma, rng } => {
                for v in y.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v += *sigma * z;
                }
            }
        }
        sys.step_state(&mut h, x);
    }
    Trajectory::new(inputs.to_vec(), outputs, sys.l_in, sys.l_out, h0.map(<[f64]>::to_vec), sigma)
}

/// `r_k = C A^k B` for `k < K`, each row-major `l_out × l_in`.
pub fn impulse_response(sys: &SystemParams, k: usize) -> Vec<Vec<f64>> {
    let (l_in, l_out, s) = (sys.l_in, sys.l_out, sys.state_dim());
    let mut out = vec![vec![0.0; l_out * l_in]; k];
    let zero = vec![0.0; l_in];
    for i in 0..l_in {
        let mut v = vec![0.0; s];
        v[(sys.n - 1) * l_in + i] = 1.0;
        for r in out.iter_mut() {
            for o in 0..l_out {
                let row = &sys.c[o * s..(o + 1) * s];
                r[o * l_in + i] = row.iter().zip(&v).map(|(c, v)| c * v).sum();
            }
            sys.step_state(&mut v, &zero);
        }
    }
    out
}

/// `C (zI − A)^{-1} B` (no feedthrough), row-major `l_out × l_in`.
pub fn transfer_eval(sys: &SystemParams, z: Complex64) -> Result<Vec<Complex64>> {
    let p = sys.char_poly();
    let pz = p.eval(z);
    let scale: f64 = p
        .coeffs()
        .iter()
        .enumerate()
        .map(|(k, c)| c.abs() * z.norm().powi(k as i32))
        .sum();
    if pz.norm() <= 1e-14 * scale {
        return Err(Error::Pole { re: z.re, im: z.im });
    }
    let (n, l_in, l_out) = (sys.n, sys.l_in, sys.l_out);
    let mut out = vec![Complex64::new(0.0, 0.0); l_out * l_in];
    for o in 0..l_out {
        for i in 0..l_in {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in (0..n).rev() {
                acc = acc * z + sys.c_at(o, j * l_in + i);
            }
            out[o * l_in + i] = acc / pz;
        }
    }
    Ok(out)
}

/// Common-denominator transfer matrix `S(z)/p(z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferFunction {
    /// Row-major `l_out × l_in` numerators.
    pub numerators: Vec<Polynomial>,
    pub denominator: Polynomial,
    pub l_in: usize,
    pub l_out: usize,
}

impl TransferFunction {
    pub fn eval(&self, z: Complex64) -> Result<Vec<Complex64>> {
        let pz = self.denominator.eval(z);
        if pz.norm() == 0.0 {
            return Err(Error::Pole { re: z.re, im: z.im });
        }
        Ok(self.numerators.iter().map(|s| s.eval(z) / pz).collect())
    }
}

pub fn to_transfer(sys: &SystemParams) -> TransferFunction {
    let mut numerators = Vec::with_capacity(sys.l_out * sys.l_in);
    for o in 0..sys.l_out {
        for i in 0..sys.l_in {
            let coeffs = (0..sys.n).map(|j| sys.c_at(o, j * sys.l_in + i)).collect();
            numerators.push(Polynomial::new(coeffs));
        }
    }
    TransferFunction { numerators, denominator: sys.char_poly(), l_in: sys.l_in, l_out: sys.l_out }
}

/// Realizes a strictly proper common-denominator transfer matrix plus feedthrough `d`.
pub fn from_transfer(tf: &TransferFunction, d: &[f64]) -> Result<SystemParams> {
    let p = &tf.denominator;
    let n = p.degree();
    if n == 0 {
        return Err(Error::ConstantPolynomial);
    }
    if !p.is_monic() {
        return Err(Error::NotMonic { leading: p.leading() });
    }
    if tf.numerators.len() != tf.l_in * tf.l_out {
        return Err(Error::DimensionMismatch("numerator count".into()));
    }
    let s = n * tf.l_in;
    let mut c = vec![0.0; tf.l_out * s];
    for o in 0..tf.l_out {
        for i in 0..tf.l_in {
            let num = &tf.numerators[o * tf.l_in + i];
            if !num.is_zero() && num.degree() >= n {
                return Err(Error::ImproperRational { num: num.degree(), den: n });
            }
            for (j, &v) in num.coeffs().iter().enumerate() {
                c[o * s + j * tf.l_in + i] = v;
            }
        }
    }
    let a = p.coeffs()[..n].iter().rev().copied().collect();
    SystemParams::new(a, c, d.to_vec(), tf.l_in, tf.l_out)
}

/// `max_grid |G − G'|` for `G = (z^n − b_num)/((z − 0.1)(z^n − b_den))` and
/// `G' = 1/(z − 0.1)` on `grid` unit-circle points.
pub fn min_representation_gap(n: usize, b_num: f64, b_den: f64, grid: usize) -> Result<f64> {
    let zn_num = Polynomial::monomial(n).sub(&Polynomial::constant(b_num));
    let zn_den = Polynomial::monomial(n).sub(&Polynomial::constant(b_den));
    let pole = Polynomial::new(vec![-0.1, 1.0]);
    let mut worst: f64 = 0.0;
    for z in crate::poly::unit_circle(grid) {
        let den = pole.eval(z) * zn_den.eval(z);
        if den.norm() == 0.0 {
            return Err(Error::Pole { re: z.re, im: z.im });
        }
        let g = zn_num.eval(z) / den;
        let g_prime = pole.eval(z).inv();
        worst = worst.max((g - g_prime).norm());
    }
    Ok(worst)
}

const MAGIC: &[u8; 8] = b"LDSTRAJ1";

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV with header `t,x_1..,y_1..`; `# noise_sigma=` and `# h0=` comment
/// lines carry the metadata.
pub fn trajectory_to_csv(traj: &Trajectory) -> String {
    let mut s = format!("# noise_sigma={}\n", fmt_f64(traj.noise_sigma));
    if let Some(h0) = &traj.h0 {
        let vals: Vec<String> = h0.iter().map(|v| fmt_f64(*v)).collect();
        s.push_str(&format!("# h0={}\n", vals.join(";")));
    }
    let mut header = vec!["t".to_string()];
    header.extend((1..=traj.l_in).map(|i| format!("x_{i}")));
    header.extend((1..=traj.l_out).map(|i| format!("y_{i}")));
    s.push_str(&header.join(","));
    s.push('\n');
    for t in 0..traj.t_len {
        let mut row = vec![(t + 1).to_string()];
        row.extend(traj.x(t).iter().map(|v| fmt_f64(*v)));
        row.extend(traj.y(t).iter().map(|v| fmt_f64(*v)));
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn parse_f64(s: &str) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| Error::Parse(format!("bad number {s:?}")))?;
    if !v.is_finite() {
        return Err(Error::Parse(format!("non-finite value {s:?}")));
    }
    Ok(v)
}

pub fn trajectory_from_csv(text: &str) -> Result<Trajectory> {
    let mut sigma = 0.0;
    let mut h0 = None;
    let mut body = String::with_capacity(text.len());
    for line in text.lines() {
        if let Some(meta) = line.strip_prefix('#') {
            let meta = meta.trim();
            if let Some(v) = meta.strip_prefix("noise_sigma=") {
                sigma = parse_f64(v)?;
            } else if let Some(v) = meta.strip_prefix("h0=") {
                let vals = if v.trim().is_empty() {
                    Vec::new()
                } else {
                    v.split(';').map(parse_f64).collect::<Result<Vec<_>>>()?
                };
                h0 = Some(vals);
            }
        } else {
            body.push_str(line);
            body.push('\n');
        }
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.get(0) != Some("t") {
        return Err(Error::Parse("first column must be t".into()));
    }
    let l_in = headers.iter().filter(|h| h.starts_with("x_")).count();
    let l_out = headers.iter().filter(|h| h.starts_with("y_")).count();
    if l_in + l_out + 1 != headers.len() {
        return Err(Error::Parse("columns must be t, x_*, y_*".into()));
    }
    for (k, h) in headers.iter().skip(1).enumerate() {
        let expect = if k < l_in { format!("x_{}", k + 1) } else { format!("y_{}", k - l_in + 1) };
        if h != expect {
            return Err(Error::Parse(format!("unexpected column {h:?}, wanted {expect}")));
        }
    }
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    for (row_idx, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(Error::Parse(format!("row {} has {} fields", row_idx + 1, rec.len())));
        }
        let t: usize = rec[0].parse().map_err(|_| Error::Parse(format!("bad step {:?}", &rec[0])))?;
        if t != row_idx + 1 {
            return Err(Error::Parse(format!("step {t} out of order")));
        }
        for k in 0..l_in {
            inputs.push(parse_f64(&rec[1 + k])?);
        }
        for k in 0..l_out {
            outputs.push(parse_f64(&rec[1 + l_in + k])?);
        }
    }
    Trajectory::new(inputs, outputs, l_in, l_out, h0, sigma)
}

/// Header `LDSTRAJ1`, `u32 T`, `u16 l_in`, `u16 l_out`, then `f64 σ`,
/// `u32 |h0|`, the `h0` values and the columns `x_1.., y_1..` (all LE).
pub fn trajectory_to_binary(traj: &Trajectory) -> Result<Vec<u8>> {
    let t = u32::try_from(traj.t_len).map_err(|_| Error::InvalidArgument("T exceeds u32".into()))?;
    let l_in = u16::try_from(traj.l_in).map_err(|_| Error::InvalidArgument("l_in exceeds u16".into()))?;
    let l_out = u16::try_from(traj.l_out).map_err(|_| Error::InvalidArgument("l_out exceeds u16".into()))?;
    let h0 = traj.h0.as_deref().unwrap_or(&[]);
    let mut out = Vec::with_capacity(28 + 8 * (h0.len() + traj.inputs.len() + traj.outputs.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&t.to_le_bytes());
    out.extend_from_slice(&l_in.to_le_bytes());
    out.extend_from_slice(&l_out.to_le_bytes());
    out.extend_from_slice(&traj.noise_sigma.to_le_bytes());
    let h0_len = if traj.h0.is_some() { h0.len() as u32 + 1 } else { 0 };
    out.extend_from_slice(&h0_len.to_le_bytes());
    for v in h0 {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for i in 0..traj.l_in {
        for step in 0..traj.t_len {
            out.extend_from_slice(&traj.x(step)[i].to_le_bytes());
        }
    }
    for o in 0..traj.l_out {
        for step in 0..traj.t_len {
            out.extend_from_slice(&traj.y(step)[o].to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(k).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Parse("truncated trajectory".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f64(&mut self) -> Result<f64> {
        let v = f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        if !v.is_finite() {
            return Err(Error::Parse("non-finite value".into()));
        }
        Ok(v)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
}

pub fn trajectory_from_binary(buf: &[u8]) -> Result<Trajectory> {
    let mut cur = Cursor { buf, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(Error::Parse("missing LDSTRAJ1 header".into()));
    }
    let t_len = cur.u32()? as usize;
    let l_in = cur.u16()? as usize;
    let l_out = cur.u16()? as usize;
    let sigma = cur.f64()?;
    // Stored as |h0| + 1 so that 0 means "no recorded state".
    let h0_tag = cur.u32()? as usize;
    let h0_len = h0_tag.saturating_sub(1);
    let data = t_len
        .checked_mul(l_in + l_out)
        .and_then(|v| v.checked_add(h0_len))
        .and_then(|v| v.checked_mul(8));
    if data != Some(buf.len() - cur.pos) {
        return Err(Error::Parse("payload length does not match header".into()));
    }
    let h0 = if h0_tag == 0 {
        None
    } else {
        Some((0..h0_len).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?)
    };
    let mut inputs = vec![0.0; t_len * l_in];
    let mut outputs = vec![0.0; t_len * l_out];
    for i in 0..l_in {
        for step in 0..t_len {
            inputs[step * l_in + i] = cur.f64()?;
        }
    }
    for o in 0..l_out {
        for step in 0..t_len {
            outputs[step * l_out + o] = cur.f64()?;
        }
    }
    Trajectory::new(inputs, outputs, l_in, l_out, h0, sigma)
}
