//! The transform `I_S` at the real place: bump test functions, the partial
//! Fourier transform in the `(1,2)` entry, nested quadrature for
//!
//! `int dt/|t|^3 int_V V(|det T|) f1(T) f2(-t1, (b det T - t1 t2)/t; t, t2) psi(<alpha, v>/t) dv/|det T|^2`
//!
//! and probes of its decay in `alpha`.
//!
//! The quadrature integrates over `(t, d = det T)` on the outside. For fixed
//! `(t, d)` the `f2` factor only sees `(t1, t2)`, and the `T` integral runs over
//! the level set `det T = d`, parametrized by three free entries with the
//! fourth solved from `d`. This needs one entry of `f1` to have support away from 0.

use crate::error::{Error, Result};
use crate::geometry::{pairing, VPoint};
use crate::sum::tree_sum;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::OnceLock;

/// `psi_inf(x) = e^{-2 pi i x}`, the real component of the standard character of `Q \ A`.
pub fn psi_inf(x: f64) -> Complex64 {
    Complex64::from_polar(1.0, -2.0 * PI * x)
}

const BUMP_TABLE_ORDER: usize = 16;

/// Numerator polynomials: `d^k/dy^k exp(-1/(1-y^2)) = p_k(y) / (1-y^2)^{2k} * exp(-1/(1-y^2))`,
/// with `p_{k+1} = p_k' (1-y^2)^2 + 4 k y (1-y^2) p_k - 2 y p_k`.
fn bump_polys() -> &'static Vec<Vec<f64>> {
    static TABLE: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mul = |a: &[f64], b: &[f64]| {
            let mut out = vec![0.0; a.len() + b.len() - 1];
            for (i, x) in a.iter().enumerate() {
                for (j, y) in b.iter().enumerate() {
                    out[i + j] += x * y;
                }
            }
            out
        };
        let add = |a: &[f64], b: &[f64]| {
            let mut out = vec![0.0; a.len().max(b.len())];
            for (i, x) in a.iter().enumerate() {
                out[i] += x;
            }
            for (i, x) in b.iter().enumerate() {
                out[i] += x;
            }
            out
        };
        let u = [1.0, 0.0, -1.0];
        let u2 = mul(&u, &u);
        let mut polys = vec![vec![1.0]];
        for k in 0..BUMP_TABLE_ORDER {
            let p = &polys[k];
            let dp: Vec<f64> = if p.len() > 1 {
                p.iter().enumerate().skip(1).map(|(i, c)| i as f64 * c).collect()
            } else {
                vec![0.0]
            };
            let a = mul(&dp, &u2);
            let b = mul(&mul(&[0.0, 4.0 * k as f64], &u), p);
            let c = mul(&[0.0, -2.0], p);
            polys.push(add(&add(&a, &b), &c));
        }
        polys
    })
}

/// `scale * exp(-1/(1-y^2))` at `y = (x - center)/radius`, zero for `|y| >= 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpFunction {
    pub center: f64,
    pub radius: f64,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl BumpFunction {
    pub fn new(center: f64, radius: f64, scale: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite() && center.is_finite() && scale.is_finite()) {
            return Err(Error::Invalid(format!("bump with center {center}, radius {radius}")));
        }
        Ok(Self { center, radius, scale })
    }

    pub fn support(&self) -> (f64, f64) {
        (self.center - self.radius, self.center + self.radius)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let y = (x - self.center) / self.radius;
        if y.abs() >= 1.0 {
            return 0.0;
        }
        self.scale * (-1.0 / (1.0 - y * y)).exp()
    }

    /// The `k`-th derivative, `k <= 16`.
    pub fn derivative(&self, x: f64, k: usize) -> f64 {
        assert!(k <= BUMP_TABLE_ORDER, "derivative order {k} above {BUMP_TABLE_ORDER}");
        let y = (x - self.center) / self.radius;
        if y.abs() >= 1.0 {
            return 0.0;
        }
        let u = 1.0 - y * y;
        let p = bump_polys()[k].iter().rev().fold(0.0, |acc, c| acc * y + c);
        self.scale * p / u.powi(2 * k as i32) * (-1.0 / u).exp() / self.radius.powi(k as i32)
    }
}

/// Number of widths beyond which a Gaussian profile is treated as zero
/// (`exp(-49 pi)` is below `1e-66`).
pub const GAUSSIAN_CUTOFF: f64 = 7.0;

/// One entry of a product test function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    Bump(BumpFunction),
    /// `exp(-pi ((x - center)/width)^2)`.
    Gaussian { center: f64, width: f64 },
    Constant { value: f64 },
}

impl Profile {
    pub fn bump(center: f64, radius: f64) -> Self {
        Profile::Bump(BumpFunction { center, radius, scale: 1.0 })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Profile::Bump(b) => b.eval(x),
            Profile::Gaussian { center, width } => {
                let y = (x - center) / width;
                if y.abs() > GAUSSIAN_CUTOFF {
                    0.0
                } else {
                    (-PI * y * y).exp()
                }
            }
            Profile::Constant { value } => value,
        }
    }

    /// Closed interval outside which the profile vanishes; `None` if unbounded.
    pub fn support(&self) -> Option<Interval> {
        match *self {
            Profile::Bump(b) => {
                let (lo, hi) = b.support();
                Some(Interval::new(lo, hi))
            }
            Profile::Gaussian { center, width } => Some(Interval::new(
                center - GAUSSIAN_CUTOFF * width,
                center + GAUSSIAN_CUTOFF * width,
            )),
            Profile::Constant { value } if value == 0.0 => Some(Interval::new(0.0, 0.0)),
            Profile::Constant { .. } => None,
        }
    }

    /// `int phi(x) psi_inf(x xi) dx` where known in closed form.
    pub fn fourier_closed(&self, xi: f64) -> Option<Complex64> {
        match *self {
            Profile::Gaussian { center, width } => {
                Some(psi_inf(center * xi) * width * (-PI * width * width * xi * xi).exp())
            }
            _ => None,
        }
    }
}

/// Closed real interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo: lo.min(hi), hi: lo.max(hi) }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains_zero(&self) -> bool {
        self.lo <= 0.0 && self.hi >= 0.0
    }

    pub fn abs_max(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    /// Smallest `|x|` on the interval.
    pub fn abs_min(&self) -> f64 {
        if self.contains_zero() {
            0.0
        } else {
            self.lo.abs().min(self.hi.abs())
        }
    }

    pub fn intersect(&self, o: &Interval) -> Option<Interval> {
        let lo = self.lo.max(o.lo);
        let hi = self.hi.min(o.hi);
        (lo < hi).then_some(Interval { lo, hi })
    }

    pub fn hull(&self, o: &Interval) -> Interval {
        Interval::new(self.lo.min(o.lo), self.hi.max(o.hi))
    }

    pub fn add(&self, o: &Interval) -> Interval {
        Interval::new(self.lo + o.lo, self.hi + o.hi)
    }

    pub fn sub(&self, o: &Interval) -> Interval {
        Interval::new(self.lo - o.hi, self.hi - o.lo)
    }

    pub fn mul(&self, o: &Interval) -> Interval {
        let c = [self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi];
        Interval::new(
            c.iter().copied().fold(f64::INFINITY, f64::min),
            c.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    }

    pub fn scale(&self, k: f64) -> Interval {
        Interval::new(self.lo * k, self.hi * k)
    }

    /// `None` if the divisor contains 0.
    pub fn div(&self, o: &Interval) -> Option<Interval> {
        if o.contains_zero() {
            return None;
        }
        Some(self.mul(&Interval::new(1.0 / o.hi, 1.0 / o.lo)))
    }
}

/// A linear combination of entrywise products on `gl_2(R)`, entries ordered
/// `a11, a12, a21, a22`, optionally times a window in the determinant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixTestFn {
    pub terms: Vec<(f64, [Profile; 4])>,
    #[serde(default)]
    pub det_window: Option<BumpFunction>,
    /// Evaluate `int_{R_{>0}} f(z A) dz^x`, which is invariant under positive scalars.
    #[serde(default)]
    pub central_average: bool,
}

impl MatrixTestFn {
    pub fn product(entries: [Profile; 4]) -> Self {
        Self {
            terms: vec![(1.0, entries)],
            det_window: None,
            central_average: false,
        }
    }

    /// Product of bumps with the given centers and a common radius.
    pub fn bumps(centers: [f64; 4], radius: f64) -> Self {
        Self::product(centers.map(|c| Profile::bump(c, radius)))
    }

    pub fn plus(&self, coef: f64, other: &MatrixTestFn) -> Result<Self> {
        if self.det_window != other.det_window || self.central_average != other.central_average {
            return Err(Error::Invalid("sum of test functions with different windows".into()));
        }
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().map(|(c, e)| (coef * c, *e)));
        Ok(Self { terms, ..self.clone() })
    }

    pub fn scaled(&self, coef: f64) -> Self {
        Self {
            terms: self.terms.iter().map(|(c, e)| (coef * c, *e)).collect(),
            ..self.clone()
        }
    }

    pub fn with_det_window(mut self, w: BumpFunction) -> Self {
        self.det_window = Some(w);
        self
    }

    pub fn averaged(mut self) -> Self {
        self.central_average = true;
        self
    }

    fn eval_plain(&self, a: &[f64; 4]) -> f64 {
        let det = a[0] * a[3] - a[1] * a[2];
        let w = self.det_window.map_or(1.0, |w| w.eval(det));
        if w == 0.0 {
            return 0.0;
        }
        let s: f64 = self
            .terms
            .iter()
            .map(|(c, e)| c * e[0].eval(a[0]) * e[1].eval(a[1]) * e[2].eval(a[2]) * e[3].eval(a[3]))
            .sum();
        w * s
    }

    /// Value at the matrix with entries `a = (a11, a12, a21, a22)`.
    pub fn eval(&self, a: &[f64; 4]) -> f64 {
        if !self.central_average {
            return self.eval_plain(a);
        }
        // z ranges over the scalars moving every bounded entry into its support
        let mut lo = -20.0f64;
        let mut hi = 20.0f64;
        for i in 0..4 {
            if let Some(s) = self.entry_support(i) {
                if a[i] == 0.0 {
                    if !s.contains_zero() {
                        return 0.0;
                    }
                    continue;
                }
                let r = s.scale(1.0 / a[i]);
                if r.hi <= 0.0 {
                    return 0.0;
                }
                lo = lo.max(r.lo.max(1e-300).ln());
                hi = hi.min(r.hi.ln());
            }
        }
        if lo >= hi {
            return 0.0;
        }
        let n = 400;
        let h = (hi - lo) / n as f64;
        let vals: Vec<f64> = (0..n)
            .map(|k| {
                let z = (lo + (k as f64 + 0.5) * h).exp();
                self.eval_plain(&a.map(|x| z * x))
            })
            .collect();
        tree_sum(&vals) * h
    }

    /// Hull of the supports of entry `i` over all terms.
    pub fn entry_support(&self, i: usize) -> Option<Interval> {
        let mut out: Option<Interval> = None;
        for (_, e) in &self.terms {
            let s = e[i].support()?;
            out = Some(out.map_or(s, |o| o.hull(&s)));
        }
        out
    }
}

/// Grid and safeguards for the nested quadrature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Nodes on the `t` axis.
    pub n_t: usize,
    /// Nodes on the `det T` axis, per sign.
    pub n_d: usize,
    /// Nodes on each free entry of `T`.
    pub n_x: usize,
    /// Nodes on each of `t1`, `t2`.
    pub n_v: usize,
    /// `|t| < excision` is left out and bounded separately.
    pub excision: f64,
    /// Minimum number of nodes per period of the phase.
    pub points_per_period: f64,
    /// The constant `zeta_{F_S}^infty(1)` dividing the transform.
    pub normalization: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            n_t: 24,
            n_d: 24,
            n_x: 24,
            n_v: 24,
            excision: 1e-3,
            points_per_period: 8.0,
            normalization: 1.0,
        }
    }
}

impl QuadratureSpec {
    pub fn uniform(n: usize) -> Self {
        Self {
            n_t: n,
            n_d: n,
            n_x: n,
            n_v: n,
            ..Self::default()
        }
    }

    pub fn refined(&self, factor: usize) -> Self {
        Self {
            n_t: self.n_t * factor,
            n_d: self.n_d * factor,
            n_x: self.n_x * factor,
            n_v: self.n_v * factor,
            ..*self
        }
    }

    pub fn halved(&self) -> Self {
        Self {
            n_t: (self.n_t / 2).max(1),
            n_d: (self.n_d / 2).max(1),
            n_x: (self.n_x / 2).max(1),
            n_v: (self.n_v / 2).max(1),
            ..*self
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_t == 0 || self.n_d == 0 || self.n_x == 0 || self.n_v == 0 {
            return Err(Error::Invalid("quadrature grids need at least one node".into()));
        }
        if !(self.excision >= 0.0 && self.normalization > 0.0 && self.points_per_period > 0.0) {
            return Err(Error::Invalid("bad quadrature safeguards".into()));
        }
        Ok(())
    }
}

/// `chi_inf(t) |t|^s` with `chi_inf = sign^parity |.|^{i tau}`; the default is
/// the trivial character at `s = -2`, where `|t|^s dt^x = dt/|t|^3`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchTwist {
    pub odd: bool,
    pub tau: f64,
    pub s: f64,
}

impl Default for ArchTwist {
    fn default() -> Self {
        Self { odd: false, tau: 0.0, s: -2.0 }
    }
}

impl ArchTwist {
    /// Density against `dt`.
    fn weight(&self, t: f64) -> Complex64 {
        let sign = if self.odd && t < 0.0 { -1.0 } else { 1.0 };
        let a = t.abs();
        Complex64::from_polar(sign * a.powf(self.s - 1.0), self.tau * a.ln())
    }
}

/// The test data `(f1, f2, V, b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchData {
    pub f1: MatrixTestFn,
    pub f2: MatrixTestFn,
    pub v: BumpFunction,
    pub b: f64,
}

impl ArchData {
    /// `f1` near the identity, `f2` near `(-1, 0; 1, 1)`, `V` around 1, `b = 1`,
    /// all entries bumps of radius 1/2.
    pub fn standard() -> Self {
        Self {
            f1: MatrixTestFn::bumps([1.0, 0.0, 0.0, 1.0], 0.5),
            f2: MatrixTestFn::bumps([-1.0, 0.0, 1.0, 1.0], 0.5),
            v: BumpFunction::new(1.0, 0.6, 1.0).expect("valid radius"),
            b: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchValue {
    pub value: Complex64,
    pub error: f64,
    /// The value is zero for support reasons, no quadrature was run.
    pub exact_zero: bool,
    pub nodes: u64,
}

impl ArchValue {
    fn zero() -> Self {
        Self {
            value: Complex64::new(0.0, 0.0),
            error: 0.0,
            exact_zero: true,
            nodes: 0,
        }
    }
}

/// Midpoint nodes and weights on an interval.
fn nodes(iv: &Interval, n: usize) -> Vec<(f64, f64)> {
    let h = iv.width() / n as f64;
    (0..n).map(|k| (iv.lo + (k as f64 + 0.5) * h, h)).collect()
}

/// Nodes on a `t` interval not containing 0, midpoint in `u = 1/t` so that the
/// phase `<alpha, v>/t` is linear in the integration variable.
fn t_nodes(iv: &Interval, n: usize) -> Vec<(f64, f64)> {
    let u = Interval::new(1.0 / iv.lo, 1.0 / iv.hi);
    nodes(&u, n).into_iter().map(|(u, w)| (1.0 / u, w / (u * u))).collect()
}

/// Support geometry shared by all evaluations with the same data.
#[derive(Clone, Debug)]
struct Setup {
    /// Entry of `T` whose support avoids 0.
    pivot: usize,
    /// Entry solved from `det T = d`.
    solved: usize,
    free: [usize; 3],
    boxes: [Interval; 4],
    d_ranges: Vec<Interval>,
    t_ranges: Vec<Interval>,
    t1: Interval,
    t2: Interval,
    excision_active: bool,
    /// `(b d - t1 t2)/t` misses the support of the `(1,2)` entry of `f2`.
    b_outside: bool,
}

fn partner(i: usize) -> usize {
    3 - i
}

impl Setup {
    fn new(data: &ArchData, excision: f64) -> Result<Option<Self>> {
        let ArchData { f1, f2, v, b } = data;
        if f1.central_average || f2.central_average {
            return Err(Error::Precondition(
                "the transform integrates a representative with compact support, not the central average".into(),
            ));
        }
        let (vlo, vhi) = v.support();
        if vlo <= 0.0 {
            return Err(Error::Precondition(format!("V must be supported in (0, inf), got [{vlo}, {vhi}]")));
        }
        if *b == 0.0 || !b.is_finite() {
            return Err(Error::NotUnit(format!("b = {b}")));
        }
        let mut boxes = [Interval::new(0.0, 0.0); 4];
        for (i, bx) in boxes.iter_mut().enumerate() {
            *bx = f1
                .entry_support(i)
                .ok_or_else(|| Error::Precondition(format!("entry {i} of f1 has unbounded support")))?;
        }
        let pivot = (0..4)
            .filter(|&i| !boxes[i].contains_zero())
            .max_by(|&i, &j| boxes[i].abs_min().total_cmp(&boxes[j].abs_min()))
            .ok_or_else(|| Error::Precondition("f1 needs an entry whose support avoids 0".into()))?;
        let solved = partner(pivot);
        let free = {
            let mut f = [0usize; 3];
            let mut k = 0;
            for i in 0..4 {
                if i != solved {
                    f[k] = i;
                    k += 1;
                }
            }
            f
        };
        let det = boxes[0].mul(&boxes[3]).sub(&boxes[1].mul(&boxes[2]));
        let mut window = det;
        if let Some(w) = f1.det_window {
            let (lo, hi) = w.support();
            match window.intersect(&Interval::new(lo, hi)) {
                Some(x) => window = x,
                None => return Ok(None),
            }
        }
        let d_ranges: Vec<Interval> = [Interval::new(-vhi, -vlo), Interval::new(vlo, vhi)]
            .iter()
            .filter_map(|r| r.intersect(&window))
            .collect();
        let ts = f2
            .entry_support(2)
            .ok_or_else(|| Error::Precondition("entry (2,1) of f2 has unbounded support".into()))?;
        let excision_active = ts.lo < excision && ts.hi > -excision;
        let t_ranges: Vec<Interval> = [Interval::new(ts.lo, -excision), Interval::new(excision, ts.hi)]
            .iter()
            .filter(|r| r.lo < r.hi)
            .filter_map(|r| r.intersect(&ts))
            .collect();
        let t1 = f2
            .entry_support(0)
            .ok_or_else(|| Error::Precondition("entry (1,1) of f2 has unbounded support".into()))?
            .scale(-1.0);
        let t2 = f2
            .entry_support(3)
            .ok_or_else(|| Error::Precondition("entry (2,2) of f2 has unbounded support".into()))?;
        if d_ranges.is_empty() || t_ranges.is_empty() {
            return Ok(None);
        }
        let b_outside = match f2.entry_support(1) {
            None => false,
            Some(s12) => {
                let dh = d_ranges.iter().skip(1).fold(d_ranges[0], |a, r| a.hull(r));
                let num = dh.scale(*b).sub(&t1.mul(&t2));
                t_ranges
                    .iter()
                    .all(|tr| num.div(tr).map_or(false, |q| q.intersect(&s12).is_none()))
            }
        };
        let f2_window_hit = match f2.det_window {
            // the matrix handed to f2 has determinant -b d
            Some(w) => {
                let (lo, hi) = w.support();
                d_ranges
                    .iter()
                    .any(|r| r.scale(-*b).intersect(&Interval::new(lo, hi)).is_some())
            }
            None => true,
        };
        Ok(Some(Self {
            pivot,
            solved,
            free,
            boxes,
            d_ranges,
            t_ranges,
            t1,
            t2,
            excision_active,
            b_outside: b_outside || !f2_window_hit,
        }))
    }

    /// The solved entry of `T` and the Jacobian `1/|pivot|`.
    fn solve(&self, x: &[f64; 4], d: f64) -> (f64, f64) {
        let p = x[self.pivot];
        let val = match self.pivot {
            0 => (d + x[1] * x[2]) / p,
            3 => (d + x[1] * x[2]) / p,
            _ => (x[0] * x[3] - d) / p,
        };
        (val, 1.0 / p.abs())
    }

    fn tmin(&self) -> f64 {
        self.t_ranges.iter().map(|r| r.abs_min()).fold(f64::INFINITY, f64::min)
    }

    /// Periods of the phase across each integration axis.
    fn cycles(&self, coeffs: &[f64; 6]) -> Vec<(&'static str, Axis, f64)> {
        let tmin = self.tmin();
        let pmin = self.boxes[self.pivot].abs_min();
        let s = self.solved;
        let mut need = vec![];
        need.push(("t1", Axis::V, coeffs[4].abs() / tmin * self.t1.width()));
        need.push(("t2", Axis::V, coeffs[5].abs() / tmin * self.t2.width()));
        for &k in &self.free {
            let slope = if k == self.pivot {
                self.boxes[s].abs_max() / pmin
            } else {
                let other = self.free.iter().copied().find(|&j| j != k && j != self.pivot).unwrap();
                self.boxes[other].abs_max() / pmin
            };
            let f = (coeffs[k].abs() + coeffs[s].abs() * slope) / tmin;
            need.push(("T entry", Axis::X, f * self.boxes[k].width()));
        }
        for r in &self.d_ranges {
            need.push(("det T", Axis::D, coeffs[s].abs() / (pmin * tmin) * r.width()));
        }
        let vmax: f64 = (0..4).map(|i| coeffs[i].abs() * self.boxes[i].abs_max()).sum::<f64>()
            + coeffs[4].abs() * self.t1.abs_max()
            + coeffs[5].abs() * self.t2.abs_max();
        for r in &self.t_ranges {
            need.push(("t", Axis::T, vmax * (1.0 / r.abs_min() - 1.0 / r.abs_max())));
        }
        need
    }

    /// Refuses grids with fewer than the required nodes per period of the phase.
    fn check_resolution(&self, coeffs: &[f64; 6], quad: &QuadratureSpec) -> Result<()> {
        let ppp = quad.points_per_period;
        for (axis, kind, cycles) in self.cycles(coeffs) {
            let n = quad.axis(kind);
            if (n as f64) < ppp * cycles {
                return Err(Error::Unresolved(format!(
                    "{axis} axis has {n} nodes, the phase needs {:.0}",
                    (ppp * cycles).ceil()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Axis {
    T,
    D,
    X,
    V,
}

impl QuadratureSpec {
    fn axis(&self, a: Axis) -> usize {
        match a {
            Axis::T => self.n_t,
            Axis::D => self.n_d,
            Axis::X => self.n_x,
            Axis::V => self.n_v,
        }
    }

    fn axis_mut(&mut self, a: Axis) -> &mut usize {
        match a {
            Axis::T => &mut self.n_t,
            Axis::D => &mut self.n_d,
            Axis::X => &mut self.n_x,
            Axis::V => &mut self.n_v,
        }
    }
}

/// True when `I_S(f, (b, alpha))` vanishes for every `alpha` because of the supports.
pub fn vanishes_by_support(data: &ArchData, excision: f64) -> Result<bool> {
    Ok(match Setup::new(data, excision)? {
        None => true,
        Some(s) => s.b_outside,
    })
}

/// The smallest refinement of `base` (even node counts) that resolves the phase
/// at `alpha`; `None` when the transform vanishes for support reasons.
pub fn resolving_grid(data: &ArchData, alpha: &VPoint<f64>, base: &QuadratureSpec) -> Result<Option<QuadratureSpec>> {
    base.validate()?;
    let setup = match Setup::new(data, base.excision)? {
        Some(s) if !s.b_outside => s,
        _ => return Ok(None),
    };
    let mut quad = *base;
    for (_, kind, cycles) in setup.cycles(&alpha_coeffs(alpha)) {
        let need = (base.points_per_period * cycles).ceil() as usize;
        let n = quad.axis_mut(kind);
        if need > *n {
            *n = need + need % 2;
        }
    }
    Ok(Some(quad))
}

/// Integrand evaluations of one `transform_is` call on `quad`, without the halved pass.
pub fn grid_nodes(data: &ArchData, quad: &QuadratureSpec) -> Result<u64> {
    Ok(match Setup::new(data, quad.excision)? {
        Some(s) if !s.b_outside => node_count(&s, quad),
        _ => 0,
    })
}

fn alpha_coeffs(alpha: &VPoint<f64>) -> [f64; 6] {
    std::array::from_fn(|j| {
        let mut e = [0.0; 6];
        e[j] = 1.0;
        pairing(alpha, &VPoint::from_coords(e)).unwrap()
    })
}

/// The inner integral over `v` at one `t`, on the grid `quad`.
fn inner_at(data: &ArchData, setup: &Setup, coeffs: &[f64; 6], t: f64, quad: &QuadratureSpec) -> Complex64 {
    let ArchData { f1, f2, v, b } = data;
    let ph = |x: f64| psi_inf(x / t);
    let t1n = nodes(&setup.t1, quad.n_v);
    let t2n = nodes(&setup.t2, quad.n_v);
    let e1: Vec<Complex64> = t1n.iter().map(|&(x, w)| ph(coeffs[4] * x) * w).collect();
    let e2: Vec<Complex64> = t2n.iter().map(|&(x, w)| ph(coeffs[5] * x) * w).collect();
    let xn: Vec<Vec<(f64, f64)>> = setup.free.iter().map(|&k| nodes(&setup.boxes[k], quad.n_x)).collect();
    let ex: Vec<Vec<Complex64>> = setup
        .free
        .iter()
        .zip(&xn)
        .map(|(&k, ns)| ns.iter().map(|&(x, w)| ph(coeffs[k] * x) * w).collect())
        .collect();
    // entry values of f1 on the free axes, per term
    let fx: Vec<[Vec<f64>; 3]> = f1
        .terms
        .iter()
        .map(|(_, e)| std::array::from_fn(|a| xn[a].iter().map(|&(x, _)| e[setup.free[a]].eval(x)).collect()))
        .collect();
    // f2 entries that do not depend on d
    let f2t1: Vec<Vec<f64>> = f2.terms.iter().map(|(_, e)| t1n.iter().map(|&(x, _)| e[0].eval(-x)).collect()).collect();
    let f2t2: Vec<Vec<f64>> = f2.terms.iter().map(|(_, e)| t2n.iter().map(|&(x, _)| e[3].eval(x)).collect()).collect();
    let f2t: Vec<f64> = f2.terms.iter().map(|(_, e)| e[2].eval(t)).collect();
    let mut per_d = vec![];
    for r in &setup.d_ranges {
        for (d, wd) in nodes(r, quad.n_d) {
            let vw = v.eval(d.abs()) / (d * d);
            let w1 = f1.det_window.map_or(1.0, |w| w.eval(d));
            let w2 = f2.det_window.map_or(1.0, |w| w.eval(-b * d));
            if vw == 0.0 || w1 == 0.0 || w2 == 0.0 {
                continue;
            }
            // K(t, d): the (t1, t2) integral
            let mut k_rows = Vec::with_capacity(t1n.len());
            for (i, &(x1, _)) in t1n.iter().enumerate() {
                let mut row = Complex64::new(0.0, 0.0);
                for (j, &(x2, _)) in t2n.iter().enumerate() {
                    let m12 = (b * d - x1 * x2) / t;
                    let mut f = 0.0;
                    for (term, (c, e)) in f2.terms.iter().enumerate() {
                        let base = f2t1[term][i] * f2t2[term][j] * f2t[term];
                        if base != 0.0 {
                            f += c * base * e[1].eval(m12);
                        }
                    }
                    if f != 0.0 {
                        row += e2[j] * f;
                    }
                }
                k_rows.push(row * e1[i]);
            }
            let kval = tree_sum(&k_rows);
            if kval == Complex64::new(0.0, 0.0) {
                continue;
            }
            // Phi(t, d): the integral over det T = d
            let mut x = [0.0f64; 4];
            let mut slabs = Vec::with_capacity(xn[0].len());
            for (a, &(xa, _)) in xn[0].iter().enumerate() {
                x[setup.free[0]] = xa;
                let mut acc_a = Complex64::new(0.0, 0.0);
                for (bb, &(xb, _)) in xn[1].iter().enumerate() {
                    x[setup.free[1]] = xb;
                    let mut acc_b = Complex64::new(0.0, 0.0);
                    for (cc, &(xc, _)) in xn[2].iter().enumerate() {
                        x[setup.free[2]] = xc;
                        let (xs, jac) = setup.solve(&x, d);
                        let mut f = 0.0;
                        for (term, (c, e)) in f1.terms.iter().enumerate() {
                            let base = fx[term][0][a] * fx[term][1][bb] * fx[term][2][cc];
                            if base != 0.0 {
                                f += c * base * e[setup.solved].eval(xs);
                            }
                        }
                        if f != 0.0 {
                            acc_b += ex[2][cc] * ph(coeffs[setup.solved] * xs) * (f * jac);
                        }
                    }
                    acc_a += acc_b * ex[1][bb];
                }
                slabs.push(acc_a * ex[0][a]);
            }
            let phi = tree_sum(&slabs);
            per_d.push(phi * kval * (vw * w1 * w2 * wd));
        }
    }
    tree_sum(&per_d)
}

fn transform_on_grid(
    data: &ArchData,
    setup: &Setup,
    coeffs: &[f64; 6],
    twist: &ArchTwist,
    quad: &QuadratureSpec,
) -> (Complex64, Vec<(f64, Complex64)>) {
    let tn: Vec<(f64, f64)> = setup.t_ranges.iter().flat_map(|r| t_nodes(r, quad.n_t)).collect();
    let inner: Vec<(f64, Complex64)> = tn
        .par_iter()
        .map(|&(t, _)| (t, inner_at(data, setup, coeffs, t, quad)))
        .collect();
    let terms: Vec<Complex64> = tn
        .iter()
        .zip(&inner)
        .map(|(&(t, w), (_, val))| val * twist.weight(t) * w)
        .collect();
    (tree_sum(&terms) / quad.normalization, inner)
}

fn node_count(setup: &Setup, quad: &QuadratureSpec) -> u64 {
    let per_td = (quad.n_v * quad.n_v + quad.n_x.pow(3)) as u64;
    setup.t_ranges.len() as u64 * quad.n_t as u64 * setup.d_ranges.len() as u64 * quad.n_d as u64 * per_td
}

/// Exponent loss in the assumed bound `|inner(t)| <= C |t|^{3 - eps}` near `t = 0`.
const EXCISION_EPS: f64 = 0.1;

/// `I_S(f, (b, alpha), chi, s)` with the default twist giving `I_S(f, (b, alpha))`.
pub fn transform_is(
    data: &ArchData,
    alpha: &VPoint<f64>,
    twist: &ArchTwist,
    quad: &QuadratureSpec,
) -> Result<ArchValue> {
    quad.validate()?;
    let setup = match Setup::new(data, quad.excision)? {
        None => return Ok(ArchValue::zero()),
        Some(s) if s.b_outside => return Ok(ArchValue::zero()),
        Some(s) => s,
    };
    let coeffs = alpha_coeffs(alpha);
    setup.check_resolution(&coeffs, quad)?;
    let (fine, inner) = transform_on_grid(data, &setup, &coeffs, twist, quad);
    let (coarse, _) = transform_on_grid(data, &setup, &coeffs, twist, &quad.halved());
    let mut error = (fine - coarse).norm();
    if setup.excision_active {
        // C from the nodes nearest the excised interval
        let eps0 = quad.excision;
        let expo = 3.0 - EXCISION_EPS;
        let near: Vec<&(f64, Complex64)> = inner.iter().filter(|(t, _)| t.abs() <= 2.0 * eps0).collect();
        let pool: Vec<&(f64, Complex64)> = if near.is_empty() {
            let m = inner.iter().map(|(t, _)| t.abs()).fold(f64::INFINITY, f64::min);
            inner.iter().filter(|(t, _)| t.abs() == m).collect()
        } else {
            near
        };
        let c = pool.iter().map(|(t, v)| v.norm() / t.abs().powf(expo)).fold(0.0, f64::max);
        let power = expo + twist.s;
        error += 2.0 * c * eps0.powf(power) / power / quad.normalization;
    }
    Ok(ArchValue {
        value: fine,
        error,
        exact_zero: false,
        nodes: node_count(&setup, quad),
    })
}

/// The inner integral `int_V V(|det T|) f1(T) f2(...) psi(<alpha, v>/t) dv/|det T|^2` at one `t`.
pub fn inner_integral(data: &ArchData, alpha: &VPoint<f64>, t: f64, quad: &QuadratureSpec) -> Result<ArchValue> {
    quad.validate()?;
    if t == 0.0 {
        return Err(Error::Precondition("t must be nonzero".into()));
    }
    let setup = match Setup::new(data, 0.0)? {
        None => return Ok(ArchValue::zero()),
        Some(s) if s.b_outside => return Ok(ArchValue::zero()),
        Some(s) => s,
    };
    if data.f2.terms.iter().all(|(_, e)| e[2].eval(t) == 0.0) {
        return Ok(ArchValue::zero());
    }
    let coeffs = alpha_coeffs(alpha);
    let local = Setup {
        t_ranges: vec![Interval::new(t, t)],
        ..setup
    };
    local.check_resolution(&coeffs, quad)?;
    let fine = inner_at(data, &local, &coeffs, t, quad);
    let coarse = inner_at(data, &local, &coeffs, t, &quad.halved());
    let per_td = (quad.n_v * quad.n_v + quad.n_x.pow(3)) as u64;
    Ok(ArchValue {
        value: fine,
        error: (fine - coarse).norm(),
        exact_zero: false,
        nodes: local.d_ranges.len() as u64 * quad.n_d as u64 * per_td,
    })
}

/// `f3(a) = int f2(a11, x; a21, a22) psi_inf(x a12) dx`, the Fourier transform
/// of `f2` in its `(1,2)` entry.
#[derive(Clone, Debug)]
pub struct PartialFourier {
    f2: MatrixTestFn,
    nodes: usize,
}

pub fn partial_fourier_f3(f2: &MatrixTestFn, nodes: usize) -> Result<PartialFourier> {
    if f2.det_window.is_some() || f2.central_average {
        return Err(Error::Precondition(
            "the partial transform is taken of a product representative".into(),
        ));
    }
    if nodes < 2 {
        return Err(Error::Invalid("need at least two nodes".into()));
    }
    Ok(PartialFourier { f2: f2.clone(), nodes })
}

impl PartialFourier {
    /// Transform of one entry profile at frequency `xi`; closed form when known,
    /// midpoint quadrature over the support otherwise.
    fn entry_transform(&self, p: &Profile, xi: f64) -> Result<Complex64> {
        if let Some(v) = p.fourier_closed(xi) {
            return Ok(v);
        }
        let s = p
            .support()
            .ok_or_else(|| Error::Precondition("(1,2) entry must be integrable".into()))?;
        if (self.nodes as f64) < 8.0 * xi.abs() * s.width() {
            return Err(Error::Unresolved(format!("frequency {xi} needs more than {} nodes", self.nodes)));
        }
        let vals: Vec<Complex64> = nodes(&s, self.nodes)
            .iter()
            .map(|&(x, w)| psi_inf(x * xi) * p.eval(x) * w)
            .collect();
        Ok(tree_sum(&vals))
    }

    pub fn eval(&self, a: &[f64; 4]) -> Result<Complex64> {
        let mut acc = Complex64::new(0.0, 0.0);
        for (c, e) in &self.f2.terms {
            let rest = c * e[0].eval(a[0]) * e[2].eval(a[2]) * e[3].eval(a[3]);
            if rest != 0.0 {
                acc += self.entry_transform(&e[1], a[1])? * rest;
            }
        }
        Ok(acc)
    }

    /// `int f3(a11, xi; a21, a22) psi_inf(-x xi) dxi` over `|xi| <= xi_max`,
    /// which recovers `f2(a11, x; a21, a22)`.
    pub fn invert(&self, a11: f64, x: f64, a21: f64, a22: f64, xi_max: f64, n: usize) -> Result<f64> {
        let iv = Interval::new(-xi_max, xi_max);
        let vals: Vec<Complex64> = nodes(&iv, n)
            .iter()
            .map(|&(xi, w)| Ok(self.eval(&[a11, xi, a21, a22])? * psi_inf(-x * xi) * w))
            .collect::<Result<_>>()?;
        Ok(tree_sum(&vals).re)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayReport {
    pub t0: f64,
    pub lambdas: Vec<f64>,
    pub values: Vec<ArchValue>,
    /// `log|I(lambda_{k+1})/I(lambda_k)| / log(lambda_{k+1}/lambda_k)`.
    pub slopes: Vec<f64>,
    pub required_slope: f64,
    pub monotone: bool,
    pub passes: bool,
    /// `b` lies outside the window forced by the supports; every value is exactly 0.
    pub b_outside: bool,
}

/// Evaluates the inner integral at `alpha = lambda alpha0` for `t0` the center of
/// the `(2,1)` support of `f2`, and fits log-log slopes between rungs.
pub fn decay_probe(
    data: &ArchData,
    alpha0: &VPoint<f64>,
    ladder: &[f64],
    required_slope: f64,
    quad: &QuadratureSpec,
) -> Result<DecayReport> {
    if ladder.len() < 2 || ladder.windows(2).any(|w| w[1] <= w[0]) || ladder[0] <= 0.0 {
        return Err(Error::Invalid("ladder must be increasing and positive".into()));
    }
    let ts = data
        .f2
        .entry_support(2)
        .ok_or_else(|| Error::Precondition("entry (2,1) of f2 has unbounded support".into()))?;
    let t0 = 0.5 * (ts.lo + ts.hi);
    let values: Vec<ArchValue> = ladder
        .iter()
        .map(|&l| inner_integral(data, &alpha0.scale(&l), t0, quad))
        .collect::<Result<_>>()?;
    let b_outside = values.iter().all(|v| v.exact_zero);
    let slopes: Vec<f64> = ladder
        .windows(2)
        .zip(values.windows(2))
        .map(|(l, v)| (v[1].value.norm() / v[0].value.norm()).ln() / (l[1] / l[0]).ln())
        .collect();
    let monotone = slopes.windows(2).all(|s| s[1] <= s[0]);
    let passes = b_outside || (monotone && *slopes.last().unwrap() <= required_slope);
    Ok(DecayReport {
        t0,
        lambdas: ladder.to_vec(),
        values,
        slopes,
        required_slope,
        monotone,
        passes,
        b_outside,
    })
}

/// Direction, ladder and grid for `decay_probe` on `ArchData::standard()`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeSetup {
    pub alpha0: [f64; 6],
    pub ladder: Vec<f64>,
    pub quad: QuadratureSpec,
}

impl ProbeSetup {
    pub fn standard() -> Self {
        Self {
            alpha0: [0.25; 6],
            ladder: vec![1.0, 2.0, 4.0, 8.0],
            quad: QuadratureSpec {
                n_t: 8,
                n_d: 48,
                n_x: 64,
                n_v: 64,
                ..QuadratureSpec::default()
            },
        }
    }

    pub fn run(&self, data: &ArchData, required_slope: f64) -> Result<DecayReport> {
        decay_probe(data, &VPoint::from_coords(self.alpha0), &self.ladder, required_slope, &self.quad)
    }
}

/// Constants with `|I_S(f, (b, alpha))| <~ min(l1, min_j per_coord[j] / |alpha_j|^order)`:
/// `per_coord[j] = int |t|^{order - 3} (2 pi)^{-order} || d_j^order G(t, .) ||_1 dt`
/// with `G` the non-oscillating part of the integrand, from `order` integrations by
/// parts in coordinate `j` of `v`. Derivatives are central differences and the
/// norms are quadrature estimates, so these are estimates rather than proofs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayConstants {
    pub order: u32,
    pub l1: f64,
    pub per_coord: [f64; 6],
}

impl DecayConstants {
    pub fn bound(&self, alpha: &VPoint<f64>) -> f64 {
        let c = alpha_coeffs(alpha);
        (0..6)
            .filter(|&j| c[j] != 0.0)
            .map(|j| self.per_coord[j] / c[j].abs().powi(self.order as i32))
            .fold(self.l1, f64::min)
    }
}

fn g_point(data: &ArchData, t: f64, v: &[f64; 6]) -> f64 {
    let det = v[0] * v[3] - v[1] * v[2];
    if det == 0.0 {
        return 0.0;
    }
    let vw = data.v.eval(det.abs());
    if vw == 0.0 {
        return 0.0;
    }
    let f1 = data.f1.eval(&[v[0], v[1], v[2], v[3]]);
    if f1 == 0.0 {
        return 0.0;
    }
    let m12 = (data.b * det - v[4] * v[5]) / t;
    vw / (det * det) * f1 * data.f2.eval(&[-v[4], m12, t, v[5]])
}

pub fn decay_constants(data: &ArchData, order: u32, twist: &ArchTwist, quad: &QuadratureSpec) -> Result<DecayConstants> {
    quad.validate()?;
    let setup = match Setup::new(data, quad.excision)? {
        Some(s) if !s.b_outside => s,
        _ => {
            return Ok(DecayConstants {
                order,
                l1: 0.0,
                per_coord: [0.0; 6],
            })
        }
    };
    let widths: [f64; 6] = [
        setup.boxes[0].width(),
        setup.boxes[1].width(),
        setup.boxes[2].width(),
        setup.boxes[3].width(),
        setup.t1.width(),
        setup.t2.width(),
    ];
    let steps: [f64; 6] = widths.map(|w| w / (4.0 * quad.n_x.max(quad.n_v) as f64));
    let binom: Vec<f64> = (0..=order)
        .map(|i| (0..i).fold(1.0, |acc, k| acc * (order - k) as f64 / (k + 1) as f64))
        .collect();
    let tn: Vec<(f64, f64)> = setup.t_ranges.iter().flat_map(|r| t_nodes(r, quad.n_t)).collect();
    let per_t: Vec<[f64; 7]> = tn
        .par_iter()
        .map(|&(t, _)| {
            let mut acc = [0.0f64; 7];
            let t1n = nodes(&setup.t1, quad.n_v);
            let t2n = nodes(&setup.t2, quad.n_v);
            let xn: Vec<Vec<(f64, f64)>> = setup.free.iter().map(|&k| nodes(&setup.boxes[k], quad.n_x)).collect();
            for r in &setup.d_ranges {
                for (d, wd) in nodes(r, quad.n_d) {
                    let mut x = [0.0f64; 4];
                    for &(xa, wa) in &xn[0] {
                        x[setup.free[0]] = xa;
                        for &(xb, wb) in &xn[1] {
                            x[setup.free[1]] = xb;
                            for &(xc, wc) in &xn[2] {
                                x[setup.free[2]] = xc;
                                let (xs, jac) = setup.solve(&x, d);
                                x[setup.solved] = xs;
                                if data.f1.eval(&x) == 0.0 {
                                    continue;
                                }
                                for &(u1, w1) in &t1n {
                                    for &(u2, w2) in &t2n {
                                        let v = [x[0], x[1], x[2], x[3], u1, u2];
                                        let g0 = g_point(data, t, &v);
                                        let w = wd * wa * wb * wc * w1 * w2 * jac;
                                        acc[6] += g0.abs() * w;
                                        for j in 0..6 {
                                            let h = steps[j];
                                            let mut diff = 0.0;
                                            for (i, c) in binom.iter().enumerate() {
                                                let mut vs = v;
                                                vs[j] += (order as f64 / 2.0 - i as f64) * h;
                                                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                                                diff += sign * c * g_point(data, t, &vs);
                                            }
                                            acc[j] += (diff / h.powi(order as i32)).abs() * w;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut l1 = 0.0;
    let mut per_coord = [0.0f64; 6];
    let twopi = (2.0 * PI).powi(order as i32);
    for (&(t, w), acc) in tn.iter().zip(&per_t) {
        let wt = twist.weight(t).norm() * w / quad.normalization;
        l1 += acc[6] * wt;
        for j in 0..6 {
            per_coord[j] += acc[j] * wt * t.abs().powi(order as i32) / twopi;
        }
    }
    Ok(DecayConstants { order, l1, per_coord })
}
