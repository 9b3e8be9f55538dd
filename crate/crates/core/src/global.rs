//! Assembly over `Q` with `S = {inf}`: Poisson summation on `gl2(Z)`, rational
//! points of the quadric `W` by height, the truncated geometric side
//! `sum_c sum_{(b, alpha) in W(Q)} |c| I_S(f, g.(b, c alpha)) 1(g.(b, alpha) integral)`,
//! and the algebra behind the first Bruhat cell.

use crate::arch::{
    decay_constants, grid_nodes, psi_inf, resolving_grid, transform_is, vanishes_by_support, ArchData, ArchTwist,
    DecayConstants, MatrixTestFn, QuadratureSpec,
};
use crate::error::{Error, Result};
use crate::geometry::{act, is_relevant, relevant_partner, GroupElem, Mat2, VPoint, WPoint};
use crate::sum::tree_sum;
use nalgebra::{Matrix4, SymmetricEigen, Vector4};
use num_bigint::BigInt;
use num_complex::Complex64;
use num_integer::Integer;
use num_rational::{BigRational, Ratio};
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::f64::consts::PI;

fn rat_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// `max(|numerator|, denominator)` in lowest terms.
pub fn height(r: &BigRational) -> u64 {
    let n = r.numer().abs();
    let m = if &n > r.denom() { n } else { r.denom().clone() };
    m.to_u64().unwrap_or(u64::MAX)
}

fn height_i64(r: &Ratio<i64>) -> u64 {
    r.numer().unsigned_abs().max(r.denom().unsigned_abs())
}

/// Height of `(b, alpha)`: the largest height of its seven entries.
pub fn point_height(b: &BigRational, alpha: &VPoint<BigRational>) -> u64 {
    alpha.coords().iter().map(height).fold(height(b), u64::max)
}

/// `A -> exp(-pi vec(A)^T q vec(A))` on `gl2(R) = R^4`, `vec(A) = (a11, a12, a21, a22)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeTestFn {
    q: [[BigRational; 4]; 4],
    qf: Matrix4<f64>,
}

impl LatticeTestFn {
    pub fn gaussian(q: [[BigRational; 4]; 4]) -> Result<Self> {
        for i in 0..4 {
            for j in 0..i {
                if q[i][j] != q[j][i] {
                    return Err(Error::Invalid("q must be symmetric".into()));
                }
            }
        }
        // Sylvester: all leading minors positive
        for k in 1..=4 {
            let m: Vec<Vec<BigRational>> = (0..k).map(|i| q[i][..k].to_vec()).collect();
            if !crate::geometry::det(&m).is_positive() {
                return Err(Error::Invalid("q must be positive definite".into()));
            }
        }
        let qf = Matrix4::from_fn(|i, j| rat_f64(&q[i][j]));
        Ok(Self { q, qf })
    }

    /// Only the Gaussian family has transforms and lattice tails in closed form.
    pub fn from_kind(kind: &str, q: [[BigRational; 4]; 4]) -> Result<Self> {
        match kind {
            "gaussian" => Self::gaussian(q),
            other => Err(Error::Invalid(format!(
                "test function kind {other:?} is not supported, only \"gaussian\""
            ))),
        }
    }

    pub fn identity_scaled(k: i64) -> Self {
        let q = std::array::from_fn(|i| {
            std::array::from_fn(|j| BigRational::from_integer(BigInt::from(if i == j { k } else { 0 })))
        });
        Self::gaussian(q).expect("k > 0")
    }

    pub fn q(&self) -> &[[BigRational; 4]; 4] {
        &self.q
    }

    pub fn eval(&self, a: &[f64; 4]) -> f64 {
        let v = Vector4::from_row_slice(a);
        (-PI * v.dot(&(self.qf * v))).exp()
    }

    /// `Psi^(X) = int Psi(A) psi(tr(XA)) dA = det(q)^{-1/2} exp(-pi x^T q^{-1} x)`
    /// with `x = vec(X^T)`, since `tr(XA)` pairs `X` with `A^T`.
    pub fn fourier(&self, x: &[f64; 4]) -> f64 {
        let inv = self.qf.try_inverse().expect("positive definite");
        let xt = Vector4::new(x[0], x[2], x[1], x[3]);
        self.qf.determinant().powf(-0.5) * (-PI * xt.dot(&(inv * xt))).exp()
    }

    fn eigen_range(&self) -> (f64, f64) {
        let e = SymmetricEigen::new(self.qf).eigenvalues;
        (e.min(), e.max())
    }
}

/// A random rational positive definite `q` with entries in `(1/den) Z` and
/// eigenvalues in `[lo, hi]`.
pub fn random_gaussian<R: Rng>(rng: &mut R, den: i64, lo: f64, hi: f64) -> LatticeTestFn {
    let r = |n: i64| BigRational::new(BigInt::from(n), BigInt::from(den));
    loop {
        let mut q: [[BigRational; 4]; 4] = std::array::from_fn(|_| std::array::from_fn(|_| BigRational::zero()));
        for i in 0..4 {
            q[i][i] = r(rng.gen_range((lo * den as f64).ceil() as i64..=(hi * den as f64).floor() as i64));
            for j in 0..i {
                let x = r(rng.gen_range(-den..=den));
                q[i][j] = x.clone();
                q[j][i] = x;
            }
        }
        if let Ok(f) = LatticeTestFn::gaussian(q) {
            let (a, b) = f.eigen_range();
            if a >= lo && b <= hi {
                return f;
            }
        }
    }
}

/// `sum_{||A||_inf > k} exp(-pi lam |A|^2)` over `Z^4`, bounded using
/// `#{||A||_inf = m} <= 8 (2m+1)^3` and `|A|^2 >= m^2`.
fn lattice_tail(lam: f64, k: u32) -> f64 {
    let mut s = 0.0;
    let mut m = k as f64 + 1.0;
    loop {
        let term = 8.0 * (2.0 * m + 1.0).powi(3) * (-PI * lam * m * m).exp();
        s += term;
        if term < 1e-30 * s.max(1e-300) || term == 0.0 {
            return s;
        }
        m += 1.0;
    }
}

fn box_radius(lam: f64, target: f64) -> u32 {
    (1..).find(|&k| lattice_tail(lam, k) <= target).unwrap()
}

fn lattice_sum(radius: u32, f: impl Fn(&[f64; 4]) -> f64 + Sync) -> f64 {
    let r = radius as i64;
    let slabs: Vec<f64> = (-r..=r)
        .into_par_iter()
        .map(|a| {
            let mut vals = Vec::with_capacity((2 * r as usize + 1).pow(3));
            for b in -r..=r {
                for c in -r..=r {
                    for d in -r..=r {
                        vals.push(f(&[a as f64, b as f64, c as f64, d as f64]));
                    }
                }
            }
            tree_sum(&vals)
        })
        .collect();
    tree_sum(&slabs)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoissonReport {
    /// `sum_{A in gl2(Z)} Psi(A)` over the box.
    pub lhs: f64,
    pub rhs: f64,
    pub lhs_tail: f64,
    pub rhs_tail: f64,
    pub lhs_radius: u32,
    pub rhs_radius: u32,
    pub difference: f64,
    /// `max_A |Psi(A) - Psi^(A)|` over the smaller box; nonzero unless `Psi` is self-dual.
    pub termwise_max_difference: f64,
}

/// Both sides of `sum_{B in gl2(Z)} Psi(B) = sum_{B in gl2(Z)} Psi^(B)`, with the
/// boxes chosen so the tails are below `1e-16`.
pub fn poisson_check(psi: &LatticeTestFn) -> Result<PoissonReport> {
    let (lmin, lmax) = psi.eigen_range();
    if lmin <= 0.0 {
        return Err(Error::Invalid("q is not positive definite in floating point".into()));
    }
    let target = 1e-16;
    let lhs_radius = box_radius(lmin, target);
    // x^T q^{-1} x >= |x|^2 / lmax; the prefactor is det(q)^{-1/2}
    let pref = psi.qf.determinant().powf(-0.5);
    let rhs_radius = box_radius(1.0 / lmax, target / pref.max(1.0));
    let lhs = lattice_sum(lhs_radius, |a| psi.eval(a));
    let rhs = lattice_sum(rhs_radius, |a| psi.fourier(a));
    let r = lhs_radius.min(rhs_radius) as i64;
    let mut termwise: f64 = 0.0;
    for a in -r..=r {
        for b in -r..=r {
            for c in -r..=r {
                for d in -r..=r {
                    let x = [a as f64, b as f64, c as f64, d as f64];
                    termwise = termwise.max((psi.eval(&x) - psi.fourier(&x)).abs());
                }
            }
        }
    }
    Ok(PoissonReport {
        lhs,
        rhs,
        lhs_tail: lattice_tail(lmin, lhs_radius),
        rhs_tail: pref * lattice_tail(1.0 / lmax, rhs_radius),
        lhs_radius,
        rhs_radius,
        difference: (lhs - rhs).abs(),
        termwise_max_difference: termwise,
    })
}

/// `Y -> a g1 Y g2` as a matrix on `vec(Y)`.
fn twist_matrix(a: f64, g1: &Mat2<f64>, g2: &Mat2<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    for k in 0..4 {
        let mut e = [0.0; 4];
        e[k] = 1.0;
        let y = Mat2::new(e[0], e[1], e[2], e[3]);
        let img = g1.mul(&y).mul(g2).scale(&a);
        for (i, v) in [img.a11, img.a12, img.a21, img.a22].into_iter().enumerate() {
            m[(i, k)] = v;
        }
    }
    m
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TwistSample {
    pub x: [f64; 4],
    /// `|a|^{-4} |det g1 g2|^{-2} Psi^(a^{-1} g2^{-1} x g1^{-1})`.
    pub rule: f64,
    /// The Gaussian transform of `Y -> Psi(a g1 Y g2)` from its own quadratic form.
    pub closed: f64,
    /// Trapezoid approximation of the same transform on `h Z^4`.
    pub numeric: Complex64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TwistReport {
    pub constant: f64,
    pub samples: Vec<TwistSample>,
    pub max_rule_vs_closed: f64,
    pub max_rule_vs_numeric: f64,
    pub nodes_per_axis: Vec<usize>,
}

/// Largest trapezoid grid accepted by `twist_check`.
const TWIST_NODE_BUDGET: u64 = 400_000_000;

/// The transform of `x -> Psi(a g1 x g2)` three ways. The trapezoid rule on a
/// lattice `h Z^4` is exact up to aliasing `Phi^(x + k/h)` and truncation, both
/// kept below `e^{-40}` relative.
pub fn twist_check(psi: &LatticeTestFn, a: f64, g1: &Mat2<f64>, g2: &Mat2<f64>, xs: &[[f64; 4]]) -> Result<TwistReport> {
    let dets = g1.det() * g2.det();
    if a == 0.0 || dets == 0.0 {
        return Err(Error::Singular);
    }
    let constant = a.abs().powi(-4) * dets.abs().powi(-2);
    let m = twist_matrix(a, g1, g2);
    let qg = m.transpose() * psi.qf * m;
    let twisted = LatticeTestFn {
        q: psi.q.clone(),
        qf: qg,
    };
    let (lmin, lmax) = twisted.eigen_range();
    let g1i = g1.inverse()?;
    let g2i = g2.inverse()?;
    let mut samples = vec![];
    let mut nodes_per_axis = vec![];
    for x in xs {
        let xm = Mat2::new(x[0], x[1], x[2], x[3]);
        let y = g2i.mul(&xm).mul(&g1i).scale(&(1.0 / a));
        let rule = constant * psi.fourier(&[y.a11, y.a12, y.a21, y.a22]);
        let closed = twisted.fourier(x);
        let xmax = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let inv_h = xmax + (40.0 * lmax / PI).sqrt();
        let half = (40.0 / (PI * lmin)).sqrt();
        let n = (2.0 * half * inv_h).ceil() as usize + 1;
        if (n as u64).pow(4) > TWIST_NODE_BUDGET {
            return Err(Error::Budget {
                terms: (n as u128).pow(4),
                budget: TWIST_NODE_BUDGET as u128,
                backend: "trapezoid",
            });
        }
        nodes_per_axis.push(n);
        let h = 1.0 / inv_h;
        let k = (n / 2) as i64;
        let xt = Vector4::new(x[0], x[2], x[1], x[3]);
        let slabs: Vec<Complex64> = (-k..=k)
            .into_par_iter()
            .map(|i| {
                let mut vals = Vec::with_capacity((2 * k as usize + 1).pow(3));
                for j in -k..=k {
                    for l in -k..=k {
                        for o in -k..=k {
                            let v = Vector4::new(i as f64, j as f64, l as f64, o as f64) * h;
                            let w = (-PI * v.dot(&(qg * v))).exp();
                            if w > 1e-300 {
                                vals.push(psi_inf(xt.dot(&v)) * w);
                            }
                        }
                    }
                }
                tree_sum(&vals)
            })
            .collect();
        let numeric = tree_sum(&slabs) * h.powi(4);
        samples.push(TwistSample {
            x: *x,
            rule,
            closed,
            numeric,
        });
    }
    let max_rule_vs_closed = samples.iter().map(|s| (s.rule - s.closed).abs()).fold(0.0, f64::max);
    let max_rule_vs_numeric = samples
        .iter()
        .map(|s| (s.numeric - Complex64::new(s.rule, 0.0)).norm())
        .fold(0.0, f64::max);
    Ok(TwistReport {
        constant,
        samples,
        max_rule_vs_closed,
        max_rule_vs_numeric,
        nodes_per_axis,
    })
}

/// Truncation of the `(c, (b, alpha))` sums: heights up to `height`, `1 <= c <= cmax`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HeightWindow {
    pub height: u64,
    pub cmax: u64,
}

impl HeightWindow {
    pub fn new(height: u64, cmax: u64) -> Result<Self> {
        if height == 0 || cmax == 0 {
            return Err(Error::Invalid("height and cmax must be at least 1".into()));
        }
        Ok(Self { height, cmax })
    }
}

/// All rationals of height at most `h`, ascending.
pub fn rationals_up_to(h: u64) -> Vec<Ratio<i64>> {
    let h = h as i64;
    let mut out = vec![Ratio::zero()];
    for q in 1..=h {
        for a in 1..=h {
            if a.gcd(&q) == 1 {
                out.push(Ratio::new(a, q));
                out.push(Ratio::new(-a, q));
            }
        }
    }
    out.sort();
    out
}

fn big(r: &Ratio<i64>) -> BigRational {
    BigRational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()))
}

/// `W(Q)` points `(b, T, t1, t2)` with every entry of height at most `window.height`.
/// `t2` is solved from the other entries, so each point appears once.
pub fn enumerate_w(window: &HeightWindow) -> Vec<WPoint<BigRational>> {
    let rats = rationals_up_to(window.height);
    let units: Vec<Ratio<i64>> = rats.iter().copied().filter(|r| !r.is_zero()).collect();
    let mut out = vec![];
    for &b in &units {
        for &x1 in &rats {
            for &x2 in &rats {
                for &x3 in &rats {
                    for &x4 in &rats {
                        let d = x1 * x4 - x2 * x3;
                        if d.is_zero() {
                            continue;
                        }
                        for &t1 in &units {
                            let t2 = d / (b * t1);
                            if height_i64(&t2) <= window.height {
                                let v = VPoint::new(Mat2::new(big(&x1), big(&x2), big(&x3), big(&x4)), big(&t1), big(&t2));
                                out.push(WPoint::new(big(&b), v).expect("constraint holds by construction"));
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// `1(g.(b, alpha) in Z^x x V(Z))`, the integrality factor for `S = {inf}`.
pub fn integrality_indicator(g: &GroupElem<BigRational>, b: &BigRational, alpha: &VPoint<BigRational>) -> Result<bool> {
    let (b2, a2) = act(g, b, alpha)?;
    Ok(b2.abs().is_one() && a2.coords().iter().all(|x| x.is_integer()))
}

/// How a term of the geometric side was certified.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TermStatus {
    /// `b'` lies outside the window forced by the supports.
    SupportZero,
    /// `|I_S| <= error` from the decay constants, value reported as 0.
    Bound,
    Quadrature,
    /// Neither bound nor affordable quadrature; kept out of the certified sum.
    Uncertified { reason: String },
}

/// One summand `|c| I_S(f, g.(b, c alpha))`.
#[derive(Clone, Debug)]
pub struct GeomTerm {
    pub c: u64,
    pub w: WPoint<BigRational>,
    pub height: u64,
    pub included: bool,
    /// `g.(b, alpha)` with `b' = +-1` and integral `alpha'`.
    pub image_b: i64,
    pub image_alpha: [i64; 6],
    /// Already multiplied by `c`.
    pub value: Complex64,
    pub error: f64,
    pub status: TermStatus,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TermRow {
    pub c: u64,
    pub b: String,
    pub alpha: String,
    pub included: bool,
    pub value_re: f64,
    pub value_im: f64,
    pub error: f64,
}

impl GeomTerm {
    pub fn row(&self) -> TermRow {
        TermRow {
            c: self.c,
            b: self.w.b().to_string(),
            alpha: self.w.v().coords().iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" "),
            included: self.included,
            value_re: self.value.re,
            value_im: self.value.im,
            error: self.error,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GeomSpec {
    /// `(f1, f2, V)`; the `b` field is replaced by `b'` per term.
    pub data: ArchData,
    pub g: GroupElem<BigRational>,
    /// Increasing windows forming the trace.
    pub windows: Vec<HeightWindow>,
    /// Starting grid for quadrature terms, refined per term to resolve the phase.
    pub quad: QuadratureSpec,
    /// Largest grid (integrand evaluations) a single term may use.
    pub node_budget: u64,
    /// Terms whose decay bound is at most this are certified without quadrature.
    pub bound_threshold: f64,
    pub decay_orders: Vec<u32>,
    pub decay_quad: QuadratureSpec,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct WindowSum {
    pub window: Option<HeightWindow>,
    pub sum: Complex64,
    pub error: f64,
    pub terms: u64,
    pub support_zero: u64,
    pub bound: u64,
    pub quadrature: u64,
    pub uncertified: u64,
    /// Sum of the bounds of `Bound` terms, included in `error`.
    pub bound_error: f64,
}

#[derive(Clone, Debug)]
pub struct GeomReport {
    pub windows: Vec<WindowSum>,
    /// `(|S_{k+1} - S_k|, error of window k+1, passes)` for consecutive windows.
    pub cauchy: Vec<(f64, f64, bool)>,
    /// Quadrature and uncertified terms of the largest window; the rest are counted in `windows`.
    pub table: Vec<GeomTerm>,
    pub candidates: u64,
    /// Distinct arguments `(b', c alpha')` that went through quadrature.
    pub quadratures: u64,
}

impl GeomSpec {
    /// Bump data with small `v` supports and `|t|` between 2 and 3, and
    /// `g` scaling `alpha` by `1/4`, so that `alpha'` stays small and integral.
    pub fn standard() -> Self {
        use crate::arch::BumpFunction;
        let r = |n: i64, d: i64| BigRational::new(BigInt::from(n), BigInt::from(d));
        let g = GroupElem::new(
            Mat2::diag(r(1, 1), r(1, 1)),
            Mat2::diag(r(4, 1), r(4, 1)),
            r(1, 4),
            r(4, 1),
        )
        .expect("invertible");
        Self {
            data: ArchData {
                f1: MatrixTestFn::bumps([0.3, 0.0, 0.0, 0.3], 0.1),
                f2: MatrixTestFn::bumps([-0.3, 0.0, 2.5, 0.3], 0.1),
                v: BumpFunction::new(0.09, 0.05, 1.0).expect("valid"),
                b: 1.0,
            },
            g,
            windows: vec![
                HeightWindow { height: 1, cmax: 1 },
                HeightWindow { height: 2, cmax: 2 },
                HeightWindow { height: 4, cmax: 4 },
                HeightWindow { height: 8, cmax: 8 },
            ],
            quad: QuadratureSpec::uniform(12),
            node_budget: 20_000_000,
            bound_threshold: 0.0,
            decay_orders: vec![2, 4, 6],
            decay_quad: QuadratureSpec::uniform(8),
        }
    }
}

/// Per-sign data: `None` when the supports kill every term with this `b'`.
struct SignData {
    data: ArchData,
    constants: Vec<DecayConstants>,
}

impl SignData {
    fn bound(&self, alpha: &VPoint<f64>) -> f64 {
        self.constants.iter().map(|c| c.bound(alpha)).fold(f64::INFINITY, f64::min)
    }
}

/// Bounds on `|alpha'|` entries for `alpha` of height at most `h`.
fn image_box(g: &GroupElem<BigRational>, h: u64) -> Result<[i64; 6]> {
    let g1 = g.g1.map(rat_f64);
    let g2i = g.g2.inverse()?.map(rat_f64);
    let a = |m: &Mat2<f64>| [[m.a11.abs(), m.a12.abs()], [m.a21.abs(), m.a22.abs()]];
    let (p, q) = (a(&g2i), a(&g1));
    let hf = h as f64;
    let mut out = [0i64; 6];
    for i in 0..2 {
        for j in 0..2 {
            let mut s = 0.0;
            for k in 0..2 {
                for l in 0..2 {
                    s += p[i][k] * q[l][j];
                }
            }
            out[2 * i + j] = (hf * s + 1e-9).floor() as i64;
        }
    }
    out[4] = (hf * rat_f64(&g.x).abs() + 1e-9).floor() as i64;
    out[5] = (hf / rat_f64(&g.y).abs() + 1e-9).floor() as i64;
    Ok(out)
}

/// Integral `(b', alpha')` on `W` inside the box, pulled back by `g^{-1}` and
/// kept when the preimage has height at most `h`.
fn candidates(g: &GroupElem<BigRational>, h: u64) -> Result<Vec<(i64, [i64; 6], WPoint<BigRational>, u64)>> {
    let bx = image_box(g, h)?;
    let ginv = g.inverse()?;
    let rng = |k: usize| -bx[k]..=bx[k];
    let mut out = vec![];
    for bp in [-1i64, 1] {
        for x1 in rng(0) {
            for x2 in rng(1) {
                for x3 in rng(2) {
                    for x4 in rng(3) {
                        let d = x1 * x4 - x2 * x3;
                        if d == 0 {
                            continue;
                        }
                        for t1 in rng(4) {
                            if t1 == 0 || d % (bp * t1) != 0 {
                                continue;
                            }
                            let t2 = d / (bp * t1);
                            if t2.abs() > bx[5] {
                                continue;
                            }
                            let ap = [x1, x2, x3, x4, t1, t2];
                            let bi = |k: i64| BigRational::from_integer(BigInt::from(k));
                            let (b, alpha) = act(&ginv, &bi(bp), &VPoint::from_coords(ap.map(bi)))?;
                            let hgt = point_height(&b, &alpha);
                            if hgt <= h {
                                out.push((bp, ap, WPoint::new(b, alpha)?, hgt));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn cmp_alpha(a: &WPoint<BigRational>, b: &WPoint<BigRational>) -> Ordering {
    a.v()
        .coords()
        .iter()
        .zip(b.v().coords().iter())
        .map(|(x, y)| x.cmp(y))
        .chain(std::iter::once(a.b().cmp(b.b())))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

/// The truncated geometric side over each window of `spec.windows`.
pub fn geometric_side(spec: &GeomSpec) -> Result<GeomReport> {
    if spec.windows.windows(2).any(|w| w[1].height < w[0].height || w[1].cmax < w[0].cmax) {
        return Err(Error::Invalid("windows must be increasing".into()));
    }
    for w in &spec.windows {
        HeightWindow::new(w.height, w.cmax)?;
    }
    let Some(last) = spec.windows.last().copied() else {
        return Ok(GeomReport {
            windows: vec![],
            cauchy: vec![],
            table: vec![],
            candidates: 0,
            quadratures: 0,
        });
    };
    let twist = ArchTwist::default();
    let mut signs: BTreeMap<i64, Option<SignData>> = BTreeMap::new();
    for bp in [-1i64, 1] {
        let data = ArchData {
            b: bp as f64,
            ..spec.data.clone()
        };
        let entry = if vanishes_by_support(&data, spec.quad.excision)? {
            None
        } else {
            let constants = if spec.bound_threshold > 0.0 {
                spec.decay_orders
                    .iter()
                    .map(|&o| decay_constants(&data, o, &twist, &spec.decay_quad))
                    .collect::<Result<Vec<_>>>()?
            } else {
                vec![]
            };
            Some(SignData { data, constants })
        };
        signs.insert(bp, entry);
    }
    let cands = candidates(&spec.g, last.height)?;

    // classify every (candidate, c); quadratures are shared between equal arguments
    let mut pending: BTreeMap<(i64, [i64; 6]), Option<Result<(Complex64, f64)>>> = BTreeMap::new();
    let mut terms = vec![];
    for (bp, ap, w, hgt) in &cands {
        for c in 1..=last.cmax {
            let arg = ap.map(|x| x * c as i64);
            let alpha_f = VPoint::from_coords(arg.map(|x| x as f64));
            let (status, error) = match &signs[bp] {
                None => (TermStatus::SupportZero, 0.0),
                Some(sd) => {
                    let bound = sd.bound(&alpha_f);
                    if bound <= spec.bound_threshold {
                        (TermStatus::Bound, bound)
                    } else {
                        let grid = resolving_grid(&sd.data, &alpha_f, &spec.quad)?;
                        match grid {
                            None => (TermStatus::SupportZero, 0.0),
                            Some(q) => {
                                let n = grid_nodes(&sd.data, &q)?;
                                if n > spec.node_budget {
                                    (
                                        TermStatus::Uncertified {
                                            reason: format!("phase needs {n} nodes, budget {}", spec.node_budget),
                                        },
                                        0.0,
                                    )
                                } else {
                                    pending.insert((*bp, arg), None);
                                    (TermStatus::Quadrature, 0.0)
                                }
                            }
                        }
                    }
                }
            };
            terms.push(GeomTerm {
                c,
                w: w.clone(),
                height: *hgt,
                included: !matches!(status, TermStatus::Uncertified { .. }),
                image_b: *bp,
                image_alpha: *ap,
                value: Complex64::new(0.0, 0.0),
                error: error * c as f64,
                status,
            });
        }
    }
    let keys: Vec<(i64, [i64; 6])> = pending.keys().copied().collect();
    let results: Vec<Result<(Complex64, f64)>> = keys
        .par_iter()
        .map(|(bp, arg)| {
            let sd = signs[bp].as_ref().expect("quadrature only for live signs");
            let alpha_f = VPoint::from_coords(arg.map(|x| x as f64));
            let q = resolving_grid(&sd.data, &alpha_f, &spec.quad)?.expect("checked above");
            let v = transform_is(&sd.data, &alpha_f, &twist, &q)?;
            Ok((v.value, v.error))
        })
        .collect();
    for (k, r) in keys.iter().zip(results) {
        pending.insert(*k, Some(r));
    }
    for t in terms.iter_mut() {
        if t.status != TermStatus::Quadrature {
            continue;
        }
        let arg = t.image_alpha.map(|x| x * t.c as i64);
        match pending[&(t.image_b, arg)].as_ref().expect("evaluated") {
            Ok((v, e)) => {
                t.value = v * t.c as f64;
                t.error = e * t.c as f64;
            }
            Err(Error::Unresolved(msg)) => {
                t.status = TermStatus::Uncertified { reason: msg.clone() };
                t.included = false;
            }
            Err(e) => return Err(e.clone()),
        }
    }
    terms.sort_by(|a, b| {
        a.c.cmp(&b.c)
            .then(a.height.cmp(&b.height))
            .then_with(|| cmp_alpha(&a.w, &b.w))
    });

    let windows: Vec<WindowSum> = spec
        .windows
        .iter()
        .map(|win| {
            let mut ws = WindowSum {
                window: Some(*win),
                ..Default::default()
            };
            let mut vals = vec![];
            let mut errs = vec![];
            let mut bounds = vec![];
            for t in terms.iter().filter(|t| t.height <= win.height && t.c <= win.cmax) {
                ws.terms += 1;
                match &t.status {
                    TermStatus::SupportZero => ws.support_zero += 1,
                    TermStatus::Bound => {
                        ws.bound += 1;
                        bounds.push(t.error);
                    }
                    TermStatus::Quadrature => {
                        ws.quadrature += 1;
                        vals.push(t.value);
                        errs.push(t.error);
                    }
                    TermStatus::Uncertified { .. } => ws.uncertified += 1,
                }
            }
            ws.sum = tree_sum(&vals);
            ws.bound_error = tree_sum(&bounds);
            ws.error = tree_sum(&errs) + ws.bound_error;
            ws
        })
        .collect();
    let cauchy = windows
        .windows(2)
        .map(|w| {
            let d = (w[1].sum - w[0].sum).norm();
            (d, w[1].error, d < w[1].error || (d == 0.0 && w[1].error == 0.0))
        })
        .collect();
    let quadratures = pending.len() as u64;
    let table = terms
        .into_iter()
        .filter(|t| matches!(t.status, TermStatus::Quadrature | TermStatus::Uncertified { .. }))
        .collect();
    Ok(GeomReport {
        windows,
        cauchy,
        table,
        candidates: cands.len() as u64,
        quadratures,
    })
}

/// Results of the first-cell checks for `delta = diag(b, c)`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Sigma1Report {
    pub samples: u64,
    /// `n(-t1) delta n(t2)` against `(b, b t2 - c t1; 0, c)` and the phases.
    pub integrand_mismatches: u64,
    pub stabilizer_failures: u64,
    /// `(b, c, y1)` triples with a unique relevant `y2` over `Q`.
    pub unique_partner: u64,
    pub triples: u64,
    /// Relevant `(b, c, y1, y2)` with all entries in the window.
    pub relevant_in_window: u64,
    /// Triples whose partner lies in the window; must equal `relevant_in_window`.
    pub partner_in_window: u64,
    pub bijection_failures: u64,
}

impl Sigma1Report {
    pub fn passes(&self) -> bool {
        self.integrand_mismatches == 0
            && self.stabilizer_failures == 0
            && self.unique_partner == self.triples
            && self.relevant_in_window == self.partner_in_window
            && self.bijection_failures == 0
    }
}

fn unipotent(t: &BigRational) -> Mat2<BigRational> {
    Mat2::new(BigRational::one(), t.clone(), BigRational::zero(), BigRational::one())
}

fn random_rat<R: Rng>(rng: &mut R, h: i64, nonzero: bool) -> BigRational {
    loop {
        let n = rng.gen_range(-h..=h);
        let d = rng.gen_range(1..=h);
        if !(nonzero && n == 0) {
            return BigRational::new(BigInt::from(n), BigInt::from(d));
        }
    }
}

/// Checks the reduction of the first-cell unipotent integral
///
/// `int int f2(n(-t1) delta n(t2)) psi(y1 t1 + y2 t2) dt1 dt2`, `y2 = -b y1 / c`,
///
/// through `t1' = c t1`, `t2' = b t2` and `t = t2' - t1'` to
/// `f2((b, t; 0, c)) psi(-y t / c)`, pointwise on random rational samples, and
/// the relevance count over the rationals of height at most `window.height`.
pub fn sigma1_structure_check<R: Rng>(f2: &MatrixTestFn, window: &HeightWindow, samples: usize, rng: &mut R) -> Result<Sigma1Report> {
    let h = window.height as i64;
    let mut rep = Sigma1Report::default();
    let ev = |m: &Mat2<BigRational>, phase: &BigRational| {
        psi_inf(rat_f64(phase)) * f2.eval(&[rat_f64(&m.a11), rat_f64(&m.a12), rat_f64(&m.a21), rat_f64(&m.a22)])
    };
    for _ in 0..samples {
        rep.samples += 1;
        let b = random_rat(rng, h, true);
        let c = random_rat(rng, h, true);
        let y = random_rat(rng, h, true);
        let t1 = random_rat(rng, h, false);
        let t2 = random_rat(rng, h, false);
        let delta = Mat2::diag(b.clone(), c.clone());
        let y2 = relevant_partner(&b, &c, &y)?;
        let m_a = unipotent(&-t1.clone()).mul(&delta).mul(&unipotent(&t2));
        let ph_a = y.clone() * t1.clone() + y2 * t2.clone();
        let m_b = Mat2::new(b.clone(), b.clone() * t2.clone() - c.clone() * t1.clone(), BigRational::zero(), c.clone());
        let ph_b = y.clone() * t1.clone() - b.clone() / c.clone() * y.clone() * t2.clone();
        let (s1, s2) = (c.clone() * t1.clone(), b.clone() * t2.clone());
        let m_c = Mat2::new(b.clone(), s2.clone() - s1.clone(), BigRational::zero(), c.clone());
        let ph_c = y.clone() * (s1.clone() - s2.clone()) / c.clone();
        let t = s2 - s1;
        let m_d = Mat2::new(b.clone(), t.clone(), BigRational::zero(), c.clone());
        let ph_d = -(y.clone() * t) / c.clone();
        let exact = m_a == m_b && m_b == m_c && m_c == m_d && ph_a == ph_b && ph_b == ph_c && ph_c == ph_d;
        if !exact || ev(&m_a, &ph_a) != ev(&m_d, &ph_d) {
            rep.integrand_mismatches += 1;
        }
        // n1^{-1} delta n2 = delta for (n1, n2) = (n(s), n(c s / b))
        let s = random_rat(rng, h, false);
        let n1i = unipotent(&-s.clone());
        let n2 = unipotent(&(c.clone() * s / b.clone()));
        if n1i.mul(&delta).mul(&n2) != delta {
            rep.stabilizer_failures += 1;
        }
    }
    let rats: Vec<BigRational> = rationals_up_to(window.height)
        .iter()
        .filter(|r| !r.is_zero())
        .map(big)
        .collect();
    for b in &rats {
        for c in &rats {
            let mut seen: BTreeMap<BigRational, BigRational> = BTreeMap::new();
            for y1 in &rats {
                rep.triples += 1;
                let y2 = relevant_partner(b, c, y1)?;
                let others = rats.iter().filter(|z| **z != y2).try_fold(0u64, |n, z| {
                    Ok::<_, Error>(n + is_relevant(b, c, y1, z)? as u64)
                })?;
                if is_relevant(b, c, y1, &y2)? && others == 0 {
                    rep.unique_partner += 1;
                }
                let in_window = height(&y2) <= window.height;
                rep.partner_in_window += in_window as u64;
                for z in &rats {
                    rep.relevant_in_window += is_relevant(b, c, y1, z)? as u64;
                }
                // inverse map y2 -> -c y2 / b and injectivity
                let back = -(c.clone() * y2.clone()) / b.clone();
                if back != *y1 || seen.insert(y2, y1.clone()).is_some() {
                    rep.bijection_failures += 1;
                }
            }
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn r(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn standard_gaussian_gives_theta_fourth_power() {
        let theta: f64 = (-30..=30).map(|n: i32| (-PI * (n * n) as f64).exp()).sum();
        assert!((theta - 1.086_434_811_213_308).abs() < 1e-14);
        let rep = poisson_check(&LatticeTestFn::identity_scaled(1)).unwrap();
        assert!((rep.lhs - theta.powi(4)).abs() < 1e-12, "{rep:?}");
        assert!(rep.difference <= 1e-10);
        assert!(rep.termwise_max_difference < 1e-15);
    }

    #[test]
    fn scaled_gaussian_agrees_in_sum_not_termwise() {
        let rep = poisson_check(&LatticeTestFn::identity_scaled(4)).unwrap();
        assert!(rep.difference <= 1e-10, "{rep:?}");
        assert!(rep.termwise_max_difference > 1e-3);
    }

    #[test]
    fn random_gaussians_satisfy_poisson() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..3 {
            let psi = random_gaussian(&mut rng, 8, 0.25, 4.0);
            let rep = poisson_check(&psi).unwrap();
            assert!(rep.difference <= 1e-10 * rep.lhs.max(1.0), "{rep:?}");
        }
    }

    #[test]
    fn rejects_non_gaussian_and_indefinite() {
        let q = LatticeTestFn::identity_scaled(1).q().clone();
        assert!(LatticeTestFn::from_kind("bump", q.clone()).is_err());
        let mut bad = q;
        bad[0][0] = r(-1, 1);
        assert!(LatticeTestFn::gaussian(bad).is_err());
    }

    #[test]
    fn twist_rule_matches_numeric_transform() {
        let psi = LatticeTestFn::identity_scaled(1);
        let g1 = Mat2::diag(2.0, 1.0);
        let g2 = Mat2::diag(1.0, 1.0);
        let xs = [[0.0; 4], [0.3, -0.2, 0.1, 0.25]];
        let rep = twist_check(&psi, 1.0, &g1, &g2, &xs).unwrap();
        assert!((rep.constant - 0.25).abs() < 1e-15);
        assert!(rep.max_rule_vs_closed <= 1e-12, "{rep:?}");
        assert!(rep.max_rule_vs_numeric <= 1e-10, "{rep:?}");
    }

    #[test]
    fn window_of_height_one_has_the_identity_point() {
        let pts = enumerate_w(&HeightWindow::new(1, 1).unwrap());
        let one = r(1, 1);
        let id = VPoint::new(Mat2::diag(one.clone(), one.clone()), one.clone(), one.clone());
        assert!(pts.iter().any(|w| *w.b() == one && *w.v() == id));
        for w in &pts {
            assert_eq!(w.v().t.det(), w.b().clone() * w.v().t1.clone() * w.v().t2.clone());
        }
    }

    #[test]
    fn height_two_count_matches_naive_loop() {
        let win = HeightWindow::new(2, 1).unwrap();
        let got = enumerate_w(&win).len();
        let rats = rationals_up_to(2);
        let mut naive = 0;
        for b in &rats {
            for x1 in &rats {
                for x2 in &rats {
                    for x3 in &rats {
                        for x4 in &rats {
                            for t1 in &rats {
                                for t2 in &rats {
                                    let d = x1 * x4 - x2 * x3;
                                    if !b.is_zero() && !d.is_zero() && !t1.is_zero() && !t2.is_zero() && d / b == t1 * t2 {
                                        naive += 1;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        assert_eq!(got, naive);
        assert!(got > 0);
    }

    #[test]
    fn indicator_rejects_non_integral_alpha() {
        let g = GroupElem::identity_like(&r(1, 1));
        let one = r(1, 1);
        let a = VPoint::new(Mat2::diag(one.clone(), one.clone()), one.clone(), one.clone());
        assert!(integrality_indicator(&g, &one, &a).unwrap());
        let b = VPoint::new(Mat2::diag(r(1, 2), r(2, 1)), one.clone(), one.clone());
        assert!(!integrality_indicator(&g, &one, &b).unwrap());
        assert!(!integrality_indicator(&g, &r(2, 1), &a).unwrap());
    }

    #[test]
    fn candidates_match_filtered_enumeration() {
        // g scales alpha by 1/2, so integral images need alpha in 2Z
        let g = GroupElem::new(Mat2::diag(r(1, 1), r(1, 1)), Mat2::diag(r(2, 1), r(2, 1)), r(1, 2), r(2, 1)).unwrap();
        let win = HeightWindow::new(2, 1).unwrap();
        let mut from_box: Vec<String> = candidates(&g, 2)
            .unwrap()
            .iter()
            .map(|(_, _, w, _)| format!("{:?}", w))
            .collect();
        let mut direct: Vec<String> = enumerate_w(&win)
            .into_iter()
            .filter(|w| integrality_indicator(&g, w.b(), w.v()).unwrap())
            .map(|w| format!("{:?}", w))
            .collect();
        from_box.sort();
        direct.sort();
        assert_eq!(from_box, direct);
        assert!(!direct.is_empty());
    }

    #[test]
    fn empty_window_sums_to_zero() {
        let mut spec = GeomSpec::standard();
        spec.windows.clear();
        let rep = geometric_side(&spec).unwrap();
        assert!(rep.windows.is_empty());
        // b' = 16 b is never a unit for b of height 1
        let mut spec = GeomSpec::standard();
        spec.g = GroupElem::new(Mat2::diag(r(16, 1), r(1, 1)), Mat2::diag(r(1, 1), r(1, 1)), r(1, 1), r(1, 1)).unwrap();
        spec.windows = vec![HeightWindow::new(1, 1).unwrap()];
        let rep = geometric_side(&spec).unwrap();
        assert_eq!(rep.windows[0].terms, 0);
        assert_eq!(rep.windows[0].sum, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn sigma1_reduction_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f2 = MatrixTestFn::bumps([1.0, 0.0, 0.0, 1.0], 3.0);
        let rep = sigma1_structure_check(&f2, &HeightWindow::new(3, 1).unwrap(), 50, &mut rng).unwrap();
        assert!(rep.passes(), "{rep:?}");
        assert_eq!(rep.samples, 50);
        assert!(rep.relevant_in_window > 0);
    }
}
