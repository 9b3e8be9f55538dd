//! The affine spaces of points `(T, t1, t2)` and `(b, T, t1, t2)`, the quadric
//! `det T = b t1 t2`, the pairing, the phase polynomial `P(b, v) = b det T - t1 t2`,
//! the group action, Bruhat cells of `GL_2`, and Hecke indicators.
//!
//! Everything here is generic over [`Scalar`], so the same code runs over
//! rationals, residue rings and floats.

use crate::error::{Error, Result};
use crate::ring::ResidueElem;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Num, One, Signed, Zero};
use std::collections::BTreeMap;
use std::fmt::Debug;
use std::ops::{Add, Mul, Neg, Sub};

/// Commutative ring elements that may carry their own context (a modulus,
/// for instance), so constants are produced from an existing element.
pub trait Scalar:
    Clone + PartialEq + Debug + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    fn zero_like(&self) -> Self;
    fn one_like(&self) -> Self;
    fn try_inv(&self) -> Option<Self>;

    fn same_ring(&self, _other: &Self) -> bool {
        true
    }

    fn is_zero_like(&self) -> bool {
        *self == self.zero_like()
    }

    fn int_like(&self, k: i64) -> Self {
        // binary expansion so that only ring operations are needed
        let one = self.one_like();
        let mut acc = self.zero_like();
        let mut pow = one;
        let mut m = k.unsigned_abs();
        while m > 0 {
            if m & 1 == 1 {
                acc = acc + pow.clone();
            }
            pow = pow.clone() + pow;
            m >>= 1;
        }
        if k < 0 {
            -acc
        } else {
            acc
        }
    }
}

impl<T> Scalar for T
where
    T: Num + Clone + Debug + Neg<Output = T>,
{
    fn zero_like(&self) -> Self {
        T::zero()
    }

    fn one_like(&self) -> Self {
        T::one()
    }

    fn try_inv(&self) -> Option<Self> {
        if self.is_zero() {
            return None;
        }
        let q = T::one() / self.clone();
        // integer types truncate, so confirm the inverse
        (q.clone() * self.clone() == T::one()).then_some(q)
    }
}

impl Scalar for ResidueElem {
    fn zero_like(&self) -> Self {
        self.ctx().zero()
    }

    fn one_like(&self) -> Self {
        self.ctx().one()
    }

    fn try_inv(&self) -> Option<Self> {
        self.inv()
    }

    fn same_ring(&self, other: &Self) -> bool {
        self.ctx() == other.ctx()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mat2<R> {
    pub a11: R,
    pub a12: R,
    pub a21: R,
    pub a22: R,
}

impl<R: Scalar> Mat2<R> {
    pub fn new(a11: R, a12: R, a21: R, a22: R) -> Self {
        Self { a11, a12, a21, a22 }
    }

    pub fn diag(a: R, d: R) -> Self {
        let z = a.zero_like();
        Self::new(a, z.clone(), z, d)
    }

    pub fn identity_like(r: &R) -> Self {
        Self::diag(r.one_like(), r.one_like())
    }

    pub fn zero_like(r: &R) -> Self {
        let z = r.zero_like();
        Self::new(z.clone(), z.clone(), z.clone(), z)
    }

    pub fn entries(&self) -> [&R; 4] {
        [&self.a11, &self.a12, &self.a21, &self.a22]
    }

    pub fn map<S>(&self, f: impl Fn(&R) -> S) -> Mat2<S> {
        Mat2 {
            a11: f(&self.a11),
            a12: f(&self.a12),
            a21: f(&self.a21),
            a22: f(&self.a22),
        }
    }

    pub fn det(&self) -> R {
        self.a11.clone() * self.a22.clone() - self.a12.clone() * self.a21.clone()
    }

    pub fn trace(&self) -> R {
        self.a11.clone() + self.a22.clone()
    }

    pub fn scale(&self, k: &R) -> Self {
        self.map(|x| k.clone() * x.clone())
    }

    /// The adjugate `(d -b; -c a)`.
    pub fn adjugate(&self) -> Self {
        Self::new(
            self.a22.clone(),
            -self.a12.clone(),
            -self.a21.clone(),
            self.a11.clone(),
        )
    }

    pub fn inverse(&self) -> Result<Self> {
        let d = self.det().try_inv().ok_or(Error::Singular)?;
        Ok(self.adjugate().scale(&d))
    }

    pub fn mul(&self, o: &Self) -> Self {
        let c = |x: &R, y: &R, z: &R, w: &R| x.clone() * y.clone() + z.clone() * w.clone();
        Self::new(
            c(&self.a11, &o.a11, &self.a12, &o.a21),
            c(&self.a11, &o.a12, &self.a12, &o.a22),
            c(&self.a21, &o.a11, &self.a22, &o.a21),
            c(&self.a21, &o.a12, &self.a22, &o.a22),
        )
    }

    pub fn add(&self, o: &Self) -> Self {
        Self::new(
            self.a11.clone() + o.a11.clone(),
            self.a12.clone() + o.a12.clone(),
            self.a21.clone() + o.a21.clone(),
            self.a22.clone() + o.a22.clone(),
        )
    }
}

/// A point `v = (T, t1, t2)` of affine 6-space. Coordinates are ordered
/// `(x1, x2, x3, x4, t1, t2)` with `T = (x1 x2; x3 x4)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VPoint<R> {
    pub t: Mat2<R>,
    pub t1: R,
    pub t2: R,
}

/// `alpha = (B, y1, y2)` has the same shape as a point.
pub type AlphaPoint<R> = VPoint<R>;

impl<R: Scalar> VPoint<R> {
    pub fn new(t: Mat2<R>, t1: R, t2: R) -> Self {
        Self { t, t1, t2 }
    }

    pub fn from_coords(c: [R; 6]) -> Self {
        let [x1, x2, x3, x4, t1, t2] = c;
        Self::new(Mat2::new(x1, x2, x3, x4), t1, t2)
    }

    pub fn coords(&self) -> [R; 6] {
        [
            self.t.a11.clone(),
            self.t.a12.clone(),
            self.t.a21.clone(),
            self.t.a22.clone(),
            self.t1.clone(),
            self.t2.clone(),
        ]
    }

    pub fn zero_like(r: &R) -> Self {
        Self::new(Mat2::zero_like(r), r.zero_like(), r.zero_like())
    }

    pub fn map<S>(&self, f: impl Fn(&R) -> S) -> VPoint<S> {
        VPoint {
            t: self.t.map(&f),
            t1: f(&self.t1),
            t2: f(&self.t2),
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        Self::new(
            self.t.add(&o.t),
            self.t1.clone() + o.t1.clone(),
            self.t2.clone() + o.t2.clone(),
        )
    }

    pub fn scale(&self, k: &R) -> Self {
        self.map(|x| k.clone() * x.clone())
    }

    fn same_ring(&self, o: &Self) -> bool {
        self.coords()
            .iter()
            .zip(o.coords().iter())
            .all(|(a, b)| a.same_ring(b))
    }
}

/// `<delta, v> = tr(delta T) + a1 t1 + a2 t2` for `delta_pt = (delta, a1, a2)`.
pub fn pairing<R: Scalar>(delta_pt: &VPoint<R>, v: &VPoint<R>) -> Result<R> {
    if !delta_pt.same_ring(v) {
        return Err(Error::RingMismatch);
    }
    Ok(delta_pt.t.mul(&v.t).trace()
        + delta_pt.t1.clone() * v.t1.clone()
        + delta_pt.t2.clone() * v.t2.clone())
}

/// `P(b, v) = b det T - t1 t2`.
pub fn phase_p<R: Scalar>(b: &R, v: &VPoint<R>) -> R {
    b.clone() * v.t.det() - v.t1.clone() * v.t2.clone()
}

/// `P(b^{-1}, alpha)`.
pub fn dual_phase<R: Scalar>(b: &R, alpha: &AlphaPoint<R>) -> Result<R> {
    let binv = b.try_inv().ok_or_else(|| Error::NotUnit(format!("{b:?}")))?;
    Ok(phase_p(&binv, alpha))
}

/// The linear map with `P(b, v + v') = P(b, v) + P(b, v') + <f(v'), v>`:
/// `(x1 x2; x3 x4, t1, t2) -> (b (x4 -x2; -x3 x1), -t2, -t1)`.
pub fn dual_map_f<R: Scalar>(b: &R, v: &VPoint<R>) -> VPoint<R> {
    VPoint::new(v.t.adjugate().scale(b), -v.t2.clone(), -v.t1.clone())
}

/// Gram matrix of the pairing in the coordinate basis.
pub fn pairing_gram() -> [[i64; 6]; 6] {
    let basis = |i: usize| {
        let mut c = [0i64; 6];
        c[i] = 1;
        VPoint::from_coords(c)
    };
    let mut g = [[0i64; 6]; 6];
    for (i, row) in g.iter_mut().enumerate() {
        for (j, e) in row.iter_mut().enumerate() {
            *e = pairing(&basis(i), &basis(j)).unwrap();
        }
    }
    g
}

/// A point of the open subset where `det T`, `t1`, `t2` are invertible.
#[derive(Clone, Debug, PartialEq)]
pub struct VPrimePoint<R>(VPoint<R>);

impl<R: Scalar> VPrimePoint<R> {
    pub fn new(v: VPoint<R>) -> Result<Self> {
        for (name, x) in [("det T", v.t.det()), ("t1", v.t1.clone()), ("t2", v.t2.clone())] {
            if x.try_inv().is_none() {
                return Err(Error::NotUnit(format!("{name} = {x:?}")));
            }
        }
        Ok(Self(v))
    }

    pub fn point(&self) -> &VPoint<R> {
        &self.0
    }

    pub fn into_point(self) -> VPoint<R> {
        self.0
    }
}

/// A point `(b, T, t1, t2)` with `b^{-1} det T = t1 t2`.
#[derive(Clone, Debug, PartialEq)]
pub struct WPoint<R> {
    b: R,
    v: VPrimePoint<R>,
}

impl<R: Scalar> WPoint<R> {
    pub fn new(b: R, v: VPoint<R>) -> Result<Self> {
        if b.try_inv().is_none() {
            return Err(Error::NotUnit(format!("b = {b:?}")));
        }
        let v = VPrimePoint::new(v)?;
        if !on_quadric(&b, v.point()) {
            return Err(Error::Invalid("b^{-1} det T != t1 t2".into()));
        }
        Ok(Self { b, v })
    }

    pub fn b(&self) -> &R {
        &self.b
    }

    pub fn v(&self) -> &VPoint<R> {
        self.v.point()
    }
}

/// `det T = b t1 t2`, which for invertible `b` is the defining equation.
pub fn on_quadric<R: Scalar>(b: &R, v: &VPoint<R>) -> bool {
    v.t.det() == b.clone() * v.t1.clone() * v.t2.clone()
}

/// `(g1, g2, diag(x, 1), diag(1, y))`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupElem<R> {
    pub g1: Mat2<R>,
    pub g2: Mat2<R>,
    pub x: R,
    pub y: R,
}

impl<R: Scalar> GroupElem<R> {
    pub fn new(g1: Mat2<R>, g2: Mat2<R>, x: R, y: R) -> Result<Self> {
        for (name, d) in [
            ("det g1", g1.det()),
            ("det g2", g2.det()),
            ("x", x.clone()),
            ("y", y.clone()),
        ] {
            if d.try_inv().is_none() {
                return Err(Error::NotUnit(format!("{name} = {d:?}")));
            }
        }
        Ok(Self { g1, g2, x, y })
    }

    pub fn identity_like(r: &R) -> Self {
        Self {
            g1: Mat2::identity_like(r),
            g2: Mat2::identity_like(r),
            x: r.one_like(),
            y: r.one_like(),
        }
    }

    pub fn h3(&self) -> Mat2<R> {
        Mat2::diag(self.x.clone(), self.x.one_like())
    }

    pub fn h4(&self) -> Mat2<R> {
        Mat2::diag(self.y.one_like(), self.y.clone())
    }

    /// The product with `act(g.compose(h), w) = act(g, act(h, w))`. The matrix
    /// parts act by `T -> g2^{-1} T g1`, a right action, so they multiply in
    /// reverse order.
    pub fn compose(&self, h: &Self) -> Self {
        Self {
            g1: h.g1.mul(&self.g1),
            g2: h.g2.mul(&self.g2),
            x: self.x.clone() * h.x.clone(),
            y: self.y.clone() * h.y.clone(),
        }
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = |r: &R| r.try_inv().ok_or_else(|| Error::NotUnit(format!("{r:?}")));
        Ok(Self {
            g1: self.g1.inverse()?,
            g2: self.g2.inverse()?,
            x: inv(&self.x)?,
            y: inv(&self.y)?,
        })
    }
}

/// `(g1, g2, h3, h4).(b, T, t1, t2) =
///  (b det(g1) det(g2)^{-1} det(h3)^{-1} det(h4), g2^{-1} T g1, t1 det h3, t2 det(h4)^{-1})`.
pub fn act<R: Scalar>(g: &GroupElem<R>, b: &R, v: &VPoint<R>) -> Result<(R, VPoint<R>)> {
    let inv = |r: R| r.try_inv().ok_or_else(|| Error::NotUnit(format!("{r:?}")));
    let g2_inv = g.g2.inverse()?;
    let new_b = b.clone() * g.g1.det() * inv(g.g2.det())? * inv(g.h3().det())? * g.h4().det();
    let t = g2_inv.mul(&v.t).mul(&g.g1);
    let t1 = v.t1.clone() * g.h3().det();
    let t2 = v.t2.clone() * inv(g.h4().det())?;
    Ok((new_b, VPoint::new(t, t1, t2)))
}

pub fn act_w<R: Scalar>(g: &GroupElem<R>, w: &WPoint<R>) -> Result<WPoint<R>> {
    let (b, v) = act(g, w.b(), w.v())?;
    WPoint::new(b, v)
}

/// Sparse integer polynomial in the variables `(b, x1, x2, x3, x4, t1, t2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly {
    terms: BTreeMap<[u8; 7], i64>,
}

impl Poly {
    pub const VARS: usize = 7;

    pub fn var(i: usize) -> Self {
        let mut e = [0u8; 7];
        e[i] = 1;
        Self {
            terms: BTreeMap::from([(e, 1)]),
        }
    }

    pub fn constant(c: i64) -> Self {
        let mut terms = BTreeMap::new();
        if c != 0 {
            terms.insert([0u8; 7], c);
        }
        Self { terms }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree_in(&self, i: usize) -> u8 {
        self.terms.keys().map(|e| e[i]).max().unwrap_or(0)
    }

    fn insert(&mut self, e: [u8; 7], c: i64) {
        let entry = self.terms.entry(e).or_insert(0);
        *entry += c;
        if *entry == 0 {
            self.terms.remove(&e);
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut r = self.clone();
        for (e, c) in &o.terms {
            r.insert(*e, *c);
        }
        r
    }

    pub fn neg(&self) -> Self {
        Self {
            terms: self.terms.iter().map(|(e, c)| (*e, -c)).collect(),
        }
    }

    pub fn mul(&self, o: &Self) -> Self {
        let mut r = Self::constant(0);
        for (e1, c1) in &self.terms {
            for (e2, c2) in &o.terms {
                let mut e = [0u8; 7];
                for i in 0..7 {
                    e[i] = e1[i] + e2[i];
                }
                r.insert(e, c1 * c2);
            }
        }
        r
    }

    pub fn partial(&self, i: usize) -> Self {
        let mut r = Self::constant(0);
        for (e, c) in &self.terms {
            if e[i] > 0 {
                let mut d = *e;
                d[i] -= 1;
                r.insert(d, c * e[i] as i64);
            }
        }
        r
    }

    pub fn eval<R: Scalar>(&self, vals: &[R; 7]) -> R {
        let mut acc = vals[0].zero_like();
        for (e, c) in &self.terms {
            let mut term = vals[0].int_like(*c);
            for (x, &k) in vals.iter().zip(e) {
                for _ in 0..k {
                    term = term * x.clone();
                }
            }
            acc = acc + term;
        }
        acc
    }
}

/// `P = b (x1 x4 - x2 x3) - t1 t2` as a polynomial.
pub fn phase_poly() -> Poly {
    let v = Poly::var;
    let det = v(1).mul(&v(4)).add(&v(2).mul(&v(3)).neg());
    v(0).mul(&det).add(&v(5).mul(&v(6)).neg())
}

fn eval_point<R: Scalar>(b: &R, v: &VPoint<R>) -> [R; 7] {
    let [x1, x2, x3, x4, t1, t2] = v.coords();
    [b.clone(), x1, x2, x3, x4, t1, t2]
}

/// Gradient of `v -> P(b, v)` from symbolic partial derivatives.
pub fn grad_p<R: Scalar>(b: &R, v: &VPoint<R>) -> [R; 6] {
    let p = phase_poly();
    let vals = eval_point(b, v);
    std::array::from_fn(|i| p.partial(i + 1).eval(&vals))
}

/// Hessian of `v -> P(b, v)`; constant in `v`.
pub fn hessian_p<R: Scalar>(b: &R) -> [[R; 6]; 6] {
    let p = phase_poly();
    let vals = eval_point(b, &VPoint::zero_like(b));
    std::array::from_fn(|i| std::array::from_fn(|j| p.partial(i + 1).partial(j + 1).eval(&vals)))
}

/// Determinant by cofactor expansion; fine for the 6x6 matrices used here.
pub fn det<R: Scalar>(m: &[Vec<R>]) -> R {
    let n = m.len();
    assert!(m.iter().all(|r| r.len() == n), "square matrix expected");
    match n {
        0 => panic!("empty matrix"),
        1 => m[0][0].clone(),
        _ => {
            let mut acc = m[0][0].zero_like();
            for j in 0..n {
                if m[0][j].is_zero_like() {
                    continue;
                }
                let minor: Vec<Vec<R>> = m[1..]
                    .iter()
                    .map(|row| {
                        row.iter()
                            .enumerate()
                            .filter(|(k, _)| *k != j)
                            .map(|(_, x)| x.clone())
                            .collect()
                    })
                    .collect();
                let term = m[0][j].clone() * det(&minor);
                acc = if j % 2 == 0 { acc + term } else { acc - term };
            }
            acc
        }
    }
}

/// The two Bruhat cells of `GL_2` over a field.
#[derive(Clone, Debug, PartialEq)]
pub enum Bruhat<R> {
    /// Upper triangular: `(a x; 0 d)`.
    Borel { a: R, x: R, d: R },
    /// `(1 u1; 0 1) (0 b/c; c 0) (1 u2; 0 1)`.
    Big { u1: R, b: R, c: R, u2: R },
}

impl<R: Scalar> Bruhat<R> {
    pub fn reconstruct(&self) -> Result<Mat2<R>> {
        match self {
            Bruhat::Borel { a, x, d } => Ok(Mat2::new(a.clone(), x.clone(), a.zero_like(), d.clone())),
            Bruhat::Big { u1, b, c, u2 } => {
                let one = b.one_like();
                let zero = b.zero_like();
                let cinv = c.try_inv().ok_or(Error::Singular)?;
                let n1 = Mat2::new(one.clone(), u1.clone(), zero.clone(), one.clone());
                let n2 = Mat2::new(one.clone(), u2.clone(), zero.clone(), one);
                let delta = Mat2::new(zero.clone(), b.clone() * cinv, c.clone(), zero);
                Ok(n1.mul(&delta).mul(&n2))
            }
        }
    }

    /// `w0 diag(c, b/c)`, the Weyl part of a big-cell element.
    pub fn weyl_diag(&self) -> Option<(R, R)> {
        match self {
            Bruhat::Big { b, c, .. } => Some((c.clone(), b.clone() * c.try_inv()?)),
            Bruhat::Borel { .. } => None,
        }
    }
}

pub fn bruhat_decompose<R: Scalar>(gamma: &Mat2<R>) -> Result<Bruhat<R>> {
    if gamma.det().try_inv().is_none() {
        return Err(Error::Singular);
    }
    if gamma.a21.is_zero_like() {
        return Ok(Bruhat::Borel {
            a: gamma.a11.clone(),
            x: gamma.a12.clone(),
            d: gamma.a22.clone(),
        });
    }
    let c = gamma.a21.clone();
    let cinv = c.try_inv().ok_or(Error::Singular)?;
    Ok(Bruhat::Big {
        u1: gamma.a11.clone() * cinv.clone(),
        b: -gamma.det(),
        c,
        u2: gamma.a22.clone() * cinv,
    })
}

/// `delta = (0 b/c; c 0)` with data `(y1, y2)` is relevant iff `-b c^{-1} y1 = y2`.
pub fn is_relevant<R: Scalar>(b: &R, c: &R, y1: &R, y2: &R) -> Result<bool> {
    Ok(relevant_partner(b, c, y1)? == *y2)
}

/// The unique `y2` making `delta` relevant.
pub fn relevant_partner<R: Scalar>(b: &R, c: &R, y1: &R) -> Result<R> {
    if b.is_zero_like() {
        return Err(Error::Invalid("b must be nonzero".into()));
    }
    let cinv = c.try_inv().ok_or_else(|| Error::Invalid("c must be nonzero".into()))?;
    Ok(-(b.clone() * cinv * y1.clone()))
}

/// p-adic valuation of a rational; `None` for zero.
pub fn rat_valuation(r: &BigRational, p: u64) -> Option<i64> {
    if r.is_zero() {
        return None;
    }
    let pb = BigInt::from(p);
    let v = |x: &BigInt| {
        let mut x = x.abs();
        let mut k = 0i64;
        while (&x % &pb).is_zero() {
            x /= &pb;
            k += 1;
        }
        k
    };
    Some(v(r.numer()) - v(r.denom()))
}

fn p_integral(r: &BigRational, p: u64) -> bool {
    rat_valuation(r, p).map_or(true, |v| v >= 0)
}

/// Local indicator at `p`: `p`-integral entries and `det g` generating `m Z_p`.
pub fn hecke_indicator(m: i64, g: &Mat2<BigRational>, p: u64) -> bool {
    let d = g.det();
    g.entries().iter().all(|x| p_integral(x, p))
        && !d.is_zero()
        && rat_valuation(&d, p) == crate::ring::valuation(m as i128, p).map(|v| v as i64)
}

/// Local indicator of `m GL_2(Z_p)`.
pub fn hecke_indicator_central(m: i64, g: &Mat2<BigRational>, p: u64) -> bool {
    if m == 0 {
        return false;
    }
    let h = g.scale(&BigRational::new(BigInt::one(), BigInt::from(m)));
    let d = h.det();
    h.entries().iter().all(|x| p_integral(x, p)) && rat_valuation(&d, p) == Some(0)
}

/// Indicator over `Z` (the case `S = {inf}`): integer entries and `det g = +-m`.
pub fn hecke_indicator_global(m: i64, g: &Mat2<BigRational>) -> bool {
    g.entries().iter().all(|x| x.is_integer()) && g.det().abs() == BigRational::from_integer(BigInt::from(m).abs())
}

/// Indicator of `m GL_2(Z)`.
pub fn hecke_indicator_central_global(m: i64, g: &Mat2<BigRational>) -> bool {
    if m == 0 {
        return false;
    }
    let h = g.scale(&BigRational::new(BigInt::one(), BigInt::from(m)));
    h.entries().iter().all(|x| x.is_integer()) && h.det().abs().is_one()
}
