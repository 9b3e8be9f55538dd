//! Residue rings `Z/p^n`, phases in `Q_p/Z_p`, additive and multiplicative
//! characters, and exact sums in the group ring of a cyclic p-power group.

use crate::error::{Error, Result};
use crate::sum::tree_sum;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2u64;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

pub fn checked_pow(p: u64, n: u32) -> Option<u64> {
    let mut acc = 1u64;
    for _ in 0..n {
        acc = acc.checked_mul(p)?;
    }
    Some(acc)
}

/// p-adic valuation of a nonzero integer; `None` for zero.
pub fn valuation(mut a: i128, p: u64) -> Option<u32> {
    if a == 0 {
        return None;
    }
    let p = p as i128;
    let mut v = 0;
    while a % p == 0 {
        a /= p;
        v += 1;
    }
    Some(v)
}

pub fn mod_pow(mut base: u64, mut exp: u64, m: u64) -> u64 {
    if m == 1 {
        return 0;
    }
    let mut acc = 1u64;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, m);
        }
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    acc
}

#[inline]
pub fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

#[inline]
pub fn reduce_i128(a: i128, m: u64) -> u64 {
    a.rem_euclid(m as i128) as u64
}

/// Inverse of `a` modulo `m` by the extended Euclidean algorithm.
pub fn inv_mod(a: u64, m: u64) -> Option<u64> {
    if m == 1 {
        return Some(0);
    }
    let (mut r0, mut r1) = (m as i128, (a % m) as i128);
    let (mut s0, mut s1) = (0i128, 1i128);
    while r1 != 0 {
        let q = r0 / r1;
        (r0, r1) = (r1, r0 - q * r1);
        (s0, s1) = (s1, s0 - q * s1);
    }
    if r0 != 1 {
        return None;
    }
    Some(s0.rem_euclid(m as i128) as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResidueCtx {
    p: u64,
    n: u32,
    modulus: u64,
}

impl ResidueCtx {
    pub fn new(p: u64, n: u32) -> Result<Self> {
        if !is_prime(p) {
            return Err(Error::NotPrime(p));
        }
        let modulus = checked_pow(p, n)
            .filter(|m| *m < (1u64 << 62))
            .ok_or(Error::ModulusTooLarge { p, n })?;
        Ok(Self { p, n, modulus })
    }

    pub fn p(&self) -> u64 {
        self.p
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    /// Size of the residue field.
    pub fn q(&self) -> u64 {
        self.p
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn elem(&self, v: i64) -> ResidueElem {
        ResidueElem {
            ctx: *self,
            value: reduce_i128(v as i128, self.modulus),
        }
    }

    pub fn zero(&self) -> ResidueElem {
        self.elem(0)
    }

    pub fn one(&self) -> ResidueElem {
        self.elem(1)
    }

    /// Units of `Z/p^n` in increasing order.
    pub fn units(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.modulus).filter(move |u| u % self.p != 0 || self.n == 0)
    }

    pub fn unit_count(&self) -> u64 {
        if self.n == 0 {
            1
        } else {
            self.modulus / self.p * (self.p - 1)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ResidueElem {
    ctx: ResidueCtx,
    value: u64,
}

impl ResidueElem {
    pub fn ctx(&self) -> ResidueCtx {
        self.ctx
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn is_unit(&self) -> bool {
        self.ctx.n == 0 || self.value % self.ctx.p != 0
    }

    pub fn inv(&self) -> Option<Self> {
        if !self.is_unit() {
            return None;
        }
        inv_mod(self.value, self.ctx.modulus).map(|value| Self {
            ctx: self.ctx,
            value,
        })
    }

    pub fn pow(&self, e: u64) -> Self {
        Self {
            ctx: self.ctx,
            value: mod_pow(self.value, e, self.ctx.modulus),
        }
    }

    /// Valuation of the representative, capped at the level.
    pub fn valuation(&self) -> u32 {
        if self.value == 0 {
            return self.ctx.n;
        }
        valuation(self.value as i128, self.ctx.p).unwrap()
    }

    fn check(&self, other: &Self) {
        assert_eq!(self.ctx, other.ctx, "residue ring mismatch");
    }
}

impl fmt::Display for ResidueElem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} mod {}^{}", self.value, self.ctx.p, self.ctx.n)
    }
}

impl Add for ResidueElem {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.check(&rhs);
        let m = self.ctx.modulus;
        Self {
            ctx: self.ctx,
            value: ((self.value as u128 + rhs.value as u128) % m as u128) as u64,
        }
    }
}

impl Sub for ResidueElem {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.check(&rhs);
        let m = self.ctx.modulus;
        Self {
            ctx: self.ctx,
            value: ((self.value as u128 + m as u128 - rhs.value as u128) % m as u128) as u64,
        }
    }
}

impl Mul for ResidueElem {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.check(&rhs);
        Self {
            ctx: self.ctx,
            value: mul_mod(self.value, rhs.value, self.ctx.modulus),
        }
    }
}

impl Neg for ResidueElem {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            ctx: self.ctx,
            value: (self.ctx.modulus - self.value) % self.ctx.modulus,
        }
    }
}

/// The class of `num / p^m` in `Q_p/Z_p`, kept in lowest terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PadicPhase {
    p: u64,
    num: u64,
    m: u32,
}

impl PadicPhase {
    pub fn new(p: u64, num: i128, m: u32) -> Self {
        let modulus = checked_pow(p, m).expect("phase denominator overflow");
        let mut num = reduce_i128(num, modulus);
        let mut m = m;
        while m > 0 && num % p == 0 {
            num /= p;
            m -= 1;
        }
        if m == 0 {
            num = 0;
        }
        Self { p, num, m }
    }

    pub fn zero(p: u64) -> Self {
        Self { p, num: 0, m: 0 }
    }

    pub fn p(&self) -> u64 {
        self.p
    }

    pub fn numerator(&self) -> u64 {
        self.num
    }

    pub fn denominator_exp(&self) -> u32 {
        self.m
    }

    pub fn is_integral(&self) -> bool {
        self.m == 0
    }

    /// Representative of the fractional part in `[0, 1)`.
    pub fn frac(&self) -> f64 {
        if self.m == 0 {
            return 0.0;
        }
        self.num as f64 / checked_pow(self.p, self.m).unwrap() as f64
    }

    pub fn scale(&self, k: i128) -> Self {
        let modulus = checked_pow(self.p, self.m).unwrap() as i128;
        Self::new(self.p, (self.num as i128 * k.rem_euclid(modulus)) % modulus, self.m)
    }
}

impl Add for PadicPhase {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        assert_eq!(self.p, rhs.p, "phases at different primes");
        let m = self.m.max(rhs.m);
        let a = self.num as i128 * checked_pow(self.p, m - self.m).unwrap() as i128;
        let b = rhs.num as i128 * checked_pow(self.p, m - rhs.m).unwrap() as i128;
        Self::new(self.p, a + b, m)
    }
}

impl Neg for PadicPhase {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(self.p, -(self.num as i128), self.m)
    }
}

/// `e^{2 pi i a / N}` with the angle reduced before the floating conversion.
pub fn root_of_unity(a: u64, order: u64) -> Complex64 {
    let a = a % order;
    if a == 0 {
        return Complex64::new(1.0, 0.0);
    }
    let (s, c) = (TAU * (a as f64 / order as f64)).sin_cos();
    Complex64::new(c, s)
}

/// The local additive character `psi_p(a/p^m) = e^{2 pi i a/p^m}`.
pub fn psi(x: &PadicPhase) -> Complex64 {
    if x.m == 0 {
        return Complex64::new(1.0, 0.0);
    }
    root_of_unity(x.num, checked_pow(x.p, x.m).unwrap())
}

pub fn psi_exact(x: &PadicPhase, ctx: &ResidueCtx) -> Result<CycloSum> {
    if x.p != ctx.p {
        return Err(Error::RingMismatch);
    }
    if x.m > ctx.n {
        return Err(Error::LevelTooLow {
            need: x.m,
            have: ctx.n,
        });
    }
    let shift = checked_pow(ctx.p, ctx.n - x.m).unwrap();
    Ok(CycloSum::basis(ctx.p, ctx.n, (x.num * shift) as usize))
}

/// An element `sum c_i zeta^i` of `Z[zeta_{p^n}]` written in the group-ring basis.
///
/// Equality is decided on the canonical representative modulo the cyclotomic
/// polynomial, so two different coefficient vectors can be equal.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CycloSum {
    p: u64,
    n: u32,
    coeffs: Vec<i64>,
}

impl CycloSum {
    pub fn zero(p: u64, n: u32) -> Self {
        let order = checked_pow(p, n).expect("cyclotomic order overflow") as usize;
        Self {
            p,
            n,
            coeffs: vec![0; order],
        }
    }

    pub fn constant(p: u64, n: u32, c: i64) -> Self {
        let mut z = Self::zero(p, n);
        z.coeffs[0] = c;
        z
    }

    pub fn one(p: u64, n: u32) -> Self {
        Self::constant(p, n, 1)
    }

    pub fn basis(p: u64, n: u32, i: usize) -> Self {
        let mut z = Self::zero(p, n);
        let len = z.coeffs.len();
        z.coeffs[i % len] = 1;
        z
    }

    /// `sum_i counts[i] zeta^i` from a histogram of exponents.
    pub fn from_counts(p: u64, n: u32, counts: &[u64]) -> Self {
        let mut z = Self::zero(p, n);
        assert_eq!(counts.len(), z.coeffs.len(), "histogram length");
        for (c, &h) in z.coeffs.iter_mut().zip(counts) {
            *c = i64::try_from(h).expect("count overflow");
        }
        z
    }

    pub fn from_coeffs(p: u64, n: u32, coeffs: Vec<i64>) -> Self {
        let z = Self::zero(p, n);
        assert_eq!(coeffs.len(), z.coeffs.len(), "coefficient length");
        Self { p, n, coeffs }
    }

    pub fn p(&self) -> u64 {
        self.p
    }

    pub fn level(&self) -> u32 {
        self.n
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[i64] {
        &self.coeffs
    }

    /// Re-expresses the element in `Z[zeta_{p^k}]` for `k >= n`.
    pub fn lift(&self, k: u32) -> Self {
        assert!(k >= self.n, "cannot lift to a lower level");
        if k == self.n {
            return self.clone();
        }
        let step = checked_pow(self.p, k - self.n).unwrap() as usize;
        let mut z = Self::zero(self.p, k);
        for (i, &c) in self.coeffs.iter().enumerate() {
            z.coeffs[i * step] = c;
        }
        z
    }

    /// Canonical coefficients: the top fibre `i >= (p-1) p^{n-1}` is cleared using
    /// `sum_j zeta^{r + j p^{n-1}} = 0`. The remaining coefficients are coordinates
    /// in a Z-basis, so equal elements have equal canonical forms.
    pub fn canonical(&self) -> Vec<i64> {
        let mut c = self.coeffs.clone();
        if self.n == 0 {
            return c;
        }
        let stride = c.len() / self.p as usize;
        let top = (self.p as usize - 1) * stride;
        for r in 0..stride {
            let k = c[top + r];
            if k != 0 {
                for j in 0..self.p as usize {
                    c[r + j * stride] -= k;
                }
            }
        }
        c
    }

    pub fn is_zero(&self) -> bool {
        self.canonical().iter().all(|&c| c == 0)
    }

    pub fn exact_eq(&self, other: &Self) -> bool {
        assert_eq!(self.p, other.p, "cyclotomic sums at different primes");
        let k = self.n.max(other.n);
        self.lift(k).canonical() == other.lift(k).canonical()
    }

    pub fn scale(&self, k: i64) -> Self {
        Self {
            p: self.p,
            n: self.n,
            coeffs: self.coeffs.iter().map(|c| c * k).collect(),
        }
    }

    /// Applies the Galois automorphism `zeta -> zeta^u` for a unit `u`.
    pub fn galois(&self, u: u64) -> Self {
        assert!(self.n == 0 || u % self.p != 0, "galois twist by a non-unit");
        let len = self.coeffs.len();
        let mut z = Self::zero(self.p, self.n);
        for (i, &c) in self.coeffs.iter().enumerate() {
            z.coeffs[mul_mod(i as u64, u, len as u64) as usize] += c;
        }
        z
    }

    pub fn complexify(&self) -> Complex64 {
        let order = self.coeffs.len() as u64;
        let terms: Vec<Complex64> = self
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0)
            .map(|(i, &c)| root_of_unity(i as u64, order) * c as f64)
            .collect();
        tree_sum(&terms)
    }

    fn aligned(&self, other: &Self) -> (Self, Self) {
        assert_eq!(self.p, other.p, "cyclotomic sums at different primes");
        let k = self.n.max(other.n);
        (self.lift(k), other.lift(k))
    }
}

impl PartialEq for CycloSum {
    fn eq(&self, other: &Self) -> bool {
        self.exact_eq(other)
    }
}

impl Add for &CycloSum {
    type Output = CycloSum;
    fn add(self, rhs: Self) -> CycloSum {
        let (mut a, b) = self.aligned(rhs);
        for (x, y) in a.coeffs.iter_mut().zip(&b.coeffs) {
            *x += y;
        }
        a
    }
}

impl Sub for &CycloSum {
    type Output = CycloSum;
    fn sub(self, rhs: Self) -> CycloSum {
        self + &rhs.scale(-1)
    }
}

impl Mul for &CycloSum {
    type Output = CycloSum;
    fn mul(self, rhs: Self) -> CycloSum {
        let (a, b) = self.aligned(rhs);
        let len = a.coeffs.len();
        let mut z = CycloSum::zero(a.p, a.n);
        for (i, &x) in a.coeffs.iter().enumerate().filter(|(_, &x)| x != 0) {
            for (j, &y) in b.coeffs.iter().enumerate().filter(|(_, &y)| y != 0) {
                z.coeffs[(i + j) % len] += x * y;
            }
        }
        z
    }
}

/// `sum / p^den_exp`: the exact form of a normalized character sum.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExactValue {
    pub sum: CycloSum,
    pub den_exp: u32,
}

impl ExactValue {
    pub fn new(sum: CycloSum, den_exp: u32) -> Self {
        Self { sum, den_exp }
    }

    /// The rational number `p^{-k}` at cyclotomic level `n`.
    pub fn inverse_power(p: u64, n: u32, k: u32) -> Self {
        Self::new(CycloSum::one(p, n), k)
    }

    pub fn zero(p: u64, n: u32) -> Self {
        Self::new(CycloSum::zero(p, n), 0)
    }

    pub fn complexify(&self) -> Complex64 {
        let d = (self.sum.p as f64).powi(self.den_exp as i32);
        self.sum.complexify() / d
    }

    pub fn is_zero(&self) -> bool {
        self.sum.is_zero()
    }

    /// Cross-multiplies to a common denominator and compares canonical forms.
    pub fn exact_eq(&self, other: &Self) -> bool {
        let p = self.sum.p as i64;
        let d = self.den_exp.max(other.den_exp);
        let a = self.sum.scale(p.pow(d - self.den_exp));
        let b = other.sum.scale(p.pow(d - other.den_exp));
        a.exact_eq(&b)
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self::new(&self.sum * &other.sum, self.den_exp + other.den_exp)
    }
}

impl PartialEq for ExactValue {
    fn eq(&self, other: &Self) -> bool {
        self.exact_eq(other)
    }
}

/// Structure of `(Z/p^k)^x` as a product of cyclic groups with a table of
/// discrete logarithms.
#[derive(Clone, Debug)]
pub struct UnitGroup {
    p: u64,
    k: u32,
    modulus: u64,
    gens: Vec<(u64, u64)>,
    logs: Vec<Vec<u64>>,
}

impl UnitGroup {
    pub fn new(p: u64, k: u32) -> Result<Self> {
        let ctx = ResidueCtx::new(p, k)?;
        let modulus = ctx.modulus();
        let gens: Vec<(u64, u64)> = if k == 0 {
            vec![]
        } else if p == 2 {
            match k {
                1 => vec![],
                2 => vec![(modulus - 1, 2)],
                _ => vec![(modulus - 1, 2), (5, modulus / 4)],
            }
        } else {
            vec![(primitive_root(p, k), ctx.unit_count())]
        };
        let mut logs = vec![Vec::new(); modulus as usize];
        let mut exps = vec![0u64; gens.len()];
        // Walk every exponent vector once; each unit is hit exactly once.
        loop {
            let mut u = 1u64 % modulus;
            for (&(g, _), &e) in gens.iter().zip(&exps) {
                u = mul_mod(u, mod_pow(g, e, modulus), modulus);
            }
            if !gens.is_empty() && !logs[u as usize].is_empty() {
                return Err(Error::Invalid(format!("unit group of {p}^{k}: generators not independent")));
            }
            logs[u as usize] = exps.clone();
            let mut i = 0;
            loop {
                if i == gens.len() {
                    return Ok(Self {
                        p,
                        k,
                        modulus,
                        gens,
                        logs,
                    });
                }
                exps[i] += 1;
                if exps[i] < gens[i].1 {
                    break;
                }
                exps[i] = 0;
                i += 1;
            }
        }
    }

    pub fn generators(&self) -> &[(u64, u64)] {
        &self.gens
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn log(&self, u: u64) -> Option<&[u64]> {
        let u = u % self.modulus;
        if self.k > 0 && u % self.p == 0 {
            return None;
        }
        Some(&self.logs[u as usize])
    }
}

fn primitive_root(p: u64, k: u32) -> u64 {
    let ctx = ResidueCtx::new(p, k).unwrap();
    let m = ctx.modulus();
    let phi = ctx.unit_count();
    let mut factors = vec![];
    let mut r = phi;
    let mut d = 2;
    while d * d <= r {
        if r % d == 0 {
            factors.push(d);
            while r % d == 0 {
                r /= d;
            }
        }
        d += 1;
    }
    if r > 1 {
        factors.push(r);
    }
    (2..m)
        .find(|&g| g % p != 0 && factors.iter().all(|&f| mod_pow(g, phi / f, m) != 1))
        .unwrap_or(1)
}

/// A character of `(Z/p^k)^x`, stored as one exponent per cyclic generator:
/// `chi(g_i) = e^{2 pi i e_i / ord(g_i)}`.
#[derive(Clone, Debug)]
pub struct RamifiedPart {
    group: UnitGroup,
    exps: Vec<u64>,
    order: u64,
}

impl RamifiedPart {
    pub fn new(p: u64, k: u32, exps: Vec<u64>) -> Result<Self> {
        let group = UnitGroup::new(p, k)?;
        if exps.len() != group.gens.len() {
            return Err(Error::Invalid(format!(
                "expected {} generator exponents, got {}",
                group.gens.len(),
                exps.len()
            )));
        }
        let order = group.gens.iter().map(|g| g.1).fold(1, num_integer::lcm);
        let exps: Vec<u64> = exps.iter().zip(&group.gens).map(|(e, g)| e % g.1).collect();
        let part = Self { group, exps, order };
        // chi(g)^{ord g} must be 1 for each generator.
        for (i, &(g, ord)) in part.group.gens.iter().enumerate() {
            let e = part.exponent(g).unwrap();
            if mul_mod(e, ord, part.order) != 0 || e != part.exps[i] * (part.order / ord) % part.order {
                return Err(Error::Invalid("not a homomorphism on generators".into()));
            }
        }
        Ok(part)
    }

    /// `chi(u) = e^{2 pi i exponent(u) / order}`.
    pub fn exponent(&self, u: u64) -> Option<u64> {
        let logs = self.group.log(u)?;
        let mut e = 0u64;
        for ((l, x), g) in logs.iter().zip(&self.exps).zip(&self.group.gens) {
            e = (e + l * x % g.1 * (self.order / g.1)) % self.order;
        }
        Some(e)
    }

    pub fn order(&self) -> u64 {
        self.order
    }

    pub fn level(&self) -> u32 {
        self.group.k
    }

    pub fn prime(&self) -> u64 {
        self.group.p
    }

    /// `p^k`, the modulus the character is defined on.
    pub fn group_modulus(&self) -> u64 {
        self.group.modulus
    }

    pub fn is_trivial(&self) -> bool {
        self.exps.iter().all(|&e| e == 0)
    }

    /// Smallest `c` with the character trivial on `1 + p^c Z_p`.
    pub fn conductor(&self) -> u32 {
        let p = self.group.p;
        let m = self.group.modulus;
        (0..=self.group.k)
            .find(|&c| {
                let step = checked_pow(p, c).unwrap();
                (0..m)
                    .filter(|u| u % p != 0 && u % step == 1 % step)
                    .all(|u| self.exponent(u) == Some(0))
            })
            .unwrap_or(self.group.k)
    }
}

#[derive(Clone, Debug)]
pub struct UnitChar {
    z: Complex64,
    ram: Option<RamifiedPart>,
}

impl UnitChar {
    pub fn unramified(z: Complex64) -> Result<Self> {
        if (z.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Invalid(format!("chi(p) = {z} is not on the unit circle")));
        }
        Ok(Self { z, ram: None })
    }

    pub fn trivial() -> Self {
        Self {
            z: Complex64::new(1.0, 0.0),
            ram: None,
        }
    }

    pub fn ramified(z: Complex64, part: RamifiedPart) -> Result<Self> {
        let mut c = Self::unramified(z)?;
        if !part.is_trivial() {
            c.ram = Some(part);
        }
        Ok(c)
    }

    /// The Legendre symbol mod an odd prime, with `chi(p) = z`.
    pub fn quadratic(p: u64, z: Complex64) -> Result<Self> {
        if p == 2 {
            return Err(Error::Invalid("no quadratic character of conductor 2".into()));
        }
        let group = UnitGroup::new(p, 1)?;
        let ord = group.gens[0].1;
        Self::ramified(z, RamifiedPart::new(p, 1, vec![ord / 2])?)
    }

    pub fn z(&self) -> Complex64 {
        self.z
    }

    pub fn is_ramified(&self) -> bool {
        self.ram.is_some()
    }

    pub fn ramified_part(&self) -> Option<&RamifiedPart> {
        self.ram.as_ref()
    }

    pub fn conductor(&self) -> u32 {
        self.ram.as_ref().map_or(0, |r| r.conductor())
    }

    /// Value on the unit `u`, given modulo `p^k`.
    pub fn unit_value(&self, u: u64) -> Result<Complex64> {
        match &self.ram {
            None => Ok(Complex64::new(1.0, 0.0)),
            Some(r) => r
                .exponent(u)
                .map(|e| root_of_unity(e, r.order))
                .ok_or_else(|| Error::NotUnit(u.to_string())),
        }
    }
}

/// `chi(p^v u) = chi(p)^v chi(u)`.
pub fn char_eval(chi: &UnitChar, v: i64, u: u64) -> Result<Complex64> {
    Ok(chi.z.powi(v as i32) * chi.unit_value(u)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn psi_examples() {
        assert_eq!(psi(&PadicPhase::zero(5)), Complex64::new(1.0, 0.0));
        assert!(close(psi(&PadicPhase::new(2, 1, 1)), Complex64::new(-1.0, 0.0), 1e-15));
        let w = Complex64::from_polar(1.0, TAU / 3.0);
        assert!(close(psi(&PadicPhase::new(3, 1, 1)), w, 1e-15));
    }

    #[test]
    fn phase_normalizes_to_lowest_terms() {
        let x = PadicPhase::new(3, 6, 2);
        assert_eq!(x, PadicPhase::new(3, 2, 1));
        assert!(PadicPhase::new(3, 9, 2).is_integral());
        assert_eq!(PadicPhase::new(2, -1, 2), PadicPhase::new(2, 3, 2));
    }

    #[test]
    fn psi_exact_basis() {
        let ctx = ResidueCtx::new(3, 1).unwrap();
        assert!(psi_exact(&PadicPhase::zero(3), &ctx)
            .unwrap()
            .exact_eq(&CycloSum::one(3, 1)));
        assert_eq!(psi_exact(&PadicPhase::new(3, 1, 1), &ctx).unwrap().coeffs(), &[0, 1, 0]);
        let low = ResidueCtx::new(3, 1).unwrap();
        assert!(matches!(
            psi_exact(&PadicPhase::new(3, 1, 2), &low),
            Err(Error::LevelTooLow { need: 2, have: 1 })
        ));
    }

    #[test]
    fn psi_exact_matches_float_on_random_phases() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let p = [2u64, 3, 5, 7][rng.gen_range(0..4)];
            let n = rng.gen_range(0..4);
            let m = rng.gen_range(0..=n);
            let x = PadicPhase::new(p, rng.gen_range(-1000..1000), m);
            let ctx = ResidueCtx::new(p, n).unwrap();
            let e = psi_exact(&x, &ctx).unwrap();
            assert!(close(e.complexify(), psi(&x), 1e-12));
        }
    }

    #[test]
    fn full_character_sum_vanishes() {
        for (p, n) in [(2, 1), (2, 3), (3, 2), (5, 1), (7, 2)] {
            let ctx = ResidueCtx::new(p, n).unwrap();
            let mut acc = CycloSum::zero(p, n);
            for a in 0..ctx.modulus() {
                acc = &acc + &psi_exact(&PadicPhase::new(p, a as i128, n), &ctx).unwrap();
            }
            assert!(acc.is_zero(), "p={p} n={n}");
            let mut triv = CycloSum::zero(p, n);
            for _ in 0..ctx.modulus() {
                triv = &triv + &CycloSum::one(p, n);
            }
            assert!(triv.exact_eq(&CycloSum::constant(p, n, ctx.modulus() as i64)));
        }
    }

    #[test]
    fn canonical_form_detects_cyclotomic_relation() {
        // 1 + zeta + zeta^2 = 0 in Z[zeta_3].
        let z = CycloSum::from_coeffs(3, 1, vec![1, 1, 1]);
        assert!(z.is_zero());
        // zeta_9^3 + zeta_9^6 = -1.
        let w = CycloSum::from_coeffs(3, 2, vec![0, 0, 0, 1, 0, 0, 1, 0, 0]);
        assert!(w.exact_eq(&CycloSum::constant(3, 2, -1)));
        assert!(!CycloSum::basis(3, 2, 1).exact_eq(&CycloSum::basis(3, 2, 2)));
        // Mixed levels: zeta_3 = zeta_9^3.
        assert!(CycloSum::basis(3, 1, 1).exact_eq(&CycloSum::basis(3, 2, 3)));
    }

    #[test]
    fn cyclo_complexify_matches_direct_evaluation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (p, n) = [(2u64, 3u32), (3, 2), (5, 2)][rng.gen_range(0..3)];
            let order = checked_pow(p, n).unwrap();
            let coeffs: Vec<i64> = (0..order).map(|_| rng.gen_range(-20..20)).collect();
            let z = CycloSum::from_coeffs(p, n, coeffs.clone());
            let direct: Complex64 = coeffs
                .iter()
                .enumerate()
                .map(|(i, &c)| Complex64::from_polar(c as f64, TAU * i as f64 / order as f64))
                .sum();
            assert!(close(z.complexify(), direct, 1e-9));
            // canonical representative has the same complex value
            let canon = CycloSum::from_coeffs(p, n, z.canonical());
            assert!(close(canon.complexify(), direct, 1e-9));
        }
    }

    #[test]
    fn char_eval_examples() {
        let triv = UnitChar::trivial();
        assert_eq!(char_eval(&triv, 5, 2).unwrap(), Complex64::new(1.0, 0.0));
        let i = UnitChar::unramified(Complex64::i()).unwrap();
        assert!(close(char_eval(&i, 2, 1).unwrap(), Complex64::new(-1.0, 0.0), 1e-15));
        let leg = UnitChar::quadratic(3, Complex64::new(1.0, 0.0)).unwrap();
        assert!(close(char_eval(&leg, 0, 2).unwrap(), Complex64::new(-1.0, 0.0), 1e-15));
        assert!(matches!(char_eval(&leg, 0, 3), Err(Error::NotUnit(_))));
        assert_eq!(leg.conductor(), 1);
    }

    fn legendre(a: u64, p: u64) -> i64 {
        match mod_pow(a, (p - 1) / 2, p) {
            0 => 0,
            1 => 1,
            _ => -1,
        }
    }

    #[test]
    fn quadratic_character_is_legendre_symbol() {
        for p in [3u64, 5, 7, 11, 13] {
            let chi = UnitChar::quadratic(p, Complex64::new(1.0, 0.0)).unwrap();
            for a in 1..p {
                let v = chi.unit_value(a).unwrap();
                assert!(close(v, Complex64::new(legendre(a, p) as f64, 0.0), 1e-12));
            }
        }
    }

    #[test]
    fn unit_group_logs_cover_units() {
        for (p, k) in [(2u64, 1u32), (2, 2), (2, 3), (2, 5), (3, 1), (3, 3), (5, 2), (7, 1)] {
            let g = UnitGroup::new(p, k).unwrap();
            let ctx = ResidueCtx::new(p, k).unwrap();
            let size: u64 = g.generators().iter().map(|x| x.1).product();
            assert_eq!(size, ctx.unit_count(), "p={p} k={k}");
            for u in ctx.units() {
                assert!(g.log(u).is_some());
            }
        }
    }

    #[test]
    fn conductors() {
        // A character of (Z/9)^x of order 3 has conductor 2; order 2 has conductor 1.
        let c3 = RamifiedPart::new(3, 2, vec![2]).unwrap();
        assert_eq!(c3.conductor(), 2);
        let c2 = RamifiedPart::new(3, 2, vec![3]).unwrap();
        assert_eq!(c2.conductor(), 1);
        // chi(-1) = -1, trivial on 5: conductor 4 at p = 2.
        let m4 = RamifiedPart::new(2, 3, vec![1, 0]).unwrap();
        assert_eq!(m4.conductor(), 2);
        let m8 = RamifiedPart::new(2, 3, vec![0, 1]).unwrap();
        assert_eq!(m8.conductor(), 3);
    }

    proptest! {
        #[test]
        fn psi_is_additive(p in prop::sample::select(vec![2u64, 3, 5]), a in -500i128..500, b in -500i128..500, m1 in 0u32..4, m2 in 0u32..4) {
            let x = PadicPhase::new(p, a, m1);
            let y = PadicPhase::new(p, b, m2);
            prop_assert!(close(psi(&(x + y)), psi(&x) * psi(&y), 1e-12));
            let ctx = ResidueCtx::new(p, 4).unwrap();
            let lhs = psi_exact(&(x + y), &ctx).unwrap();
            let rhs = &psi_exact(&x, &ctx).unwrap() * &psi_exact(&y, &ctx).unwrap();
            prop_assert!(lhs.exact_eq(&rhs));
        }

        #[test]
        fn psi_trivial_iff_integral(p in prop::sample::select(vec![2u64, 3, 5, 7]), a in -500i128..500, m in 0u32..4) {
            let x = PadicPhase::new(p, a, m);
            prop_assert_eq!(close(psi(&x), Complex64::new(1.0, 0.0), 1e-12), x.is_integral());
        }

        #[test]
        fn char_eval_is_multiplicative(v1 in -3i64..4, v2 in -3i64..4, u1 in 0u64..27, u2 in 0u64..27, e in 0u64..18) {
            prop_assume!(u1 % 3 != 0 && u2 % 3 != 0);
            let chi = UnitChar::ramified(Complex64::from_polar(1.0, 0.7), RamifiedPart::new(3, 3, vec![e]).unwrap()).unwrap();
            let lhs = char_eval(&chi, v1 + v2, u1 * u2 % 27).unwrap();
            let rhs = char_eval(&chi, v1, u1).unwrap() * char_eval(&chi, v2, u2).unwrap();
            prop_assert!(close(lhs, rhs, 1e-12));
        }

        #[test]
        fn char_eval_is_multiplicative_at_two(u1 in 0u64..32, u2 in 0u64..32, a in 0u64..2, b in 0u64..8) {
            prop_assume!(u1 % 2 == 1 && u2 % 2 == 1);
            let chi = UnitChar::ramified(Complex64::i(), RamifiedPart::new(2, 5, vec![a, b]).unwrap()).unwrap();
            let lhs = char_eval(&chi, 0, u1 * u2 % 32).unwrap();
            let rhs = char_eval(&chi, 0, u1).unwrap() * char_eval(&chi, 0, u2).unwrap();
            prop_assert!(close(lhs, rhs, 1e-12));
        }
    }
}
