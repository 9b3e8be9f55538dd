//! The unramified local zeta integral
//! `int_{Z_p} int_{V(Z_p)} 1(P(b, v) in t Z_p) psi(<alpha, v>/t) dv chi(t) |t|^s dt^x`
//! by shell-wise enumeration and in closed form, the Dirichlet series
//! `D_{chi,b,alpha}(s)`, and the ramified vanishing argument on coset data.

use crate::error::{Error, Result};
use crate::expsum::{denominator_exponent, rat_mod};
use crate::geometry::{dual_phase, pairing, rat_valuation, Mat2, VPoint};
use crate::ring::{
    checked_pow, inv_mod, mul_mod, reduce_i128, root_of_unity, CycloSum, ExactValue, RamifiedPart, ResidueCtx, UnitChar,
};
use crate::sum::tree_sum;
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Normalization of `dt^x` on `Z_p^x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitMeasure {
    /// `vol(Z_p^x) = 1 - 1/p`, the restriction of additive Haar measure.
    Haar,
    /// `vol(Z_p^x) = 1`.
    Normalized,
}

impl UnitMeasure {
    pub fn unit_volume(self, p: u64) -> f64 {
        match self {
            UnitMeasure::Haar => 1.0 - 1.0 / p as f64,
            UnitMeasure::Normalized => 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LocalZetaSpec {
    pub p: u64,
    /// A unit of `Z_p`.
    pub b: i64,
    pub alpha: VPoint<BigRational>,
    pub chi: UnitChar,
    pub s: Complex64,
    /// Largest valuation of `t` summed by the brute force.
    pub truncation: u32,
}

impl LocalZetaSpec {
    pub fn new(p: u64, b: i64, alpha: VPoint<BigRational>, chi: UnitChar, s: Complex64, truncation: u32) -> Result<Self> {
        ResidueCtx::new(p, 1)?;
        if b.rem_euclid(p as i64) == 0 {
            return Err(Error::NotUnit(format!("b = {b}")));
        }
        if truncation < 1 {
            return Err(Error::Precondition("truncation must be at least 1".into()));
        }
        if let Some(r) = chi.ramified_part() {
            if r.prime() != p {
                return Err(Error::RingMismatch);
            }
        }
        Ok(Self {
            p,
            b,
            alpha,
            chi,
            s,
            truncation,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BruteResult {
    pub value: Complex64,
    /// Bound on the shells beyond the truncation.
    pub tail_bound: f64,
    pub shells: Vec<Complex64>,
    /// For ramified characters: every shell was shown to vanish exactly.
    pub exact_zero: Option<bool>,
}

/// Histogram over `v in (Z/p^L)^6` of `<alpha, v> p^{L-m}` restricted to
/// `P(b, v) = 0 mod p^m`, where `L = m + e` and `p^e` clears the denominators
/// of `alpha`. Read as an element of `Z[zeta_{p^L}]`, divided by `p^{6L}` it is
/// `int_{V(Z_p)} 1(p^m | P) psi(<alpha, v>/p^m) dv`.
pub fn shell_histogram(p: u64, b: i64, alpha: &VPoint<BigRational>, m: u32) -> Result<(u32, Vec<u64>)> {
    let e = denominator_exponent(alpha, p);
    let level = m + e;
    let ml = checked_pow(p, level).ok_or(Error::ModulusTooLarge { p, n: level })?;
    let mq = checked_pow(p, m).unwrap();
    let scale = BigRational::from_integer(BigInt::from(checked_pow(p, e).unwrap()));
    let lin: Vec<u64> = (0..6)
        .map(|j| {
            let mut c = [0i64; 6];
            c[j] = 1;
            let ej = VPoint::from_coords(c.map(|k| BigRational::from_integer(BigInt::from(k))));
            rat_mod(&(pairing(alpha, &ej).unwrap() * scale.clone()), p, ml)
        })
        .collect::<Result<_>>()?;
    let bq = reduce_i128(b as i128, mq);
    let nq = mq as usize;
    let nl = ml as usize;
    // pair histograms indexed [quadratic value mod p^m][linear value mod p^L]
    let pair = |s: u64, l1: u64, l2: u64| {
        let mut h = vec![0u64; nq * nl];
        for u in 0..ml {
            for w in 0..ml {
                let qv = mul_mod(mul_mod(s, u % mq, mq), w % mq, mq);
                let lv = ((l1 as u128 * u as u128 + l2 as u128 * w as u128) % ml as u128) as u64;
                h[qv as usize * nl + lv as usize] += 1;
            }
        }
        h
    };
    let neg = |x: u64| (mq - x % mq) % mq;
    let h14 = pair(bq, lin[0], lin[3]);
    let h23 = pair(neg(bq), lin[1], lin[2]);
    let ht = pair(neg(1), lin[4], lin[5]);
    let mut h12 = vec![0u64; nq * nl];
    let nz14: Vec<(usize, u64)> = h14.iter().copied().enumerate().filter(|x| x.1 != 0).collect();
    let nz23: Vec<(usize, u64)> = h23.iter().copied().enumerate().filter(|x| x.1 != 0).collect();
    for &(i, x) in &nz14 {
        let (qi, li) = (i / nl, i % nl);
        for &(j, y) in &nz23 {
            let (qj, lj) = (j / nl, j % nl);
            h12[((qi + qj) % nq) * nl + (li + lj) % nl] += x * y;
        }
    }
    let mut out = vec![0u64; nl];
    for (i, &x) in h12.iter().enumerate().filter(|x| *x.1 != 0) {
        let (qi, li) = (i / nl, i % nl);
        let qt = (nq - qi) % nq;
        for lt in 0..nl {
            let y = ht[qt * nl + lt];
            if y != 0 {
                out[(li + lt) % nl] += x * y;
            }
        }
    }
    Ok((level, out))
}

/// Upper bound on the shells `m > truncation`: `|I_m| <= vol{p^m | P} <= 2 p^{-m}`.
pub fn brute_tail_bound(p: u64, sigma: f64, truncation: u32, measure: UnitMeasure) -> f64 {
    let r = (p as f64).powf(-(sigma + 1.0));
    2.0 * measure.unit_volume(p) * r.powi(truncation as i32 + 1) / (1.0 - r)
}

pub fn local_zeta_brute(spec: &LocalZetaSpec, measure: UnitMeasure) -> Result<BruteResult> {
    if spec.s.re <= 0.0 {
        return Err(Error::Precondition(format!("brute force needs Re(s) > 0, got {}", spec.s)));
    }
    let p = spec.p;
    let vol = measure.unit_volume(p);
    let z = spec.chi.z();
    let mut shells = vec![];
    let mut all_zero = true;
    for m in 0..=spec.truncation {
        let (level, hist) = shell_histogram(p, spec.b, &spec.alpha, m)?;
        let base = CycloSum::from_counts(p, level, &hist);
        let weight = z.powi(m as i32) * Complex64::new(p as f64, 0.0).powc(-spec.s * m as f64) * vol;
        let norm = (p as f64).powi(6 * level as i32);
        let avg = match spec.chi.ramified_part() {
            None => {
                // average of I_m(u) = galois_{u^{-1}}(I_m(1)) over units u mod p^L
                let ctx = ResidueCtx::new(p, level)?;
                let mut acc = CycloSum::zero(p, level);
                for u in ctx.units() {
                    acc = &acc + &base.galois(inv_mod(u, ctx.modulus()).unwrap());
                }
                acc.complexify() / (ctx.unit_count() as f64 * norm)
            }
            Some(r) => {
                let (zero, value) = ramified_average(&base, r)?;
                all_zero &= zero;
                value / norm
            }
        };
        shells.push(weight * avg);
    }
    Ok(BruteResult {
        value: tree_sum(&shells),
        tail_bound: brute_tail_bound(p, spec.s.re, spec.truncation, measure),
        shells,
        exact_zero: spec.chi.is_ramified().then_some(all_zero),
    })
}

/// `avg_u chi(u) galois_{u^{-1}}(base)` over units mod `p^max(L, k)`. Units are
/// grouped by the value of `chi`; if all class sums agree exactly, the average
/// is an exact multiple of a full sum of roots of unity, hence zero.
fn ramified_average(base: &CycloSum, r: &RamifiedPart) -> Result<(bool, Complex64)> {
    let p = base.p();
    let level = base.level().max(r.level());
    let ctx = ResidueCtx::new(p, level)?;
    let lmod = checked_pow(p, base.level()).unwrap();
    let kmod = r.group_modulus();
    let mut classes: BTreeMap<u64, CycloSum> = BTreeMap::new();
    for u in ctx.units() {
        let e = r.exponent(u % kmod).ok_or_else(|| Error::NotUnit(u.to_string()))?;
        let term = base.galois(inv_mod(u % lmod, lmod).unwrap_or(0));
        let slot = classes.entry(e).or_insert_with(|| CycloSum::zero(p, base.level()));
        *slot = &*slot + &term;
    }
    let first = classes.values().next().unwrap();
    let exact_zero = classes.len() > 1 && classes.values().all(|c| c.exact_eq(first));
    let terms: Vec<Complex64> = classes
        .iter()
        .map(|(&e, c)| root_of_unity(e, r.order()) * c.complexify())
        .collect();
    Ok((exact_zero, tree_sum(&terms) / ctx.unit_count() as f64))
}

/// `int_{Z_p} 1(a in t Z_p) chi(t) |t|^w dt^x` for an unramified `chi`.
fn divisor_integral(p: u64, a: &BigRational, z: Complex64, w: Complex64, vol: f64) -> Complex64 {
    let r = z * Complex64::new(p as f64, 0.0).powc(-w);
    match rat_valuation(a, p) {
        None => vol / (1.0 - r),
        Some(v) if v < 0 => Complex64::zero(),
        Some(v) => {
            let terms: Vec<Complex64> = (0..=v).map(|j| r.powi(j as i32)).collect();
            tree_sum(&terms) * vol
        }
    }
}

/// `L(4+s, chi)^{-1} sum_k chi(p)^k p^{-k(1+s)} 1(p^{-k} alpha integral)
///  int 1_t(P(b^{-1}, p^{-k} alpha)) chi(t) |t|^{s+3} dt^x`.
pub fn local_zeta_closed(spec: &LocalZetaSpec, measure: UnitMeasure) -> Result<Complex64> {
    if spec.chi.is_ramified() {
        return Ok(Complex64::zero());
    }
    let p = spec.p;
    let pc = Complex64::new(p as f64, 0.0);
    let z = spec.chi.z();
    let s = spec.s;
    let vol = measure.unit_volume(p);
    let pre = 1.0 - z * pc.powc(-4.0 - s);
    let b = BigRational::from_integer(BigInt::from(spec.b));
    let kratio = z * pc.powc(-1.0 - s);
    let coords = spec.alpha.coords();
    let vals: Vec<i64> = coords.iter().filter_map(|r| rat_valuation(r, p)).collect();
    if vals.is_empty() {
        let j0 = divisor_integral(p, &BigRational::zero(), z, s + 3.0, vol);
        return Ok(pre * j0 / (1.0 - kratio));
    }
    let emin = *vals.iter().min().unwrap();
    let mut terms = vec![];
    for k in 0..=emin.max(-1) {
        let scale = BigRational::new(BigInt::one(), BigInt::from(p).pow(k as u32));
        let a = dual_phase(&b, &spec.alpha.scale(&scale))?;
        terms.push(kratio.powi(k as i32) * divisor_integral(p, &a, z, s + 3.0, vol));
    }
    Ok(pre * tree_sum(&terms))
}

/// Euler factor `(1 - chi(p) p^{-s})^{-1}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LFactor {
    pub p: u64,
    pub chi_p: Complex64,
    pub s: Complex64,
}

impl LFactor {
    pub fn value(&self) -> Complex64 {
        1.0 / (1.0 - self.chi_p * Complex64::new(self.p as f64, 0.0).powc(-self.s))
    }
}

/// A unitary Hecke character of `Q` that is unramified at the primes used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GlobalChar {
    Trivial,
    /// `|.|^{it}`, so `chi(p) = p^{-it}`.
    AbsPower { t: f64 },
    /// Given values at finitely many primes, trivial elsewhere.
    Table { values: BTreeMap<u64, Complex64> },
}

impl GlobalChar {
    pub fn at(&self, p: u64) -> Complex64 {
        match self {
            GlobalChar::Trivial => Complex64::new(1.0, 0.0),
            GlobalChar::AbsPower { t } => Complex64::new(p as f64, 0.0).powc(Complex64::new(0.0, -t)),
            GlobalChar::Table { values } => values.get(&p).copied().unwrap_or(Complex64::new(1.0, 0.0)),
        }
    }

    pub fn is_trivial(&self) -> bool {
        match self {
            GlobalChar::Trivial => true,
            GlobalChar::AbsPower { t } => *t == 0.0,
            GlobalChar::Table { values } => values.values().all(|z| (z - 1.0).norm() == 0.0),
        }
    }
}

pub fn primes_below(n: u64) -> Vec<u64> {
    if n < 3 {
        return vec![];
    }
    let mut sieve = vec![true; n as usize];
    sieve[0] = false;
    sieve[1] = false;
    let mut i = 2;
    while i * i < n as usize {
        if sieve[i] {
            let mut j = i * i;
            while j < n as usize {
                sieve[j] = false;
                j += i;
            }
        }
        i += 1;
    }
    (0..n).filter(|&k| sieve[k as usize]).collect()
}

/// A value with an absolute error bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certified {
    pub value: Complex64,
    pub bound: f64,
}

/// `prod_{p < cutoff, p not in excluded} (1 - chi(p) p^{-s})^{sign}` with a
/// bound on the omitted primes; needs `Re(s) > 1`.
pub fn euler_product(chi: &GlobalChar, s: Complex64, cutoff: u64, excluded: &[u64], inverse: bool) -> Result<Certified> {
    let sigma = s.re;
    if sigma <= 1.0 {
        return Err(Error::Precondition(format!("Euler product needs Re(s) > 1, got {s}")));
    }
    let mut log = Complex64::zero();
    let mut logs = vec![];
    for p in primes_below(cutoff) {
        if excluded.contains(&p) {
            continue;
        }
        let f = LFactor { p, chi_p: chi.at(p), s };
        logs.push(f.value().ln());
    }
    log += tree_sum(&logs);
    let value = if inverse { (-log).exp() } else { log.exp() };
    // |log of the omitted factors| <= sum_{n >= X} n^{-sigma} / (1 - X^{-sigma})
    let x = cutoff.max(2) as f64;
    let tail = (x.powf(-sigma) + x.powf(1.0 - sigma) / (sigma - 1.0)) / (1.0 - x.powf(-sigma));
    Ok(Certified {
        value,
        bound: value.norm() * (tail.exp() - 1.0),
    })
}

const BERNOULLI_2K: [f64; 10] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
];

/// Riemann zeta by Euler-Maclaurin summation; valid for all `s != 1` of
/// moderate size.
pub fn zeta(s: Complex64) -> Result<Complex64> {
    if (s - 1.0).norm() == 0.0 {
        return Err(Error::Pole(1.0));
    }
    let n = 40u32;
    let nf = Complex64::new(n as f64, 0.0);
    let head: Vec<Complex64> = (1..n).map(|k| Complex64::new(k as f64, 0.0).powc(-s)).collect();
    let mut acc = tree_sum(&head) + nf.powc(1.0 - s) / (s - 1.0) + nf.powc(-s) * 0.5;
    let mut rising = s;
    let mut fact = 2.0;
    for (k, b) in BERNOULLI_2K.iter().enumerate() {
        let k = k as i32 + 1;
        acc += b / fact * rising * nf.powc(-s - (2 * k - 1) as f64);
        rising *= (s + (2 * k - 1) as f64) * (s + (2 * k) as f64);
        fact *= ((2 * k + 1) * (2 * k + 2)) as f64;
    }
    Ok(acc)
}

/// `L^S(s, chi)` by analytic continuation: `zeta(s + it)` for `|.|^{it}`,
/// corrected at the tabulated primes, with the excluded Euler factors removed.
pub fn l_function(chi: &GlobalChar, s: Complex64, excluded: &[u64]) -> Result<Complex64> {
    let mut v = match chi {
        GlobalChar::AbsPower { t } => zeta(s + Complex64::new(0.0, *t))?,
        _ => zeta(s)?,
    };
    if let GlobalChar::Table { values } = chi {
        for (&p, &z) in values {
            let triv = LFactor { p, chi_p: Complex64::new(1.0, 0.0), s }.value();
            v = v / triv * LFactor { p, chi_p: z, s }.value();
        }
    }
    for &p in excluded {
        v /= LFactor { p, chi_p: chi.at(p), s }.value();
    }
    Ok(v)
}

/// `Res_{s=1} zeta^S(s) = prod_{p in S} (1 - 1/p)`.
pub fn zeta_residue(excluded: &[u64]) -> f64 {
    excluded.iter().map(|&p| 1.0 - 1.0 / p as f64).product()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DMode {
    Value,
    /// Residue at the pole `s = -2` (trivial character, quadric locus).
    Residue,
}

#[derive(Clone, Debug, Serialize)]
pub struct DValue {
    pub value: Complex64,
    pub on_quadric: bool,
}

/// `D_{chi,b,alpha}(s) = L^S(s+4, chi)^{-1} int_{hat Z^S} 1_t(P(b^{-1}, alpha)) chi(t) |t|^{s+3} dt^x`
/// with `vol(Z_p^x) = 1`. On the quadric it is `L^S(s+3)/L^S(s+4)`; off it, the
/// integral is a finite product over the primes dividing `P(b^{-1}, alpha)`.
pub fn dirichlet_d(
    b: &BigRational,
    alpha: &VPoint<BigRational>,
    chi: &GlobalChar,
    s: Complex64,
    excluded: &[u64],
    mode: DMode,
) -> Result<DValue> {
    let a = dual_phase(b, alpha)?;
    let on_quadric = a.is_zero();
    let pole = Complex64::new(-2.0, 0.0);
    if mode == DMode::Residue {
        let value = if on_quadric && chi.is_trivial() {
            let z2 = l_function(chi, Complex64::new(2.0, 0.0), excluded)?;
            Complex64::new(zeta_residue(excluded), 0.0) / z2
        } else {
            Complex64::zero()
        };
        return Ok(DValue { value, on_quadric });
    }
    let inv_l4 = 1.0 / l_function(chi, s + 4.0, excluded)?;
    if on_quadric {
        if (s - pole).norm() == 0.0 && chi.is_trivial() {
            return Err(Error::Pole(-2.0));
        }
        let l3 = l_function(chi, s + 3.0, excluded)?;
        return Ok(DValue {
            value: l3 * inv_l4,
            on_quadric,
        });
    }
    let mut value = inv_l4;
    for (p, _) in factor_rational(&a)? {
        if excluded.contains(&p) {
            continue;
        }
        value *= divisor_integral(p, &a, chi.at(p), s + 3.0, 1.0);
    }
    Ok(DValue { value, on_quadric })
}

/// `D` with `L^S(s+3)`, `L^S(s+4)` replaced by Euler products over `p < cutoff`;
/// needs `Re(s) > -2`.
pub fn dirichlet_d_euler(
    b: &BigRational,
    alpha: &VPoint<BigRational>,
    chi: &GlobalChar,
    s: Complex64,
    excluded: &[u64],
    cutoff: u64,
) -> Result<Certified> {
    let a = dual_phase(b, alpha)?;
    let inv4 = euler_product(chi, s + 4.0, cutoff, excluded, true)?;
    if a.is_zero() {
        let l3 = euler_product(chi, s + 3.0, cutoff, excluded, false)?;
        let value = l3.value * inv4.value;
        let bound = l3.bound * (inv4.value.norm() + inv4.bound) + l3.value.norm() * inv4.bound;
        return Ok(Certified { value, bound });
    }
    let mut fin = Complex64::new(1.0, 0.0);
    for (p, _) in factor_rational(&a)? {
        if !excluded.contains(&p) {
            fin *= divisor_integral(p, &a, chi.at(p), s + 3.0, 1.0);
        }
    }
    Ok(Certified {
        value: inv4.value * fin,
        bound: inv4.bound * fin.norm(),
    })
}

/// Prime factorization of numerator and denominator, with signed exponents.
pub fn factor_rational(a: &BigRational) -> Result<Vec<(u64, i64)>> {
    let mut out: BTreeMap<u64, i64> = BTreeMap::new();
    for (x, sign) in [(a.numer(), 1i64), (a.denom(), -1i64)] {
        let mut n = x
            .to_i128()
            .ok_or_else(|| Error::Invalid(format!("{a} too large to factor")))?
            .unsigned_abs();
        let mut d = 2u128;
        while d * d <= n {
            while n % d == 0 {
                *out.entry(d as u64).or_insert(0) += sign;
                n /= d;
            }
            d += 1;
        }
        if n > 1 {
            *out.entry(n as u64).or_insert(0) += sign;
        }
    }
    Ok(out.into_iter().collect())
}

/// Integer matrix and vector data for `f1 = 1_{gamma + p^k gl_2(Z_p)}`,
/// `f2 = 1_{beta + p^k gl_2(Z_p)}`.
#[derive(Clone, Debug)]
pub struct CosetData {
    pub p: u64,
    pub k: u32,
    pub gamma: Mat2<i64>,
    pub beta: Mat2<i64>,
    pub b: i64,
    pub alpha: VPoint<BigRational>,
}

impl CosetData {
    /// Scales the supports of both functions by a unit.
    pub fn scaled(&self, u: i64) -> Self {
        Self {
            gamma: self.gamma.map(|x| x * u),
            beta: self.beta.map(|x| x * u),
            ..self.clone()
        }
    }
}

/// `F(t) = int_V f1(T) f2(-t1, (b det T - t1 t2)/t; t, t2) psi(<alpha, v>/t) dv`
/// at `t = p^j u` for every unit `u` mod `p^level`, as exact values.
pub fn coset_shell(data: &CosetData, j: u32, level: u32) -> Result<Vec<(u64, ExactValue)>> {
    let p = data.p;
    let k = data.k;
    let e = denominator_exponent(&data.alpha, p);
    if level < k.max(j + e) {
        return Err(Error::LevelTooLow {
            need: k.max(j + e),
            have: level,
        });
    }
    // v = v0 + p^k w with w mod p^W; the support condition needs w mod p^j and
    // the phase needs w mod p^{j - k + e}
    let wl = j.max((j + e).saturating_sub(k)).max(1);
    let wmod = checked_pow(p, wl).unwrap();
    let cond_mod = checked_pow(p, j + k).unwrap() as i128;
    let phase_level = j + e;
    let phase_ctx = ResidueCtx::new(p, phase_level)?;
    let pm = phase_ctx.modulus();
    let pk = checked_pow(p, k).unwrap() as i128;
    let pe = BigRational::from_integer(BigInt::from(checked_pow(p, e).unwrap()));
    let lin: Vec<u64> = (0..6)
        .map(|i| {
            let mut c = [0i64; 6];
            c[i] = 1;
            let ei = VPoint::from_coords(c.map(|x| BigRational::from_integer(BigInt::from(x))));
            rat_mod(&(pairing(&data.alpha, &ei).unwrap() * pe.clone()), p, pm)
        })
        .collect::<Result<_>>()?;
    let g = &data.gamma;
    let v0 = [g.a11, g.a12, g.a21, g.a22, -data.beta.a11, data.beta.a22];
    let ctx = ResidueCtx::new(p, level)?;
    let pj = checked_pow(p, j).unwrap() as i128;
    let kmod = checked_pow(p, k).unwrap() as i128;
    let total = (wmod as u128).pow(6) as u64;
    let mut out = vec![];
    for u in ctx.units() {
        let t = pj * u as i128;
        let mut hist = vec![0u64; pm as usize];
        if (t - data.beta.a21 as i128).rem_euclid(kmod) == 0 {
            let uinv = inv_mod(u % pm, pm).unwrap_or(0);
            for idx in 0..total {
                let mut w = [0i128; 6];
                let mut r = idx;
                for x in w.iter_mut() {
                    *x = (r % wmod) as i128;
                    r /= wmod;
                }
                let v: [i128; 6] = std::array::from_fn(|i| v0[i] as i128 + pk * w[i]);
                let det = v[0] * v[3] - v[1] * v[2];
                let cond = data.b as i128 * det - v[4] * v[5] - t * data.beta.a12 as i128;
                if cond.rem_euclid(cond_mod) != 0 {
                    continue;
                }
                let mut acc = 0u64;
                for i in 0..6 {
                    acc = (acc + mul_mod(lin[i], reduce_i128(v[i], pm), pm)) % pm;
                }
                hist[mul_mod(acc, uinv, pm) as usize] += 1;
            }
        }
        let sum = CycloSum::from_counts(p, phase_level, &hist);
        out.push((u, ExactValue::new(sum, 6 * (k + wl))));
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct VanishingReport {
    /// Smallest `K` with `F(t u) = F(t)` for all `u = 1 mod p^K`.
    pub stability_level: u32,
    pub conductor: u32,
    /// `int_{shell} F(t) chi(t) dt^x` up to the factor `chi(p)^j p^{-js} vol`.
    pub shell_value: Complex64,
    pub shell_exact_zero: bool,
    /// The change of variables argument applies: conductor above the stability level.
    pub annihilated: bool,
}

/// Evaluates the shell `v(t) = j` of the ramified integral on coset data and
/// decides exactly whether it vanishes.
pub fn ramified_vanishing_check(data: &CosetData, chi: &UnitChar, j: u32) -> Result<VanishingReport> {
    let p = data.p;
    let kchi = chi.ramified_part().map_or(0, |r| r.level());
    let e = denominator_exponent(&data.alpha, p);
    let level = data.k.max(j + e).max(kchi).max(1);
    let values = coset_shell(data, j, level)?;
    let modulus = checked_pow(p, level).unwrap();
    let lookup: BTreeMap<u64, &ExactValue> = values.iter().map(|(u, v)| (*u, v)).collect();
    let stability_level = (0..=level)
        .find(|&kk| {
            let step = checked_pow(p, kk).unwrap();
            values.iter().all(|(u, v)| {
                (0..modulus / step).all(|i| {
                    let h = (1 + i * step) % modulus;
                    h % p == 0 || lookup[&mul_mod(*u, h, modulus)].exact_eq(v)
                })
            })
        })
        .unwrap_or(level);
    let conductor = chi.conductor();
    let terms: Vec<Complex64> = values
        .iter()
        .map(|(u, v)| chi.unit_value(*u).unwrap() * v.complexify())
        .collect();
    let shell_value = tree_sum(&terms) / values.len() as f64;
    // Exact zero: F is constant on cosets of H = 1 + p^K and chi restricted to H
    // takes each value of a nontrivial subgroup of roots of unity equally often.
    let shell_exact_zero = match chi.ramified_part() {
        None => values.iter().all(|(_, v)| v.is_zero()),
        Some(r) => {
            let step = checked_pow(p, stability_level).unwrap();
            let kmod = r.group_modulus();
            let mut hist: BTreeMap<u64, u64> = BTreeMap::new();
            for i in 0..modulus / step {
                let h = (1 + i * step) % modulus;
                if h % p != 0 {
                    *hist.entry(r.exponent(h % kmod).unwrap()).or_insert(0) += 1;
                }
            }
            let counts: Vec<u64> = hist.values().copied().collect();
            let uniform = counts.iter().all(|&c| c == counts[0]);
            let subgroup = hist.len() > 1 && hist.keys().all(|&x| x % (r.order() / hist.len() as u64) == 0);
            (uniform && subgroup) || values.iter().all(|(_, v)| v.is_zero())
        }
    };
    Ok(VanishingReport {
        stability_level,
        conductor,
        shell_value,
        shell_exact_zero,
        annihilated: conductor > stability_level,
    })
}
