//! Finite exponential sums over `V(Z/p^n)`: the Gaussian sum of the phase
//! `P(b, v)`, its linear twist, quadric point counts, Ramanujan sums and the
//! stationary-phase evaluation.
//!
//! Sums are averages over `(Z/p^N)^6`. The exact backend builds the histogram
//! of phase numerators and reads it as an element of `Z[zeta_{p^N}]`. The
//! quadratic part of the phase splits into the pairs `(x1, x4)`, `(x2, x3)`,
//! `(t1, t2)`, so the same histogram is also available as a cyclic convolution
//! of three pair histograms; both give identical integer counts.

use crate::error::{Error, Result};
use crate::geometry::{grad_p, hessian_p, pairing, phase_p, VPoint};
use crate::ring::{
    checked_pow, inv_mod, mul_mod, psi, reduce_i128, root_of_unity, CycloSum, ExactValue, PadicPhase, ResidueCtx,
    ResidueElem,
};
use crate::sum::{par_chunked_sum, par_histogram, tree_sum};
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

pub const EXACT_BUDGET: u128 = 1 << 24;
pub const FLOAT_BUDGET: u128 = 1 << 28;

const CHUNK: u64 = 1 << 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Exact,
    Floating,
}

impl Backend {
    pub fn budget(self) -> u128 {
        match self {
            Backend::Exact => EXACT_BUDGET,
            Backend::Floating => FLOAT_BUDGET,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Backend::Exact => "exact",
            Backend::Floating => "floating",
        }
    }
}

/// How the index space is walked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// One term per point of `(Z/p^N)^6`.
    Naive,
    /// Three pair histograms and two cyclic convolutions.
    Factored,
    /// Naive when it fits the budget, factored otherwise.
    Auto,
}

#[derive(Clone, Debug)]
pub struct SumSpec {
    pub ctx: ResidueCtx,
    /// A unit modulo `p`.
    pub b: i64,
    /// Valuation of `t = p^m`.
    pub m: u32,
    /// Read p-adically; entries may have `p` in the denominator.
    pub alpha: Option<VPoint<BigRational>>,
    /// A unit; defaults to 1.
    pub x: Option<i64>,
}

impl SumSpec {
    pub fn new(ctx: ResidueCtx, b: i64, m: u32) -> Result<Self> {
        if m > ctx.n() {
            return Err(Error::Precondition(format!("m = {m} exceeds level n = {}", ctx.n())));
        }
        if b.rem_euclid(ctx.p() as i64) == 0 {
            return Err(Error::NotUnit(format!("b = {b}")));
        }
        Ok(Self {
            ctx,
            b,
            m,
            alpha: None,
            x: None,
        })
    }

    /// Enumeration level equal to the valuation of `t`.
    pub fn minimal(p: u64, m: u32, b: i64) -> Result<Self> {
        Self::new(ResidueCtx::new(p, m)?, b, m)
    }

    pub fn with_alpha(mut self, alpha: VPoint<BigRational>) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn with_x(mut self, x: i64) -> Result<Self> {
        if x.rem_euclid(self.ctx.p() as i64) == 0 {
            return Err(Error::NotUnit(format!("x = {x}")));
        }
        self.x = Some(x);
        Ok(self)
    }

    pub fn p(&self) -> u64 {
        self.ctx.p()
    }
}

#[derive(Clone, Debug)]
pub struct SumResult {
    pub value: Complex64,
    pub exact: Option<ExactValue>,
    pub term_count: u128,
    pub backend: Backend,
    pub level: u32,
}

/// Residue of a rational with denominator prime to `p` modulo `modulus`.
pub fn rat_mod(r: &BigRational, p: u64, modulus: u64) -> Result<u64> {
    let d = (r.denom() % BigInt::from(modulus)).to_u64().unwrap();
    if modulus > 1 && d % p == 0 {
        return Err(Error::Invalid(format!("{r} is not p-integral")));
    }
    let n = (r.numer() % BigInt::from(modulus)).to_i64().unwrap();
    let dinv = inv_mod(d, modulus).unwrap_or(0);
    Ok(mul_mod(reduce_i128(n as i128, modulus), dinv, modulus))
}

/// `max(0, -v_p(r))` over the six entries.
pub fn denominator_exponent(alpha: &VPoint<BigRational>, p: u64) -> u32 {
    alpha
        .coords()
        .iter()
        .filter(|r| !r.is_zero())
        .map(|r| {
            crate::geometry::rat_valuation(r, p)
                .map(|v| (-v).max(0) as u32)
                .unwrap_or(0)
        })
        .max()
        .unwrap_or(0)
}

/// Coefficients `c_j` with `<alpha, v> = sum_j c_j v_j`, scaled by `p^shift`
/// and reduced mod `p^level`.
fn linear_coeffs(alpha: &VPoint<BigRational>, p: u64, shift: u32, level: u32) -> Result<[u64; 6]> {
    let modulus = checked_pow(p, level).unwrap();
    let scale = BigRational::from_integer(BigInt::from(checked_pow(p, shift).unwrap()));
    let mut out = [0u64; 6];
    for (j, o) in out.iter_mut().enumerate() {
        let mut basis = [0i64; 6];
        basis[j] = 1;
        let ej = VPoint::from_coords(basis.map(|k| BigRational::from_integer(BigInt::from(k))));
        let c = pairing(alpha, &ej)? * scale.clone();
        *o = rat_mod(&c, p, modulus)?;
    }
    Ok(out)
}

/// Phase numerator data at level `N`: the value is
/// `(quad * (b(x1 x4 - x2 x3) - t1 t2) + sum lin_j v_j) / p^N`.
#[derive(Clone, Debug)]
struct PhaseData {
    p: u64,
    level: u32,
    modulus: u64,
    quad: u64,
    b: u64,
    lin: [u64; 6],
}

impl PhaseData {
    fn new(spec: &SumSpec, level_floor: u32) -> Result<Self> {
        let p = spec.p();
        let e = spec.alpha.as_ref().map_or(0, |a| denominator_exponent(a, p));
        let level = level_floor.max(spec.m + e);
        let modulus = checked_pow(p, level).ok_or(Error::ModulusTooLarge { p, n: level })?;
        let x = spec.x.unwrap_or(1);
        let quad = mul_mod(
            reduce_i128(x as i128, modulus),
            checked_pow(p, level - spec.m).unwrap() % modulus,
            modulus,
        );
        let lin = match &spec.alpha {
            Some(a) => linear_coeffs(a, p, level - spec.m, level)?,
            None => [0; 6],
        };
        Ok(Self {
            p,
            level,
            modulus,
            quad,
            b: reduce_i128(spec.b as i128, modulus),
            lin,
        })
    }

    #[inline]
    fn numerator(&self, v: &[u64; 6]) -> u64 {
        let m = self.modulus as u128;
        let det = (v[0] as u128 * v[3] as u128 % m + m - v[1] as u128 * v[2] as u128 % m) % m;
        let pb = (self.b as u128 * det % m + m - v[4] as u128 * v[5] as u128 % m) % m;
        let mut acc = self.quad as u128 * pb % m;
        for j in 0..6 {
            acc += self.lin[j] as u128 * v[j] as u128 % m;
        }
        (acc % m) as u64
    }

    fn total_points(&self) -> u128 {
        (self.modulus as u128).pow(6)
    }
}

fn decode(mut i: u64, modulus: u64) -> [u64; 6] {
    let mut v = [0u64; 6];
    for x in v.iter_mut() {
        *x = i % modulus;
        i /= modulus;
    }
    v
}

fn naive_histogram(d: &PhaseData, chunk: u64) -> Vec<u64> {
    let n = d.total_points() as u64;
    par_histogram(n, chunk, d.modulus as usize, |lo, hi, h| {
        for i in lo..hi {
            h[d.numerator(&decode(i, d.modulus)) as usize] += 1;
        }
    })
}

fn cyclic_convolve(a: &[u64], b: &[u64]) -> Vec<u64> {
    let n = a.len();
    let mut out = vec![0u64; n];
    for (i, &x) in a.iter().enumerate().filter(|(_, &x)| x != 0) {
        for (j, &y) in b.iter().enumerate().filter(|(_, &y)| y != 0) {
            out[(i + j) % n] += x * y;
        }
    }
    out
}

/// Histogram of `s * u * w + l1 * u + l2 * w` over `(u, w) in (Z/p^N)^2`.
fn pair_histogram(modulus: u64, s: u64, l1: u64, l2: u64) -> Vec<u64> {
    let m = modulus as u128;
    let mut h = vec![0u64; modulus as usize];
    for u in 0..modulus {
        let su = (s as u128 * u as u128 % m) as u64;
        let lu = (l1 as u128 * u as u128 % m) as u64;
        for w in 0..modulus {
            let val = (su as u128 * w as u128 + lu as u128 + l2 as u128 * w as u128) % m;
            h[val as usize] += 1;
        }
    }
    h
}

fn factored_histogram(d: &PhaseData) -> Vec<u64> {
    let m = d.modulus;
    let qb = mul_mod(d.quad, d.b, m);
    let neg = |x: u64| (m - x % m) % m;
    // (x1, x4): +q b x1 x4;  (x2, x3): -q b x2 x3;  (t1, t2): -q t1 t2
    let h14 = pair_histogram(m, qb, d.lin[0], d.lin[3]);
    let h23 = pair_histogram(m, neg(qb), d.lin[1], d.lin[2]);
    let ht = pair_histogram(m, neg(d.quad), d.lin[4], d.lin[5]);
    cyclic_convolve(&cyclic_convolve(&h14, &h23), &ht)
}

fn factored_cost(d: &PhaseData) -> u128 {
    5 * (d.modulus as u128).pow(2)
}

fn check_budget(terms: u128, backend: Backend) -> Result<()> {
    if terms > backend.budget() {
        return Err(Error::Budget {
            terms,
            budget: backend.budget(),
            backend: backend.name(),
        });
    }
    Ok(())
}

fn evaluate(d: &PhaseData, backend: Backend, method: Method) -> Result<SumResult> {
    let naive_terms = d.total_points();
    let method = match method {
        Method::Auto if naive_terms <= backend.budget() => Method::Naive,
        Method::Auto => Method::Factored,
        other => other,
    };
    let term_count = match method {
        Method::Naive => naive_terms,
        _ => factored_cost(d),
    };
    check_budget(term_count, backend)?;
    let den_exp = 6 * d.level;
    let norm = (d.modulus as f64).powi(6);
    match backend {
        Backend::Exact => {
            let hist = match method {
                Method::Naive => naive_histogram(d, CHUNK),
                _ => factored_histogram(d),
            };
            let exact = ExactValue::new(CycloSum::from_counts(d.p, d.level, &hist), den_exp);
            Ok(SumResult {
                value: exact.complexify(),
                exact: Some(exact),
                term_count,
                backend,
                level: d.level,
            })
        }
        Backend::Floating => {
            let roots: Vec<Complex64> = (0..d.modulus).map(|a| root_of_unity(a, d.modulus)).collect();
            let total = match method {
                Method::Naive => par_chunked_sum(naive_terms as u64, CHUNK, |lo, hi| {
                    let terms: Vec<Complex64> = (lo..hi)
                        .map(|i| roots[d.numerator(&decode(i, d.modulus)) as usize])
                        .collect();
                    tree_sum(&terms)
                }),
                _ => {
                    let hist = factored_histogram(d);
                    let terms: Vec<Complex64> = hist.iter().zip(&roots).map(|(&h, &r)| r * h as f64).collect();
                    tree_sum(&terms)
                }
            };
            Ok(SumResult {
                value: total / norm,
                exact: None,
                term_count,
                backend,
                level: d.level,
            })
        }
    }
}

/// `p^{-6n} sum_{v in V(Z/p^n)} psi(P(b, v) / p^m)`.
pub fn gaussian_sum(spec: &SumSpec, backend: Backend, method: Method) -> Result<SumResult> {
    if spec.alpha.is_some() {
        return Err(Error::Precondition("gaussian_sum takes no alpha".into()));
    }
    let mut plain = spec.clone();
    plain.x = None;
    evaluate(&PhaseData::new(&plain, spec.ctx.n())?, backend, method)
}

/// `p^{-6N} sum_v psi((x P(b, v) + <alpha, v>) / p^m)`, enumerated at the
/// smallest level `N >= n` that sees every denominator of `alpha`.
pub fn twisted_sum(spec: &SumSpec, backend: Backend, method: Method) -> Result<SumResult> {
    if spec.alpha.is_none() {
        return Err(Error::Precondition("twisted_sum needs alpha".into()));
    }
    evaluate(&PhaseData::new(spec, spec.ctx.n())?, backend, method)
}

/// `p^{-3m}` as an exact value.
pub fn gaussian_closed_form(spec: &SumSpec) -> ExactValue {
    ExactValue::inverse_power(spec.p(), spec.m, 3 * spec.m)
}

/// `0` if `alpha` is not integral, else `p^{-3m} psi(-P(b^{-1}, alpha) / (x p^m))`.
pub fn twisted_closed_form(spec: &SumSpec) -> Result<ExactValue> {
    let alpha = spec
        .alpha
        .as_ref()
        .ok_or_else(|| Error::Precondition("closed form needs alpha".into()))?;
    let p = spec.p();
    if denominator_exponent(alpha, p) > 0 {
        return Ok(ExactValue::zero(p, spec.m));
    }
    if spec.m == 0 {
        return Ok(ExactValue::inverse_power(p, 0, 0));
    }
    let ctx = ResidueCtx::new(p, spec.m)?;
    let a = alpha.map(|r| ctx.elem(rat_mod(r, p, ctx.modulus()).unwrap() as i64));
    let b = ctx.elem(spec.b);
    let dual = crate::geometry::dual_phase(&b, &a)?;
    let xinv = ctx.elem(spec.x.unwrap_or(1)).inv().ok_or_else(|| Error::NotUnit("x".into()))?;
    let num = -(dual * xinv);
    let phase = PadicPhase::new(p, num.value() as i128, spec.m);
    Ok(ExactValue::new(crate::ring::psi_exact(&phase, &ctx)?, 3 * spec.m))
}

/// Number of points of `b(x1 x4 - x2 x3) = z1 z2` in `P^5(F_p)`, by brute force.
pub fn quadric_count(p: u64, b: i64) -> Result<u64> {
    let ctx = ResidueCtx::new(p, 1)?;
    if b.rem_euclid(p as i64) == 0 {
        return Err(Error::NotUnit(format!("b = {b}")));
    }
    let d = PhaseData {
        p,
        level: 1,
        modulus: p,
        quad: 1,
        b: ctx.elem(b).value(),
        lin: [0; 6],
    };
    let hist = naive_histogram(&d, CHUNK);
    // the zero vector is in the affine count but not in projective space
    Ok((hist[0] - 1) / (p - 1))
}

pub fn quadric_count_formula(q: u64) -> u64 {
    q.pow(4) + q.pow(3) + 2 * q.pow(2) + q + 1
}

/// `sum_{x in (Z/p^m)^x} psi(x a / p^m)` by direct summation.
pub fn ramanujan_sum_brute(p: u64, m: u32, a: i64) -> Result<ExactValue> {
    if m == 0 {
        return Err(Error::Precondition("m >= 1".into()));
    }
    let ctx = ResidueCtx::new(p, m)?;
    let mut acc = CycloSum::zero(p, m);
    for x in ctx.units() {
        let phase = PadicPhase::new(p, x as i128 * a as i128, m);
        acc = &acc + &crate::ring::psi_exact(&phase, &ctx)?;
    }
    Ok(ExactValue::new(acc, 0))
}

/// Classical value: `phi(p^m)` if `p^m | a`, `-p^{m-1}` if `v_p(a) = m - 1`, else 0.
pub fn ramanujan_sum_value(p: u64, m: u32, a: i64) -> Result<i64> {
    if m == 0 {
        return Err(Error::Precondition("m >= 1".into()));
    }
    let pm = checked_pow(p, m).unwrap() as i64;
    let pm1 = pm / p as i64;
    Ok(if a % pm == 0 {
        pm - pm1
    } else if a % pm1 == 0 {
        -pm1
    } else {
        0
    })
}

pub fn ramanujan_sum(p: u64, m: u32, a: i64) -> Result<Complex64> {
    Ok(Complex64::new(ramanujan_sum_value(p, m, a)? as f64, 0.0))
}

/// Zeros of the gradient of `P(b, .)` in `(Z/p^k)^6`, by enumeration.
pub fn critical_points(p: u64, k: u32, b: i64) -> Result<Vec<[u64; 6]>> {
    let ctx = ResidueCtx::new(p, k)?;
    let m = ctx.modulus();
    let total = (m as u128).pow(6);
    check_budget(total, Backend::Exact)?;
    let bb = ctx.elem(b);
    let mut out = vec![];
    for i in 0..total as u64 {
        let c = decode(i, m);
        let v = VPoint::from_coords(c.map(|x| ctx.elem(x as i64)));
        if grad_p(&bb, &v).iter().all(|g| g.value() == 0) {
            out.push(c);
        }
    }
    Ok(out)
}

/// Solves `A x = y` over `Z/p^k` when `A` is invertible mod `p`.
fn solve_mod(a: &[[ResidueElem; 6]; 6], y: &[ResidueElem; 6]) -> Result<[ResidueElem; 6]> {
    let mut m: Vec<Vec<ResidueElem>> = a
        .iter()
        .zip(y)
        .map(|(row, yi)| {
            let mut r = row.to_vec();
            r.push(*yi);
            r
        })
        .collect();
    for col in 0..6 {
        let piv = (col..6)
            .find(|&r| m[r][col].is_unit())
            .ok_or(Error::Singular)?;
        m.swap(col, piv);
        let inv = m[col][col].inv().unwrap();
        for x in m[col].iter_mut() {
            *x = *x * inv;
        }
        for r in 0..6 {
            if r != col {
                let f = m[r][col];
                let pivot_row = m[col].clone();
                for (x, pr) in m[r].iter_mut().zip(pivot_row) {
                    *x = *x - f * pr;
                }
            }
        }
    }
    Ok(std::array::from_fn(|i| m[i][6]))
}

/// Critical points mod `p`, each lifted to `Z/p^k` by Newton steps with the
/// Hessian (which is invertible mod `p` for a unit `b`).
pub fn lifted_critical_points(p: u64, k: u32, b: i64) -> Result<Vec<[u64; 6]>> {
    let roots = critical_points(p, 1, b)?;
    let ctx = ResidueCtx::new(p, k)?;
    let bb = ctx.elem(b);
    let h = hessian_p(&bb);
    let mut out = vec![];
    for r in roots {
        let mut v = r.map(|x| ctx.elem(x as i64));
        for _ in 0..k {
            let g = grad_p(&bb, &VPoint::from_coords(v));
            let step = solve_mod(&h, &g)?;
            for (x, s) in v.iter_mut().zip(step) {
                *x = *x - s;
            }
        }
        out.push(v.map(|x| x.value()));
    }
    Ok(out)
}

/// `G_t`: 1 for even valuation, otherwise `p^{-3} sum_{X mod p} psi(X^T H X / 2p)`.
/// Since `X^T H X = 2 P(b, X)` the sum is taken over `P(b, X) / p`, which also
/// makes sense at `p = 2`.
pub fn stationary_correction(p: u64, m: u32, b: i64) -> Result<ExactValue> {
    if m % 2 == 0 {
        return Ok(ExactValue::inverse_power(p, 1, 0));
    }
    let spec = SumSpec::minimal(p, 1, b)?;
    let g = gaussian_sum(&spec, Backend::Exact, Method::Naive)?.exact.unwrap();
    // p^{-3} * p^6 * (average) = p^3 * average
    Ok(ExactValue::new(g.sum.scale(checked_pow(p, 3).unwrap() as i64), g.den_exp))
}

/// `|t|^3 sum_{v in D(Z_p)} psi(P(b, v)/t) G_t` for `t = p^m`, `m >= 2`.
pub fn stationary_phase_eval(spec: &SumSpec) -> Result<SumResult> {
    if spec.m < 2 {
        return Err(Error::Precondition(format!("stationary phase needs m >= 2, got {}", spec.m)));
    }
    if spec.alpha.is_some() {
        return Err(Error::Precondition("stationary phase takes no alpha".into()));
    }
    let p = spec.p();
    let m = spec.m;
    let ctx = ResidueCtx::new(p, m)?;
    let crit = lifted_critical_points(p, m, spec.b)?;
    let bb = ctx.elem(spec.b);
    let mut acc = CycloSum::zero(p, m);
    for c in &crit {
        let v = VPoint::from_coords(c.map(|x| ctx.elem(x as i64)));
        let phase = PadicPhase::new(p, phase_p(&bb, &v).value() as i128, m);
        acc = &acc + &crate::ring::psi_exact(&phase, &ctx)?;
    }
    let g = stationary_correction(p, m, spec.b)?;
    let exact = ExactValue::new(acc, 3 * m).mul(&g);
    Ok(SumResult {
        value: exact.complexify(),
        exact: Some(exact),
        term_count: checked_pow(p, 6).unwrap() as u128 * (1 + (m % 2) as u128),
        backend: Backend::Exact,
        level: m,
    })
}

/// Direct floating evaluation of one term, used as an independent oracle.
pub fn phase_value(spec: &SumSpec, v: &[i64; 6]) -> Result<Complex64> {
    let d = PhaseData::new(spec, spec.ctx.n())?;
    let c = v.map(|x| reduce_i128(x as i128, d.modulus));
    Ok(psi(&PadicPhase::new(d.p, d.numerator(&c) as i128, d.level)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Mat2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    fn alpha_from(c: [(i64, i64); 6]) -> VPoint<BigRational> {
        VPoint::from_coords(c.map(|(n, d)| q(n, d)))
    }

    #[test]
    fn gaussian_trivial_phase() {
        let spec = SumSpec::new(ResidueCtx::new(3, 1).unwrap(), 1, 0).unwrap();
        let r = gaussian_sum(&spec, Backend::Exact, Method::Naive).unwrap();
        assert!(r.exact.unwrap().exact_eq(&ExactValue::inverse_power(3, 0, 0)));
    }

    #[test]
    fn gaussian_level_one_is_q_minus_three() {
        for p in [2u64, 3, 5] {
            for b in 1..p as i64 {
                let spec = SumSpec::minimal(p, 1, b).unwrap();
                let r = gaussian_sum(&spec, Backend::Exact, Method::Naive).unwrap();
                assert!(r.exact.unwrap().exact_eq(&gaussian_closed_form(&spec)), "p={p} b={b}");
            }
        }
    }

    #[test]
    fn gaussian_two_squared() {
        let spec = SumSpec::minimal(2, 2, 1).unwrap();
        let r = gaussian_sum(&spec, Backend::Exact, Method::Naive).unwrap();
        assert!(r.exact.unwrap().exact_eq(&ExactValue::inverse_power(2, 2, 6)));
        assert!((r.value.re - 2f64.powi(-6)).abs() < 1e-15);
    }

    #[test]
    fn enumeration_level_does_not_matter() {
        // the integrand has period p^m, so level n > m gives the same average
        for (p, m, n) in [(2u64, 1u32, 2u32), (2, 1, 3), (3, 1, 2), (2, 2, 3)] {
            let lo = SumSpec::new(ResidueCtx::new(p, m).unwrap(), 1, m).unwrap();
            let hi = SumSpec::new(ResidueCtx::new(p, n).unwrap(), 1, m).unwrap();
            let a = gaussian_sum(&lo, Backend::Exact, Method::Naive).unwrap().exact.unwrap();
            let b = gaussian_sum(&hi, Backend::Exact, Method::Naive).unwrap().exact.unwrap();
            assert!(a.exact_eq(&b), "p={p} m={m} n={n}");
        }
    }

    #[test]
    fn factored_histogram_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for (p, m) in [(2u64, 1u32), (2, 2), (3, 1), (3, 2), (5, 1)] {
            for _ in 0..4 {
                let alpha = alpha_from(std::array::from_fn(|_| (rng.gen_range(-9..9), [1, p as i64][rng.gen_range(0..2)])));
                let spec = SumSpec::minimal(p, m, 1 + rng.gen_range(0..p as i64 - 1))
                    .unwrap()
                    .with_alpha(alpha)
                    .with_x(1)
                    .unwrap();
                let d = PhaseData::new(&spec, spec.ctx.n()).unwrap();
                if d.total_points() > 1 << 22 {
                    continue;
                }
                assert_eq!(naive_histogram(&d, CHUNK), factored_histogram(&d));
            }
        }
    }

    #[test]
    fn histogram_is_partition_invariant() {
        let spec = SumSpec::minimal(3, 2, 2).unwrap();
        let d = PhaseData::new(&spec, 2).unwrap();
        let a = naive_histogram(&d, 1000);
        let b = naive_histogram(&d, 77_777);
        let c = naive_histogram(&d, 1 << 20);
        assert_eq!(a, b);
        assert_eq!(b, c);
    }

    #[test]
    fn budget_is_enforced() {
        let spec = SumSpec::minimal(3, 3, 1).unwrap();
        assert!(matches!(
            gaussian_sum(&spec, Backend::Exact, Method::Naive),
            Err(Error::Budget { .. })
        ));
        let r = gaussian_sum(&spec, Backend::Exact, Method::Auto).unwrap();
        assert!(r.exact.unwrap().exact_eq(&gaussian_closed_form(&spec)));
    }

    #[test]
    fn floating_backend_matches() {
        let spec = SumSpec::minimal(5, 1, 2).unwrap();
        let r = gaussian_sum(&spec, Backend::Floating, Method::Naive).unwrap();
        assert!((r.value - Complex64::new(5f64.powi(-3), 0.0)).norm() < 1e-12);
    }

    #[test]
    fn twisted_reduces_to_gaussian() {
        let spec = SumSpec::minimal(3, 2, 1).unwrap();
        let zero = alpha_from([(0, 1); 6]);
        let t = twisted_sum(&spec.clone().with_alpha(zero), Backend::Exact, Method::Naive).unwrap();
        let g = gaussian_sum(&spec, Backend::Exact, Method::Naive).unwrap();
        assert!(t.exact.unwrap().exact_eq(&g.exact.unwrap()));
    }

    #[test]
    fn twisted_integral_alpha_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..20 {
            let alpha = alpha_from(std::array::from_fn(|_| (rng.gen_range(-20..20), [1, 2, 5][rng.gen_range(0..3)])));
            let x = [1, 2][rng.gen_range(0..2)];
            let spec = SumSpec::minimal(3, 1, [1, 2][rng.gen_range(0..2)])
                .unwrap()
                .with_alpha(alpha)
                .with_x(x)
                .unwrap();
            let brute = twisted_sum(&spec, Backend::Exact, Method::Naive).unwrap();
            let closed = twisted_closed_form(&spec).unwrap();
            assert!(brute.exact.unwrap().exact_eq(&closed));
        }
    }

    #[test]
    fn twisted_nonintegral_alpha_vanishes() {
        let mut alpha = alpha_from([(1, 1), (2, 1), (0, 1), (1, 1), (1, 1), (1, 1)]);
        alpha.t.a12 = q(1, 9);
        let spec = SumSpec::minimal(3, 1, 1).unwrap().with_alpha(alpha);
        let r = twisted_sum(&spec, Backend::Exact, Method::Auto).unwrap();
        assert_eq!(r.level, 3);
        assert!(r.exact.unwrap().is_zero());
    }

    #[test]
    fn twisted_depends_on_alpha_mod_p_m() {
        let a = alpha_from([(1, 1), (2, 1), (0, 1), (1, 1), (1, 1), (1, 1)]);
        let shifted = a.add(&VPoint::new(Mat2::new(q(4, 1), q(0, 1), q(-8, 1), q(0, 1)), q(4, 1), q(0, 1)));
        let base = SumSpec::minimal(2, 2, 1).unwrap();
        let r1 = twisted_sum(&base.clone().with_alpha(a), Backend::Exact, Method::Naive).unwrap();
        let r2 = twisted_sum(&base.with_alpha(shifted), Backend::Exact, Method::Naive).unwrap();
        assert!(r1.exact.unwrap().exact_eq(&r2.exact.unwrap()));
    }

    #[test]
    fn phase_value_agrees_with_histogram_entry() {
        let alpha = alpha_from([(1, 1), (2, 1), (0, 1), (1, 3), (1, 1), (1, 1)]);
        let spec = SumSpec::minimal(3, 1, 1).unwrap().with_alpha(alpha.clone());
        let v = [1i64, 2, 0, 1, 2, 2];
        let vv = VPoint::from_coords(v.map(|x| q(x, 1)));
        let num = phase_p(&q(1, 1), &vv) + pairing(&alpha, &vv).unwrap();
        let direct = Complex64::from_polar(1.0, std::f64::consts::TAU * (num.to_f64().unwrap() / 3.0));
        // the 1/3 entry makes the phase live at level 2
        assert!((phase_value(&spec, &v).unwrap() - direct).norm() < 1e-12);
    }

    #[test]
    fn quadric_counts() {
        assert_eq!(quadric_count(2, 1).unwrap(), 35);
        assert_eq!(quadric_count(3, 1).unwrap(), 130);
        assert_eq!(quadric_count(5, 1).unwrap(), 806);
        for p in [2u64, 3, 5, 7] {
            for b in 1..p as i64 {
                assert_eq!(quadric_count(p, b).unwrap(), quadric_count_formula(p));
            }
        }
        assert_eq!(quadric_count_formula(7), 2850);
    }

    #[test]
    fn ramanujan_examples() {
        for p in [2u64, 3, 5, 7] {
            assert_eq!(ramanujan_sum_value(p, 1, 1).unwrap(), -1);
            assert_eq!(ramanujan_sum_value(p, 1, p as i64).unwrap(), p as i64 - 1);
        }
        assert_eq!(ramanujan_sum_value(3, 2, 1).unwrap(), 0);
        for p in [2u64, 3, 5] {
            for m in 1..=3 {
                for a in -30..30 {
                    let brute = ramanujan_sum_brute(p, m, a).unwrap();
                    let v = ramanujan_sum_value(p, m, a).unwrap();
                    assert!(brute.exact_eq(&ExactValue::new(CycloSum::constant(p, m, v), 0)));
                }
            }
        }
    }

    #[test]
    fn critical_locus_is_origin() {
        for (p, b) in [(2u64, 1i64), (3, 1), (3, 2)] {
            assert_eq!(critical_points(p, 2, b).unwrap(), vec![[0u64; 6]]);
            assert_eq!(lifted_critical_points(p, 3, b).unwrap(), vec![[0u64; 6]]);
        }
    }

    #[test]
    fn stationary_phase_matches_brute_force() {
        for (p, m) in [(3u64, 2u32), (2, 2), (2, 3)] {
            let spec = SumSpec::minimal(p, m, 1).unwrap();
            let sp = stationary_phase_eval(&spec).unwrap().exact.unwrap();
            let brute = gaussian_sum(&spec, Backend::Exact, Method::Auto).unwrap().exact.unwrap();
            assert!(sp.exact_eq(&brute), "p={p} m={m}");
        }
        assert!(stationary_correction(2, 3, 1)
            .unwrap()
            .exact_eq(&ExactValue::inverse_power(2, 1, 0)));
        assert!(matches!(
            stationary_phase_eval(&SumSpec::minimal(3, 1, 1).unwrap()),
            Err(Error::Precondition(_))
        ));
    }
}
