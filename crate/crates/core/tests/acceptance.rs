//! End-to-end checks at their stated tolerances and time limits. Each test
//! prints one `PASS`/`FAIL` line with the measured quantity.

use kernlab::arch::{transform_is, vanishes_by_support, ArchData, ArchTwist, ProbeSetup, QuadratureSpec};
use kernlab::expsum::{
    gaussian_closed_form, gaussian_sum, quadric_count, stationary_phase_eval, twisted_closed_form, twisted_sum, Backend,
    Method, SumSpec,
};
use kernlab::geometry::{act_w, bruhat_decompose, is_relevant, relevant_partner, GroupElem, Mat2, VPoint, WPoint};
use kernlab::global::{
    geometric_side, poisson_check, random_gaussian, sigma1_structure_check, twist_check, GeomSpec, HeightWindow,
    LatticeTestFn,
};
use kernlab::localzeta::{
    dirichlet_d, euler_product, local_zeta_brute, local_zeta_closed, zeta_residue, DMode, GlobalChar, LocalZetaSpec,
    UnitMeasure,
};
use kernlab::ring::{RamifiedPart, UnitChar};
use kernlab::{RatMat2, RatVPoint};
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};

fn q(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn report(label: &str, pass: bool, detail: String, start: Instant, limit: Duration) {
    let elapsed = start.elapsed();
    let ok = pass && elapsed <= limit;
    println!(
        "{} {label}: {detail} ({:.1} s of {} s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    assert!(pass, "{label}: {detail}");
    assert!(elapsed <= limit, "{label}: took {elapsed:?}, limit {limit:?}");
}

#[test]
fn criterion_01_quadric_point_counts() {
    let start = Instant::now();
    let expected = [(2u64, 35u64), (3, 130), (5, 806), (7, 2906)];
    let mut bad = vec![];
    let mut got = vec![];
    for (p, want) in expected {
        let n = quadric_count(p, 1).unwrap();
        got.push(format!("p={p}: {n}"));
        if n != want {
            bad.push(format!("p={p} counted {n}, listed {want}"));
        }
    }
    report(
        "quadric point counts",
        bad.is_empty(),
        format!("{} [{}]", got.join(", "), bad.join("; ")),
        start,
        Duration::from_secs(10),
    );
}

#[test]
fn criterion_02_gaussian_sums() {
    let start = Instant::now();
    let cases: [(u64, u32); 5] = [(2, 1), (2, 2), (3, 1), (3, 2), (2, 3)];
    let mut failures = vec![];
    let mut count = 0;
    for (p, m) in cases {
        for b in 1..p as i64 {
            if b % p as i64 == 0 {
                continue;
            }
            let spec = SumSpec::minimal(p, m, b).unwrap();
            let r = gaussian_sum(&spec, Backend::Exact, Method::Auto).unwrap();
            count += 1;
            if !r.exact.unwrap().exact_eq(&gaussian_closed_form(&spec)) {
                failures.push(format!("p={p} m={m} b={b}"));
            }
        }
    }
    let mut worst: f64 = 0.0;
    for b in 1..5 {
        let spec = SumSpec::minimal(5, 1, b).unwrap();
        let r = gaussian_sum(&spec, Backend::Floating, Method::Auto).unwrap();
        worst = worst.max((r.value - gaussian_closed_form(&spec).complexify()).norm());
    }
    report(
        "gaussian sums",
        failures.is_empty() && worst <= 1e-9,
        format!("{count} exact cases, mismatches {failures:?}, p=5 floating max |delta| {worst:.2e}"),
        start,
        Duration::from_secs(120),
    );
}

#[test]
fn criterion_03_twisted_sums() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut failures = vec![];
    for k in 0..20 {
        let p = [2u64, 3][k % 2];
        let m = 1 + (k / 2 % 2) as u32;
        let modulus = (p as i64).pow(m);
        let alpha = VPoint::from_coords(std::array::from_fn(|_| q(rng.gen_range(-modulus..=modulus), 1)));
        let x = loop {
            let x = rng.gen_range(1..=modulus);
            if x % p as i64 != 0 {
                break x;
            }
        };
        let b = [1, -1][rng.gen_range(0..2)];
        let spec = SumSpec::minimal(p, m, b).unwrap().with_alpha(alpha).with_x(x).unwrap();
        let r = twisted_sum(&spec, Backend::Exact, Method::Auto).unwrap();
        if !r.exact.unwrap().exact_eq(&twisted_closed_form(&spec).unwrap()) {
            failures.push(format!("integral case {k}"));
        }
    }
    for k in 0..10 {
        let p = [2u64, 3][k % 2];
        let m = 1 + (k / 2 % 2) as u32;
        let mut a: [BigRational; 6] = std::array::from_fn(|_| q(rng.gen_range(-5..=5), 1));
        let i = rng.gen_range(0..6);
        a[i] = q(rng.gen_range(1..p as i64) + p as i64 * rng.gen_range(-3..=3), p as i64);
        let spec = SumSpec::minimal(p, m, 1).unwrap().with_alpha(VPoint::from_coords(a));
        let r = twisted_sum(&spec, Backend::Exact, Method::Auto).unwrap();
        if !r.exact.unwrap().is_zero() {
            failures.push(format!("non-integral case {k}"));
        }
    }
    report(
        "twisted sums",
        failures.is_empty(),
        format!("20 integral and 10 non-integral alpha, mismatches {failures:?}"),
        start,
        Duration::from_secs(120),
    );
}

#[test]
fn criterion_04_stationary_phase() {
    let start = Instant::now();
    let mut failures = vec![];
    for p in [2u64, 3] {
        for m in [2u32, 3] {
            for b in 1..p as i64 {
                let spec = SumSpec::minimal(p, m, b).unwrap();
                let st = stationary_phase_eval(&spec).unwrap().exact.unwrap();
                let brute = gaussian_sum(&spec, Backend::Exact, Method::Auto).unwrap().exact.unwrap();
                if !st.exact_eq(&brute) {
                    failures.push(format!("p={p} m={m} b={b}"));
                }
            }
        }
    }
    report(
        "stationary phase against enumeration",
        failures.is_empty(),
        format!("mismatches {failures:?}"),
        start,
        Duration::from_secs(60),
    );
}

#[test]
fn criterion_05_local_zeta() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = c(2.0, 0.0);
    let mut worst_ratio: f64 = 0.0;
    let mut worst_bound: f64 = 0.0;
    let mut ramified_ok = true;
    for p in [2u64, 3] {
        let pi = p as i64;
        let alphas: Vec<RatVPoint> = (0..10)
            .map(|_| {
                VPoint::from_coords(std::array::from_fn(|_| {
                    q(rng.gen_range(-6..=6) * [1, pi, pi * pi][rng.gen_range(0..3)], 1)
                }))
            })
            .collect();
        for z in [c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0)] {
            let chi = UnitChar::unramified(z).unwrap();
            for a in &alphas {
                let spec = LocalZetaSpec::new(p, 1, a.clone(), chi.clone(), s, 4).unwrap();
                let brute = local_zeta_brute(&spec, UnitMeasure::Haar).unwrap();
                let closed = local_zeta_closed(&spec, UnitMeasure::Haar).unwrap();
                worst_ratio = worst_ratio.max((brute.value - closed).norm() / brute.tail_bound);
                worst_bound = worst_bound.max(brute.tail_bound);
            }
        }
        let ramified = if p == 2 {
            UnitChar::ramified(c(1.0, 0.0), RamifiedPart::new(2, 2, vec![1]).unwrap()).unwrap()
        } else {
            UnitChar::quadratic(3, c(1.0, 0.0)).unwrap()
        };
        for a in alphas.iter().take(3) {
            let spec = LocalZetaSpec::new(p, 1, a.clone(), ramified.clone(), s, 3).unwrap();
            let brute = local_zeta_brute(&spec, UnitMeasure::Haar).unwrap();
            ramified_ok &= brute.exact_zero == Some(true);
        }
    }
    report(
        "local zeta brute force against closed form",
        worst_ratio <= 1.0 && ramified_ok,
        format!("max |delta|/tail bound {worst_ratio:.2e} (bound <= {worst_bound:.2e}), ramified shells exactly zero: {ramified_ok}"),
        start,
        Duration::from_secs(300),
    );
}

#[test]
fn criterion_06_dirichlet_pole() {
    let start = Instant::now();
    // on the quadric: T = diag(2, 3), t1 = 1, t2 = 6, b = 1
    let a = VPoint::new(Mat2::diag(q(2, 1), q(3, 1)), q(1, 1), q(6, 1));
    let b = BigRational::one();
    let eps = 1e-3;
    let mut worst: f64 = 0.0;
    for excluded in [vec![], vec![2u64], vec![2, 3]] {
        let near = dirichlet_d(&b, &a, &GlobalChar::Trivial, c(-2.0 + eps, 0.0), &excluded, DMode::Value).unwrap();
        let inv_z2 = euler_product(&GlobalChar::Trivial, c(2.0, 0.0), 10_000, &excluded, true).unwrap();
        let truncated = zeta_residue(&excluded) * inv_z2.value.re;
        worst = worst.max(((near.value * eps).re - truncated).abs() / truncated);
    }
    report(
        "pole residue",
        worst <= 0.02,
        format!("max relative gap of (s+2) D at s = -2 + 1e-3 to the truncated residue {worst:.2e}"),
        start,
        Duration::from_secs(60),
    );
}

#[test]
fn criterion_07_poisson_and_twist() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let psi = random_gaussian(&mut rng, 8, 0.25, 4.0);
        worst = worst.max(poisson_check(&psi).unwrap().difference);
    }
    let xs = [[0.0; 4], [0.3, -0.2, 0.1, 0.25], [-0.5, 0.4, 0.0, 0.2]];
    let mut twist_worst: f64 = 0.0;
    for (a, g1, g2) in [
        (1.0, Mat2::diag(2.0, 1.0), Mat2::diag(1.0, 1.0)),
        (1.25, Mat2::new(1.0, 0.5, 0.0, 1.0), Mat2::diag(1.0, 1.5)),
        (-0.8, Mat2::new(0.0, 1.0, 1.0, 0.0), Mat2::diag(1.2, 1.0)),
    ] {
        let psi = LatticeTestFn::identity_scaled(1);
        let rep = twist_check(&psi, a, &g1, &g2, &xs).unwrap();
        let expected = f64::abs(a).powi(-4) * (g1.det() * g2.det()).abs().powi(-2);
        twist_worst = twist_worst
            .max((rep.constant - expected).abs())
            .max(rep.max_rule_vs_numeric)
            .max(rep.max_rule_vs_closed);
    }
    report(
        "poisson summation and twisted transform",
        worst <= 1e-10 && twist_worst <= 1e-10,
        format!("max two-sided gap {worst:.2e}, max twist gap {twist_worst:.2e}"),
        start,
        Duration::from_secs(60),
    );
}

#[test]
fn criterion_08_archimedean_decay() {
    let start = Instant::now();
    let data = ArchData::standard();
    let probe = ProbeSetup::standard().run(&data, -4.0).unwrap();
    let last = *probe.slopes.last().unwrap();
    let far = ArchData { b: 20.0, ..data };
    let outside = vanishes_by_support(&far, QuadratureSpec::default().excision).unwrap();
    let z = transform_is(&far, &VPoint::from_coords([0.5; 6]), &ArchTwist::default(), &QuadratureSpec::uniform(8)).unwrap();
    report(
        "archimedean decay",
        last <= -4.0 && z.exact_zero && outside,
        format!(
            "slopes {:?} at lambda {:?}, b = 20 exact zero: {}",
            probe.slopes, probe.lambdas, z.exact_zero
        ),
        start,
        Duration::from_secs(600),
    );
}

#[test]
fn criterion_09_geometric_side_cauchy() {
    let start = Instant::now();
    let rep = geometric_side(&GeomSpec::standard()).unwrap();
    for w in &rep.windows {
        let win = w.window.unwrap();
        println!(
            "  window ({},{}): sum {:.6e}{:+.6e}i error {:.3e} terms {} quadrature {} support-zero {} uncertified {}",
            win.height, win.cmax, w.sum.re, w.sum.im, w.error, w.terms, w.quadrature, w.support_zero, w.uncertified
        );
    }
    let pos = rep
        .windows
        .iter()
        .position(|w| w.window == Some(HeightWindow { height: 8, cmax: 8 }))
        .expect("standard windows reach (8, 8)");
    let (d, err, pass) = rep.cauchy[pos - 1];
    report(
        "geometric side (4,4) -> (8,8)",
        pass,
        format!("|S8 - S4| = {d:.3e}, aggregated error {err:.3e}"),
        start,
        Duration::from_secs(1800),
    );
}

fn rand_q(rng: &mut ChaCha8Rng) -> BigRational {
    q(rng.gen_range(-9..=9), rng.gen_range(1..=6))
}

fn rand_unit_q(rng: &mut ChaCha8Rng) -> BigRational {
    loop {
        let r = rand_q(rng);
        if !r.is_zero() {
            return r;
        }
    }
}

fn rand_gl2(rng: &mut ChaCha8Rng) -> RatMat2 {
    loop {
        let m = Mat2::new(rand_q(rng), rand_q(rng), rand_q(rng), rand_q(rng));
        if !m.det().is_zero() {
            return m;
        }
    }
}

#[test]
fn criterion_10_structural_invariants() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut preserved = 0;
    for _ in 0..100 {
        let t = rand_gl2(&mut rng);
        let b = rand_unit_q(&mut rng);
        let t1 = rand_unit_q(&mut rng);
        let t2 = t.det() / (b.clone() * t1.clone());
        let w = WPoint::new(b, VPoint::new(t, t1, t2)).unwrap();
        let g = GroupElem::new(rand_gl2(&mut rng), rand_gl2(&mut rng), rand_unit_q(&mut rng), rand_unit_q(&mut rng)).unwrap();
        if act_w(&g, &w).is_ok() {
            preserved += 1;
        }
    }
    let mut rebuilt = 0;
    for i in 0..200 {
        let mut g = rand_gl2(&mut rng);
        if i % 10 == 0 {
            g.a21 = BigRational::zero();
            if g.det().is_zero() {
                g.a11 = BigRational::one();
                g.a22 = BigRational::one();
            }
        }
        if bruhat_decompose(&g).unwrap().reconstruct().unwrap() == g {
            rebuilt += 1;
        }
    }
    let mut bijective = true;
    for b in [-3i64, -1, 1, 2, 5] {
        for cc in 1..6 {
            for y1 in -6..=6 {
                let (b, cc, y1) = (q(b, 1), q(cc, 1), q(y1, 1));
                let y2 = relevant_partner(&b, &cc, &y1).unwrap();
                bijective &= is_relevant(&b, &cc, &y1, &y2).unwrap();
                bijective &= -(cc.clone() / b.clone()) * y2.clone() == y1;
                bijective &= !is_relevant(&b, &cc, &y1, &(y2 + q(1, 2))).unwrap();
            }
        }
    }
    let sigma = sigma1_structure_check(
        &GeomSpec::standard().data.f2,
        &HeightWindow { height: 3, cmax: 3 },
        50,
        &mut rng,
    )
    .unwrap();
    report(
        "structural invariants",
        preserved == 100 && rebuilt == 200 && bijective && sigma.passes(),
        format!(
            "quadric preserved {preserved}/100, Bruhat rebuilt {rebuilt}/200, relevance bijective {bijective}, window bijection failures {}",
            sigma.bijection_failures
        ),
        start,
        Duration::from_secs(10),
    );
}
