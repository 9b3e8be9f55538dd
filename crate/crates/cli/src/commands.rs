use crate::config::{parse_complex, ConfigError, ConfigResult, RunConfig};
use crate::report::{fmt_c64, fmt_f64, Check, Report};
use kernlab::arch::{resolving_grid, transform_is, ArchData, ArchTwist, ProbeSetup, QuadratureSpec};
use kernlab::expsum::{
    gaussian_closed_form, gaussian_sum, quadric_count, quadric_count_formula, stationary_phase_eval, twisted_closed_form,
    twisted_sum, Backend, Method, SumSpec,
};
use kernlab::geometry::{Mat2, VPoint};
use kernlab::global::{
    geometric_side, poisson_check, random_gaussian, twist_check, GeomSpec, HeightWindow, LatticeTestFn,
};
use kernlab::localzeta::{local_zeta_brute, local_zeta_closed, LocalZetaSpec, UnitMeasure};
use kernlab::ring::{RamifiedPart, ResidueCtx, UnitChar};
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

fn lib(e: kernlab::Error) -> ConfigError {
    ConfigError(e.to_string())
}

fn rational_alpha(c: &RunConfig) -> ConfigResult<Option<VPoint<BigRational>>> {
    Ok(c.alpha_rational()?.map(VPoint::from_coords))
}

fn int_alpha<R: Rng>(rng: &mut R, modulus: i64) -> VPoint<BigRational> {
    VPoint::from_coords(std::array::from_fn(|_| {
        BigRational::from_integer(BigInt::from(rng.gen_range(0..modulus)))
    }))
}

fn units_mod(p: u64) -> Vec<i64> {
    (1..p as i64).collect()
}

fn alpha_label(a: &VPoint<BigRational>) -> String {
    a.coords().iter().map(|q| q.to_string()).collect::<Vec<_>>().join(",")
}

/// `|t|^3`-normalized Gaussian sums against `p^{-3m}`, and stationary phase
/// against the enumerated sum for `m >= 2`.
pub fn verify_gauss(c: &RunConfig, r: &mut Report) -> ConfigResult<()> {
    let p = c.require(&c.p, "p")?;
    let m = c.require(&c.t_val, "t-val")?;
    let n = c.level.unwrap_or(m);
    let backend = c.backend.unwrap_or(Backend::Exact);
    let ctx = ResidueCtx::new(p, n).map_err(lib)?;
    let bs = match c.b {
        Some(b) => vec![b],
        None => units_mod(p),
    };
    for b in bs {
        let spec = SumSpec::new(ctx, b, m).map_err(lib)?;
        let res = gaussian_sum(&spec, backend, Method::Auto).map_err(lib)?;
        r.count("terms", res.term_count.min(u64::MAX as u128) as u64);
        let closed = gaussian_closed_form(&spec);
        let gap = (res.value - closed.complexify()).norm();
        let name = format!("gaussian p={p} n={n} m={m} b={b}");
        match (&res.exact, backend) {
            (Some(ex), Backend::Exact) => r.push(Check::exact(
                name,
                fmt_c64(closed.complexify()),
                fmt_c64(res.value),
                ex.exact_eq(&closed),
                gap,
            )),
            _ => r.push(Check::new(name, fmt_c64(closed.complexify()), fmt_c64(res.value), gap, 1e-9)),
        }
        if m >= 2 {
            let st = stationary_phase_eval(&spec).map_err(lib)?;
            let brute = gaussian_sum(&SumSpec::new(ResidueCtx::new(p, m).map_err(lib)?, b, m).map_err(lib)?, Backend::Exact, Method::Auto)
                .map_err(lib)?;
            let equal = match (&st.exact, &brute.exact) {
                (Some(a), Some(b)) => a.exact_eq(b),
                _ => false,
            };
            r.push(Check::exact(
                format!("stationary phase p={p} m={m} b={b}"),
                fmt_c64(brute.value),
                fmt_c64(st.value),
                equal,
                (st.value - brute.value).norm(),
            ));
        }
    }
    Ok(())
}

/// Twisted sums against `p^{-3m} psi(-P(b^{-1}, alpha)/(x p^m))` for integral
/// `alpha`, and against 0 for `alpha` with `p` in a denominator.
pub fn verify_twist(c: &RunConfig, r: &mut Report) -> ConfigResult<()> {
    let p = c.require(&c.p, "p")?;
    let m = c.require(&c.t_val, "t-val")?;
    let n = c.level.unwrap_or(m);
    let b = c.b.unwrap_or(1);
    let backend = c.backend.unwrap_or(Backend::Exact);
    let ctx = ResidueCtx::new(p, n).map_err(lib)?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed.unwrap_or(0));
    let modulus = (p as i64).pow(m.max(1));
    let mut cases: Vec<(VPoint<BigRational>, i64)> = vec![];
    if let Some(a) = rational_alpha(c)? {
        cases.push((a, 1));
    } else {
        let integral = c.samples.unwrap_or(20);
        for _ in 0..integral {
            let x = loop {
                let x = rng.gen_range(1..modulus.max(2));
                if x % p as i64 != 0 {
                    break x;
                }
            };
            cases.push((int_alpha(&mut rng, modulus), x));
        }
        for _ in 0..integral / 2 {
            let mut a = int_alpha(&mut rng, modulus).coords();
            let k = rng.gen_range(0..6);
            a[k] = BigRational::new(BigInt::from(rng.gen_range(1..p as i64)), BigInt::from(p));
            cases.push((VPoint::from_coords(a), 1));
        }
    }
    for (alpha, x) in cases {
        let label = alpha_label(&alpha);
        let spec = SumSpec::new(ctx, b, m).map_err(lib)?.with_alpha(alpha).with_x(x).map_err(lib)?;
        let res = twisted_sum(&spec, backend, Method::Auto).map_err(lib)?;
        r.count("terms", res.term_count.min(u64::MAX as u128) as u64);
        let closed = twisted_closed_form(&spec).map_err(lib)?;
        let gap = (res.value - closed.complexify()).norm();
        let name = format!("twist p={p} m={m} x={x} alpha=({label})");
        match (&res.exact, backend) {
            (Some(ex), Backend::Exact) => r.push(Check::exact(
                name,
                fmt_c64(closed.complexify()),
                fmt_c64(res.value),
                ex.exact_eq(&closed),
                gap,
            )),
            _ => r.push(Check::new(name, fmt_c64(closed.complexify()), fmt_c64(res.value), gap, 1e-9)),
        }
    }
    Ok(())
}

/// Projective points of `b det T = t1 t2` over `F_p` against `p^4 + p^3 + 2p^2 + p + 1`.
pub fn verify_quadric(c: &RunConfig, r: &mut Report) -> ConfigResult<()> {
    let p = c.require(&c.p, "p")?;
    let b = c.b.unwrap_or(1);
    let count = quadric_count(p, b).map_err(lib)?;
    let expected = quadric_count_formula(p);
    r.count("points", count);
    r.push(Check::new(
        format!("quadric p={p} b={b}"),
        expected,
        count,
        (count as f64 - expected as f64).abs(),
        0.0,
    ));
    Ok(())
}

fn ramified_char(p: u64, conductor: u32, z: Complex64) -> ConfigResult<UnitChar> {
    // one exponent per cyclic generator of (Z/p^k)^x
    let part = RamifiedPart::new(p, conductor, vec![1])
        .or_else(|_| RamifiedPart::new(p, conductor, vec![1, 1]))
        .map_err(lib)?;
    if part.conductor() != conductor {
        return Err(ConfigError(format!("no character of conductor {conductor} mod {p} from a generator")));
    }
    UnitChar::ramified(z, part).map_err(lib)
}

/// Shell-by-shell brute force of the local zeta integral against the closed
/// form, within the geometric tail bound; exact vanishing for ramified `chi`.
pub fn verify_localzeta(c: &RunConfig, r: &mut Report) -> ConfigResult<()> {
    let p = c.require(&c.p, "p")?;
    let s = parse_complex(&c.require(&c.s, "s")?)?;
    let z = parse_complex(&c.require(&c.chi, "chi")?)?;
    let depth = c.level.unwrap_or(4);
    let b = c.b.unwrap_or(1);
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed.unwrap_or(0));
    let alphas: Vec<VPoint<BigRational>> = match rational_alpha(c)? {
        Some(a) => vec![a],
        None => {
            let pi = p as i64;
            (0..c.samples.unwrap_or(10))
                .map(|_| {
                    VPoint::from_coords(std::array::from_fn(|_| {
                        BigRational::from_integer(BigInt::from(rng.gen_range(-6..6) * [1, pi, pi * pi][rng.gen_range(0..3)]))
                    }))
                })
                .collect()
        }
    };
    let chi = UnitChar::unramified(z).map_err(lib)?;
    for a in &alphas {
        let label = alpha_label(a);
        let spec = LocalZetaSpec::new(p, b, a.clone(), chi.clone(), s, depth).map_err(lib)?;
        let brute = local_zeta_brute(&spec, UnitMeasure::Haar).map_err(lib)?;
        let closed = local_zeta_closed(&spec, UnitMeasure::Haar).map_err(lib)?;
        r.count("shells", brute.shells.len() as u64);
        r.push(Check::new(
            format!("local zeta p={p} M={depth} alpha=({label})"),
            fmt_c64(closed),
            fmt_c64(brute.value),
            (brute.value - closed).norm(),
            brute.tail_bound,
        ));
    }
    if let Some(cond) = c.conductor.filter(|&k| k > 0) {
        let chi = ramified_char(p, cond, z)?;
        for a in &alphas {
            let label = alpha_label(a);
            let spec = LocalZetaSpec::new(p, b, a.clone(), chi.clone(), s, depth).map_err(lib)?;
            let brute = local_zeta_brute(&spec, UnitMeasure::Haar).map_err(lib)?;
            let zero = brute.exact_zero == Some(true);
            r.push(Check::exact(
                format!("ramified zero p={p} conductor={cond} alpha=({label})"),
                "exact zero",
                if zero { "exact zero".to_string() } else { fmt_c64(brute.value) },
                zero,
                brute.value.norm(),
            ));
        }
    }
    Ok(())
}

/// Both sides of Poisson summation for seeded Gaussians, and the twisted
/// transform rule against a trapezoid Fourier integral.
pub fn verify_poisson(c: &RunConfig, r: &mut Report) -> ConfigResult<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed.unwrap_or(0));
    let theta: f64 = (-30..=30).map(|k: i32| (-std::f64::consts::PI * (k * k) as f64).exp()).sum();
    let id = poisson_check(&LatticeTestFn::identity_scaled(1)).map_err(lib)?;
    r.push(Check::new(
        "poisson q=I against theta(1)^4",
        fmt_f64(theta.powi(4)),
        fmt_f64(id.lhs),
        (id.lhs - theta.powi(4)).abs().max(id.difference),
        1e-10,
    ));
    for k in 0..c.samples.unwrap_or(10) {
        let psi = random_gaussian(&mut rng, 8, 0.25, 4.0);
        let rep = poisson_check(&psi).map_err(lib)?;
        r.push(Check::new(
            format!("poisson random q #{k}"),
            fmt_f64(rep.rhs),
            fmt_f64(rep.lhs),
            rep.difference,
            1e-10,
        ));
    }
    let xs = [[0.0; 4], [0.3, -0.2, 0.1, 0.25], [-0.5, 0.4, 0.0, 0.2]];
    let cases = [
        (1.0, Mat2::diag(2.0, 1.0), Mat2::diag(1.0, 1.0)),
        (1.25, Mat2::new(1.0, 0.5, 0.0, 1.0), Mat2::diag(1.0, 1.5)),
    ];
    for (a, g1, g2) in cases {
        let rep = twist_check(&LatticeTestFn::identity_scaled(1), a, &g1, &g2, &xs).map_err(lib)?;
        let expected = a.abs().powi(-4) * (g1.det() * g2.det()).abs().powi(-2);
        r.push(Check::new(
            format!("twist constant a={a} det g1={} det g2={}", g1.det(), g2.det()),
            fmt_f64(expected),
            fmt_f64(rep.constant),
            (rep.constant - expected).abs(),
            1e-10,
        ));
        r.push(Check::new(
            format!("twist rule vs trapezoid a={a}"),
            "0",
            fmt_f64(rep.max_rule_vs_numeric),
            rep.max_rule_vs_numeric,
            1e-10,
        ));
    }
    Ok(())
}

/// `I_S` on the standard data, its decay along a ray, and exact vanishing for
/// `b` outside the support window.
pub fn compute_is(c: &RunConfig, r: &mut Report) -> ConfigResult<()> {
    let data = ArchData {
        b: c.b.unwrap_or(1) as f64,
        ..ArchData::standard()
    };
    let twist = ArchTwist::default();
    if let Some(a) = rational_alpha(c)? {
        let af = a.map(|q| q.to_f64().unwrap_or(f64::NAN));
        let base = QuadratureSpec::uniform(c.grid.unwrap_or(16));
        match resolving_grid(&data, &af, &base).map_err(lib)? {
            None => r.push(Check::new("I_S support zero", "0", "0", 0.0, 0.0)),
            Some(q) => {
                let v = transform_is(&data, &af, &twist, &q).map_err(lib)?;
                let fine = transform_is(&data, &af, &twist, &q.refined(2)).map_err(lib)?;
                r.count("nodes", v.nodes + fine.nodes);
                r.push(Check::new(
                    "I_S stable under grid doubling",
                    fmt_c64(fine.value),
                    fmt_c64(v.value),
                    (fine.value - v.value).norm(),
                    v.error,
                ));
            }
        }
    }
    let probe = ProbeSetup::standard().run(&data, -4.0).map_err(lib)?;
    let last = *probe.slopes.last().expect("ladder has two rungs");
    r.push(Check::new(
        "decay slope at the last rung",
        "<= -4",
        fmt_f64(last),
        (last + 4.0).max(0.0),
        0.0,
    ));
    let far = ArchData { b: 20.0, ..data.clone() };
    let z = transform_is(&far, &VPoint::from_coords([0.5; 6]), &twist, &QuadratureSpec::uniform(8)).map_err(lib)?;
    r.push(Check::exact(
        "b = 20 outside the support window",
        "exact zero",
        if z.exact_zero { "exact zero".into() } else { fmt_c64(z.value) },
        z.exact_zero,
        z.value.norm(),
    ));
    r.details = Some(serde_json::to_value(&probe).expect("serializes"));
    Ok(())
}

/// Windows `(1, 1), (2, 2), (4, 4), ...` up to `(height, cmax)`.
fn doubling_windows(h: u64, cmax: u64) -> Vec<HeightWindow> {
    let mut out = vec![];
    let mut k = 1u64;
    loop {
        let w = HeightWindow {
            height: k.min(h),
            cmax: k.min(cmax),
        };
        if out.last() != Some(&w) {
            out.push(w);
        }
        if k >= h && k >= cmax {
            return out;
        }
        k *= 2;
    }
}

/// The truncated geometric side on the standard data with the partial-sum
/// trace over doubled windows.
pub fn cmd_geometric_side(c: &RunConfig, r: &mut Report, csv_path: Option<&Path>) -> ConfigResult<()> {
    let h = c.require(&c.height, "height")?;
    let cmax = c.require(&c.cmax, "cmax")?;
    HeightWindow::new(h, cmax).map_err(lib)?;
    let mut spec = GeomSpec::standard();
    spec.windows = doubling_windows(h, cmax);
    if let Some(n) = c.grid {
        spec.quad = QuadratureSpec::uniform(n);
    }
    let rep = geometric_side(&spec).map_err(lib)?;
    r.count("candidates", rep.candidates);
    r.count("quadratures", rep.quadratures);
    if let Some(last) = rep.windows.last() {
        r.count("terms", last.terms);
        r.count("uncertified", last.uncertified);
        r.count("bound_terms", last.bound);
        r.count("support_zero", last.support_zero);
    }
    for (w, (d, err, _)) in rep.windows.windows(2).zip(&rep.cauchy) {
        let (a, b) = (w[0].window.unwrap(), w[1].window.unwrap());
        r.push(Check::new(
            format!("cauchy ({},{}) -> ({},{})", a.height, a.cmax, b.height, b.cmax),
            fmt_c64(w[0].sum),
            fmt_c64(w[1].sum),
            *d,
            *err,
        ));
    }
    let trace: Vec<serde_json::Value> = rep
        .windows
        .iter()
        .map(|w| serde_json::to_value(w).expect("serializes"))
        .collect();
    let table: Vec<serde_json::Value> = rep
        .table
        .iter()
        .map(|t| serde_json::to_value(t.row()).expect("serializes"))
        .collect();
    r.details = Some(serde_json::json!({ "trace": trace, "terms": table }));
    if let Some(path) = csv_path {
        let mut w = csv::Writer::from_path(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        for t in &rep.table {
            w.serialize(t.row()).map_err(|e| ConfigError(e.to_string()))?;
        }
        w.flush().map_err(|e| ConfigError(e.to_string()))?;
    }
    Ok(())
}
