//! One PASS/FAIL line per acceptance criterion; exits non-zero if any fails.

use std::time::{Duration, Instant};

use num_rational::Ratio;
use sha2::{Digest, Sha256};
use wander_core::driver::{build, Config, Manifest};
use wander_core::exec::{self, Mode};
use wander_core::geometry::{compactly_contained, region_distance, Constants, Region};
use wander_core::schedule::{lambda_schedule, shifted_schedule, MultiCenterSchedule, Schedule};
use wander_core::verify::{
    ladder_report, measure_c_for, verify_attractor, verify_escape_and_halfplane, verify_schedule, Verifier,
};
use wander_core::C64;

type Q = Ratio<u64>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let t = Instant::now();
    let mut o = f();
    let took = t.elapsed();
    o.detail = format!("{} [{:.1?} of {:?}]", o.detail, took, limit);
    o.pass &= took < limit;
    o
}

fn z(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn sha(m: &Manifest) -> String {
    Sha256::digest(m.to_json().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn constants_feasible() -> Outcome {
    let c = Constants::with_r1(0.108);
    let phi_d = Region::disk(z(0.0, 0.0), 3.0 * c.r1);
    let inside = compactly_contained(&c.d(), &phi_d, 0.0) && compactly_contained(&c.b0(), &phi_d, 0.0);
    let eps_ok = c.eps < c.r2 / 2.0;
    let a = c.a();
    let gap_d = region_distance(&a, &c.d(), 4096);
    let gap_b = (0..64).map(|k| region_distance(&a, &c.b0().translated(z(k as f64, 0.0)), 4096)).fold(f64::INFINITY, f64::min);
    // closed form for two disks on the real axis
    let oracle_d = 0.25 - 1.0 / 9.0 - c.r1;
    let pass = inside && eps_ok && gap_d > 0.0 && gap_b > 0.0 && (gap_d - oracle_d).abs() < 1e-9 && c.validate().is_ok();
    outcome(pass, format!("D,B0 in 3D: {inside}, eps = {:.5} < r2/2 = {:.5}, gap(A,D) = {gap_d:.5}, gap(A,B0+k) = {gap_b:.5}", c.eps, c.r2 / 2.0))
}

fn stage_zero(m: &Manifest) -> Outcome {
    let s0 = &m.stages[0];
    let (v, d) = s0.f.eval_d(z(0.0, 0.0));
    let residual = v.norm().max((d - 3.0).norm());
    let named = |n: &str| s0.verdicts.iter().find(|c| c.name == n).is_some_and(|c| c.pass);
    // independent samples of |f0 - 3z| and |f0'| on D
    let dgrid = m.constants.d().grid(48, 512);
    let worst = dgrid.iter().map(|w| (s0.f.eval(*w) - *w * 3.0).norm()).fold(0.0, f64::max);
    let mu = dgrid.iter().map(|w| s0.f.eval_d(*w).1.norm()).fold(f64::INFINITY, f64::min);
    let pass = s0.eps < m.constants.eps / 4.0
        && residual <= 1e-12
        && worst <= s0.eps
        && mu > 1.5
        && named("|f_j - phi_j| <= eps_j on T_j")
        && named("mu' > 3/2 on D")
        && named("(iv) f univalent on U_j")
        && s0.ok();
    outcome(pass, format!("eps0 = {:.3e} < eps/4 = {:.3e}, sampled |f0 - 3z| on D = {worst:.2e}, f0(0)/f0'(0) residual = {residual:.1e}, min |f0'| on D = {mu:.4}", s0.eps, m.constants.eps / 4.0))
}

fn itinerary(m: &Manifest, v: &Verifier) -> Outcome {
    let (grid, rim) = v.k_grid(2);
    let r = verify_schedule(v, 2, &grid, rim, 23);
    // the lambda = 1 schedule with m_j = j + 1: in D exactly at 1, 4..=7, 11..=19
    let in_d = |l: u64| l == 1 || (4..=7).contains(&l) || (11..=19).contains(&l);
    let d = m.constants.d();
    let margin = 2.0 * m.stages[2].eps;
    let f = v.f();
    let mut oracle_mismatch = 0;
    let mut oracle_checked = 0;
    for seed in &grid {
        let mut w = *seed;
        for l in 1..=23 {
            w = f.eval(w);
            let sd = d.signed_distance(w);
            if sd.abs() > margin {
                oracle_checked += 1;
                if (sd < 0.0) != in_d(l) {
                    oracle_mismatch += 1;
                }
            }
        }
    }
    let pass = grid.len() >= 100 && r.pass && r.mismatches == 0 && oracle_mismatch == 0 && oracle_checked == r.checked;
    outcome(
        pass,
        format!(
            "{} seeds to N3 = 23: {} determinate steps, {} mismatches (oracle {}), {} indeterminate, worst dichotomy margin {:.4} vs 2eps2 = {:.1e}",
            grid.len(),
            r.checked,
            r.mismatches,
            oracle_mismatch,
            r.indeterminate,
            r.worst_dichotomy_margin,
            margin
        ),
    )
}

fn attractor(m: &Manifest, v: &Verifier) -> Outcome {
    let r = verify_attractor(v);
    let quarter = z(-0.25, 0.0);
    let centre = (v.f().eval(quarter) - quarter).norm();
    let pass = r.pass && centre < 1.0 / 18.0 + 2.0 * m.stages[2].eps && r.clouds.len() == 2;
    outcome(pass, format!("f2(A) spread {:.2e}, disk margin {:.4}, cloud margins {:?}", r.spread, r.disk_margin, r.clouds))
}

fn escape(v: &Verifier) -> Outcome {
    let rs: Vec<_> = (0..=2).map(|j| verify_escape_and_halfplane(v, j)).collect();
    let pass = rs.iter().all(|r| r.pass);
    let detail = rs.iter().map(|r| format!("j={}: escape {:.3}, Re > -1 by {:.3}", r.j, r.escape_margin, r.halfplane_margin)).collect::<Vec<_>>().join("; ");
    outcome(pass, detail)
}

fn ladder(v: &Verifier) -> Outcome {
    match ladder_report(v, 3) {
        Ok(l) => {
            let strictly = l.radii.windows(2).all(|w| w[1] < w[0]);
            outcome(l.pass && strictly && l.radii.len() == 3, format!("radii {:?}, disjoint {}, max ratio {:.4}", l.radii, l.disjoint, l.max_ratio))
        }
        Err(e) => outcome(false, e),
    }
}

/// Step-by-step walk of the schedule rule, independent of the block arithmetic.
fn enumerate_count(lambda: Q, shift: u64, k: u64) -> u64 {
    let (num, den) = (*lambda.numer(), *lambda.denom());
    let (mut j, mut left_in, mut left_out, mut count) = (0u64, 0u64, 0u64, 0u64);
    for _ in 1..=k {
        while left_in == 0 && left_out == 0 {
            j += 1;
            let n = if num == den { j * j } else { (num * j).div_ceil(den - num) };
            let cut = n.min(shift);
            left_in = n - cut;
            left_out = j + 1 + cut;
        }
        if left_in > 0 {
            left_in -= 1;
            count += 1;
        } else {
            left_out -= 1;
        }
    }
    count
}

fn density() -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    for lambda in [Q::new(0, 1), Q::new(3, 10), Q::new(1, 2), Q::new(1, 1)] {
        let s = lambda_schedule(lambda, 1).unwrap();
        let k = 1_000_000;
        let delta = s.density(k).unwrap();
        let oracle = Q::new(enumerate_count(lambda, 0, k), k);
        let err = (to_f(delta) - to_f(lambda)).abs();
        let sandwich = (1..=10_000).all(|k| {
            let (lo, hi) = s.density_bounds(k).unwrap();
            let d = s.density(k).unwrap();
            lo <= d && d <= hi
        });
        let mut shift_worst = 0.0f64;
        let mut shift_oracle = true;
        for c in 0..=10 {
            let sh: Schedule = shifted_schedule(&s, c);
            let dc = sh.density(k).unwrap();
            shift_oracle &= dc == Q::new(enumerate_count(lambda, c, k), k);
            shift_worst = shift_worst.max((to_f(dc) - to_f(delta)).abs());
        }
        let ok = err < 0.02 && delta == oracle && sandwich && shift_oracle && shift_worst < 1e-3;
        pass &= ok;
        notes.push(format!("lambda {lambda}: Delta(1e6) = {:.6} (oracle agrees: {}), sandwich {sandwich}, max shift drift {shift_worst:.2e}", to_f(delta), delta == oracle));
    }
    outcome(pass, notes.join("; "))
}

fn to_f(q: Q) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

fn multi_center() -> Outcome {
    let lambdas = [Q::new(1, 2), Q::new(3, 10), Q::new(1, 5)];
    let s = MultiCenterSchedule::new(&lambdas).unwrap();
    let k = 1_000_000u64;
    // walk the cycle one iterate at a time
    let mut counts = [0u64; 3];
    let (mut t, mut j) = (0u64, 0u64);
    'walk: loop {
        j += 1;
        for (l, lam) in lambdas.iter().enumerate() {
            let n = (*lam.numer() * j * j).div_ceil(*lam.denom());
            for _ in 0..n {
                if t == k {
                    break 'walk;
                }
                t += 1;
                counts[l] += 1;
            }
            for _ in 0..j {
                if t == k {
                    break 'walk;
                }
                t += 1;
            }
        }
    }
    let mut pass = s.centers() == 3;
    let mut notes = Vec::new();
    for (i, lam) in lambdas.iter().enumerate() {
        let d = s.density(i + 1, k).unwrap();
        let exact = d == Q::new(counts[i], k);
        let err = (to_f(d) - to_f(*lam)).abs();
        pass &= exact && err < 0.02;
        notes.push(format!("Delta^{}(1e6) = {:.5} vs {lam} (oracle agrees: {exact})", i + 1, to_f(d)));
    }
    outcome(pass, notes.join("; "))
}

fn c_probe(m: &Manifest, v: &Verifier) -> Outcome {
    let r1 = m.constants.r1;
    let third = measure_c_for(v, r1 / 3.0);
    let ninth = measure_c_for(v, r1 / 9.0);
    let spread = |r: &wander_core::verify::CReport| r.range().map(|(a, b)| b - a);
    let within = [&third, &ninth].iter().all(|r| spread(r).is_some_and(|s| s <= 1));
    let ordered = match (third.range(), ninth.range()) {
        (Some((_, a)), Some((b, _))) => b > a,
        _ => false,
    };
    // f close to 3z on D: leaving D(0, r1 / 3^c) takes c triplings
    let oracle = third.range() == Some((1, 1)) && ninth.range() == Some((2, 2));
    outcome(within && ordered, format!("C(r1/3) in {:?}, C(r1/9) in {:?}, log3 oracle (1, 2) agrees: {oracle}", third.range(), ninth.range()))
}

fn determinism(first: &Manifest) -> Outcome {
    let before = exec::mode();
    exec::set_mode(Mode::Sequential);
    let again = build(Config::from_json(STAGE0).unwrap());
    exec::set_mode(before);
    match again {
        Ok(m) => {
            let (a, b) = (sha(first), sha(&m));
            outcome(a == b, format!("parallel build sha256 {}..., sequential rebuild sha256 {}...", &a[..16], &b[..16]))
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

const STAGE0: &str = r#"{"lambda": "1", "stages": 0}"#;
const STAGE2: &str = r#"{"lambda": "1", "stages": 2}"#;

fn main() {
    exec::init_threads_from_env();
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let minute = Duration::from_secs(60);

    results.push((1, timed(Duration::from_secs(1), constants_feasible)));

    let mut stage0 = None;
    results.push((
        2,
        timed(Duration::from_secs(30), || match build(Config::from_json(STAGE0).unwrap()) {
            Ok(m) => {
                let o = stage_zero(&m);
                stage0 = Some(m);
                o
            }
            Err(e) => outcome(false, e.to_string()),
        }),
    ));

    let t = Instant::now();
    let full = build(Config::from_json(STAGE2).unwrap());
    eprintln!("stage-2 build took {:.1?}", t.elapsed());
    match &full {
        Ok(m) => {
            let v = Verifier::new(m).unwrap();
            results.push((3, timed(5 * minute, || itinerary(m, &v))));
            results.push((4, timed(minute, || attractor(m, &v))));
            results.push((5, timed(minute, || escape(&v))));
            results.push((6, timed(minute, || ladder(&v))));
            results.push((7, timed(minute, density)));
            results.push((8, timed(minute, multi_center)));
            results.push((9, timed(2 * minute, || c_probe(m, &v))));
        }
        Err(e) => {
            for n in [3, 4, 5, 6, 9] {
                results.push((n, outcome(false, format!("stage-2 build failed: {e}"))));
            }
            results.push((7, timed(minute, density)));
            results.push((8, timed(minute, multi_center)));
        }
    }
    results.push((
        10,
        match &stage0 {
            Some(m) => determinism(m),
            None => outcome(false, "no stage-0 build to compare"),
        },
    ));

    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (n, o) in &results {
        println!("criterion {n:>2}: {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria pass", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
