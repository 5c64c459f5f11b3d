use proptest::prelude::*;
use wander_core::approx::{
    approximate, certify_univalence, ApproxConfig, ApproximationTask, Constraint, Piece, Polynomial,
};
use wander_core::branches::invert_branch;
use wander_core::geometry::{winding_number, Constants, Region};
use wander_core::schedule::lambda_schedule;
use wander_core::verify::{empirical_density, iterate, render, Label, Labeler};
use wander_core::C64;

fn z(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn labeler() -> Labeler {
    let s = lambda_schedule(num_rational::Ratio::new(1, 2), 1).unwrap();
    Labeler::new(Constants::with_r1(0.09), s, 1e-9, 13.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn certified_error_bounds_every_sample(gap in 0.3f64..1.0, a in -2.0f64..2.0, b in -2.0f64..2.0, r in 0.05f64..0.2) {
        let ta = move |_: C64| z(a, 0.0);
        let tb = move |w: C64| w * b;
        let task = ApproximationTask {
            pieces: vec![
                Piece::new(Region::disk(z(0.0, 0.0), r), &ta),
                Piece::new(Region::disk(z(2.0 * r + gap, 0.1), r), &tb),
            ],
            constraints: vec![],
            epsilon: 1e-4,
            config: ApproxConfig { max_degree: 1024, ..Default::default() },
        };
        let (p, cert) = approximate(&task).unwrap();
        for (i, piece) in task.pieces.iter().enumerate() {
            let worst = piece.region.grid(24, 333).iter().map(|w| (p.eval(*w) - (piece.target)(*w)).norm()).fold(0.0, f64::max);
            prop_assert!(worst <= cert.certified[i], "piece {i}: {worst:e} > {:e}", cert.certified[i]);
            prop_assert!(cert.certified[i] <= 1e-4);
        }
    }

    #[test]
    fn interpolation_constraints_hold(v in -1.0f64..1.0, d in 0.5f64..4.0) {
        let t = move |w: C64| w * d + v;
        let task = ApproximationTask {
            pieces: vec![Piece::new(Region::disk(z(0.0, 0.0), 0.1), &t)],
            constraints: vec![Constraint { point: z(0.0, 0.0), value: z(v, 0.0), derivative: Some(z(d, 0.0)) }],
            epsilon: 1e-6,
            config: ApproxConfig { max_degree: 256, ..Default::default() },
        };
        let (p, cert) = approximate(&task).unwrap();
        let (pv, pd) = p.eval_d(z(0.0, 0.0));
        prop_assert!((pv - v).norm() <= 1e-12 && (pd - d).norm() <= 1e-12);
        prop_assert!(cert.constraint_residuals.iter().all(|r| *r <= 1e-12));
    }

    #[test]
    fn inverse_branch_round_trip(re in -0.15f64..0.15, im in -0.15f64..0.15, c2 in -0.5f64..0.5) {
        let f = Polynomial::monomial(vec![z(0.0, 0.0), z(3.0, 0.0), z(c2, 0.0)]);
        let d = Constants::with_r1(0.09).d();
        let w = z(re, im);
        let pre = invert_branch(&f, &d, w, w / 3.0).unwrap();
        prop_assert!((f.eval(pre) - w).norm() <= 1e-10);
        prop_assert!(d.signed_distance(pre) <= 1e-9);
    }

    #[test]
    fn tripling_orbits_grow_geometrically(re in -0.05f64..0.05, im in -0.05f64..0.05) {
        let f = Polynomial::linear(z(3.0, 0.0), z(0.0, 0.0));
        let lab = labeler();
        let log = iterate(&f, z(re, im), 12, &lab);
        for s in &log.steps {
            if s.label != Label::Escaped {
                let want = z(re, im).norm() * 3f64.powi(s.n as i32);
                prop_assert!((s.z.norm() - want).abs() <= 1e-12 * (1.0 + want));
                prop_assert_eq!(s.label, lab.label(s.z));
            }
        }
        prop_assert!(log.steps.iter().filter(|s| s.label == Label::Escaped).count() <= 1);
    }

    #[test]
    fn densities_are_monotone_counts(re in -0.05f64..0.05, rad in 0.01f64..2.0) {
        let f = Polynomial::linear(z(3.0, 0.0), z(0.0, 0.0));
        let log = iterate(&f, z(re, 0.0), 10, &labeler());
        let pts = empirical_density(&log, &Region::disk(z(0.0, 0.0), rad), 1e-12);
        for w in pts.windows(2) {
            prop_assert!(w[1].count >= w[0].count && w[1].count - w[0].count <= 1);
        }
        prop_assert!(pts.iter().all(|p| p.count <= p.k));
    }

    #[test]
    fn boundaries_wind_once(cx in -1.0f64..1.0, cy in -1.0f64..1.0, r in 0.01f64..1.0, n in 3usize..9) {
        let disk = Region::disk(z(cx, cy), r);
        prop_assert_eq!(winding_number(&disk.boundary(256), z(cx, cy)).unwrap(), 1);
        let poly = Region::polygon((0..n).map(|k| z(cx, cy) + C64::from_polar(r, std::f64::consts::TAU * k as f64 / n as f64)).collect());
        prop_assert_eq!(winding_number(&poly.boundary(512), z(cx, cy)).unwrap(), 1);
        prop_assert_eq!(winding_number(&poly.boundary(512), z(cx + 3.0, cy)).unwrap(), 0);
    }

    #[test]
    fn squaring_is_never_certified_around_zero(cx in -0.3f64..0.3, cy in -0.3f64..0.3, extra in 0.05f64..0.5) {
        let sq = |w: C64| (w * w, w * 2.0);
        // the disk holds both z and -z for its deeper points
        let r = 2.0 * z(cx, cy).norm() + extra;
        prop_assert!(certify_univalence(&sq, &Region::disk(z(cx, cy), r), 16, 0.0).is_err());
    }

    #[test]
    fn render_is_deterministic(w in 1usize..12, h in 1usize..12, it in 0usize..8) {
        let f = Polynomial::monomial(vec![z(0.1, 0.0), z(0.0, 0.0), z(1.0, 0.0)]);
        let vp = (z(-2.0, -1.5), z(2.0, 1.5));
        let a = render(&f, &labeler(), vp, w, h, it);
        prop_assert_eq!(a.data.len(), 3 * w * h);
        prop_assert_eq!(&a, &render(&f, &labeler(), vp, w, h, it));
    }
}
