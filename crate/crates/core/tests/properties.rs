use proptest::prelude::*;

use rwre_core::experiments::{classify_zero_set, ZeroSet};
use rwre_core::lattice::{make_iid_law, Direction, KernelField, LawField, MarginalFamily, SignVector, SiteKernel};
use rwre_core::mgf::{legendre, product_grid};
use rwre_core::rate::{hitting_prob_table, target_site};
use rwre_core::renewal::{coupled_marginal, detect_tau, uz_theta, EpsTag};
use rwre_core::walk::{project_pi, reconstruct, Trajectory};

fn kernel(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, 2 * d).prop_map(|raw| {
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    })
}

fn signs(d: usize) -> impl Strategy<Value = SignVector> {
    prop::collection::vec(prop::bool::ANY, d).prop_map(|b| SignVector::new(b.iter().map(|&p| if p { 1 } else { -1 }).collect()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn direction_display_parses_back(i in 0usize..8) {
        let e = Direction::from_index(i);
        prop_assert_eq!(Direction::parse(&e.to_string()).unwrap(), e);
        prop_assert_eq!(e.opposite().opposite(), e);
    }

    #[test]
    fn sampled_kernels_are_elliptic_distributions(d in 1usize..4, delta in 0.0f64..0.4, seed in any::<u64>(), x in prop::collection::vec(-100i64..100, 3)) {
        let law = make_iid_law::<f64>(d, 0.05, SiteKernel::uniform(d), MarginalFamily::two_point(), delta).unwrap();
        let mut w = vec![0.0; 2 * d];
        LawField::new(&law, seed).kernel_into(&x[..d], &mut w).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&p| p >= 0.05 - 1e-15));
    }

    #[test]
    fn projection_inverts_on_directed_paths(s in signs(3), steps in prop::collection::vec(0usize..3, 0..30)) {
        let incs: Vec<Direction> = steps.iter().map(|&j| s.direction(j)).collect();
        let traj = Trajectory::new(vec![0; 3], incs);
        let p = project_pi(&s, &traj);
        let back = reconstruct(&s, steps.len() as i64, &p.endpoint()).unwrap();
        prop_assert_eq!(back, traj.endpoint());
    }

    #[test]
    fn coupling_preserves_the_kernel(w in kernel(2), frac in 0.0f64..=1.0) {
        let min = w.iter().copied().fold(f64::INFINITY, f64::min);
        let m = coupled_marginal(&w, frac * min.min(0.25)).unwrap();
        for (a, b) in m.iter().zip(&w) {
            prop_assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn tilt_algebra_holds(w in kernel(2), r in 0.0f64..0.95, angle in 0.0f64..std::f64::consts::TAU) {
        let (c, s) = (angle.cos(), angle.sin());
        let l1 = c.abs() + s.abs();
        let z = [r * c / l1, r * s / l1];
        let tilt = uz_theta(&SiteKernel::new(w).unwrap(), &z).unwrap();
        prop_assert!(tilt.residuals().max() <= 1e-12, "{:?}", tilt.residuals());
        prop_assert!(tilt.c_z > 0.0);
        prop_assert!((tilt.u_z.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fenchel_young(points in 3usize..40, x in -0.9f64..0.9, a in 0.1f64..2.0) {
        let thetas = product_grid::<f64>(1, -3.0, 3.0, points);
        let f: Vec<f64> = thetas.iter().map(|t| a * t[0] * t[0]).collect();
        let c = legendre(&thetas, &f, &[vec![x]]).unwrap();
        for (t, v) in thetas.iter().zip(&f) {
            prop_assert!(c.star_vals[0] >= t[0] * x - v - 1e-12);
        }
    }

    #[test]
    fn target_site_parity(eta in -1.0f64..=1.0, n in 1usize..300) {
        let y = target_site(&[eta], n);
        prop_assert!(y[0].abs() <= n as i64);
        prop_assert_eq!((y[0] - n as i64).rem_euclid(2), 0);
        prop_assert!((y[0] as f64 - eta * n as f64).abs() <= 1.0 + 1e-9);
    }

    #[test]
    fn hitting_rows_are_subprobabilities(w in kernel(1), n in 0usize..40) {
        let law = make_iid_law::<f64>(1, 0.01, SiteKernel::new(w).unwrap(), MarginalFamily::two_point(), 0.0).unwrap();
        let t = hitting_prob_table(&LawField::new(&law, 0), &[0], n).unwrap();
        for k in 0..=n {
            prop_assert!(t.row_sum(k) <= 1.0 + 1e-12);
        }
        prop_assert!((t.prob(0, &[0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn renewals_are_spaced_by_the_run_length(bits in prop::collection::vec(0u8..3, 0..200), l in 1usize..4) {
        let sym = EpsTag::Forced(Direction::from_index(0));
        let tags: Vec<EpsTag> = bits.iter().map(|&b| if b == 0 { sym } else { EpsTag::Zero }).collect();
        if let Ok(rec) = detect_tau(&tags, l, sym) {
            let mut prev = 0;
            for &t in &rec.taus {
                prop_assert!(t >= prev + l);
                prop_assert!(tags[t - l..t].iter().all(|&g| g == sym));
                prev = t;
            }
        }
    }

    #[test]
    fn single_minimum_is_a_point(k in 0usize..9) {
        let etas: Vec<Vec<f64>> = (0..9).map(|i| vec![-1.0 + 0.25 * i as f64]).collect();
        let rates: Vec<f64> = (0..9).map(|i| if i == k { 0.0 } else { 1.0 }).collect();
        prop_assert_eq!(classify_zero_set(&etas, &rates, 0.5, 0.25).unwrap(), ZeroSet::Point { at: etas[k].clone() });
    }
}
