use proptest::prelude::*;
use qal_core::cloud::{distance, nn_one_way, Backend, BiAssignment, PointCloud};
use qal_core::io::{read_cloud_from, round_sig, write_cloud_to, CloudFileFormat};
use qal_core::losses::{
    chamfer, coverage_weight, emd, loss_grad_check, qal, ChamferVariant, EmdMode, LossKind, QalParams, DEFAULT_FD_STEP,
};
use qal_core::metrics::{coverage_at, quality_report, spurious_at};
use qal_core::Error;
use std::path::Path;

fn coords(range: f64) -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-range..range)
}

/// Clouds whose coordinates sit on a coarse lattice, so exact ties and
/// duplicates are common.
fn lattice_cloud(max: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(prop::array::uniform3(-4i32..=4), 1..max)
        .prop_map(|pts| PointCloud::new(pts.into_iter().map(|p| p.map(|c| c as f64 * 0.25)).collect()).unwrap())
}

fn cloud(max: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(coords(1.0), 1..max).prop_map(|pts| PointCloud::new(pts).unwrap())
}

fn any_cloud(max: usize) -> impl Strategy<Value = PointCloud> {
    prop_oneof![cloud(max), lattice_cloud(max)]
}

fn params() -> impl Strategy<Value = QalParams> {
    (1e-4..0.2f64, 0.5..50.0f64, 0.0..3.0f64).prop_map(|(e, w, l)| QalParams::new(e, w, l).unwrap())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn shuffled(c: &PointCloud, seed: u64) -> PointCloud {
    let mut pts = c.points().to_vec();
    let mut state = seed | 1;
    for i in (1..pts.len()).rev() {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        pts.swap(i, (state % (i as u64 + 1)) as usize);
    }
    PointCloud::new(pts).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backends_agree(q in any_cloud(300), t in any_cloud(300)) {
        let brute = nn_one_way(&q, &t, Backend::BruteForce).unwrap();
        let tree = nn_one_way(&q, &t, Backend::SpatialIndex).unwrap();
        prop_assert_eq!(brute, tree);
    }

    #[test]
    fn distance_is_symmetric(p in coords(10.0), q in coords(10.0)) {
        prop_assert_eq!(distance(&p, &q), distance(&q, &p));
    }

    #[test]
    fn nn_exact_under_power_of_two_scale(q in any_cloud(100), t in any_cloud(100), k in -8i32..=8) {
        let s = 2f64.powi(k);
        let base = nn_one_way(&q, &t, Backend::SpatialIndex).unwrap();
        let scaled = nn_one_way(
            &q.map_points(|p| p.map(|c| c * s)).unwrap(),
            &t.map_points(|p| p.map(|c| c * s)).unwrap(),
            Backend::SpatialIndex,
        ).unwrap();
        prop_assert_eq!(&scaled.indices, &base.indices);
        for (d, ds) in base.distances.iter().zip(&scaled.distances) {
            prop_assert_eq!(*ds, s * d);
        }
    }

    #[test]
    fn nn_distances_scale(q in cloud(100), t in cloud(100), s in 0.01..100.0f64) {
        let base = nn_one_way(&q, &t, Backend::SpatialIndex).unwrap();
        let sq = q.map_points(|p| p.map(|c| c * s)).unwrap();
        let st = t.map_points(|p| p.map(|c| c * s)).unwrap();
        let scaled = nn_one_way(&sq, &st, Backend::SpatialIndex).unwrap();
        for (i, (d, ds)) in base.distances.iter().zip(&scaled.distances).enumerate() {
            let j = scaled.indices[i];
            let magnitude = s * (q.points()[i].iter().chain(&t.points()[j]).fold(0.0f64, |m, c| m.max(c.abs())));
            prop_assert!((ds - s * d).abs() <= 4.0 * f64::EPSILON * (s * d).max(magnitude));
        }
    }

    #[test]
    fn nn_is_deterministic_across_pools(q in cloud(600), t in cloud(600)) {
        let a = nn_one_way(&q, &t, Backend::SpatialIndex).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| nn_one_way(&q, &t, Backend::SpatialIndex).unwrap());
        let c = nn_one_way(&q, &t, Backend::SpatialIndex).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&a, &c);
    }

    #[test]
    fn weight_bounds(d in 0.0..10.0f64, eps in 1e-4..1.0f64, omega in 1e-3..100.0f64) {
        let w = coverage_weight(d, eps, omega).unwrap();
        prop_assert!((0.5..=1.5).contains(&w));
        if (omega * (eps - d)).abs() < 30.0 {
            prop_assert!(w > 0.5 && w < 1.5);
        }
        prop_assert_eq!(coverage_weight(eps, eps, omega).unwrap(), 1.0);
    }

    #[test]
    fn reduction_to_chamfer(p in cloud(64), g in cloud(64), eps in 1e-4..0.1f64) {
        let params = QalParams::new(eps, 1e-8, 0.0).unwrap();
        let q = qal(&p, &g, &params, false).unwrap().total;
        let cd = chamfer(&p, &g, ChamferVariant::L1).unwrap();
        prop_assume!(cd > 0.0);
        prop_assert!(rel(q, cd) < 1e-6, "{} vs {}", q, cd);
    }

    #[test]
    fn decomposition_and_lambda_affinity(p in any_cloud(64), g in any_cloud(64), params in params()) {
        let v = qal(&p, &g, &params, false).unwrap();
        prop_assert_eq!(v.total, v.cov_term + params.lambda_attr * v.attr_term);
        prop_assert!(v.total >= 0.0 && v.cov_term >= 0.0 && v.attr_term >= 0.0);
        let mut prev = f64::NEG_INFINITY;
        for lambda in [0.0, 0.25, 0.5, 1.0, 2.0, 4.0] {
            let pl = QalParams { lambda_attr: lambda, ..params };
            let vl = qal(&p, &g, &pl, false).unwrap();
            prop_assert_eq!(vl.cov_term, v.cov_term);
            prop_assert_eq!(vl.attr_term, v.attr_term);
            prop_assert_eq!(vl.total, v.cov_term + lambda * v.attr_term);
            prop_assert!(vl.total >= prev);
            prev = vl.total;
        }
    }

    #[test]
    fn zero_iff_mutual_cover(p in lattice_cloud(20), params in params()) {
        let shuffled_p = shuffled(&p, 7);
        prop_assert_eq!(qal(&p, &shuffled_p, &params, false).unwrap().total, 0.0);
        let moved = p.map_points(|q| [q[0] + 0.01, q[1], q[2]]).unwrap();
        prop_assert!(qal(&moved, &p, &params, false).unwrap().total > 0.0);
        prop_assert!(chamfer(&moved, &p, ChamferVariant::L2).unwrap() > 0.0);
    }

    #[test]
    fn translation_invariance(p in cloud(64), g in cloud(64), params in params(), shift in coords(5.0)) {
        let tp = p.map_points(|q| [q[0] + shift[0], q[1] + shift[1], q[2] + shift[2]]).unwrap();
        let tg = g.map_points(|q| [q[0] + shift[0], q[1] + shift[1], q[2] + shift[2]]).unwrap();
        prop_assume!(BiAssignment::compute(&p, &g, Backend::BruteForce).unwrap()
            .pred_to_gt.indices == BiAssignment::compute(&tp, &tg, Backend::BruteForce).unwrap().pred_to_gt.indices);
        for loss in [LossKind::Qal(params), LossKind::ChamferL1, LossKind::ChamferL2] {
            let a = loss.evaluate(&p, &g, false).unwrap().total;
            let b = loss.evaluate(&tp, &tg, false).unwrap().total;
            prop_assert!(rel(b, a) <= 1e-10, "{}: {} vs {}", loss.name(), a, b);
        }
    }

    #[test]
    fn scale_response(p in any_cloud(64), g in any_cloud(64), params in params(), k in -6i32..=6) {
        let s = 2f64.powi(k);
        let sp = p.map_points(|q| q.map(|c| c * s)).unwrap();
        let sg = g.map_points(|q| q.map(|c| c * s)).unwrap();
        let scaled = QalParams { eps: params.eps * s, omega: params.omega / s, ..params };
        let a = qal(&p, &g, &params, false).unwrap();
        let b = qal(&sp, &sg, &scaled, false).unwrap();
        prop_assert_eq!(b.total, s * a.total);
        prop_assert_eq!(chamfer(&sp, &sg, ChamferVariant::L1).unwrap(), s * chamfer(&p, &g, ChamferVariant::L1).unwrap());
        for d in [0.0, params.eps, 0.3, 2.0] {
            prop_assert_eq!(
                coverage_weight(d * s, scaled.eps, scaled.omega).unwrap(),
                coverage_weight(d, params.eps, params.omega).unwrap()
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences(p in cloud(24), g in cloud(24), params in params()) {
        let params = QalParams { eps: params.eps.max(0.01), ..params };
        for loss in [LossKind::Qal(params), LossKind::ChamferL1, LossKind::ChamferL2] {
            match loss_grad_check(&p, &g, &loss, DEFAULT_FD_STEP) {
                Ok(err) => prop_assert!(err < 1e-4, "{}: {}", loss.name(), err),
                Err(Error::AssignmentUnstable { .. }) => {}
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }
    }

    #[test]
    fn exact_emd_matches_permutations(pts in prop::collection::vec((coords(1.0), coords(1.0)), 1..=6)) {
        let (a, b): (Vec<_>, Vec<_>) = pts.into_iter().unzip();
        let n = a.len();
        let mut best = f64::INFINITY;
        let mut perm: Vec<usize> = (0..n).collect();
        permute(&mut perm, 0, &mut |p| {
            let cost: f64 = p.iter().enumerate().map(|(i, &j)| distance(&a[i], &b[j])).sum();
            best = best.min(cost / n as f64);
        });
        let got = emd(&PointCloud::new(a).unwrap(), &PointCloud::new(b).unwrap(), EmdMode::Exact).unwrap();
        prop_assert!((got - best).abs() <= 1e-12, "{} vs {}", got, best);
    }

    #[test]
    fn metric_monotone_and_ranged(p in any_cloud(80), g in any_cloud(80)) {
        let mut prev: Option<(f64, f64)> = None;
        for k in 0..=40 {
            let tau = 0.01 + 0.075 * k as f64;
            let r = quality_report(&p, &g, tau).unwrap();
            for v in [r.coverage, r.spurious, r.sp_bar, r.quality, r.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert_eq!(r.sp_bar + r.spurious, 1.0);
            prop_assert_eq!(r.sp_bar, 1.0 - r.spurious);
            prop_assert_eq!(r.quality, (r.coverage + r.sp_bar) / 2.0);
            if let Some((c, s)) = prev {
                prop_assert!(r.coverage >= c && r.spurious <= s);
            }
            prev = Some((r.coverage, r.spurious));
        }
    }

    #[test]
    fn swap_duality(a in any_cloud(80), b in any_cloud(80), tau in 0.01..1.5f64) {
        let cov = coverage_at(&a, &b, tau).unwrap();
        let sp = spurious_at(&b, &a, tau).unwrap();
        let m = b.len() as f64;
        prop_assert_eq!((cov * m).round(), ((1.0 - sp) * m).round());
        prop_assert!((cov - (1.0 - sp)).abs() <= f64::EPSILON);
    }

    #[test]
    fn metrics_ignore_point_order(p in any_cloud(80), g in any_cloud(80), seed in any::<u64>(), tau in 0.01..1.0f64) {
        let base = quality_report(&p, &g, tau).unwrap();
        prop_assert_eq!(&quality_report(&shuffled(&p, seed), &g, tau).unwrap(), &base);
        prop_assert_eq!(&quality_report(&p, &shuffled(&g, seed ^ 0xff), tau).unwrap(), &base);
    }

    #[test]
    fn cloud_files_round_trip(c in cloud(50), scale in prop_oneof![Just(1.0), Just(1e-4), Just(1e4)]) {
        let c = c.map_points(|p| p.map(|x| x * scale)).unwrap();
        for format in [CloudFileFormat::XyzText, CloudFileFormat::PlyAscii, CloudFileFormat::RawF32Le] {
            let mut buf = Vec::new();
            write_cloud_to(&c, &mut buf, format).unwrap();
            let back = read_cloud_from(&buf[..], format, Path::new("mem")).unwrap();
            prop_assert_eq!(back.len(), c.len());
            for (p, q) in c.points().iter().zip(back.points()) {
                for k in 0..3 {
                    let expect = match format {
                        CloudFileFormat::RawF32Le => p[k] as f32 as f64,
                        _ => round_sig(p[k]),
                    };
                    prop_assert_eq!(q[k], expect);
                }
            }
        }
    }
}

fn permute(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}
