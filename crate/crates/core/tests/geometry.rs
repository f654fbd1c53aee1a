use std::sync::OnceLock;

use geolab::hypgeo::*;
use geolab::surface::{build_genus2_surface, GroupWord, Surface};
use num_complex::Complex64 as Complex;
use proptest::prelude::*;

fn surface() -> &'static Surface {
    static S: OnceLock<Surface> = OnceLock::new();
    S.get_or_init(|| build_genus2_surface().unwrap())
}

fn point() -> impl Strategy<Value = Complex> {
    (0.0f64..0.95, 0.0f64..std::f64::consts::TAU).prop_map(|(r, a)| Complex::from_polar(r, a))
}

fn isometry() -> impl Strategy<Value = Isometry> {
    (point(), 0.0f64..std::f64::consts::TAU)
        .prop_map(|(p, phi)| Isometry::moving_origin_to(p).compose(&Isometry::rotation(phi)))
}

fn tangent() -> impl Strategy<Value = UnitTangent> {
    (point(), 0.0f64..std::f64::consts::TAU).prop_map(|(p, d)| UnitTangent::new(DiskPoint::new(p).unwrap(), d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn isometries_preserve_distance(g in isometry(), p in point(), q in point()) {
        let d = hyp_distance_z(p, q);
        let dg = hyp_distance_z(g.map(p), g.map(q));
        prop_assert!((d - dg).abs() < 1e-8 * d.max(1.0));
        prop_assert!((g.det() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inverses_cancel(g in isometry(), h in isometry(), p in point()) {
        prop_assert!(g.compose(&g.inverse()).is_identity(1e-9));
        let gh = g.compose(&h);
        prop_assert!((gh.map(p) - g.map(h.map(p))).norm() < 1e-9);
    }

    #[test]
    fn flow_moves_at_unit_speed(u in tangent(), s in -3.0f64..3.0, t in -3.0f64..3.0) {
        let v = u.flow(s);
        prop_assert!((hyp_distance(u.base, v.base) - s.abs()).abs() < 1e-7);
        let a = v.flow(t);
        let b = u.flow(s + t);
        prop_assert!((a.base.z - b.base.z).norm() < 1e-8);
        let (f0, b0) = geodesic_endpoints(&u);
        let (f1, b1) = geodesic_endpoints(&v);
        prop_assert!(f0.separation(f1) < 1e-7 && b0.separation(b1) < 1e-7);
    }

    #[test]
    fn crossings_are_symmetric_and_invariant(
        u in tangent(), v in tangent(), l1 in 0.05f64..3.0, l2 in 0.05f64..3.0, g in isometry()
    ) {
        let s1 = GeodesicSegment::new(u, l1).unwrap();
        let s2 = GeodesicSegment::new(v, l2).unwrap();
        let a = segment_cross(&s1, &s2);
        let b = segment_cross(&s2, &s1);
        let c = segment_cross(&s1.transformed(&g), &s2.transformed(&g));
        prop_assume!(!a.degenerate && !b.degenerate && !c.degenerate);
        prop_assert_eq!(a.crossed, b.crossed);
        prop_assert_eq!(a.crossed, c.crossed);
        if let (Some(pa), Some(pb)) = (a.point, b.point) {
            prop_assert!((pa.z - pb.z).norm() < 1e-8);
            prop_assert!((a.angle.unwrap() - b.angle.unwrap()).abs() < 1e-8);
            let (t1, t2) = a.params.unwrap();
            prop_assert!((s1.point_at(t1) - pa.z).norm() < 1e-8);
            prop_assert!((s2.point_at(t2) - pa.z).norm() < 1e-8);
        }
    }

    #[test]
    fn reduction_lands_in_the_polygon(p in point()) {
        let s = surface();
        let (q, g, w) = s.reduce_z(p).unwrap();
        prop_assert!(s.contains(q));
        prop_assert!((g.map(p) - q).norm() < 1e-8);
        prop_assert!((s.word_isometry(&w).map(p) - q).norm() < 1e-7);
    }

    #[test]
    fn word_algebra(letters in prop::collection::vec(0u8..8, 0..12), k in 0usize..12) {
        let w = GroupWord::from_letters(letters);
        prop_assert_eq!(w.inverse().inverse(), w.clone());
        prop_assert!(w.mul(&w.inverse()).is_empty());
        let c = w.cyclically_reduced();
        prop_assert!(c.is_cyclically_reduced());
        if !c.is_empty() {
            prop_assert_eq!(c.rotated(k % c.len()).canonical(), c.canonical());
        }
        // Entries grow like e^(2.3·len), so the matrix check stays short.
        if w.len() <= 5 {
            let s = surface();
            let prod = s.word_isometry(&w).compose(&s.word_isometry(&w.inverse()));
            prop_assert!(prod.is_identity(1e-7));
        }
    }
}

#[test]
fn relator_is_trivial() {
    let s = surface();
    assert!(s.word_isometry(&s.relator()).is_identity(1e-9));
    let angles: f64 = (0..8).map(|k| s.vertex_angle(k)).sum();
    assert!((angles - std::f64::consts::TAU).abs() < 1e-9);
}
