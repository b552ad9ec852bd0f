use ladder_core::geometry::{intersection_area, make_transform, quad_dice, Frame, Point2, Quad, Rect};
use proptest::prelude::*;

/// Convex quad from a center, half sizes and a rotation.
fn rotated_box(cx: f64, cy: f64, hw: f64, hh: f64, angle: f64) -> Quad {
    let (s, c) = angle.sin_cos();
    let corner = |dx: f64, dy: f64| [cx + c * dx - s * dy, cy + s * dx + c * dy];
    Quad::from_xy(
        [corner(-hw, -hh), corner(hw, -hh), corner(hw, hh), corner(-hw, hh)],
        Frame::Image,
    )
    .unwrap()
}

fn quad_strategy() -> impl Strategy<Value = Quad> {
    (0.0..50.0f64, 0.0..50.0f64, 1.0..20.0f64, 1.0..20.0f64, -0.6..0.6f64)
        .prop_map(|(cx, cy, hw, hh, a)| rotated_box(cx, cy, hw, hh, a))
}

/// Grid estimate of the overlap of two convex quads.
fn grid_overlap(a: &Quad, b: &Quad, n: usize) -> f64 {
    let inside = |q: &Quad, p: Point2| {
        let c = q.corners();
        (0..4).all(|i| {
            let (u, v) = (c[i], c[(i + 1) % 4]);
            (v.x - u.x) * (p.y - u.y) - (v.y - u.y) * (p.x - u.x) >= 0.0
        })
    };
    let (x0, x1, y0, y1) = (-30.0, 80.0, -30.0, 80.0);
    let (dx, dy) = ((x1 - x0) / n as f64, (y1 - y0) / n as f64);
    let mut hits = 0usize;
    for i in 0..n {
        for j in 0..n {
            let p = Point2::new(x0 + (i as f64 + 0.5) * dx, y0 + (j as f64 + 0.5) * dy);
            if inside(a, p) && inside(b, p) {
                hits += 1;
            }
        }
    }
    hits as f64 * dx * dy
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dice_is_symmetric_and_bounded(a in quad_strategy(), b in quad_strategy()) {
        let (ab, ba) = (quad_dice(&a, &b), quad_dice(&b, &a));
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!((quad_dice(&a, &a) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn overlap_matches_grid(a in quad_strategy(), b in quad_strategy()) {
        let exact = intersection_area(&a, &b);
        let grid = grid_overlap(&a, &b, 400);
        // only cells cut by an edge can be misclassified; the overlap's
        // perimeter is at most the larger quad's, 160 px
        let side = 110.0 / 400.0;
        let boundary_cells = 2.0 * 160.0 / side;
        prop_assert!((exact - grid).abs() <= boundary_cells * side * side, "{exact} vs {grid}");
    }

    #[test]
    fn transform_round_trip(x0 in -100.0..100.0f64, y0 in -100.0..100.0f64, w in 1.0..300.0f64, h in 1.0..300.0f64,
                            px in -50.0..350.0f64, py in -50.0..350.0f64, size in 8usize..300) {
        let t = make_transform(Rect::new(x0, y0, x0 + w, y0 + h).unwrap(), size).unwrap();
        let p = Point2::new(px, py);
        let back = t.to_image(t.to_patch(p));
        prop_assert!(back.distance(&p) < 1e-9);
    }
}

#[test]
fn disjoint_quads_have_zero_dice() {
    let a = rotated_box(0.0, 0.0, 5.0, 5.0, 0.3);
    let b = rotated_box(40.0, 0.0, 5.0, 5.0, -0.2);
    assert_eq!(quad_dice(&a, &b), 0.0);
}
