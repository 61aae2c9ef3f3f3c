use proptest::prelude::*;
use sketch_core::keypoints::{covering_radius, fps_select, KeypointPool, Provenance};
use sketch_core::sketch::{apply_style, parse_svg, render_svg, StrokeStyle, StyleSpec};
use sketch_core::{Point2, RoundTag, SketchCanvas, Stroke};

fn pool_strategy() -> impl Strategy<Value = KeypointPool> {
    prop::collection::vec((0.0..=1.0f64, 0.0..=1.0f64), 1..40).prop_map(|pts| {
        KeypointPool::from_points(
            pts.into_iter().map(|(x, y)| (Point2::new(x, y), Provenance::FacialLandmark, String::new())),
        )
    })
}

fn point() -> impl Strategy<Value = Point2> {
    (-0.1..=1.1f64, -0.1..=1.1f64).prop_map(|(x, y)| Point2::new(x, y))
}

fn stroke() -> impl Strategy<Value = Stroke> {
    ([point(), point(), point(), point()], 0.001..0.05f64, any::<bool>(), 0.05..=1.0f64).prop_map(
        |(pts, width, contour, opacity)| {
            let mut s = Stroke::new(pts, if contour { RoundTag::Contour } else { RoundTag::Face });
            s.width = width;
            s.opacity = opacity;
            s
        },
    )
}

fn canvas() -> impl Strategy<Value = SketchCanvas> {
    (prop::collection::vec(stroke(), 1..12), 16u32..400, 16u32..400)
        .prop_map(|(strokes, w, h)| SketchCanvas::with_strokes(w, h, strokes))
}

proptest! {
    #[test]
    fn fps_selections_are_distinct_and_nested(pool in pool_strategy()) {
        let all = fps_select(&pool, pool.len()).unwrap();
        let mut sorted = all.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), pool.len());
        for n in 0..=pool.len() {
            prop_assert_eq!(&fps_select(&pool, n).unwrap()[..], &all[..n]);
        }
    }

    #[test]
    fn covering_radius_never_grows(pool in pool_strategy()) {
        let all = fps_select(&pool, pool.len()).unwrap();
        let radii: Vec<f64> = (1..=all.len()).map(|n| covering_radius(&pool, &all[..n])).collect();
        prop_assert!(radii.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(*radii.last().unwrap(), 0.0);
    }

    #[test]
    fn oversized_requests_are_rejected(pool in pool_strategy()) {
        prop_assert!(fps_select(&pool, pool.len() + 1).is_err());
    }

    #[test]
    fn set_point_keeps_the_clamp_range(x in -10.0..10.0f64, y in -10.0..10.0f64, j in 0usize..4) {
        let mut s = Stroke::new([Point2::new(0.5, 0.5); 4], RoundTag::Face);
        s.set_point(j, Point2::new(x, y));
        let p = s.control_points[j];
        prop_assert!((-0.1..=1.1).contains(&p.x) && (-0.1..=1.1).contains(&p.y));
    }

    #[test]
    fn svg_round_trip_keeps_geometry(c in canvas()) {
        let back = parse_svg(&render_svg(&c).unwrap()).unwrap();
        prop_assert_eq!(back.len(), c.len());
        for (a, b) in c.strokes.iter().zip(&back.strokes) {
            prop_assert_eq!(a.round_tag, b.round_tag);
            for (p, q) in a.control_points.iter().zip(&b.control_points) {
                prop_assert!((p.x - q.x).abs() <= 1e-6 && (p.y - q.y).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn restyle_then_identity_keeps_geometry(c in canvas(), width in 0.001..0.05f64) {
        let style = StyleSpec { base: StrokeStyle { width: Some(width), ..StrokeStyle::default() }, ..StyleSpec::default() };
        let once = apply_style(&c, &style).unwrap();
        let twice = apply_style(&once, &StyleSpec::default()).unwrap();
        prop_assert_eq!(&once, &twice);
        for (a, b) in c.strokes.iter().zip(&twice.strokes) {
            prop_assert_eq!(a.control_points, b.control_points);
            prop_assert_eq!(b.width, width);
        }
    }
}
