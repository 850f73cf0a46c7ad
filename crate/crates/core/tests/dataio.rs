use std::collections::BTreeMap;

use evalign_core::dataio::*;
use evalign_core::synth::{generate, HotPixel, MotionSpec, PlaneSpec, SceneSpec};
use evalign_core::warp::ImuSample;
use evalign_core::*;
use proptest::collection::vec;
use proptest::prelude::*;

fn stream() -> impl Strategy<Value = EventStream> {
    vec((0usize..64, 0usize..48, 0.0f64..1e-3, any::<bool>()), 0..200).prop_map(|raw| {
        let mut t = 0.0;
        let events = raw
            .into_iter()
            .map(|(x, y, dt, p)| {
                t += dt;
                Event::new(x as f64, y as f64, t, if p { 1 } else { -1 })
            })
            .collect();
        EventStream {
            width: 64,
            height: 48,
            events,
        }
    })
}

proptest! {
    #[test]
    fn events_round_trip(s in stream()) {
        let back = parse_events(&format_events(&s), "mem").unwrap();
        prop_assert_eq!(back, s);
    }

    #[test]
    fn imu_round_trip(raw in vec((0.0f64..1e-2, -5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 1..50)) {
        let mut t = 0.0;
        let samples: Vec<ImuSample> = raw
            .into_iter()
            .map(|(dt, a, b, c)| {
                t += dt + 1e-4;
                ImuSample { t, omega: AngularVelocity3::new(a, b, c) }
            })
            .collect();
        prop_assert_eq!(parse_imu(&format_imu(&samples), "mem").unwrap(), samples);
    }

    #[test]
    fn masks_and_depths_round_trip(
        labels in vec(0u32..5, 12 * 9),
        depths in vec((1u32..9, 0.1f64..50.0), 1..6),
    ) {
        let mask = RegionMask::new(12, 9, labels).unwrap();
        let seq = vec![(0.0, mask.clone()), (0.05, mask)];
        prop_assert_eq!(parse_masks(&format_masks(&seq).unwrap(), "mem").unwrap(), seq);
        let gt = vec![(0.0, depths.into_iter().collect::<BTreeMap<u32, f64>>())];
        prop_assert_eq!(parse_gt_depths(&format_gt_depths(&gt), "mem").unwrap(), gt);
    }

    #[test]
    fn honeycomb_partitions_the_grid(w in 8usize..90, h in 8usize..70, r in 4.0f64..25.0) {
        let m = honeycomb_mask(w, h, r).unwrap();
        prop_assert!(m.labels().iter().all(|&l| l > 0));
        let total: usize = m.region_ids().map(|id| m.region_size(id)).sum();
        prop_assert_eq!(total, w * h);
    }

    #[test]
    fn hot_pixel_filter_is_idempotent(s in stream(), th in 1e3f64..1e6) {
        let once = filter_hot_pixels(&s.events, 64, 48, th);
        let twice = filter_hot_pixels(&once, 64, 48, th);
        prop_assert_eq!(once, twice);
    }
}

#[test]
fn honeycomb_interior_cells_match_hexagon_area() {
    let r = 12.0;
    let (w, h) = (200, 160);
    let m = honeycomb_mask(w, h, r).unwrap();
    let ideal = 1.5 * 3f64.sqrt() * r * r;
    let perimeter = 6.0 * r;
    let mut interior = 0;
    for id in m.region_ids() {
        let (x0, y0, x1, y1) = m.bounding_box(id).unwrap();
        if x0 == 0 || y0 == 0 || x1 + 1 == w || y1 + 1 == h {
            continue;
        }
        interior += 1;
        let size = m.region_size(id) as f64;
        assert!((size - ideal).abs() <= perimeter, "cell {id}: {size} vs {ideal}");
    }
    assert!(interior > 20);
    assert_eq!(honeycomb_mask(w, h, r).unwrap(), m);
}

#[test]
fn injected_hot_pixel_is_removed() {
    let intr = CameraIntrinsics::centered(100.0, 64, 48).unwrap();
    let scene = SceneSpec {
        planes: vec![PlaneSpec {
            id: Some(1),
            polygon: vec![[-100.0, -100.0], [200.0, -100.0], [200.0, 150.0], [-100.0, 150.0]],
            depth: 2.0,
            edge_density: 0.5,
            edges: vec![],
        }],
        noise_rate: 10.0,
        hot_pixels: vec![HotPixel { x: 20, y: 30, rate: 1000.0 }],
        edge_length: 8.0,
    };
    let motion = MotionSpec::constant([0.3, 0.0, 0.0], AngularVelocity3::ZERO, 1.0);
    let out = generate(&scene, &motion, &intr, 3).unwrap();
    let at = |e: &Event| e.pixel(64, 48) == Some((20, 30));
    assert!(out.events.iter().filter(|e| at(e)).count() > 500);
    let kept = filter_hot_pixels(&out.events, 64, 48, 200.0);
    assert_eq!(kept.iter().filter(|e| at(e)).count(), 0);
    let others = out.events.iter().filter(|e| !at(e)).count();
    assert_eq!(kept.len(), others);
}
