use mvembed_core::geometry::normalize_mesh;
use mvembed_core::render::render_turntable;
use mvembed_core::shapes::{cube, uv_sphere, Primitive};
use mvembed_core::view_select::{kmeans, select_representatives};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Minimum inertia over all 2-partitions, by enumeration.
fn best_two_partition(points: &[Vec<f64>]) -> (f64, u64) {
    let n = points.len();
    let mut best = (f64::INFINITY, 0);
    for mask in 1..(1u64 << n) - 1 {
        let mut cost = 0.0;
        for side in [0, 1] {
            let members: Vec<&Vec<f64>> = (0..n)
                .filter(|&i| (mask >> i & 1) == side)
                .map(|i| &points[i])
                .collect();
            let mean: Vec<f64> = (0..points[0].len())
                .map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64)
                .collect();
            cost += members.iter().map(|p| sq(p, &mean)).sum::<f64>();
        }
        if cost < best.0 {
            best = (cost, mask);
        }
    }
    best
}

#[test]
fn two_blobs_are_separated_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..20 {
        let mut pts = Vec::new();
        for i in 0..12 {
            let centre = if i % 2 == 0 { 0.0 } else { 10.0 };
            pts.push((0..4).map(|_| centre + rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>());
        }
        let r = kmeans(&pts, 2, trial, 100).unwrap();
        let (cost, mask) = best_two_partition(&pts);
        let ours: u64 = (0..12).map(|i| (r.assignments[i] as u64) << i).sum();
        assert!(ours == mask || ours == !mask & 0xfff);
        assert!((r.inertia - cost).abs() < 1e-9);
    }
}

#[test]
fn inertia_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for trial in 0..100 {
        let n = rng.gen_range(5..60);
        let d = rng.gen_range(1..8);
        let k = rng.gen_range(1..=n.min(6));
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect())
            .collect();
        let r = kmeans(&pts, k, trial, 100).unwrap();
        for w in r.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "trial {trial}: {:?}", r.history);
        }
        for c in 0..k {
            assert!(r.assignments.contains(&c));
        }
        let direct: f64 = pts
            .iter()
            .zip(&r.assignments)
            .map(|(p, &a)| sq(p, &r.centroids[a]))
            .sum();
        assert!((direct - r.inertia).abs() < 1e-9);
    }
}

#[test]
fn representatives_are_members_in_azimuth_order() {
    for p in Primitive::ALL {
        let m = normalize_mesh(&p.mesh()).unwrap();
        let vs = render_turntable(p.name(), &m, 30, 32, 30.0).unwrap();
        for k in 1..=4 {
            let s = select_representatives(&vs, k, 99).unwrap();
            assert_eq!(s.k(), k);
            assert!(s.source_azimuths.windows(2).all(|w| w[0] < w[1]));
            for (ch, az) in s.channels.iter().zip(&s.source_azimuths) {
                let v = vs.views.iter().find(|v| v.azimuth == *az).unwrap();
                assert_eq!(&v.pixels, ch);
            }
            assert_eq!(select_representatives(&vs, k, 99).unwrap(), s);
        }
    }
}

#[test]
fn all_views_selected_when_k_is_thirty() {
    let m = normalize_mesh(&Primitive::Pyramid.mesh()).unwrap();
    let vs = render_turntable("p", &m, 30, 32, 30.0).unwrap();
    let s = select_representatives(&vs, 30, 1).unwrap();
    let az: Vec<f64> = vs.views.iter().map(|v| v.azimuth).collect();
    assert_eq!(s.source_azimuths, az);
}

#[test]
fn symmetric_sphere_gives_identical_channels() {
    let m = normalize_mesh(&uv_sphere(48, 96)).unwrap();
    let vs = render_turntable("s", &m, 30, 64, 0.0).unwrap();
    let s = select_representatives(&vs, 3, 4).unwrap();
    assert_eq!(s.k(), 3);
    // a tessellated sphere is only approximately symmetric
    for c in &s.channels[1..] {
        let d: f32 = c.iter().zip(&s.channels[0]).map(|(a, b)| (a - b).abs()).sum();
        assert!(d / (c.len() as f32) < 1e-2, "{}", d / c.len() as f32);
    }
}

#[test]
fn cube_representatives_come_from_distinct_clusters() {
    let m = normalize_mesh(&cube()).unwrap();
    let vs = render_turntable("c", &m, 30, 64, 0.0).unwrap();
    for seed in 0..10 {
        let s = select_representatives(&vs, 2, seed).unwrap();
        assert_ne!(s.channels[0], s.channels[1]);
    }
}
