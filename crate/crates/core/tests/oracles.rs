//! Brute-force reference implementations checked against the library.

use hpnp::lowrank::svd;
use hpnp::patches::AggregationMode;
use hpnp::{aggregate, wnnm_shrink, GroupMatrix, Image, PatchGeometry, PatchGroupIndex, WnnmParams};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

fn random_image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    Image::from_fn(h, w, |_, _| rng.random_range(0.0..255.0))
}

fn naive_distance(img: &Image, a: (usize, usize), b: (usize, usize), p: usize) -> f64 {
    let mut d = 0.0;
    for dr in 0..p {
        for dc in 0..p {
            let x = img.get(a.0 + dr, a.1 + dc) - img.get(b.0 + dr, b.1 + dc);
            d += x * x;
        }
    }
    d
}

// Window of `w` positions around `center`, pushed inside [0, n).
fn naive_window(center: usize, n: usize, w: usize) -> Vec<usize> {
    if n <= w {
        return (0..n).collect();
    }
    let start = (center as i64 - (w / 2) as i64).clamp(0, (n - w) as i64) as usize;
    (start..start + w).collect()
}

fn naive_groups(img: &Image, geom: &PatchGeometry, refs: &[(usize, usize)]) -> Vec<Vec<(usize, usize)>> {
    let p = geom.patch_side;
    let (ny, nx) = (img.height() - p + 1, img.width() - p + 1);
    refs.iter()
        .map(|&r| {
            let mut all = Vec::new();
            for y in naive_window(r.0, ny, geom.window) {
                for x in naive_window(r.1, nx, geom.window) {
                    if (y, x) != r {
                        all.push((naive_distance(img, r, (y, x), p), y * img.width() + x, (y, x)));
                    }
                }
            }
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            std::iter::once(r)
                .chain(all.into_iter().take(geom.group_size - 1).map(|t| t.2))
                .collect()
        })
        .collect()
}

#[test]
fn grouping_matches_exhaustive_sort() {
    let cases = [
        (16, 16, PatchGeometry { patch_side: 3, stride: 2, group_size: 4, window: 6 }),
        (23, 19, PatchGeometry { patch_side: 5, stride: 3, group_size: 9, window: 8 }),
        (40, 40, PatchGeometry::default()),
    ];
    for (seed, (h, w, geom)) in cases.into_iter().enumerate() {
        let img = random_image(h, w, seed as u64);
        let idx = PatchGroupIndex::build(&img, &geom).unwrap();
        let expected = naive_groups(&img, &geom, idx.refs());
        for (i, want) in expected.iter().enumerate() {
            assert_eq!(idx.neighbors(i), want.as_slice(), "group {i} of {h}x{w}");
        }
    }
}

#[test]
fn reference_grid_covers_every_pixel() {
    for (h, w) in [(11, 11), (20, 33), (96, 96), (50, 13)] {
        let img = random_image(h, w, 1);
        let idx = PatchGroupIndex::build(&img, &PatchGeometry { window: 10, group_size: 8, ..Default::default() }).unwrap();
        assert!(idx.coverage().data().iter().all(|&c| c >= 1.0), "{h}x{w}");
    }
}

#[test]
fn quantized_ties_follow_linear_index() {
    // Two-level image: many exact distance ties.
    let img = Image::from_fn(18, 18, |r, c| if (r / 3 + c / 3) % 2 == 0 { 0.0 } else { 100.0 });
    let geom = PatchGeometry { patch_side: 3, stride: 3, group_size: 12, window: 9 };
    let idx = PatchGroupIndex::build(&img, &geom).unwrap();
    let expected = naive_groups(&img, &geom, idx.refs());
    for (i, want) in expected.iter().enumerate() {
        assert_eq!(idx.neighbors(i), want.as_slice());
    }
}

#[test]
fn aggregation_matches_scatter_add() {
    let img = random_image(12, 12, 5);
    let geom = PatchGeometry { patch_side: 4, stride: 3, group_size: 5, window: 7 };
    let idx = PatchGroupIndex::build(&img, &geom).unwrap();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(9);
    let groups: Vec<GroupMatrix> = (0..idx.len())
        .map(|_| GroupMatrix(DMatrix::from_fn(16, 5, |_, _| rng.random_range(-50.0..50.0))))
        .collect();
    let mut sum = vec![0.0; 144];
    let mut count = vec![0.0; 144];
    for (i, g) in groups.iter().enumerate() {
        for (j, &(r0, c0)) in idx.neighbors(i).iter().enumerate() {
            for k in 0..16 {
                let (r, c) = (r0 + k / 4, c0 + k % 4);
                sum[r * 12 + c] += g.0[(k, j)];
                count[r * 12 + c] += 1.0;
            }
        }
    }
    for mode in [AggregationMode::Sequential, AggregationMode::Parallel] {
        let agg = hpnp::patches::aggregate_with(&groups, &idx, (12, 12), mode).unwrap();
        for p in 0..144 {
            assert!((agg.sum.data()[p] - sum[p]).abs() < 1e-10);
            assert_eq!(agg.weights.data()[p], count[p]);
        }
    }
    let default = aggregate(&groups, &idx, (12, 12)).unwrap();
    assert_eq!(default.weights, idx.coverage());
}

#[test]
fn single_patch_touches_only_its_footprint() {
    let img = random_image(12, 12, 2);
    let geom = PatchGeometry { patch_side: 3, stride: 3, group_size: 1, window: 5 };
    let idx = PatchGroupIndex::build(&img, &geom).unwrap();
    let groups: Vec<GroupMatrix> = (0..idx.len())
        .map(|i| GroupMatrix(DMatrix::from_element(9, 1, if i == 0 { 1.0 } else { 0.0 })))
        .collect();
    let agg = aggregate(&groups, &idx, (12, 12)).unwrap();
    let (r0, c0) = idx.refs()[0];
    for r in 0..12 {
        for c in 0..12 {
            let inside = (r0..r0 + 3).contains(&r) && (c0..c0 + 3).contains(&c);
            assert_eq!(agg.sum.get(r, c) != 0.0, inside);
        }
    }
}

fn weighted_nuclear(m: &DMatrix<f64>, weights: &[f64]) -> f64 {
    svd(m).unwrap().singular.iter().zip(weights).map(|(s, w)| s * w).sum()
}

#[test]
fn wnnm_beats_local_perturbations_on_group_sized_matrices() {
    // Frozen-weight objective 0.5||Y - X||^2 + theta * sum w_j s_j(X) at the
    // output versus random nearby points.
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(31);
    for trial in 0..6 {
        let y = DMatrix::from_fn(49, 12, |_, _| 30.0 * rng.sample::<f64, _>(StandardNormal));
        let s = svd(&y).unwrap();
        let params = WnnmParams {
            theta: [5.0, 50.0, 400.0][trial % 3],
            noise_floor: 0.5 * s.singular.last().unwrap() / 12f64.sqrt(),
            ..Default::default()
        };
        let weights = params.weights(&s.singular, 12);
        let objective = |x: &DMatrix<f64>| 0.5 * (&y - x).norm_squared() + params.theta * weighted_nuclear(x, &weights);
        let out = wnnm_shrink(&GroupMatrix(y.clone()), &params).unwrap().0;
        let best = objective(&out);
        for _ in 0..200 {
            let step = rng.random_range(1e-3..1.0);
            let probe = &out + DMatrix::from_fn(49, 12, |_, _| step * rng.sample::<f64, _>(StandardNormal));
            assert!(objective(&probe) >= best - 1e-6);
        }
    }
}
