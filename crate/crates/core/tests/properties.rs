//! Property tests across raster, flow, image ops and the objective.

use proptest::prelude::*;

use timpath_core::flow::{compress, FlowSettings};
use timpath_core::imageops::{connected_components, enclosed_voids, Connectivity};
use timpath_core::raster::{rasterize_coarse, rasterize_fine, RasterSettings};
use timpath_core::{fixtures, DispensePath, EvalSettings, Evaluator, GapSpec, Grid, ObjectiveConfig, Point};

fn path_of(points: &[(f64, f64)], feedrate: f64) -> DispensePath {
    DispensePath::new(points.iter().map(|&(x, y)| Point::new(x, y)).collect())
        .unwrap()
        .with_feedrate(feedrate)
}

/// 2..=6 points anywhere in (or a little outside) a 50x50 grid.
fn any_points() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-5.0..55.0f64, -5.0..55.0f64), 2..=6)
        .prop_filter("non-zero length", |p| p.windows(2).any(|w| w[0] != w[1]))
}

/// Points that keep a unit-wide bead at least two cells from the border.
fn interior_points() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((3.0..40.0f64, 3.0..40.0f64), 2..=5)
        .prop_filter("non-zero length", |p| p.windows(2).any(|w| w[0] != w[1]))
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn raster_conserves_volume(points in any_points(), feedrate in 0.1..20.0f64) {
        let path = path_of(&points, feedrate);
        let g = rasterize_coarse(&path, 50, 50, 1.0, &RasterSettings::default());
        prop_assert!(relative_gap(g.total_volume(), path.volume()) <= 1e-9);
        prop_assert!(g.amounts.as_slice().iter().all(|&a| a >= 0.0));
    }

    #[test]
    fn raster_translates_with_integer_offsets(points in interior_points(), dx in 0i32..6, dy in 0i32..6) {
        let s = RasterSettings::default();
        let path = path_of(&points, 3.0);
        let a = rasterize_coarse(&path, 50, 50, 1.0, &s);
        let b = rasterize_coarse(&path.translated(dx as f64, dy as f64), 50, 50, 1.0, &s);
        let (dx, dy) = (dx as usize, dy as usize);
        for y in 0..50 {
            for x in 0..50 {
                let shifted = if x >= dx && y >= dy { *a.amounts.get(x - dx, y - dy) } else { 0.0 };
                prop_assert!((b.amounts.get(x, y) - shifted).abs() <= 1e-9, "cell ({x},{y})");
            }
        }
    }

    #[test]
    fn fine_at_unit_scale_matches_coarse_support(
        start in (3usize..45, 3usize..45),
        moves in prop::collection::vec((any::<bool>(), -20i32..20), 1..5),
    ) {
        // Rectilinear paths through cell centres.
        let mut pts = vec![(start.0 as f64 + 0.5, start.1 as f64 + 0.5)];
        for (horizontal, step) in moves {
            let (x, y) = *pts.last().unwrap();
            let next = if horizontal { ((x + step as f64).clamp(2.5, 46.5), y) } else { (x, (y + step as f64).clamp(2.5, 46.5)) };
            if next != (x, y) {
                pts.push(next);
            }
        }
        prop_assume!(pts.len() >= 2);
        let s = RasterSettings { fine_scale: 1, bead_width: 1.0 };
        let path = path_of(&pts, 1.0);
        let coarse = rasterize_coarse(&path, 50, 50, 1.0, &s).amounts.map(|&a| a > 0.0);
        prop_assert_eq!(rasterize_fine(&path, 50, 50, &s).to_grid(), coarse);
    }

    #[test]
    fn fine_at_unit_scale_lies_inside_coarse_support(points in interior_points()) {
        let s = RasterSettings { fine_scale: 1, bead_width: 1.0 };
        let path = path_of(&points, 1.0);
        let coarse = rasterize_coarse(&path, 50, 50, 1.0, &s);
        let fine = rasterize_fine(&path, 50, 50, &s).to_grid();
        for y in 0..50 {
            for x in 0..50 {
                if *fine.get(x, y) {
                    prop_assert!(*coarse.amounts.get(x, y) > 0.0, "cell ({x},{y})");
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn compression_conserves_and_never_shrinks_support(points in any_points(), g in 0.3..1.5f64) {
        let product = fixtures::rectangle();
        let volume = product.required_volume();
        let path = path_of(&points, 0.0);
        let path = path.clone().with_feedrate(volume / path.length());
        let initial = rasterize_coarse(&path, 50, 50, 1.0, &RasterSettings::default());
        let trace = compress(&initial, &GapSpec::nominal(g), g, &FlowSettings::default()).unwrap();
        let start = initial.total_volume();
        let mut support = initial.amounts.map(|&a| a > 0.0);
        for snap in &trace.snapshots {
            prop_assert!(relative_gap(snap.state.total_volume(), start) <= 1e-9);
            let cap = snap.gap * snap.state.cell_area();
            prop_assert!(snap.state.amounts.as_slice().iter().all(|&a| a >= 0.0 && a <= cap * (1.0 + 1e-6)));
            let now = snap.state.amounts.map(|&a| a > 0.0);
            for (was, is) in support.as_slice().iter().zip(now.as_slice()) {
                prop_assert!(!was || *is, "a wetted cell dried up");
            }
            support = now;
        }
    }

    #[test]
    fn compression_is_idempotent(points in interior_points(), g in 0.4..1.2f64) {
        let path = path_of(&points, 0.0);
        let path = path.clone().with_feedrate(700.0 / path.length());
        let initial = rasterize_coarse(&path, 50, 50, 1.0, &RasterSettings::default());
        let gap = GapSpec::nominal(g);
        let once = compress(&initial, &gap, g, &FlowSettings::default()).unwrap();
        let twice = compress(once.final_state(), &gap, g, &FlowSettings::default()).unwrap();
        for (a, b) in once.final_state().amounts.as_slice().iter().zip(twice.final_state().amounts.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
        prop_assert!((once.final_state().offgrid_sink - twice.final_state().offgrid_sink).abs() <= 1e-9);
    }
}

/// Flood-fill oracle: does every empty cell reach the border through
/// 4-connected empty cells?
fn complement_reaches_border(mask: &Grid<bool>) -> bool {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if (x == 0 || y == 0 || x == w - 1 || y == h - 1) && !mask.get(x, y) {
                seen[y * w + x] = true;
                stack.push((x, y));
            }
        }
    }
    while let Some((x, y)) = stack.pop() {
        let mut visit = |nx: usize, ny: usize| {
            if !mask.get(nx, ny) && !seen[ny * w + nx] {
                seen[ny * w + nx] = true;
                stack.push((nx, ny));
            }
        };
        if x > 0 {
            visit(x - 1, y);
        }
        if y > 0 {
            visit(x, y - 1);
        }
        if x + 1 < w {
            visit(x + 1, y);
        }
        if y + 1 < h {
            visit(x, y + 1);
        }
    }
    mask.as_slice().iter().zip(&seen).all(|(&set, &reached)| set || reached)
}

/// Euler number of the 8-connected foreground from 2x2 bit-quad counts.
fn bit_quad_euler(mask: &Grid<bool>) -> i64 {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let at = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && *mask.get(x as usize, y as usize);
    let (mut q1, mut q3, mut qd) = (0i64, 0i64, 0i64);
    for y in -1..h {
        for x in -1..w {
            let q = [at(x, y), at(x + 1, y), at(x, y + 1), at(x + 1, y + 1)];
            match q.iter().filter(|&&b| b).count() {
                1 => q1 += 1,
                3 => q3 += 1,
                2 if q[0] == q[3] => qd += 1,
                _ => {}
            }
        }
    }
    (q1 - q3 - 2 * qd) / 4
}

fn mask_strategy() -> impl Strategy<Value = Grid<bool>> {
    (4usize..24, 4usize..24, 0.2..0.7f64, any::<u64>()).prop_map(|(w, h, density, seed)| {
        // Cheap deterministic noise keeps shrinking meaningful.
        let mut s = seed | 1;
        Grid::from_fn(w, h, |_, _| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s % 1000) as f64 / 1000.0 < density
        })
    })
}

fn rotate(mask: &Grid<bool>) -> Grid<bool> {
    let (w, h) = (mask.width(), mask.height());
    Grid::from_fn(h, w, |x, y| *mask.get(y, h - 1 - x))
}

fn mirror(mask: &Grid<bool>) -> Grid<bool> {
    let w = mask.width();
    Grid::from_fn(w, mask.height(), |x, y| *mask.get(w - 1 - x, y))
}

fn sorted_areas(mask: &Grid<bool>, c: Connectivity) -> Vec<usize> {
    let mut a = connected_components(mask, c).foreground_areas().to_vec();
    a.sort_unstable();
    a
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn component_areas_survive_rotation_and_mirroring(mask in mask_strategy()) {
        for c in [Connectivity::Four, Connectivity::Eight] {
            let base = sorted_areas(&mask, c);
            prop_assert_eq!(&sorted_areas(&rotate(&mask), c), &base);
            prop_assert_eq!(&sorted_areas(&mirror(&mask), c), &base);
        }
    }

    #[test]
    fn no_voids_iff_complement_reaches_border(mask in mask_strategy()) {
        prop_assert_eq!(enclosed_voids(&mask).count == 0, complement_reaches_border(&mask));
    }

    #[test]
    fn euler_duality_of_eight_and_four_connectivity(mask in mask_strategy()) {
        // 8-connected objects minus 4-connected holes is the bit-quad Euler
        // number only when the two connectivities are paired this way.
        let objects = connected_components(&mask, Connectivity::Eight).component_count as i64;
        let holes = enclosed_voids(&mask).count as i64;
        prop_assert_eq!(objects - holes, bit_quad_euler(&mask));
    }
}

#[test]
fn diagonal_ring_encloses_a_void() {
    // Diamond of cells touching only at corners.
    let ring = [(3, 0), (4, 1), (5, 2), (6, 3), (5, 4), (4, 5), (3, 6), (2, 5), (1, 4), (0, 3), (1, 2), (2, 1)];
    let mask = Grid::from_fn(7, 7, |x, y| ring.contains(&(x, y)));
    assert_eq!(connected_components(&mask, Connectivity::Eight).component_count, 1);
    assert_eq!(enclosed_voids(&mask).count, 1);
    assert_eq!(bit_quad_euler(&mask), 0);
}

fn path_set() -> Vec<DispensePath> {
    let product = fixtures::taboo_islands();
    let shapes: [&[(f64, f64)]; 10] = [
        &[(14.0, 25.0), (36.0, 25.0)],
        &[(14.0, 20.0), (36.0, 20.0), (36.0, 30.0), (14.0, 30.0)],
        &[(25.0, 18.0), (25.0, 32.0)],
        &[(12.0, 18.0), (38.0, 32.0)],
        &[(14.0, 19.0), (36.0, 19.0), (36.0, 25.0), (14.0, 25.0), (14.0, 31.0), (36.0, 31.0)],
        &[(5.0, 5.0), (45.0, 45.0)],
        &[(20.0, 25.0), (30.0, 25.0)],
        &[(14.0, 18.0), (36.0, 32.0), (36.0, 18.0), (14.0, 32.0)],
        &[(2.0, 25.0), (48.0, 25.0)],
        &[(18.0, 20.0), (32.0, 20.0), (32.0, 30.0), (18.0, 30.0), (18.0, 20.0)],
    ];
    shapes
        .iter()
        .map(|s| {
            let p = path_of(s, 0.0);
            let f = product.required_volume() / p.length();
            p.with_feedrate(f)
        })
        .collect()
}

#[test]
fn scaling_weights_scales_loss_and_keeps_ranking() {
    let product = fixtures::taboo_islands();
    let cfg = ObjectiveConfig {
        w_void_bin: 10.0,
        ..ObjectiveConfig::default()
    };
    let base = Evaluator::new(&product, &cfg, EvalSettings::default()).unwrap();
    let scaled = Evaluator::new(&product, &cfg.scaled(10.0), EvalSettings::default()).unwrap();
    let paths = path_set();
    let a: Vec<f64> = paths.iter().map(|p| base.evaluate(p).unwrap().total_loss).collect();
    let b: Vec<f64> = paths.iter().map(|p| scaled.evaluate(p).unwrap().total_loss).collect();
    for (x, y) in a.iter().zip(&b) {
        assert!(relative_gap(10.0 * x, *y) <= 1e-12, "{x} vs {y}");
    }
    let order = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        idx
    };
    assert_eq!(order(&a), order(&b));
}

#[test]
fn coverage_grows_with_volume() {
    let product = fixtures::rectangle();
    let evaluator = Evaluator::new(&product, &ObjectiveConfig::default(), EvalSettings::default()).unwrap();
    for path in path_set() {
        let nominal = path.feedrate;
        let mut last = -1.0;
        for k in 1..=16 {
            let p = path.clone().with_feedrate(nominal * k as f64 / 8.0);
            let c = evaluator.final_gap_report(&p).unwrap().coverage_fraction;
            assert!(c >= last - 1e-12, "coverage fell from {last} to {c} at {k}/8 of nominal");
            last = c;
        }
    }
}
