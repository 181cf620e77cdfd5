//! Deterministic scene rendering: cooling surface in the green channel,
//! taboo zone in the red channel, material as a gray overlay and the
//! dispense path as a yellow polyline.

use crate::grid::Grid;
use crate::model::{DispensePath, MaterialGrid, TargetAreas};

use super::pixmap::{Image, Rgb};

pub const PATH_COLOR: Rgb = [255, 255, 0];
/// Gray the material blends towards; full cells show exactly this colour.
pub const MATERIAL_GRAY: u8 = 160;

/// Mask and material layers of one picture, in grid cells.
#[derive(Debug, Clone, Copy, Default)]
pub struct Scene<'a> {
    pub areas: Option<&'a TargetAreas>,
    /// Per-cell material fraction in `[0, 1]`.
    pub material: Option<&'a Grid<f64>>,
    pub path: Option<&'a DispensePath>,
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Each grid cell becomes a `scale` x `scale` block. `width`/`height` give the
/// grid size when the scene has no layers to take it from.
pub fn render(scene: &Scene, width: usize, height: usize, scale: usize) -> Image {
    let scale = scale.max(1);
    let mut img = Image::new(width * scale, height * scale, [0, 0, 0]);
    for y in 0..height {
        for x in 0..width {
            let mut c: [f64; 3] = [0.0; 3];
            if let Some(a) = scene.areas {
                c[0] = *a.tab.get(x, y) * 255.0;
                c[1] = *a.cool.get(x, y) * 255.0;
            }
            if let Some(m) = scene.material {
                let alpha = m.get(x, y).clamp(0.0, 1.0);
                for v in &mut c {
                    *v = *v * (1.0 - alpha) + MATERIAL_GRAY as f64 * alpha;
                }
            }
            let px = c.map(|v| to_byte(v / 255.0));
            for dy in 0..scale {
                for dx in 0..scale {
                    img.set(x * scale + dx, y * scale + dy, px);
                }
            }
        }
    }
    if let Some(path) = scene.path {
        for (a, b) in path.segments() {
            let s = scale as f64;
            draw_line(&mut img, (a.x * s, a.y * s), (b.x * s, b.y * s), PATH_COLOR);
        }
    }
    img
}

/// Material heights as fractions of `gap`, capped at 1.
pub fn material_fraction(state: &MaterialGrid, gap: f64) -> Grid<f64> {
    let cap = gap * state.cell_area();
    state.amounts.map(|a| (a / cap).min(1.0))
}

/// Digital line between two pixel-space points; pixels off the image are skipped.
fn draw_line(img: &mut Image, from: (f64, f64), to: (f64, f64), color: Rgb) {
    let (x0, y0) = (from.0.floor() as i64, from.1.floor() as i64);
    let (x1, y1) = (to.0.floor() as i64, to.1.floor() as i64);
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    // Guards against absurd coordinates from unconstrained candidates.
    let mut budget = (dx - dy + 1).min(1 << 24);
    loop {
        if x >= 0 && y >= 0 && (x as usize) < img.width && (y as usize) < img.height {
            img.set(x as usize, y as usize, color);
        }
        budget -= 1;
        if (x == x1 && y == y1) || budget <= 0 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::harness::pixmap::PixmapFormat;
    use crate::imageops::enclosed_voids;
    use crate::model::Point;

    #[test]
    fn empty_scene_is_background() {
        let img = render(&Scene::default(), 7, 5, 3);
        assert_eq!((img.width, img.height), (21, 15));
        assert!(img.pixels.iter().all(|&p| p == [0, 0, 0]));
    }

    #[test]
    fn same_input_same_bytes() {
        let p = fixtures::taboo_islands();
        let path = DispensePath::new(vec![Point::new(12.0, 20.0), Point::new(38.0, 30.0)]).unwrap();
        let scene = Scene {
            areas: Some(&p.areas),
            material: None,
            path: Some(&path),
        };
        for f in [PixmapFormat::Binary, PixmapFormat::Ascii] {
            assert_eq!(render(&scene, 50, 50, 4).encode(f), render(&scene, 50, 50, 4).encode(f));
        }
    }

    #[test]
    fn channels_follow_masks() {
        let p = fixtures::taboo_islands();
        let img = render(
            &Scene {
                areas: Some(&p.areas),
                ..Default::default()
            },
            50,
            50,
            1,
        );
        assert_eq!(img.get(20, 20), [0, 255, 0]);
        assert_eq!(img.get(11, 20), [0, 128, 0]);
        assert_eq!(img.get(17, 10), [255, 0, 0]);
        assert_eq!(img.get(0, 0), [0, 0, 0]);
    }

    #[test]
    fn ring_hole_pixel_count_matches_void_area() {
        // 8x8 ring of material, two cells thick, around a 4x4 hole... plus a
        // one-cell ring around a 2x2 hole elsewhere.
        let ring = |x: usize, y: usize| {
            let big = (2..12).contains(&x) && (2..12).contains(&y) && !((4..10).contains(&x) && (4..10).contains(&y));
            let small = (14..18).contains(&x) && (2..6).contains(&y) && !((15..17).contains(&x) && (3..5).contains(&y));
            big || small
        };
        let material = Grid::from_fn(20, 14, |x, y| ring(x, y) as u8 as f64);
        let occupancy = material.map(|&m| m > 0.0);
        let voids = enclosed_voids(&occupancy);
        assert_eq!(voids.area, 36 + 4);
        let scale = 3;
        let img = render(
            &Scene {
                material: Some(&material),
                ..Default::default()
            },
            20,
            14,
            scale,
        );
        let lit = Grid::from_fn(img.width, img.height, |x, y| img.get(x, y) != [0, 0, 0]);
        let hole = enclosed_voids(&lit);
        assert_eq!(hole.count, 2);
        assert_eq!(hole.area, voids.area * scale * scale);
    }

    #[test]
    fn path_is_drawn_in_yellow() {
        let path = DispensePath::new(vec![Point::new(1.0, 1.0), Point::new(8.0, 1.0), Point::new(80.0, 90.0)]).unwrap();
        let img = render(
            &Scene {
                path: Some(&path),
                ..Default::default()
            },
            10,
            10,
            2,
        );
        for x in 2..=16 {
            assert_eq!(img.get(x, 2), PATH_COLOR);
        }
    }
}
