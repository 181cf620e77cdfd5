//! Synthetic product geometries for tests, benches and desk-scale studies.
//! They are stand-ins, not reproductions of any real product.

use crate::grid::Grid;
use crate::model::{GapSpec, Product, TargetAreas};

fn product(name: &str, cool: Grid<f64>, tab: Grid<f64>, gap: GapSpec) -> Product {
    // Overflow is everything that is not cooling surface; taboo cells are part of it.
    let over = cool.map(|c| 1.0 - c);
    let areas = TargetAreas::new(cool, over, tab).expect("fixture masks are valid");
    Product::new(name, 1.0, areas, gap).expect("fixture product is valid")
}

fn rect(x0: usize, x1: usize, y0: usize, y1: usize) -> impl Fn(usize, usize) -> bool {
    move |x, y| (x0..x1).contains(&x) && (y0..y1).contains(&y)
}

/// 50x50 grid with a 30x20 cooling rectangle (600 cells) and no taboo zone.
pub fn rectangle() -> Product {
    let inside = rect(10, 40, 15, 35);
    let cool = Grid::from_fn(50, 50, |x, y| inside(x, y) as u8 as f64);
    product("rectangle", cool, Grid::filled(50, 50, 0.0), GapSpec::nominal(1.0))
}

/// Thin 40x4 cooling strip along the x axis.
pub fn strip() -> Product {
    let inside = rect(5, 45, 23, 27);
    let cool = Grid::from_fn(50, 50, |x, y| inside(x, y) as u8 as f64);
    product("strip", cool, Grid::filled(50, 50, 0.0), GapSpec::nominal(1.0))
}

/// L-shaped cooling surface.
pub fn l_shape() -> Product {
    let a = rect(10, 40, 10, 22);
    let b = rect(10, 22, 22, 40);
    let cool = Grid::from_fn(50, 50, |x, y| (a(x, y) || b(x, y)) as u8 as f64);
    product("l-shape", cool, Grid::filled(50, 50, 0.0), GapSpec::nominal(1.0))
}

/// Cooling rectangle flanked by taboo islands close to its long edges, with
/// fractional cells along the boundary.
pub fn taboo_islands() -> Product {
    let inside = rect(12, 38, 16, 34);
    let islands = [rect(16, 22, 9, 13), rect(28, 34, 37, 41), rect(42, 46, 22, 28), rect(4, 8, 22, 28)];
    let cool = Grid::from_fn(50, 50, |x, y| {
        if inside(x, y) {
            1.0
        } else if (x == 11 || x == 38) && (16..34).contains(&y) {
            0.5
        } else {
            0.0
        }
    });
    let tab = Grid::from_fn(50, 50, |x, y| islands.iter().any(|r| r(x, y)) as u8 as f64);
    product("taboo-islands", cool, tab, GapSpec::nominal(1.0))
}

/// Rectangle with a taboo strip along the top border; the gap varies between
/// `g_max = 1` and `g_min = 0.5` with nominal `0.9`.
pub fn tolerance_strip() -> Product {
    let inside = rect(12, 38, 14, 36);
    let cool = Grid::from_fn(50, 50, |x, y| inside(x, y) as u8 as f64);
    let tab = Grid::from_fn(50, 50, |_, y| (y < 3) as u8 as f64);
    let gap = GapSpec {
        g_final: 0.9,
        g_max: 1.0,
        g_min: 0.5,
        n_steps: 10,
    };
    product("tolerance-strip", cool, tab, gap)
}

pub fn by_name(name: &str) -> Option<Product> {
    Some(match name {
        "rectangle" => rectangle(),
        "strip" => strip(),
        "l-shape" => l_shape(),
        "taboo-islands" => taboo_islands(),
        "tolerance-strip" => tolerance_strip(),
        _ => return None,
    })
}

pub const NAMES: [&str; 5] = ["rectangle", "strip", "l-shape", "taboo-islands", "tolerance-strip"];
