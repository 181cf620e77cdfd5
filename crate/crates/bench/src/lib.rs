//! Shared inputs for the criterion benches.

use timpath_core::{fixtures, DispensePath, Point, Product};

/// Serpentine over the rectangle fixture carrying its required volume.
pub fn serpentine(product: &Product) -> DispensePath {
    let pts = [(14.0, 18.0), (36.0, 18.0), (36.0, 25.0), (14.0, 25.0), (14.0, 32.0), (36.0, 32.0)];
    let path = DispensePath::new(pts.iter().map(|&(x, y)| Point::new(x, y)).collect()).expect("valid path");
    let feedrate = product.required_volume() / path.length();
    path.with_feedrate(feedrate)
}

pub fn rectangle_case() -> (Product, DispensePath) {
    let product = fixtures::rectangle();
    let path = serpentine(&product);
    (product, path)
}
