use std::f64::consts::TAU;

use image::RgbImage;
use rand::{Rng, RngExt};

use crate::extraction::extract_cutout;
use crate::raster::Mask;
use crate::scene::{Category, ObjectCutout};

const MIN_TEXTURE_SIDE: u32 = 32;

/// Random convex polygon filled with a tiled texture, as an OOD obstacle.
///
/// Panics if the texture is smaller than 32x32.
pub fn random_textured_polygon<R: Rng + ?Sized>(texture: &RgbImage, rng: &mut R) -> ObjectCutout {
    random_textured_polygon_with_vertices(texture, rng).0
}

/// Like [`random_textured_polygon`], also returning the polygon vertices in
/// the cutout's pixel coordinates (pixel centers sit at `i + 0.5`).
pub fn random_textured_polygon_with_vertices<R: Rng + ?Sized>(
    texture: &RgbImage,
    rng: &mut R,
) -> (ObjectCutout, Vec<[f64; 2]>) {
    assert!(
        texture.width() >= MIN_TEXTURE_SIDE && texture.height() >= MIN_TEXTURE_SIDE,
        "texture must be at least {MIN_TEXTURE_SIDE}x{MIN_TEXTURE_SIDE}"
    );
    let side = texture.width().min(texture.height()) as usize;
    let n: usize = rng.random_range(3..=8);
    // Points on an ellipse are always in convex position; one angle per
    // equal sector keeps the polygon from collapsing into a sliver.
    let rx = side as f64 / 2.0 * rng.random_range(0.6..1.0);
    let ry = side as f64 / 2.0 * rng.random_range(0.6..1.0);
    let phase = rng.random_range(0.0..TAU);
    let sector = TAU / n as f64;
    let center = side as f64 / 2.0;
    let vertices: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let a = phase + sector * (i as f64 + rng.random_range(0.15..0.85));
            [center + rx * a.cos(), center + ry * a.sin()]
        })
        .collect();
    let ox = rng.random_range(0..texture.width());
    let oy = rng.random_range(0..texture.height());

    let canvas = Mask::from_fn(side, side, |x, y| {
        inside_convex(&vertices, x as f64 + 0.5, y as f64 + 0.5)
    });
    let tiled = RgbImage::from_fn(side as u32, side as u32, |x, y| {
        *texture.get_pixel((x + ox) % texture.width(), (y + oy) % texture.height())
    });
    let rect = canvas.bounding_box().expect("polygon covers pixels");
    let cutout = extract_cutout(&tiled, &canvas, Category::Texture, "polygon")
        .expect("nonempty polygon mask");
    let shifted = vertices
        .iter()
        .map(|v| [v[0] - rect.x_min as f64, v[1] - rect.y_min as f64])
        .collect();
    (cutout, shifted)
}

/// Point-in-convex-polygon test for counter-clockwise or clockwise vertex order.
fn inside_convex(vertices: &[[f64; 2]], px: f64, py: f64) -> bool {
    let mut sign = 0.0f64;
    for i in 0..vertices.len() {
        let [ax, ay] = vertices[i];
        let [bx, by] = vertices[(i + 1) % vertices.len()];
        let cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax);
        if cross == 0.0 {
            continue;
        }
        if sign == 0.0 {
            sign = cross.signum();
        } else if cross.signum() != sign {
            return false;
        }
    }
    true
}
