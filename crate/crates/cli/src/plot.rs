//! Minimal line plot of surface Dice against beta.

use std::path::Path;

use image::{Rgb, RgbImage};

use kswap::beta_search::BetaCurve;

const W: u32 = 640;
const H: u32 = 400;
const MARGIN: i64 = 40;

const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
];

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if (0..W as i64).contains(&x) && (0..H as i64).contains(&y) {
        img.put_pixel(x as u32, y as u32, c);
    }
}

/// Bresenham, two pixels wide.
fn line(img: &mut RgbImage, (mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let mut err = dx + dy;
    loop {
        put(img, x0, y0, c);
        put(img, x0, y0 + 1, c);
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// One polyline per curve. The x axis spans the grid, the y axis [0, 1]
/// with ticks every 0.1.
pub fn render(curves: &[BetaCurve], path: &Path) -> image::ImageResult<()> {
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let grey = Rgb([160, 160, 160]);
    let black = Rgb([0, 0, 0]);
    let (left, right, top, bottom) = (MARGIN, W as i64 - MARGIN / 2, MARGIN / 2, H as i64 - MARGIN);

    let betas: Vec<f64> = curves.iter().flat_map(|c| c.points.iter().map(|p| p.0)).collect();
    let lo = betas.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = betas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let to_px = |b: f64, s: f64| {
        let x = left + ((b - lo) / span * (right - left) as f64).round() as i64;
        let y = bottom - (s.clamp(0.0, 1.0) * (bottom - top) as f64).round() as i64;
        (x, y)
    };

    for k in 0..=10 {
        let y = bottom - (k * (bottom - top)) / 10;
        for x in left..=right {
            if x % 4 == 0 {
                put(&mut img, x, y, grey);
            }
        }
        line(&mut img, (left - 5, y), (left, y), black);
    }
    for &b in &betas {
        let (x, _) = to_px(b, 0.0);
        line(&mut img, (x, bottom), (x, bottom + 5), black);
    }
    line(&mut img, (left, top), (left, bottom), black);
    line(&mut img, (left, bottom), (right, bottom), black);

    for (k, c) in curves.iter().enumerate() {
        let colour = Rgb(PALETTE[k % PALETTE.len()]);
        let pts: Vec<(i64, i64)> = c.points.iter().map(|&(b, s)| to_px(b, s)).collect();
        for w in pts.windows(2) {
            line(&mut img, w[0], w[1], colour);
        }
        for &(x, y) in &pts {
            for dx in -3..=3 {
                for dy in -3..=3 {
                    put(&mut img, x + dx, y + dy, colour);
                }
            }
        }
    }
    img.save(path)
}
