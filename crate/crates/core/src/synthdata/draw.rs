use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::mask::BinaryMap;

/// Smooth noise in `[-1, 1]`: a random `(grid+1)²` lattice bilinearly upsampled.
pub(super) fn value_noise(h: usize, w: usize, grid: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let g = grid + 1;
    let lattice: Vec<f32> = (0..g * g).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let fy = y as f32 / h as f32 * grid as f32;
        let (y0, ty) = (fy.floor() as usize, fy.fract());
        for x in 0..w {
            let fx = x as f32 / w as f32 * grid as f32;
            let (x0, tx) = (fx.floor() as usize, fx.fract());
            let at = |yy: usize, xx: usize| lattice[yy.min(grid) * g + xx.min(grid)];
            let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
            let bot = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

fn blend(img: &mut [f32], i: usize, color: [f32; 3], alpha: f32) {
    for c in 0..3 {
        let v = &mut img[i * 3 + c];
        *v = *v * (1.0 - alpha) + color[c] * alpha;
    }
}

/// Anti-aliased stroke along a polyline: coverage falls off linearly over the last
/// pixel beyond half the width.
fn stroke(img: &mut [f32], artifact: &mut BinaryMap, n: usize, pts: &[(f32, f32)], width: f32, color: [f32; 3]) {
    let half = width / 2.0;
    let mut coverage = vec![0.0f32; n * n];
    for seg in pts.windows(2) {
        let ((y0, x0), (y1, x1)) = (seg[0], seg[1]);
        let lo_y = (y0.min(y1) - half - 1.0).floor().max(0.0) as usize;
        let hi_y = ((y0.max(y1) + half + 1.0).ceil().max(0.0) as usize).min(n);
        let lo_x = (x0.min(x1) - half - 1.0).floor().max(0.0) as usize;
        let hi_x = ((x0.max(x1) + half + 1.0).ceil().max(0.0) as usize).min(n);
        let (dy, dx) = (y1 - y0, x1 - x0);
        let len2 = (dy * dy + dx * dx).max(1e-9);
        for y in lo_y..hi_y {
            for x in lo_x..hi_x {
                let (py, px) = (y as f32 + 0.5, x as f32 + 0.5);
                let t = (((py - y0) * dy + (px - x0) * dx) / len2).clamp(0.0, 1.0);
                let d = ((py - y0 - t * dy).powi(2) + (px - x0 - t * dx).powi(2)).sqrt();
                let cov = (half + 0.5 - d).clamp(0.0, 1.0);
                let c = &mut coverage[y * n + x];
                *c = c.max(cov);
            }
        }
    }
    for (i, &c) in coverage.iter().enumerate() {
        if c > 0.0 {
            blend(img, i, color, c);
            artifact.set(i / n, i % n, true);
        }
    }
}

/// Dark quadratic Bézier hair crossing a random part of the image.
pub(super) fn hair(img: &mut [f32], artifact: &mut BinaryMap, n: usize, rng: &mut ChaCha8Rng) {
    let nf = n as f32;
    let start = (rng.gen_range(0.0..nf), rng.gen_range(0.0..nf));
    let angle: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let len = rng.gen_range(0.4..1.0) * nf;
    let end = (start.0 + len * angle.sin(), start.1 + len * angle.cos());
    let bend = rng.gen_range(-0.3..0.3) * len;
    let mid = (
        (start.0 + end.0) / 2.0 + bend * angle.cos(),
        (start.1 + end.1) / 2.0 - bend * angle.sin(),
    );
    let steps = (2.0 * len).ceil() as usize + 2;
    let pts: Vec<(f32, f32)> = (0..=steps)
        .map(|k| {
            let t = k as f32 / steps as f32;
            let (a, b, c) = ((1.0 - t) * (1.0 - t), 2.0 * t * (1.0 - t), t * t);
            (a * start.0 + b * mid.0 + c * end.0, a * start.1 + b * mid.1 + c * end.1)
        })
        .collect();
    let width = rng.gen_range(1.0..(1.0 + 2.0 * (nf / 128.0).min(1.0)));
    let shade = rng.gen_range(0.05..0.2);
    stroke(img, artifact, n, &pts, width, [shade * 1.2, shade, shade * 0.8]);
}

/// Black ruler along one edge: a base line with a row of ticks.
pub(super) fn ruler(img: &mut [f32], artifact: &mut BinaryMap, n: usize, rng: &mut ChaCha8Rng) {
    let nf = n as f32;
    let bottom = rng.gen_bool(0.5);
    let base = if bottom { nf - 2.5 } else { 2.5 };
    let dir = if bottom { -1.0 } else { 1.0 };
    let black = [0.03, 0.03, 0.03];
    stroke(img, artifact, n, &[(base, 0.0), (base, nf)], 1.0, black);
    let spacing = (nf / 16.0).max(3.0);
    let mut x = rng.gen_range(1.0..spacing);
    let mut k = 0;
    while x < nf {
        let len = if k % 5 == 0 { nf * 0.08 } else { nf * 0.04 }.max(2.0);
        stroke(img, artifact, n, &[(base, x), (base + dir * len, x)], 1.0, black);
        x += spacing;
        k += 1;
    }
}

/// Bright Gaussian-profile highlight, clipped at 1.
pub(super) fn specular(img: &mut [f32], artifact: &mut BinaryMap, n: usize, rng: &mut ChaCha8Rng) {
    let nf = n as f32;
    let (cy, cx) = (rng.gen_range(0.0..nf), rng.gen_range(0.0..nf));
    let sigma = rng.gen_range(0.6..1.5) * (nf / 64.0).max(1.0);
    let reach = (3.0 * sigma).ceil() as isize;
    for y in (cy as isize - reach).max(0)..(cy as isize + reach + 1).min(n as isize) {
        for x in (cx as isize - reach).max(0)..(cx as isize + reach + 1).min(n as isize) {
            let d2 = (y as f32 + 0.5 - cy).powi(2) + (x as f32 + 0.5 - cx).powi(2);
            let a = (-d2 / (2.0 * sigma * sigma)).exp();
            if a > 0.1 {
                let i = y as usize * n + x as usize;
                for c in 0..3 {
                    let v = &mut img[i * 3 + c];
                    *v = (*v + 0.9 * a).min(1.0);
                }
                artifact.set(y as usize, x as usize, true);
            }
        }
    }
}
