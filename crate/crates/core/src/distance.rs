//! Exact Euclidean distance transforms (Felzenszwalb–Huttenlocher lower envelope).

use crate::mask::BinaryMap;

const INF: f64 = 1e20;

/// 1-D squared distance transform of `f` in place, using scratch buffers.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // k == 0 and the new parabola dominates everywhere
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                break;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
}

/// Squared Euclidean distance from every pixel to the nearest foreground pixel of
/// `seeds`. `None` when `seeds` is empty.
pub fn squared_distance_to(seeds: &BinaryMap) -> Option<Vec<f64>> {
    if seeds.is_all_background() {
        return None;
    }
    let (h, w) = seeds.dims();
    let n = h.max(w);
    let mut grid: Vec<f64> = seeds.data().iter().map(|&s| if s { 0.0 } else { INF }).collect();
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        edt_1d(&f[..h], &mut out[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        edt_1d(&f[..w], &mut out[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    Some(grid)
}

/// Euclidean distance to the nearest foreground pixel of `seeds`, or `None` if empty.
pub fn distance_to(seeds: &BinaryMap) -> Option<Vec<f64>> {
    squared_distance_to(seeds).map(|d| d.into_iter().map(f64::sqrt).collect())
}
