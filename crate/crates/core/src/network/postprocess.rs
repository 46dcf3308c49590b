//! Optional mask clean-up: small-component removal and morphological closing.

use crate::error::{Error, Result};
use crate::mask::BinaryMap;

/// Labels 4-connected foreground components; returns per-pixel labels (0 = background)
/// and the area of each label (index 0 unused).
pub fn label_components(mask: &BinaryMap) -> (Vec<usize>, Vec<usize>) {
    let (h, w) = mask.dims();
    let mut labels = vec![0usize; h * w];
    let mut areas = vec![0usize];
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !mask.data()[start] || labels[start] != 0 {
            continue;
        }
        let label = areas.len();
        areas.push(0);
        labels[start] = label;
        stack.push(start);
        while let Some(i) = stack.pop() {
            areas[label] += 1;
            let (y, x) = (i / w, i % w);
            let mut visit = |j: usize| {
                if mask.data()[j] && labels[j] == 0 {
                    labels[j] = label;
                    stack.push(j);
                }
            };
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
        }
    }
    (labels, areas)
}

fn disk(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dy * dy + dx * dx <= r * r {
                out.push((dy, dx));
            }
        }
    }
    out
}

fn dilate(mask: &BinaryMap, offsets: &[(isize, isize)]) -> BinaryMap {
    let (h, w) = mask.dims();
    BinaryMap::from_fn(h, w, |y, x| {
        offsets.iter().any(|&(dy, dx)| {
            let (yy, xx) = (y as isize + dy, x as isize + dx);
            yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w && mask.get(yy as usize, xx as usize)
        })
    })
}

/// Erosion that ignores pixels beyond the border, so closing never shrinks a mask.
fn erode(mask: &BinaryMap, offsets: &[(isize, isize)]) -> BinaryMap {
    let (h, w) = mask.dims();
    BinaryMap::from_fn(h, w, |y, x| {
        offsets.iter().all(|&(dy, dx)| {
            let (yy, xx) = (y as isize + dy, x as isize + dx);
            yy < 0 || xx < 0 || yy as usize >= h || xx as usize >= w || mask.get(yy as usize, xx as usize)
        })
    })
}

/// Removes 4-connected components smaller than `min_area`, then closes with a disk of
/// `closing_radius`. Zero for both is the identity.
pub fn postprocess(mask: &BinaryMap, min_area: i64, closing_radius: i64) -> Result<BinaryMap> {
    if min_area < 0 || closing_radius < 0 {
        return Err(Error::Param(format!(
            "post-processing parameters must be non-negative (min_area={min_area}, closing_radius={closing_radius})"
        )));
    }
    let mut out = mask.clone();
    if min_area > 0 {
        let (labels, areas) = label_components(&out);
        let (h, w) = out.dims();
        out = BinaryMap::from_fn(h, w, |y, x| {
            let l = labels[y * w + x];
            l != 0 && areas[l] as i64 >= min_area
        });
    }
    if closing_radius > 0 {
        let offsets = disk(closing_radius as usize);
        out = erode(&dilate(&out, &offsets), &offsets);
    }
    Ok(out)
}
