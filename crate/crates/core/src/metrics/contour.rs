use crate::distance::squared_distance_to;
use crate::error::{Error, Result};
use crate::mask::BinaryMap;

pub const DEFAULT_BF_TOLERANCE: f64 = 2.0;

/// Contour-matching F1: a contour pixel counts as matched when the other contour
/// lies within `tolerance` pixels (Euclidean).
pub fn boundary_f1(pred: &BinaryMap, gt: &BinaryMap, tolerance: f64) -> Result<f64> {
    pred.check_same_dims(gt)?;
    if !(tolerance >= 0.0) {
        return Err(Error::Param(format!("BF tolerance must be >= 0, got {tolerance}")));
    }
    let (cp, cg) = (pred.contour(), gt.contour());
    let (dp, dg) = match (squared_distance_to(&cp), squared_distance_to(&cg)) {
        (None, None) => return Ok(1.0),
        (Some(dp), Some(dg)) => (dp, dg),
        _ => return Ok(0.0),
    };
    let t2 = tolerance * tolerance;
    let matched = |c: &BinaryMap, d: &[f64]| {
        c.data().iter().zip(d).filter(|(&on, &d)| on && d <= t2).count() as f64 / c.count() as f64
    };
    let precision = matched(&cp, &dg);
    let recall = matched(&cg, &dp);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Average symmetric surface distance, pooled over the pixels of both contours.
pub fn assd(pred: &BinaryMap, gt: &BinaryMap) -> Result<f64> {
    pred.check_same_dims(gt)?;
    if pred.is_all_background() || gt.is_all_background() {
        return Err(Error::Undefined("ASSD needs two nonempty masks".into()));
    }
    let (cp, cg) = (pred.contour(), gt.contour());
    let (dp, dg) = match (squared_distance_to(&cp), squared_distance_to(&cg)) {
        (Some(dp), Some(dg)) => (dp, dg),
        _ => return Err(Error::Undefined("ASSD needs a contour in both masks".into())),
    };
    let sum = |c: &BinaryMap, d: &[f64]| -> f64 {
        c.data().iter().zip(d).filter(|(&on, _)| on).map(|(_, &d)| d.sqrt()).sum()
    };
    Ok((sum(&cp, &dg) + sum(&cg, &dp)) / (cp.count() + cg.count()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn dist(a: (usize, usize), b: (usize, usize)) -> f64 {
        let (dy, dx) = (a.0 as f64 - b.0 as f64, a.1 as f64 - b.1 as f64);
        (dy * dy + dx * dx).sqrt()
    }

    fn nearest(p: (usize, usize), set: &[(usize, usize)]) -> f64 {
        set.iter().map(|&q| dist(p, q)).fold(f64::INFINITY, f64::min)
    }

    fn bf_oracle(pred: &BinaryMap, gt: &BinaryMap, tol: f64) -> f64 {
        let (cp, cg) = (pred.contour().points(), gt.contour().points());
        match (cp.is_empty(), cg.is_empty()) {
            (true, true) => return 1.0,
            (true, false) | (false, true) => return 0.0,
            _ => {}
        }
        let p = cp.iter().filter(|&&a| nearest(a, &cg) <= tol).count() as f64 / cp.len() as f64;
        let r = cg.iter().filter(|&&a| nearest(a, &cp) <= tol).count() as f64 / cg.len() as f64;
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn assd_oracle(pred: &BinaryMap, gt: &BinaryMap) -> f64 {
        let (cp, cg) = (pred.contour().points(), gt.contour().points());
        let s: f64 = cp.iter().map(|&a| nearest(a, &cg)).sum::<f64>() + cg.iter().map(|&a| nearest(a, &cp)).sum::<f64>();
        s / (cp.len() + cg.len()) as f64
    }

    fn square(n: usize, top: usize, left: usize, side: usize) -> BinaryMap {
        BinaryMap::from_fn(n, n, |y, x| y >= top && y < top + side && x >= left && x < left + side)
    }

    #[test]
    fn identical_masks() {
        let m = square(10, 2, 3, 5);
        assert_eq!(boundary_f1(&m, &m, 2.0).unwrap(), 1.0);
        assert_eq!(assd(&m, &m).unwrap(), 0.0);
    }

    #[test]
    fn empty_cases() {
        let e = BinaryMap::new(6, 6);
        let m = square(6, 1, 1, 3);
        assert_eq!(boundary_f1(&e, &e, 2.0).unwrap(), 1.0);
        assert_eq!(boundary_f1(&e, &m, 2.0).unwrap(), 0.0);
        assert!(matches!(assd(&e, &m), Err(Error::Undefined(_))));
        assert!(matches!(assd(&m, &e), Err(Error::Undefined(_))));
    }

    #[test]
    fn single_pixels_three_apart() {
        let a = BinaryMap::from_rows(&["#......"]);
        let b = BinaryMap::from_rows(&["...#..."]);
        assert_eq!(assd(&a, &b).unwrap(), 3.0);
    }

    #[test]
    fn offset_squares() {
        let a = square(12, 2, 2, 8);
        let b = square(12, 3, 2, 8);
        let bf = boundary_f1(&a, &b, 2.0).unwrap();
        assert!((bf - bf_oracle(&a, &b, 2.0)).abs() < 1e-12);
        assert_eq!(bf, 1.0);
        let tight = boundary_f1(&a, &b, 0.0).unwrap();
        assert!((tight - bf_oracle(&a, &b, 0.0)).abs() < 1e-12);
        assert!(tight < 1.0);
    }

    #[test]
    fn concentric_squares() {
        let inner = square(9, 3, 3, 3);
        let outer = square(9, 2, 2, 5);
        let got = assd(&inner, &outer).unwrap();
        assert!((got - assd_oracle(&inner, &outer)).abs() < 1e-12);
        // inner ring: 8 pixels at distance 1; outer ring: 12 edge pixels at 1, 4 corners at √2
        let want = (8.0 + 12.0 + 4.0 * 2f64.sqrt()) / 24.0;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn matches_oracles_on_random_masks() {
        for seed in 0..100 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let da = rng.gen_range(0.1..0.7);
            let db = rng.gen_range(0.1..0.7);
            let a = BinaryMap::from_fn(16, 16, |_, _| rng.gen_bool(da));
            let b = BinaryMap::from_fn(16, 16, |_, _| rng.gen_bool(db));
            let tol = rng.gen_range(0.0..3.0);
            assert!((boundary_f1(&a, &b, tol).unwrap() - bf_oracle(&a, &b, tol)).abs() < 1e-9);
            assert!((assd(&a, &b).unwrap() - assd_oracle(&a, &b)).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn ranges_and_symmetry(a in proptest::collection::vec(any::<bool>(), 64), b in proptest::collection::vec(any::<bool>(), 64), tol in 0.0f64..3.0) {
            let a = BinaryMap::from_vec(8, 8, a).unwrap();
            let b = BinaryMap::from_vec(8, 8, b).unwrap();
            let ab = boundary_f1(&a, &b, tol).unwrap();
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - boundary_f1(&b, &a, tol).unwrap()).abs() < 1e-12);
            if let Ok(d) = assd(&a, &b) {
                prop_assert!(d >= 0.0);
                prop_assert!((d - assd(&b, &a).unwrap()).abs() < 1e-12);
            }
        }
    }
}
