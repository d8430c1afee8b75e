use crate::error::{Error, Result};

/// Temporal intersection over union of two `(start, end)` spans.
///
/// ```
/// use owl_tal::evaltal::tiou;
/// assert!((tiou((0.0, 2.0), (1.0, 3.0)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
/// ```
pub fn tiou(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    for s in [a, b] {
        if !(s.0 < s.1) || !s.0.is_finite() || !s.1.is_finite() {
            return Err(Error::Segment(format!("degenerate segment [{}, {}]", s.0, s.1)));
        }
    }
    Ok(tiou_unchecked(a, b))
}

pub(crate) fn tiou_unchecked(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.1.max(b.1) - a.0.min(b.0);
    inter / union
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(tiou((1.0, 4.0), (1.0, 4.0)).unwrap(), 1.0);
        assert_eq!(tiou((0.0, 1.0), (2.0, 3.0)).unwrap(), 0.0);
        assert_eq!(tiou((0.0, 1.0), (1.0, 3.0)).unwrap(), 0.0);
        assert_eq!(tiou((0.0, 2.0), (1.0, 3.0)).unwrap(), 1.0 / 3.0);
        assert!(matches!(tiou((2.0, 2.0), (0.0, 1.0)), Err(Error::Segment(_))));
        assert!(matches!(tiou((0.0, 1.0), (3.0, 1.0)), Err(Error::Segment(_))));
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in 0.0f64..10.0, da in 0.01f64..5.0, b in 0.0f64..10.0, db in 0.01f64..5.0) {
            let x = tiou((a, a + da), (b, b + db)).unwrap();
            prop_assert!((0.0..=1.0).contains(&x));
            prop_assert_eq!(x, tiou((b, b + db), (a, a + da)).unwrap());
        }
    }
}
