use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("series has {len} points, window needs {window}")]
pub struct SeriesTooShort {
    pub len: usize,
    pub window: usize,
}

/// Comparison of the latest window of a reasoning-length series against
/// its first window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub collapsed: bool,
    pub start_mean: f64,
    pub current_mean: f64,
    /// `current_mean / start_mean`, or NaN when `start_mean` is 0.
    pub ratio: f64,
}

/// Flags collapse when the mean of the last `window` points falls below
/// `threshold` times the mean of the first `window` points.
pub fn detect_collapse(series: &[f64], window: usize, threshold: f64) -> Result<CollapseReport, SeriesTooShort> {
    if window == 0 || series.len() < window {
        return Err(SeriesTooShort { len: series.len(), window });
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let start_mean = mean(&series[..window]);
    let current_mean = mean(&series[series.len() - window..]);
    let (collapsed, ratio) = if start_mean > 0.0 {
        let ratio = current_mean / start_mean;
        (ratio < threshold, ratio)
    } else {
        (false, f64::NAN)
    };
    Ok(CollapseReport { collapsed, start_mean, current_mean, ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn declining_series_collapses() {
        // plateau at 3000, decline, plateau at 1400
        let mut series = vec![3000.0; 10];
        series.extend((1..20).map(|i| 3000.0 - 1600.0 * i as f64 / 20.0));
        series.extend([1400.0; 10]);
        let r = detect_collapse(&series, 10, 0.5).unwrap();
        assert!(r.collapsed);
        assert!(r.current_mean < 1500.0);
        assert!((r.ratio - r.current_mean / r.start_mean).abs() < 1e-15);
    }

    #[test]
    fn flat_series_does_not() {
        let r = detect_collapse(&[2500.0; 30], 10, 0.5).unwrap();
        assert!(!r.collapsed);
        assert_eq!(r.ratio, 1.0);
    }

    #[test]
    fn too_short() {
        assert_eq!(detect_collapse(&[1.0, 2.0], 3, 0.5), Err(SeriesTooShort { len: 2, window: 3 }));
        assert!(detect_collapse(&[1.0], 0, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn zero_threshold_never_fires(series in proptest::collection::vec(1e-3f64..1e4, 10..60)) {
            prop_assert!(!detect_collapse(&series, 10, 0.0).unwrap().collapsed);
        }
    }
}
