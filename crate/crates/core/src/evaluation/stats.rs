use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    pub df: f64,
    /// Two-tailed.
    pub p: f64,
}

/// Two-tailed paired t-test on `a_i − b_i`.
pub fn paired_ttest(pairs: &[(f64, f64)]) -> Result<TTest> {
    let n = pairs.len();
    if n < 2 {
        return Err(Error::Validation(format!("paired t-test needs at least 2 pairs, got {n}")));
    }
    if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(Error::Numeric("non-finite value in t-test input".into()));
    }
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Err(Error::Degenerate(
            "differences have zero variance; the p-value is undefined".into(),
        ));
    }
    let df = (n - 1) as f64;
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numeric(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0);
    Ok(TTest {
        n,
        mean_diff: mean,
        t,
        df,
        p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_variance_is_degenerate() {
        assert!(matches!(
            paired_ttest(&[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(paired_ttest(&[(1.0, 0.0), (3.0, 2.0)]), Err(Error::Degenerate(_))));
        assert!(paired_ttest(&[(1.0, 0.0)]).is_err());
    }

    #[test]
    fn differences_one_to_four() {
        let r = paired_ttest(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0), (4.0, 0.0)]).unwrap();
        // mean 2.5, sd sqrt(5/3), t = 2.5 / (sd / 2)
        let t = 2.5 / ((5.0f64 / 3.0).sqrt() / 2.0);
        assert!((r.t - t).abs() < 1e-12);
        assert_eq!(r.df, 3.0);
        // two-sided tail of Student t with 3 df at 3.8729833
        assert!((r.p - 0.030_466_29).abs() < 1e-6, "{}", r.p);
    }

    #[test]
    fn swapping_sides_keeps_p() {
        let pairs = [(0.7, 0.65), (0.72, 0.7), (0.69, 0.7), (0.75, 0.71)];
        let swapped: Vec<_> = pairs.iter().map(|&(a, b)| (b, a)).collect();
        let a = paired_ttest(&pairs).unwrap();
        let b = paired_ttest(&swapped).unwrap();
        assert_eq!(a.p, b.p);
        assert_eq!(a.t, -b.t);
    }
}
