//! Paired significance test on per-mention correctness.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t_statistic: f64,
    pub p_value: f64,
    pub significant_at_95: bool,
}

/// Two-sided paired t-test on `d_i = system_i - baseline_i`, sample
/// standard deviation, `n - 1` degrees of freedom.
///
/// All-zero differences give `t = 0, p = 1`. Constant nonzero differences
/// have zero variance and give `t = ±inf, p = 0`.
pub fn paired_t_test<A: Copy + Into<f64>>(system: &[A], baseline: &[A]) -> Result<TTest> {
    if system.len() != baseline.len() {
        return Err(Error::Contract(format!(
            "paired samples differ in length: {} vs {}",
            system.len(),
            baseline.len()
        )));
    }
    let n = system.len();
    if n < 2 {
        return Err(Error::Contract(format!("paired t-test needs n >= 2, got {n}")));
    }
    let d: Vec<f64> = system.iter().zip(baseline).map(|(&s, &b)| s.into() - b.into()).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();

    let (t, p) = if mean == 0.0 && sd == 0.0 {
        (0.0, 1.0)
    } else if sd == 0.0 {
        (f64::INFINITY.copysign(mean), 0.0)
    } else {
        let t = mean * nf.sqrt() / sd;
        let dist = StudentsT::new(0.0, 1.0, nf - 1.0).map_err(|e| Error::Contract(e.to_string()))?;
        (t, (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0))
    };
    Ok(TTest {
        t_statistic: t,
        p_value: p,
        significant_at_95: p < SIGNIFICANCE_LEVEL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_case() {
        let s = [1u8, 1, 1, 1, 0, 0, 0, 0, 0, 0];
        let b = [0u8; 10];
        let r = paired_t_test(&s, &b).unwrap();
        // scipy.stats.ttest_rel
        assert!((r.t_statistic - 2.449489742783178).abs() < 1e-12);
        assert!((r.p_value - 0.03678749787978613).abs() < 1e-9);
        assert!(r.significant_at_95);
    }

    #[test]
    fn identical_samples() {
        let s = [1u8, 0, 1, 1];
        let r = paired_t_test(&s, &s).unwrap();
        assert_eq!((r.t_statistic, r.p_value, r.significant_at_95), (0.0, 1.0, false));
    }

    #[test]
    fn sign_flip_keeps_p() {
        let s = [1u8, 1, 0, 1, 0, 1];
        let b = [0u8, 1, 1, 0, 0, 0];
        let a = paired_t_test(&s, &b).unwrap();
        let r = paired_t_test(&b, &s).unwrap();
        assert_eq!(a.t_statistic, -r.t_statistic);
        assert_eq!(a.p_value, r.p_value);
    }

    #[test]
    fn constant_difference() {
        let r = paired_t_test(&[1u8, 1, 1], &[0u8, 0, 0]).unwrap();
        assert_eq!(r.t_statistic, f64::INFINITY);
        assert_eq!(r.p_value, 0.0);
    }

    #[test]
    fn contract_errors() {
        assert!(matches!(paired_t_test(&[1u8], &[0u8]), Err(Error::Contract(_))));
        assert!(matches!(paired_t_test(&[1u8, 0], &[0u8]), Err(Error::Contract(_))));
    }
}
