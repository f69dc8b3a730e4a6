//! Small numeric helpers shared by estimators and dashboard sections.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

/// Mean and standard error (sample sd / √n). A single value has se 0.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn std_normal() -> Normal {
    Normal::standard()
}

pub fn normal_cdf(z: f64) -> f64 {
    std_normal().cdf(z)
}

pub fn normal_pdf(z: f64) -> f64 {
    std_normal().pdf(z)
}

/// Linear-interpolation quantile (`(n-1)·q` positioning) over values given as
/// sorted `(value, count)` runs.
pub fn weighted_quantile(sorted_runs: &[(f64, usize)], q: f64) -> f64 {
    let total: usize = sorted_runs.iter().map(|(_, c)| c).sum();
    assert!(total > 0, "quantile of empty data");
    let h = (total - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let at = |k: usize| {
        let mut seen = 0;
        for &(v, c) in sorted_runs {
            seen += c;
            if k < seen {
                return v;
            }
        }
        sorted_runs.last().expect("non-empty").0
    };
    let a = at(lo);
    if frac == 0.0 {
        a
    } else {
        a + frac * (at(lo + 1) - a)
    }
}
