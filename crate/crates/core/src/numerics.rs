//! Summation helpers shared by the law functionals, the martingale
//! computations and the Monte Carlo estimators.

use serde::{Serialize, Serializer};

/// Sums `terms` in nondecreasing magnitude order with Neumaier compensation.
///
/// The slice is reordered in place.
pub fn stable_sum(terms: &mut [f64]) -> f64 {
    terms.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    neumaier(terms.iter().copied())
}

/// Compensated summation in the order the iterator yields.
pub fn neumaier(terms: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for t in terms {
        let next = sum + t;
        if sum.abs() >= t.abs() {
            comp += (sum - next) + t;
        } else {
            comp += (t - next) + sum;
        }
        sum = next;
    }
    sum + comp
}

/// `log(Σ exp(x_i))` with max subtraction. Returns `-inf` for an empty input
/// or when every term is `-inf`.
///
/// The shifted exponentials are summed in nondecreasing order so the result
/// does not depend on the order of `values`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let mut shifted: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    max + stable_sum(&mut shifted).ln()
}

/// Sample mean and standard error (`sd / sqrt(n)`, unbiased variance).
///
/// Accumulates in the slice order; callers pass replicate-index order so the
/// result is reproducible.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = neumaier(values.iter().copied()) / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let ss = neumaier(values.iter().map(|v| (v - mean) * (v - mean)));
    let var = ss / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Median of a non-empty slice (average of the two middle values for even length).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

/// Serializes an `f64`, writing non-finite values as the strings
/// `"inf"`, `"-inf"` and `"nan"` instead of JSON `null`.
pub fn serialize_extended<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(&format_extended(*v))
    }
}

pub fn serialize_extended_vec<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    struct Ext(#[serde(serialize_with = "serialize_extended")] f64);
    s.collect_seq(v.iter().map(|x| Ext(*x)))
}

/// Text form used in CSV and JSON output: shortest round-trip decimal for
/// finite values, `inf` / `-inf` / `nan` otherwise.
pub fn format_extended(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v:?}")
    }
}
