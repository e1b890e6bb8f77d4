//! Small numeric helpers shared by the scorer and the evaluation harness.

/// Exact running sum as non-overlapping partials (Shewchuk).
fn partials(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    partials
}

/// Correctly rounded value of a partials expansion.
fn round_partials(partials: &[f64]) -> f64 {
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        let y = partials[n - 1];
        n -= 1;
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

/// Correctly rounded sum.
pub fn fsum(values: impl IntoIterator<Item = f64>) -> f64 {
    round_partials(&partials(values))
}

/// Mean of the exact sum, independent of input order. The mean of `k`
/// copies of `x` is exactly `x`.
pub fn exact_mean(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "mean of an empty slice");
    let k = values.len() as f64;
    let parts = partials(values.iter().copied());
    let q = round_partials(&parts) / k;
    // Residual sum - k*q, exactly: k*q split into hi + lo with an FMA.
    let prod = k * q;
    let prod_lo = k.mul_add(q, -prod);
    let residual = fsum(parts.into_iter().chain([-prod, -prod_lo]));
    q + residual / k
}

/// Linear-interpolated percentile (`p` in `[0, 100]`) of unsorted data.
pub fn percentile(values: &[f32], p: f64) -> f64 {
    let mut sorted: Vec<f32> = values.to_vec();
    sorted.sort_by(f32::total_cmp);
    percentile_sorted(&sorted, p)
}

pub fn percentile_sorted(sorted: &[f32], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty slice");
    let rank = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] as f64 + (sorted[hi] as f64 - sorted[lo] as f64) * frac
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fsum_is_exact_on_cancellation() {
        assert_eq!(fsum([1e100, 1.0, -1e100]), 1.0);
        assert_eq!(fsum([0.1; 10]), 1.0);
    }

    #[test]
    fn mean_of_copies_is_exact() {
        for &x in &[0.1, 0.7, 1.0 / 3.0, 0.123456789, 2.5e-8] {
            for k in 1..12 {
                assert_eq!(exact_mean(&vec![x; k]), x);
            }
        }
        assert_ne!((0.1 + 0.1 + 0.1) / 3.0, 0.1);
    }

    #[test]
    fn percentile_interpolates() {
        let v = [4.0f32, 1.0, 3.0, 2.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 100.0), 4.0);
        assert_eq!(percentile(&v, 50.0), 2.5);
    }

    proptest! {
        #[test]
        fn antisymmetric_pair_mean_is_half(p in 0.0f64..=1.0) {
            prop_assert_eq!(exact_mean(&[p, 1.0 - p]), 0.5);
        }

        #[test]
        fn mean_is_order_independent(mut v in prop::collection::vec(-10.0f64..10.0, 1..20)) {
            let a = exact_mean(&v);
            v.reverse();
            prop_assert_eq!(a, exact_mean(&v));
            let half = v.len() / 2;
            v.rotate_left(half);
            prop_assert_eq!(a, exact_mean(&v));
        }

        #[test]
        fn mean_is_close_to_naive(v in prop::collection::vec(0.0f64..1.0, 1..50)) {
            let naive = v.iter().sum::<f64>() / v.len() as f64;
            prop_assert!((exact_mean(&v) - naive).abs() < 1e-14);
        }
    }
}
