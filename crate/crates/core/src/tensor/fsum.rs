//! Exactly rounded floating-point summation.
//!
//! Reductions over the token axis must not depend on token order: the models
//! promise that permuting (hidden state, attention weight) pairs leaves the
//! aggregated context bit-identical. Naive left-to-right summation breaks that
//! under IEEE rounding, so the token-axis reductions use Shewchuk's expansion
//! algorithm, which returns the correctly rounded sum of the input multiset
//! and is therefore order-independent.

/// Sum of `values`, correctly rounded as if computed in infinite precision.
pub fn fsum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut kept = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }

    // Round the non-overlapping expansion to one double, with the half-even
    // correction when the discarded tail straddles a rounding boundary.
    let mut n = partials.len();
    let mut hi = 0.0;
    if n > 0 {
        n -= 1;
        hi = partials[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = partials[n];
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
    }
    hi
}

/// Dot product `a . b` with an exactly rounded accumulation.
///
/// The elementwise products are rounded individually (as any one-pass dot
/// product would), but their sum does not depend on element order.
pub fn fdot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    fsum(a.iter().zip(b).map(|(x, y)| x * y))
}
