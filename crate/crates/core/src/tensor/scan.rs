//! Inclusive scans under an associative combine.

/// Elements per chunk in the blocked scan.
const CHUNK: usize = 64;

/// In-place inclusive scan: `items[i] <- items[0] ∘ items[1] ∘ … ∘ items[i]`.
///
/// Evaluated as a blocked scan: each chunk is scanned locally, the chunk
/// totals are scanned, and each chunk is then offset by the running total of
/// its predecessors. The result is independent of evaluation order only up to
/// the associativity of `combine`; for exact arithmetic (integers, or floats
/// holding small integers) it matches a sequential fold bit-for-bit.
pub fn associative_scan<T: Clone>(items: &mut [T], combine: impl Fn(&T, &T) -> T) {
    let n = items.len();
    if n <= 1 {
        return;
    }
    for chunk in items.chunks_mut(CHUNK) {
        for i in 1..chunk.len() {
            chunk[i] = combine(&chunk[i - 1], &chunk[i]);
        }
    }
    if n <= CHUNK {
        return;
    }
    let mut carry = items[CHUNK - 1].clone();
    let mut start = CHUNK;
    while start < n {
        let end = (start + CHUNK).min(n);
        let next_carry = combine(&carry, &items[end - 1]);
        for item in &mut items[start..end - 1] {
            *item = combine(&carry, item);
        }
        items[end - 1] = next_carry.clone();
        carry = next_carry;
        start = end;
    }
}

/// One step of the first-order linear recurrence `h_t = a_t h_{t-1} + b_t`,
/// as an associative element `(a, b)`.
pub fn linear_recurrence_combine(x: &(f64, f64), y: &(f64, f64)) -> (f64, f64) {
    (x.0 * y.0, y.0 * x.1 + y.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn integer_prefix_sums_match_sequential(xs in prop::collection::vec(-1000i32..1000, 0..400)) {
            let mut scanned: Vec<f64> = xs.iter().map(|&x| x as f64).collect();
            associative_scan(&mut scanned, |a, b| a + b);
            let mut acc = 0.0;
            for (x, s) in xs.iter().zip(&scanned) {
                acc += *x as f64;
                prop_assert_eq!(acc, *s);
            }
        }

        #[test]
        fn recurrence_matches_loop(pairs in prop::collection::vec((0.0f64..1.0, -1.0f64..1.0), 1..300)) {
            let mut items = pairs.clone();
            associative_scan(&mut items, linear_recurrence_combine);
            let mut h = 0.0;
            for ((a, b), (_, s)) in pairs.iter().zip(&items) {
                h = a * h + b;
                prop_assert!((h - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn string_concat_is_ordered() {
        let mut items: Vec<String> = (0..150).map(|i| (i % 10).to_string()).collect();
        associative_scan(&mut items, |a, b| format!("{a}{b}"));
        let expected: String = (0..150).map(|i| (i % 10).to_string()).collect();
        assert_eq!(items.last().unwrap(), &expected);
        assert_eq!(items[70], expected[..71]);
    }
}
