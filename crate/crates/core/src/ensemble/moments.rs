//! Order-independent streaming moments.
//!
//! Sums are carried exactly as a list of non-overlapping partials
//! (Shewchuk's expansion, as in Python's `math.fsum`) and only rounded when a
//! mean or standard deviation is read. Pushing values in any order, or
//! merging partial accumulators in any grouping, therefore yields
//! bit-identical statistics.

/// Exact running sum of finite `f64` values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        debug_assert!(value.is_finite());
        let mut x = value;
        let mut kept = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        self.partials.truncate(kept);
        self.partials.push(x);
    }

    pub fn merge(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.add(p);
        }
    }

    pub fn partials(&self) -> &[f64] {
        &self.partials
    }

    /// The exact sum rounded to nearest (ties to even).
    pub fn value(&self) -> f64 {
        let p = &self.partials;
        let mut n = p.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        // half-way case: the remaining partials decide the rounding direction
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            let yr = x - hi;
            if y == yr {
                hi = x;
            }
        }
        hi
    }
}

/// `a·b` as an exact unevaluated sum `hi + lo`.
fn two_product(a: f64, b: f64) -> (f64, f64) {
    let hi = a * b;
    (hi, a.mul_add(b, -hi))
}

/// Count, exact `Σx` and exact `Σx²` of a stream of values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Moments {
    count: u64,
    sum: ExactSum,
    sum_sq: ExactSum,
}

impl Moments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum.add(x);
        let (hi, lo) = two_product(x, x);
        self.sum_sq.add(hi);
        self.sum_sq.add(lo);
    }

    pub fn merge(&mut self, other: &Moments) {
        self.count += other.count;
        self.sum.merge(&other.sum);
        self.sum_sq.merge(&other.sum_sq);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        self.sum.value() / self.count as f64
    }

    /// Sample variance (`n − 1` denominator); zero for fewer than two values.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        // n·Σx² − (Σx)², accumulated exactly
        let mut numerator = ExactSum::new();
        for &q in self.sum_sq.partials() {
            let (hi, lo) = two_product(q, n);
            numerator.add(hi);
            numerator.add(lo);
        }
        let s = self.sum.partials();
        for &a in s {
            for &b in s {
                let (hi, lo) = two_product(a, b);
                numerator.add(-hi);
                numerator.add(-lo);
            }
        }
        (numerator.value() / (n * (n - 1.0))).max(0.0)
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_where_naive_summation_loses_bits() {
        let mut s = ExactSum::new();
        for v in [1e16, 1.0, -1e16, 1.0] {
            s.add(v);
        }
        assert_eq!(s.value(), 2.0);
        let mut t = ExactSum::new();
        for _ in 0..10 {
            t.add(0.1);
        }
        assert_eq!(t.value(), 1.0);
    }

    #[test]
    fn constant_stream_has_zero_spread() {
        let mut m = Moments::new();
        for _ in 0..1000 {
            m.push(100.0);
        }
        assert_eq!(m.mean(), 100.0);
        assert_eq!(m.variance(), 0.0);
        let mut single = Moments::new();
        single.push(3.5);
        assert_eq!(single.std_dev(), 0.0);
        assert_eq!(Moments::new().mean(), 0.0);
    }

    #[test]
    fn small_sample_by_hand() {
        let mut m = Moments::new();
        for v in [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0] {
            m.push(v);
        }
        assert_eq!(m.mean(), 5.0);
        assert!((m.variance() - 32.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn large_offset_does_not_cancel() {
        let mut m = Moments::new();
        for v in [1e9 + 4.0, 1e9 + 7.0, 1e9 + 13.0, 1e9 + 16.0] {
            m.push(v);
        }
        assert_eq!(m.variance(), 30.0);
    }

    proptest! {
        #[test]
        fn grouping_and_order_are_bit_identical(
            values in proptest::collection::vec(-1e3..1e3f64, 1..200),
            cut1 in 0usize..200,
            cut2 in 0usize..200,
        ) {
            let mut whole = Moments::new();
            values.iter().for_each(|&v| whole.push(v));

            let (a, b) = (cut1.min(values.len()), cut2.min(values.len()));
            let (lo, hi) = (a.min(b), a.max(b));
            let mut parts = [Moments::new(), Moments::new(), Moments::new()];
            for (i, &v) in values.iter().enumerate() {
                let g = if i < lo { 0 } else if i < hi { 1 } else { 2 };
                parts[g].push(v);
            }
            // ((p2 + p0) + p1), a different order and grouping
            let mut merged = parts[2].clone();
            merged.merge(&parts[0]);
            merged.merge(&parts[1]);

            let mut reversed = Moments::new();
            values.iter().rev().for_each(|&v| reversed.push(v));

            for other in [&merged, &reversed] {
                prop_assert_eq!(whole.mean().to_bits(), other.mean().to_bits());
                prop_assert_eq!(whole.std_dev().to_bits(), other.std_dev().to_bits());
            }
        }

        #[test]
        fn agrees_with_two_pass(values in proptest::collection::vec(-1e3..1e3f64, 2..100)) {
            let mut m = Moments::new();
            values.iter().for_each(|&v| m.push(v));
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            prop_assert!((m.mean() - mean).abs() <= 1e-10);
            prop_assert!((m.variance() - var).abs() <= 1e-9 * (1.0 + var));
        }
    }
}
