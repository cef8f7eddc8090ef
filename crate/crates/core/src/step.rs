use serde::{Deserialize, Serialize};

/// Right-continuous piecewise-constant function.
///
/// `values[k]` holds on `[knots[k], knots[k+1])`; before the first knot the
/// function equals `initial`, beyond the last knot it keeps the last value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    knots: Vec<f64>,
    values: Vec<f64>,
    initial: f64,
}

impl StepFunction {
    /// Panics if `knots` is not strictly increasing or lengths differ.
    pub fn new(knots: Vec<f64>, values: Vec<f64>, initial: f64) -> Self {
        assert_eq!(
            knots.len(),
            values.len(),
            "knots and values differ in length"
        );
        assert!(
            knots.windows(2).all(|w| w[0] < w[1]),
            "knots must be strictly increasing"
        );
        Self {
            knots,
            values,
            initial,
        }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }

    /// Number of knots `<= t`.
    pub fn rank(&self, t: f64) -> usize {
        self.knots.partition_point(|&k| k <= t)
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self.rank(t) {
            0 => self.initial,
            k => self.values[k - 1],
        }
    }

    /// Exact integral over `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut total = 0.0;
        let mut left = a;
        let mut k = self.rank(a);
        while k < self.knots.len() && self.knots[k] < b {
            total += self.eval(left) * (self.knots[k] - left);
            left = self.knots[k];
            k += 1;
        }
        total + self.eval(left) * (b - left)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluation_is_right_continuous() {
        let f = StepFunction::new(vec![1.0, 2.0], vec![10.0, 20.0], 0.0);
        assert_eq!(f.eval(0.5), 0.0);
        assert_eq!(f.eval(1.0), 10.0);
        assert_eq!(f.eval(1.999), 10.0);
        assert_eq!(f.eval(2.0), 20.0);
        assert_eq!(f.eval(100.0), 20.0);
    }

    #[test]
    fn integral_over_partial_steps() {
        let f = StepFunction::new(vec![1.0, 2.0], vec![10.0, 20.0], 1.0);
        assert_eq!(f.integrate(0.0, 3.0), 1.0 + 10.0 + 20.0);
        assert_eq!(f.integrate(1.5, 2.5), 5.0 + 10.0);
        assert_eq!(f.integrate(2.0, 2.0), 0.0);
    }
}
