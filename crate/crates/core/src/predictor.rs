//! Common interface for anything that maps a feature vector to class probabilities.
//!
//! Both the black-box autoencoder-classifier and the surrogate forests implement
//! this, so perturbation analysis, attribution, and rule scoring can treat them
//! uniformly.

/// A classifier over some fixed input dimension.
pub trait Predictor {
    /// Number of input features this model consumes.
    fn input_dim(&self) -> usize;

    /// Number of classes.
    fn num_classes(&self) -> usize;

    /// Class probability vector for one instance; length equals `num_classes()`.
    fn predict_probs(&self, x: &[f64]) -> Vec<f64>;

    /// Predicted label: argmax of the probabilities, lowest index on ties.
    fn predict_label(&self, x: &[f64]) -> usize {
        argmax(&self.predict_probs(x))
    }
}

/// Index of the maximum value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Gap between the two largest entries of a probability vector.
pub fn top_two_gap(probs: &[f64]) -> f64 {
    let mut top = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &p in probs {
        if p > top {
            second = top;
            top = p;
        } else if p > second {
            second = p;
        }
    }
    if second.is_finite() {
        top - second
    } else {
        top
    }
}

/// Wrapper that counts forward passes; used to verify complexity contracts.
pub struct CountingPredictor<'a, P: Predictor> {
    inner: &'a P,
    calls: std::cell::Cell<usize>,
}

impl<'a, P: Predictor> CountingPredictor<'a, P> {
    pub fn new(inner: &'a P) -> Self {
        Self {
            inner,
            calls: std::cell::Cell::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}

impl<P: Predictor> Predictor for CountingPredictor<'_, P> {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn predict_probs(&self, x: &[f64]) -> Vec<f64> {
        self.calls.set(self.calls.get() + 1);
        self.inner.predict_probs(x)
    }
}
