/// Central finite difference of a scalar function along one coordinate.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// `|a − b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Summary of an analytic-vs-numeric gradient comparison.
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    /// Entries compared (those above the magnitude floor).
    pub checked: usize,
    /// Entries whose relative error met the tolerance.
    pub passed: usize,
    pub max_rel_error: f64,
    /// Entries left out because the function is not smooth inside the
    /// difference stencil (a ReLU or max switches there).
    pub nonsmooth: usize,
}

impl GradCheckReport {
    /// Records one comparison. Entries where both gradients fall under
    /// `floor` are skipped.
    pub fn record(&mut self, analytic: f64, numeric: f64, floor: f64, tol: f64) {
        if analytic.abs() <= floor && numeric.abs() <= floor {
            return;
        }
        let e = relative_error(analytic, numeric);
        self.checked += 1;
        if e < tol {
            self.passed += 1;
        }
        self.max_rel_error = self.max_rel_error.max(e);
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        self.checked += other.checked;
        self.passed += other.passed;
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.nonsmooth += other.nonsmooth;
    }

    pub fn pass_fraction(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.passed as f64 / self.checked as f64
        }
    }
}
