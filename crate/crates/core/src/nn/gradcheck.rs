//! Central finite-difference checks of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub rel_tol: f64,
    /// Magnitude below which errors are measured absolutely.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            rel_tol: 1e-3,
            floor: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: usize,
    /// Entries where the one-sided differences disagree: the function is not
    /// differentiable there (a ReLU or max switching inside the step).
    pub kinks: usize,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }

    pub fn merge(&mut self, other: &GradCheckReport) {
        self.checked += other.checked;
        self.failures += other.failures;
        self.kinks += other.kinks;
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
    }
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences, for every entry of every input.
pub fn check_gradients<F>(inputs: &[Tensor], cfg: &GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let f0 = tape.value(out).item();
    let grads = tape.backward(out);

    let eval = |which: usize, entry: usize, delta: f64| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut t = t.clone();
                if i == which {
                    t.data_mut()[entry] += delta;
                }
                tape.leaf(t, false)
            })
            .collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut report = GradCheckReport::default();
    let h = cfg.step;
    for (i, (t, v)) in inputs.iter().zip(&vars).enumerate() {
        let analytic = grads.get(*v);
        for e in 0..t.len() {
            let a = analytic.map_or(0.0, |g| g[e]);
            let plus = eval(i, e, h)?;
            let minus = eval(i, e, -h)?;
            let numeric = (plus - minus) / (2.0 * h);
            let scale = a.abs().max(numeric.abs()).max(cfg.floor);
            let forward = (plus - f0) / h;
            let backward = (f0 - minus) / h;
            // Smooth functions have one-sided slopes that differ by O(h).
            if (forward - backward).abs() > 0.1 * scale.max(1.0) {
                report.kinks += 1;
                continue;
            }
            let err = (a - numeric).abs() / scale;
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(err);
            if err > cfg.rel_tol {
                report.failures += 1;
            }
        }
    }
    Ok(report)
}
