//! Regression losses.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Loss {
    Mse,
    /// Quadratic within `delta`, linear outside ("smooth L1" at `delta = 1`).
    Huber { delta: f64 },
}

impl Loss {
    pub fn huber() -> Self {
        Loss::Huber { delta: 1.0 }
    }

    /// Loss and derivative at residual `r = prediction − target`.
    #[inline]
    pub fn value_grad(&self, r: f64) -> (f64, f64) {
        match *self {
            Loss::Mse => (r * r, 2.0 * r),
            Loss::Huber { delta } => {
                if r.abs() <= delta {
                    (0.5 * r * r, r)
                } else {
                    (delta * (r.abs() - 0.5 * delta), delta * r.signum())
                }
            }
        }
    }

    pub fn value(&self, r: f64) -> f64 {
        self.value_grad(r).0
    }
}
