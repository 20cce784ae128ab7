use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bermudan exercise grid `t_i = i * T / n`, `i = 1..=n`, with `substeps`
/// simulation steps inside every exercise interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub maturity: f64,
    pub n_exercise: usize,
    #[serde(default = "one")]
    pub substeps: usize,
}

fn one() -> usize {
    1
}

impl TimeGrid {
    pub fn new(maturity: f64, n_exercise: usize, substeps: usize) -> Result<Self> {
        let grid = TimeGrid {
            maturity,
            n_exercise,
            substeps,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return Err(Error::config(format!(
                "grid.maturity must be positive, got {}",
                self.maturity
            )));
        }
        if self.n_exercise == 0 {
            return Err(Error::config("grid.n_exercise must be at least 1"));
        }
        if self.substeps == 0 {
            return Err(Error::config("grid.substeps must be at least 1"));
        }
        Ok(())
    }

    /// Same exercise dates with a different number of substeps.
    pub fn with_substeps(&self, substeps: usize) -> Self {
        TimeGrid { substeps, ..*self }
    }

    pub fn total_steps(&self) -> usize {
        self.n_exercise * self.substeps
    }

    /// Exercise interval `T / n`.
    pub fn exercise_dt(&self) -> f64 {
        self.maturity / self.n_exercise as f64
    }

    /// Simulation step `T / (n m)`.
    pub fn step_size(&self) -> f64 {
        self.maturity / self.total_steps() as f64
    }

    /// Time of simulation step `k`, computed by multiplication so that no
    /// rounding accumulates along the grid.
    pub fn step_time(&self, k: usize) -> f64 {
        if k == self.total_steps() {
            self.maturity
        } else {
            k as f64 * self.step_size()
        }
    }

    /// Time of exercise date `i` (`i = 0` is the valuation date).
    pub fn exercise_time(&self, i: usize) -> f64 {
        if i == self.n_exercise {
            self.maturity
        } else {
            i as f64 * self.exercise_dt()
        }
    }

    /// Simulation step index of exercise date `i`.
    pub fn exercise_step(&self, i: usize) -> usize {
        i * self.substeps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid() {
        assert!(TimeGrid::new(0.0, 10, 1).is_err());
        assert!(TimeGrid::new(1.0, 0, 1).is_err());
        assert!(TimeGrid::new(1.0, 10, 0).is_err());
    }

    #[test]
    fn step_times_do_not_drift() {
        let g = TimeGrid::new(1.0, 50, 3).unwrap();
        assert_eq!(g.total_steps(), 150);
        assert_eq!(g.step_size(), 1.0 / 150.0);
        assert_eq!(g.step_time(150), 1.0);
        assert_eq!(g.step_time(75), 75.0 * (1.0 / 150.0));
        assert_eq!(g.exercise_step(10), 30);
        assert_eq!(g.exercise_time(50), 1.0);
    }
}
