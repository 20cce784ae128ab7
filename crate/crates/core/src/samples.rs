//! Assembly of network inputs and Brownian increments from simulated paths.

use std::ops::Range;

use ndarray::Array2;

use crate::market::{PathBatch, TimeGrid};

/// Time feature of a simulation step: `t / T`.
pub fn time_feature(grid: &TimeGrid, step: usize) -> f64 {
    grid.step_time(step) / grid.maturity
}

/// Network input width for a state of dimension `d_state`.
pub fn input_width(d_state: usize, time_input: bool) -> usize {
    d_state + usize::from(time_input)
}

fn fill_row(row: &mut [f64], state: &[f64], time: Option<f64>) {
    match time {
        Some(t) => {
            row[0] = t;
            row[1..].copy_from_slice(state);
        }
        None => row.copy_from_slice(state),
    }
}

/// Inputs at one simulation step for the given paths, `[len x d_in]`.
pub fn step_inputs(
    paths: &PathBatch,
    grid: &TimeGrid,
    step: usize,
    time_input: bool,
    range: Range<usize>,
) -> Array2<f64> {
    let d_in = input_width(paths.d_state, time_input);
    let t = time_input.then(|| time_feature(grid, step));
    let mut out = Array2::zeros((range.len(), d_in));
    for (o, p) in range.enumerate() {
        let row = out.row_mut(o).into_slice().expect("standard layout");
        fill_row(row, paths.state(p, step), t);
    }
    out
}

/// Sample-major inputs and increments of exercise interval `i`: rows
/// `o*m .. (o+1)*m` belong to path `range.start + o`.
pub fn interval_rows(
    paths: &PathBatch,
    grid: &TimeGrid,
    i: usize,
    time_input: bool,
    range: Range<usize>,
) -> (Array2<f64>, Array2<f64>) {
    let m = grid.substeps;
    let d_in = input_width(paths.d_state, time_input);
    let mut inputs = Array2::zeros((range.len() * m, d_in));
    let mut dw = Array2::zeros((range.len() * m, paths.d_w));
    for (o, p) in range.enumerate() {
        for k in 0..m {
            let step = i * m + k;
            let r = o * m + k;
            let t = time_input.then(|| time_feature(grid, step));
            fill_row(inputs.row_mut(r).into_slice().expect("standard layout"), paths.state(p, step), t);
            dw.row_mut(r)
                .into_slice()
                .expect("standard layout")
                .copy_from_slice(paths.increment(p, step));
        }
    }
    (inputs, dw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{simulate, GbmSpec, Model};

    #[test]
    fn interval_rows_layout() {
        let grid = TimeGrid::new(1.0, 4, 3).unwrap();
        let paths = simulate(&Model::Gbm(GbmSpec::single(36.0, 0.06, 0.2)), &grid, 5, 1).unwrap();
        let (x, w) = interval_rows(&paths, &grid, 2, true, 1..4);
        assert_eq!(x.dim(), (9, 2));
        assert_eq!(x[[4, 1]], paths.state(2, 7)[0]);
        assert!((x[[4, 0]] - 7.0 / 12.0).abs() < 1e-15);
        assert_eq!(w[[8, 0]], paths.increment(3, 8)[0]);
        let s = step_inputs(&paths, &grid, 6, false, 0..5);
        assert_eq!(s[[3, 0]], paths.state(3, 6)[0]);
    }
}
