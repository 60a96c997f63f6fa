//! Age of information reconstructed from an event log.

use std::collections::HashMap;

use super::{EventKind, FlEvent};
use crate::market::Matrix;

/// Time-average AoI of every (MU, MSP) pair over `[0, horizon]` (M x N).
///
/// The age is `t - g`, where `g` is the training start of the freshest
/// model received so far; before the first reception the age is
/// `initial_age + t`. The piecewise-linear curve is integrated exactly.
pub fn aoi_timeline(
    events: &[FlEvent],
    num_mus: usize,
    num_msps: usize,
    horizon: f64,
    initial_age: f64,
) -> Matrix {
    let mut starts = HashMap::new();
    let mut receptions: Vec<Vec<Vec<(f64, f64)>>> = vec![vec![Vec::new(); num_msps]; num_mus];
    for e in events {
        if let (EventKind::TrainStart, Some(m)) = (e.kind, e.mu) {
            starts.insert((m, e.msp, e.round), e.time);
        }
    }
    for e in events {
        if let (EventKind::ModelReceived, Some(m)) = (e.kind, e.mu) {
            let generated = starts.get(&(m, e.msp, e.round)).copied().unwrap_or(e.time);
            receptions[m][e.msp].push((e.time, generated));
        }
    }
    Matrix::from_fn(num_mus, num_msps, |m, n| {
        let mut list = receptions[m][n].clone();
        list.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut generated = -initial_age;
        let mut t = 0.0;
        let mut area = 0.0;
        // Integral of (s - g) over [a, b].
        let segment = |a: f64, b: f64, g: f64| 0.5 * ((b - g).powi(2) - (a - g).powi(2));
        for (received, g) in list {
            if received >= horizon {
                break;
            }
            area += segment(t, received, generated);
            t = received;
            // A stale model arriving late never makes the age grow.
            generated = generated.max(g);
        }
        area += segment(t, horizon, generated);
        area / horizon
    })
}
