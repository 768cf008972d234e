//! Mean-field trajectories under a time-varying arrival rate, emitted frame
//! by frame.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::diffusion::integrate_covariance;
use crate::equilibrium::entropy;
use crate::error::{Error, Result};
use crate::meanfield::{integrate, EmpiricalMeasure};
use crate::model::SystemParams;

use super::output::{format_real, write_table};

#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    pub times: Vec<f64>,
    pub states: Vec<EmpiricalMeasure>,
    pub entropy: Vec<f64>,
    /// Variances `Σ(t)ₙₙ` of the scaled fluctuations, when requested.
    pub variances: Option<Vec<Vec<f64>>>,
}

impl Frames {
    /// Columns `t, y0..yK, entropy` and, with covariance, `var0..varK`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.states.first().map_or(0, |s| s.as_slice().len());
        let mut header = vec!["t".to_string()];
        header.extend((0..d).map(|n| format!("y{n}")));
        header.push("entropy".into());
        if self.variances.is_some() {
            header.extend((0..d).map(|n| format!("var{n}")));
        }
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows = (0..self.times.len()).map(|i| {
            let mut row = vec![format_real(self.times[i])];
            row.extend(self.states[i].as_slice().iter().map(|v| format_real(*v)));
            row.push(format_real(self.entropy[i]));
            if let Some(v) = &self.variances {
                row.extend(v[i].iter().map(|x| format_real(*x)));
            }
            row
        });
        write_table(out, &header, rows)
    }
}

/// Mean-field path from `y0` on `t_grid` with its entropy, optionally with
/// the covariance of the fluctuations started from `Σ = 0`.
pub fn nonstationary_run(
    params: &SystemParams,
    y0: &EmpiricalMeasure,
    t_grid: &[f64],
    with_covariance: bool,
) -> Result<Frames> {
    let (times, states, variances) = if with_covariance {
        let d = y0.as_slice().len();
        let traj = integrate_covariance(y0, &DMatrix::zeros(d, d), params, t_grid)?;
        let vars = traj.covariances.iter().map(|c| c.diagonal()).collect();
        (traj.times, traj.means, Some(vars))
    } else {
        let traj = integrate(y0, params, t_grid)?;
        (traj.times, traj.states, None)
    };
    let entropy = states.iter().map(|s| entropy(s.as_slice())).collect();
    Ok(Frames {
        times,
        states,
        entropy,
        variances,
    })
}

/// `max − min` of coordinate `n` over the frames at or after `from`.
pub fn oscillation_amplitude(frames: &Frames, n: usize, from: f64) -> f64 {
    let (lo, hi) = frames
        .times
        .iter()
        .zip(&frames.states)
        .filter(|(t, _)| **t >= from)
        .map(|(_, s)| s.as_slice()[n])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi >= lo {
        hi - lo
    } else {
        0.0
    }
}

/// Long-run amplitude of coordinate `n` for each informed fraction in `ps`.
pub fn amplitude_by_p(
    params: &SystemParams,
    ps: &[f64],
    y0: &EmpiricalMeasure,
    t_grid: &[f64],
    n: usize,
    from: f64,
) -> Result<Vec<(f64, f64)>> {
    ps.par_iter()
        .map(|&p| {
            let frames = nonstationary_run(&params.with_p(p)?, y0, t_grid, false)?;
            Ok((p, oscillation_amplitude(&frames, n, from)))
        })
        .collect()
}

/// Largest change of any coordinate between the last period of the frames
/// and the one before it. Every frame time in the last period must have a
/// frame exactly one period earlier.
pub fn periodicity_defect(frames: &Frames, period: f64) -> Result<f64> {
    let end = *frames.times.last().ok_or_else(|| Error::domain("no frames"))?;
    if frames.times[0] > end - 2.0 * period + 1e-9 {
        return Err(Error::domain("frames cover less than two periods"));
    }
    let mut worst = 0.0f64;
    for (i, &t) in frames.times.iter().enumerate().filter(|(_, t)| **t >= end - period) {
        let target = t - period;
        let tol = 1e-9 * t.abs().max(1.0);
        let j = frames
            .times
            .iter()
            .position(|s| (s - target).abs() <= tol)
            .ok_or_else(|| Error::domain(format!("no frame one period before t = {t}")))?;
        let a = frames.states[i].as_slice();
        let b = frames.states[j].as_slice();
        worst = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(worst, f64::max);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{small_config, toy_arrival};
    use crate::meanfield::uniform_grid;

    #[test]
    fn constant_rate_settles() {
        let p = small_config(100);
        let grid = uniform_grid(0.0, 60.0, 601);
        let f = nonstationary_run(&p, &EmpiricalMeasure::new(vec![0.0, 0.5, 0.5, 0.0]).unwrap(), &grid, false).unwrap();
        assert!(oscillation_amplitude(&f, 0, 40.0) < 1e-6);
        assert_eq!(f.entropy.len(), grid.len());
    }

    #[test]
    fn toy_rate_keeps_oscillating() {
        let p = small_config(100).with_arrival(toy_arrival()).unwrap();
        let period = 4.0 * std::f64::consts::PI;
        let grid = uniform_grid(0.0, 10.0 * period, 1000);
        let y0 = EmpiricalMeasure::uniform(3);
        let f = nonstationary_run(&p, &y0, &grid, true).unwrap();
        assert!(oscillation_amplitude(&f, 0, 8.0 * period) > 1e-3);
        assert!(periodicity_defect(&f, period).unwrap() < 1e-4);
        let vars = f.variances.as_ref().unwrap();
        assert!(vars.iter().flatten().all(|v| *v >= -1e-12));
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,y0,y1,y2,y3,entropy,var0,var1,var2,var3\n"));
        assert_eq!(text.lines().count(), 1002);
    }

    #[test]
    fn amplitude_per_p_in_input_order() {
        let p = small_config(100).with_arrival(toy_arrival()).unwrap();
        let period = 4.0 * std::f64::consts::PI;
        let grid = uniform_grid(0.0, 6.0 * period, 601);
        let amp = amplitude_by_p(&p, &[0.0, 0.5, 1.0], &EmpiricalMeasure::uniform(3), &grid, 0, 4.0 * period).unwrap();
        assert_eq!(amp.iter().map(|a| a.0).collect::<Vec<_>>(), [0.0, 0.5, 1.0]);
        assert!(amp.iter().all(|a| a.1 > 0.0));
    }

    #[test]
    fn short_frames_have_no_defect() {
        let p = small_config(10);
        let grid = uniform_grid(0.0, 1.0, 11);
        let f = nonstationary_run(&p, &EmpiricalMeasure::uniform(3), &grid, false).unwrap();
        assert!(periodicity_defect(&f, 1.0).is_err());
    }
}
