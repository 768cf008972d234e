//! Fixed-step classical Runge–Kutta integration on the probability simplex.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::SystemParams;

use super::drift::DriftModel;
use super::measure::{EmpiricalMeasure, HeterogeneousMeasure};
use super::stiff::{numeric_jacobian, Solver};

/// Default step in hours.
pub const DEFAULT_STEP: f64 = 0.005;
/// Smallest step tried before giving up with a stiffness error.
pub const MIN_STEP: f64 = 1e-6;
/// A step producing a simplex component below this is retried at half size.
pub const NEGATIVITY_TOLERANCE: f64 = 1e-9;
/// Mass drift that triggers renormalization.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-12;

/// A first-order system `x' = f(t, x)`. The leading components form
/// consecutive blocks of probability mass (lengths from `simplex_blocks`):
/// they are checked for negativity and each block is renormalized to its
/// initial total.
pub trait OdeSystem {
    fn dim(&self) -> usize;

    fn rhs(&self, t: f64, x: &[f64], out: &mut [f64]);

    fn simplex_blocks(&self) -> Vec<usize> {
        vec![self.dim()]
    }

    /// Hook run after every accepted step (symmetrization and the like).
    fn after_step(&self, _x: &mut [f64]) {}

    /// `∂f/∂x` at `(t, x)`. Forward differences unless overridden.
    fn jacobian(&self, t: f64, x: &[f64], jac: &mut DMatrix<f64>) {
        numeric_jacobian(self, t, x, jac);
    }

    /// Solver for `(I − c·∂f/∂x) k = b` at `(t, x)`, or `None` when that
    /// matrix is singular. A dense LU of [`OdeSystem::jacobian`] unless
    /// overridden.
    fn shifted_solver(&self, t: f64, x: &[f64], c: f64) -> Option<ShiftedSolve<'_>> {
        let n = self.dim();
        let mut jac = DMatrix::zeros(n, n);
        self.jacobian(t, x, &mut jac);
        let lu = (DMatrix::identity(n, n) - jac * c).lu();
        if !lu.is_invertible() {
            return None;
        }
        Some(Box::new(move |b| lu.solve(&DVector::from_column_slice(b)).map(|v| v.as_slice().to_vec())))
    }
}

pub type ShiftedSolve<'a> = Box<dyn Fn(&[f64]) -> Option<Vec<f64>> + 'a>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rk4 {
    pub step: f64,
    pub h_min: f64,
}

impl Default for Rk4 {
    fn default() -> Self {
        Rk4 {
            step: DEFAULT_STEP,
            h_min: MIN_STEP,
        }
    }
}

struct Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
    next: Vec<f64>,
}

impl Workspace {
    fn new(dim: usize) -> Self {
        Workspace {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
            next: vec![0.0; dim],
        }
    }
}

impl Rk4 {
    pub fn with_step(step: f64) -> Self {
        Rk4 {
            step,
            ..Rk4::default()
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.step.is_finite() && self.step > 0.0 && self.step <= 0.01) {
            return Err(Error::validation("step", format!("must lie in (0, 0.01], got {}", self.step)));
        }
        if !(self.h_min > 0.0 && self.h_min <= self.step) {
            return Err(Error::validation("h_min", "must lie in (0, step]"));
        }
        Ok(())
    }

    /// One RK4 step of size `h` from `(t, x)` into `ws.next`.
    fn raw_step<S: OdeSystem + ?Sized>(sys: &S, t: f64, h: f64, x: &[f64], ws: &mut Workspace) {
        let n = x.len();
        sys.rhs(t, x, &mut ws.k1);
        for i in 0..n {
            ws.tmp[i] = x[i] + 0.5 * h * ws.k1[i];
        }
        sys.rhs(t + 0.5 * h, &ws.tmp, &mut ws.k2);
        for i in 0..n {
            ws.tmp[i] = x[i] + 0.5 * h * ws.k2[i];
        }
        sys.rhs(t + 0.5 * h, &ws.tmp, &mut ws.k3);
        for i in 0..n {
            ws.tmp[i] = x[i] + h * ws.k3[i];
        }
        sys.rhs(t + h, &ws.tmp, &mut ws.k4);
        for i in 0..n {
            ws.next[i] = x[i] + h / 6.0 * (ws.k1[i] + 2.0 * ws.k2[i] + 2.0 * ws.k3[i] + ws.k4[i]);
        }
    }

    /// Advances `x` by `h`, splitting into halves while a simplex component
    /// would go negative.
    fn advance<S: OdeSystem + ?Sized>(
        &self,
        sys: &S,
        t: f64,
        h: f64,
        x: &mut [f64],
        blocks: &[(usize, usize, f64)],
        ws: &mut Workspace,
    ) -> Result<()> {
        let m = blocks.last().map_or(0, |b| b.1);
        Self::raw_step(sys, t, h, x, ws);
        if ws.next[..m].iter().any(|v| *v < -NEGATIVITY_TOLERANCE || !v.is_finite()) {
            let half = 0.5 * h;
            if half < self.h_min {
                return Err(Error::Stiffness { t, h_min: self.h_min });
            }
            self.advance(sys, t, half, x, blocks, ws)?;
            return self.advance(sys, t + half, half, x, blocks, ws);
        }
        x.copy_from_slice(&ws.next);
        for &(start, end, mass) in blocks {
            let total: f64 = x[start..end].iter().sum();
            if (total - mass).abs() > RENORMALIZE_TOLERANCE && total > 0.0 {
                let scale = mass / total;
                x[start..end].iter_mut().for_each(|v| *v *= scale);
            }
        }
        sys.after_step(x);
        Ok(())
    }

    /// Integrates from `x0` at `grid[0]` and calls `visit` at every grid
    /// instant, including the first. Between grid points the step is shrunk
    /// so that each interval is covered by a whole number of equal steps.
    pub fn solve<S: OdeSystem + ?Sized>(
        &self,
        sys: &S,
        x0: &[f64],
        grid: &[f64],
        mut visit: impl FnMut(f64, &[f64]),
    ) -> Result<()> {
        self.check()?;
        check_grid(grid)?;
        if x0.len() != sys.dim() {
            return Err(Error::domain(format!(
                "initial state has {} components, system has {}",
                x0.len(),
                sys.dim()
            )));
        }
        let blocks = mass_blocks(sys, x0);
        let mut x = x0.to_vec();
        let mut ws = Workspace::new(x.len());
        visit(grid[0], &x);
        for w in grid.windows(2) {
            let span = w[1] - w[0];
            let steps = ((span / self.step) - 1e-9).ceil().max(1.0) as usize;
            let h = span / steps as f64;
            for i in 0..steps {
                let t = w[0] + i as f64 * h;
                self.advance(sys, t, h, &mut x, &blocks, &mut ws)?;
            }
            visit(w[1], &x);
        }
        Ok(())
    }
}

/// `(start, end, initial mass)` of every simplex block.
pub(crate) fn mass_blocks<S: OdeSystem + ?Sized>(sys: &S, x0: &[f64]) -> Vec<(usize, usize, f64)> {
    let mut start = 0;
    sys.simplex_blocks()
        .into_iter()
        .map(|len| {
            let b = (start, start + len, x0[start..start + len].iter().sum());
            start += len;
            b
        })
        .collect()
}

pub(crate) fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::validation("t_grid", "is empty"));
    }
    if grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::validation("t_grid", "contains a non-finite time"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::validation("t_grid", "must be strictly increasing"));
    }
    Ok(())
}

/// `n + 1` equally spaced instants covering `[t0, t1]`.
pub fn uniform_grid(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    let n = n.max(1);
    (0..=n).map(|i| t0 + (t1 - t0) * i as f64 / n as f64).collect()
}

/// Grid with spacing `dt` from `t0`, ending exactly at `t1`.
pub fn stepped_grid(t0: f64, t1: f64, dt: f64) -> Vec<f64> {
    let n = (((t1 - t0) / dt) - 1e-9).ceil().max(1.0) as usize;
    let mut g: Vec<f64> = (0..n).map(|i| t0 + i as f64 * dt).collect();
    g.push(t1);
    g
}

/// Mean-field ODE for uniform capacities.
pub struct MeanFieldSystem<'a> {
    model: DriftModel<'a>,
    dim: usize,
}

impl<'a> MeanFieldSystem<'a> {
    pub fn new(params: &'a SystemParams) -> Result<Self> {
        let k = params
            .uniform_capacity()
            .ok_or_else(|| Error::domain("heterogeneous capacities: use the heterogeneous integrator"))?;
        Ok(MeanFieldSystem {
            model: DriftModel::new(params),
            dim: k as usize + 1,
        })
    }
}

impl OdeSystem for MeanFieldSystem<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.model.eval(t, x, out);
    }

    fn jacobian(&self, t: f64, x: &[f64], jac: &mut DMatrix<f64>) {
        self.model.jacobian_into(t, x, jac);
    }
}

/// Mean-field ODE over the flattened (count, capacity) table.
pub struct HeteroSystem<'a> {
    model: DriftModel<'a>,
    capacities: Vec<u32>,
    dim: usize,
}

impl<'a> HeteroSystem<'a> {
    pub fn new(params: &'a SystemParams) -> Self {
        let capacities = params.capacity.values().to_vec();
        let dim = capacities.iter().map(|k| *k as usize + 1).sum();
        HeteroSystem {
            model: DriftModel::new(params),
            capacities,
            dim,
        }
    }
}

impl OdeSystem for HeteroSystem<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.model.eval_hetero(t, &self.capacities, x, out);
    }

    fn simplex_blocks(&self) -> Vec<usize> {
        self.capacities.iter().map(|k| *k as usize + 1).collect()
    }

    fn jacobian(&self, t: f64, x: &[f64], jac: &mut DMatrix<f64>) {
        self.model.jacobian_hetero_into(t, &self.capacities, x, jac);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<EmpiricalMeasure>,
}

impl Trajectory {
    pub fn last(&self) -> &EmpiricalMeasure {
        self.states.last().expect("trajectory has at least one state")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<HeterogeneousMeasure>,
}

fn check_start(y0: &EmpiricalMeasure, params: &SystemParams) -> Result<()> {
    let k = params
        .uniform_capacity()
        .ok_or_else(|| Error::domain("heterogeneous capacities: use the heterogeneous integrator"))?;
    if y0.capacity() != k {
        return Err(Error::domain(format!(
            "initial measure has capacity {}, configuration has {k}",
            y0.capacity()
        )));
    }
    EmpiricalMeasure::new(y0.as_slice().to_vec()).map(|_| ())
}

/// Mean-field trajectory from `y0`, reported at the instants of `t_grid`.
/// Uses fixed-step RK4 and falls back to the stiff solver when explicit
/// steps cannot keep the measure non-negative.
pub fn integrate(y0: &EmpiricalMeasure, params: &SystemParams, t_grid: &[f64]) -> Result<Trajectory> {
    integrate_with(&Solver::default(), y0, params, t_grid)
}

pub fn integrate_with(
    solver: &Solver,
    y0: &EmpiricalMeasure,
    params: &SystemParams,
    t_grid: &[f64],
) -> Result<Trajectory> {
    check_start(y0, params)?;
    let sys = MeanFieldSystem::new(params)?;
    let mut out = Trajectory {
        times: Vec::with_capacity(t_grid.len()),
        states: Vec::with_capacity(t_grid.len()),
    };
    solver.solve(&sys, y0.as_slice(), t_grid, |t, x| {
        out.times.push(t);
        out.states.push(EmpiricalMeasure::new_unchecked(x.to_vec()));
    })?;
    Ok(out)
}

/// Mean-field trajectory of the joint (count, capacity) table.
pub fn integrate_hetero(
    y0: &HeterogeneousMeasure,
    params: &SystemParams,
    t_grid: &[f64],
) -> Result<HeteroTrajectory> {
    integrate_hetero_with(&Solver::default(), y0, params, t_grid)
}

pub fn integrate_hetero_with(
    solver: &Solver,
    y0: &HeterogeneousMeasure,
    params: &SystemParams,
    t_grid: &[f64],
) -> Result<HeteroTrajectory> {
    if y0.capacities() != params.capacity.values() {
        return Err(Error::domain("initial table classes differ from configured capacities"));
    }
    HeterogeneousMeasure::new(y0.capacities().to_vec(), y0.rows().to_vec())?;
    let sys = HeteroSystem::new(params);
    let mut out = HeteroTrajectory {
        times: Vec::with_capacity(t_grid.len()),
        states: Vec::with_capacity(t_grid.len()),
    };
    solver.solve(&sys, &y0.flatten(), t_grid, |t, x| {
        out.times.push(t);
        out.states.push(y0.with_values(x));
    })?;
    Ok(out)
}
