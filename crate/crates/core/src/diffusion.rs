//! Gaussian fluctuations around the mean-field path.
//!
//! `√N(Yᴺ − y)` converges to a linear SDE `dD = b′(y)D dt + dM` whose
//! martingale part has instantaneous covariance `A(y)`. Its covariance obeys
//! `Σ′ = JΣ + ΣJᵀ + A` with `J = b′(y)`, integrated here jointly with `y`.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use crate::error::{Error, Result};
use crate::meanfield::{
    ratio_bin, DriftModel, DriftScalars, EmpiricalMeasure, HeterogeneousMeasure, OdeSystem, ShiftedSolve, Solver,
    DENOMINATOR_FLOOR,
};
use crate::model::SystemParams;

fn uniform_k(y: &EmpiricalMeasure, params: &SystemParams) -> Result<u32> {
    let k = params
        .uniform_capacity()
        .ok_or_else(|| Error::domain("heterogeneous capacities: use the heterogeneous variant"))?;
    if y.capacity() != k {
        return Err(Error::domain(format!(
            "measure has capacity {}, configuration {k}",
            y.capacity()
        )));
    }
    Ok(k)
}

/// `b′(y)`: entry `(k, i)` is `∂bₖ/∂yᵢ`.
pub fn jacobian(y: &EmpiricalMeasure, params: &SystemParams, t: f64) -> Result<DMatrix<f64>> {
    uniform_k(y, params)?;
    let model = DriftModel::new(params);
    let sc = model.scalars(t, y.as_slice());
    if params.p > 0.0 && sc.s < DENOMINATOR_FLOOR {
        return Err(Error::domain(
            "choice denominator vanishes: the Jacobian needs a state with some weighted mass",
        ));
    }
    let dim = y.as_slice().len();
    let mut jac = DMatrix::zeros(dim, dim);
    model.jacobian_into(t, y.as_slice(), &mut jac);
    Ok(jac)
}

/// Adds the tridiagonal bracket block of one capacity class at `offset`.
fn add_bracket_block(sc: &DriftScalars, weights: &[f64], y: &[f64], offset: usize, out: &mut DMatrix<f64>) {
    let k = y.len() - 1;
    for n in 0..k {
        // transitions between n and n + 1: a return moves a station up,
        // a pickup from an (n + 1)-bike station moves it down
        let rate = sc.lambda * sc.phi(weights[n + 1]) * y[n + 1] + sc.a * y[n];
        let (i, j) = (offset + n, offset + n + 1);
        out[(i, i)] += rate;
        out[(j, j)] += rate;
        out[(i, j)] -= rate;
        out[(j, i)] -= rate;
    }
}

/// Doob–Meyer covariance rate `A(y)`: tridiagonal, symmetric, rows summing
/// to zero. Each neighbouring pair `(n, n+1)` contributes the total rate of
/// jumps between them.
pub fn bracket_matrix(y: &EmpiricalMeasure, params: &SystemParams, t: f64) -> Result<DMatrix<f64>> {
    uniform_k(y, params)?;
    let model = DriftModel::new(params);
    let sc = model.scalars(t, y.as_slice());
    let dim = y.as_slice().len();
    let mut out = DMatrix::zeros(dim, dim);
    add_bracket_block(&sc, model.weights(), y.as_slice(), 0, &mut out);
    Ok(out)
}

/// Bracket of the flattened (count, capacity) table: block diagonal, since a
/// jump changes a single station.
pub fn bracket_matrix_hetero(table: &HeterogeneousMeasure, params: &SystemParams, t: f64) -> Result<DMatrix<f64>> {
    let flat = table.flatten();
    let mut out = DMatrix::zeros(flat.len(), flat.len());
    bracket_into_hetero(&DriftModel::new(params), t, table.capacities(), &flat, &mut out);
    Ok(out)
}

fn bracket_into_hetero(model: &DriftModel, t: f64, capacities: &[u32], flat: &[f64], out: &mut DMatrix<f64>) {
    let weights = model.weights();
    let (mut s, mut mean, mut off) = (0.0, 0.0, 0);
    for &k in capacities {
        for n in 0..=k as usize {
            s += weights[n] * flat[off + n];
            mean += n as f64 * flat[off + n];
        }
        off += k as usize + 1;
    }
    let sc = model.scalars_from(t, s, mean);
    out.fill(0.0);
    let mut off = 0;
    for &k in capacities {
        let len = k as usize + 1;
        add_bracket_block(&sc, weights, &flat[off..off + len], off, out);
        off += len;
    }
}

/// Right-hand side of the covariance equation.
pub fn lyapunov_rhs(j: &DMatrix<f64>, sigma: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    let js = j * sigma;
    &js + js.transpose() + a
}

/// Fluctuation covariance at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceState {
    pub t: f64,
    pub sigma: DMatrix<f64>,
}

impl CovarianceState {
    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.sigma)
    }

    pub fn asymmetry(&self) -> f64 {
        (&self.sigma - self.sigma.transpose()).abs().max()
    }

    /// `‖Σ·1‖_∞`.
    pub fn null_defect(&self) -> f64 {
        self.sigma.column_sum().abs().max()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.sigma.diagonal().as_slice().to_vec()
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Whether the martingale noise `A` enters the covariance equation. Turning
/// it off gives a deliberately wrong covariance used as a negative control.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    Bracket,
    Zero,
}

/// Joint system for `(y, Σ)` over a flattened state of `d + d²` entries.
struct CovarianceSystem<'a> {
    model: DriftModel<'a>,
    capacities: Vec<u32>,
    d: usize,
    noise: Noise,
}

impl OdeSystem for CovarianceSystem<'_> {
    fn dim(&self) -> usize {
        self.d + self.d * self.d
    }

    fn simplex_blocks(&self) -> Vec<usize> {
        self.capacities.iter().map(|k| *k as usize + 1).collect()
    }

    fn rhs(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.d;
        let (y, sig) = x.split_at(d);
        let (dy, dsig) = out.split_at_mut(d);
        self.model.eval_hetero(t, &self.capacities, y, dy);
        let mut j = DMatrix::zeros(d, d);
        self.model.jacobian_hetero_into(t, &self.capacities, y, &mut j);
        let mut a = DMatrix::zeros(d, d);
        if self.noise == Noise::Bracket {
            bracket_into_hetero(&self.model, t, &self.capacities, y, &mut a);
        }
        let sigma = DMatrix::from_column_slice(d, d, sig);
        let rhs = lyapunov_rhs(&j, &sigma, &a);
        dsig.copy_from_slice(rhs.as_slice());
    }

    /// Mean columns by forward differences (the mean enters `J` and `A`);
    /// covariance columns exactly, since `Σ ↦ JΣ + ΣJᵀ` is linear.
    fn jacobian(&self, t: f64, x: &[f64], jac: &mut DMatrix<f64>) {
        let d = self.d;
        let n = self.dim();
        jac.fill(0.0);
        let mut f0 = vec![0.0; n];
        let mut f1 = vec![0.0; n];
        let mut xp = x.to_vec();
        self.rhs(t, x, &mut f0);
        for c in 0..d {
            let dx = 1e-8 * x[c].abs().max(1e-4);
            xp[c] = x[c] + dx;
            self.rhs(t, &xp, &mut f1);
            for r in 0..n {
                jac[(r, c)] = (f1[r] - f0[r]) / dx;
            }
            xp[c] = x[c];
        }
        let mut j = DMatrix::zeros(d, d);
        self.model.jacobian_hetero_into(t, &self.capacities, &x[..d], &mut j);
        // ∂(JΣ + (JΣ)ᵀ)_{ab}/∂Σ_{kl} = J_{ak}δ_{bl} + J_{bk}δ_{al}
        for l in 0..d {
            for k in 0..d {
                let col = d + k + d * l;
                for a in 0..d {
                    jac[(d + a + d * l, col)] += j[(a, k)];
                }
                for b in 0..d {
                    jac[(d + l + d * b, col)] += j[(b, k)];
                }
            }
        }
    }

    /// The joint matrix is block lower triangular. The mean block is a d×d
    /// LU; the covariance block `V ↦ V − c(JV + VJᵀ)` is a Lyapunov equation
    /// solved through a complex Schur form of `I/2 − cJ`, so a step costs
    /// O(d³) rather than O(d⁶). Right-hand sides are taken as symmetric.
    fn shifted_solver(&self, t: f64, x: &[f64], c: f64) -> Option<ShiftedSolve<'_>> {
        let d = self.d;
        let mut j = DMatrix::zeros(d, d);
        self.model.jacobian_hetero_into(t, &self.capacities, &x[..d], &mut j);
        let top = (DMatrix::identity(d, d) - &j * c).lu();
        if !top.is_invertible() {
            return None;
        }
        let m = (DMatrix::identity(d, d) * 0.5 - &j * c).map(|v| Complex::new(v, 0.0));
        let (q, tri) = m.schur().unpack();
        let diag = tri.diagonal();
        let scale = diag.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for a in diag.iter() {
            for b in diag.iter() {
                if (a + b).norm() <= 1e-13 * scale {
                    return None;
                }
            }
        }
        let x = x.to_vec();
        let mut base = vec![0.0; self.dim()];
        self.rhs(t, &x, &mut base);
        Some(Box::new(move |b: &[f64]| {
            let u = top.solve(&DVector::from_column_slice(&b[..d]))?;
            // coupling of the covariance rows to the mean, along u
            let norm = u.norm();
            let mut rhs = DMatrix::from_column_slice(d, d, &b[d..]);
            if norm > 0.0 {
                let eps = 1e-7 / norm;
                let mut xp = x.clone();
                for i in 0..d {
                    xp[i] += eps * u[i];
                }
                let mut fp = vec![0.0; x.len()];
                self.rhs(t, &xp, &mut fp);
                for i in 0..d * d {
                    rhs[i] += c * (fp[d + i] - base[d + i]) / eps;
                }
            }
            let rhs = (&rhs + rhs.transpose()) * 0.5;
            let f = q.adjoint() * rhs.map(|v| Complex::new(v, 0.0)) * q.map(|z| z.conj());
            // T W + W Tᵀ = F, one column at a time from the right
            let mut w = DMatrix::<Complex<f64>>::zeros(d, d);
            for col in (0..d).rev() {
                let mut r: Vec<Complex<f64>> = (0..d).map(|i| f[(i, col)]).collect();
                for k in col + 1..d {
                    let tk = tri[(col, k)];
                    for i in 0..d {
                        r[i] -= tk * w[(i, k)];
                    }
                }
                let shift = tri[(col, col)];
                for i in (0..d).rev() {
                    let mut acc = r[i];
                    for k in i + 1..d {
                        acc -= tri[(i, k)] * w[(k, col)];
                    }
                    w[(i, col)] = acc / (tri[(i, i)] + shift);
                }
            }
            let v = &q * w * q.transpose();
            let mut out = u.as_slice().to_vec();
            out.extend(v.iter().map(|z| z.re));
            Some(out)
        }))
    }

    fn after_step(&self, x: &mut [f64]) {
        let d = self.d;
        let sig = &mut x[d..];
        for i in 0..d {
            for k in 0..i {
                let m = 0.5 * (sig[i + d * k] + sig[k + d * i]);
                sig[i + d * k] = m;
                sig[k + d * i] = m;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceTrajectory {
    pub times: Vec<f64>,
    pub means: Vec<EmpiricalMeasure>,
    pub covariances: Vec<CovarianceState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroCovarianceTrajectory {
    pub times: Vec<f64>,
    pub means: Vec<HeterogeneousMeasure>,
    /// Joint covariance over the flattened table.
    pub covariances: Vec<CovarianceState>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceOptions {
    pub solver: Solver,
    pub noise: Noise,
}

impl Default for CovarianceOptions {
    fn default() -> Self {
        CovarianceOptions {
            solver: Solver::default(),
            noise: Noise::Bracket,
        }
    }
}

fn check_sigma0(sigma0: &DMatrix<f64>, d: usize) -> Result<()> {
    if sigma0.nrows() != d || sigma0.ncols() != d {
        return Err(Error::domain(format!("initial covariance must be {d}×{d}")));
    }
    if (sigma0 - sigma0.transpose()).abs().max() > 1e-10 {
        return Err(Error::domain("initial covariance is not symmetric"));
    }
    if min_eigenvalue(sigma0) < -1e-8 {
        return Err(Error::domain("initial covariance is not positive semidefinite"));
    }
    Ok(())
}

fn run(
    sys: &CovarianceSystem,
    y0: &[f64],
    sigma0: &DMatrix<f64>,
    grid: &[f64],
    solver: &Solver,
    mut visit: impl FnMut(f64, &[f64], DMatrix<f64>),
) -> Result<()> {
    let d = sys.d;
    let mut x0 = y0.to_vec();
    x0.extend_from_slice(sigma0.as_slice());
    solver.solve(sys, &x0, grid, |t, x| {
        visit(t, &x[..d], DMatrix::from_column_slice(d, d, &x[d..]));
    })
}

/// Co-integrates `y` and `Σ` from `(y0, Σ0)` over `t_grid`.
pub fn integrate_covariance(
    y0: &EmpiricalMeasure,
    sigma0: &DMatrix<f64>,
    params: &SystemParams,
    t_grid: &[f64],
) -> Result<CovarianceTrajectory> {
    integrate_covariance_with(&CovarianceOptions::default(), y0, sigma0, params, t_grid)
}

pub fn integrate_covariance_with(
    options: &CovarianceOptions,
    y0: &EmpiricalMeasure,
    sigma0: &DMatrix<f64>,
    params: &SystemParams,
    t_grid: &[f64],
) -> Result<CovarianceTrajectory> {
    let k = uniform_k(y0, params)?;
    EmpiricalMeasure::new(y0.as_slice().to_vec())?;
    let d = k as usize + 1;
    check_sigma0(sigma0, d)?;
    let sys = CovarianceSystem {
        model: DriftModel::new(params),
        capacities: vec![k],
        d,
        noise: options.noise,
    };
    let mut out = CovarianceTrajectory {
        times: vec![],
        means: vec![],
        covariances: vec![],
    };
    run(&sys, y0.as_slice(), sigma0, t_grid, &options.solver, |t, y, sigma| {
        out.times.push(t);
        out.means.push(EmpiricalMeasure::new_unchecked(y.to_vec()));
        out.covariances.push(CovarianceState { t, sigma });
    })?;
    Ok(out)
}

/// Joint covariance of the flattened (count, capacity) fluctuations.
pub fn integrate_covariance_hetero(
    y0: &HeterogeneousMeasure,
    sigma0: &DMatrix<f64>,
    params: &SystemParams,
    t_grid: &[f64],
) -> Result<HeteroCovarianceTrajectory> {
    if y0.capacities() != params.capacity.values() {
        return Err(Error::domain("initial table classes differ from configured capacities"));
    }
    let flat = y0.flatten();
    let d = flat.len();
    check_sigma0(sigma0, d)?;
    let sys = CovarianceSystem {
        model: DriftModel::new(params),
        capacities: y0.capacities().to_vec(),
        d,
        noise: Noise::Bracket,
    };
    let mut out = HeteroCovarianceTrajectory {
        times: vec![],
        means: vec![],
        covariances: vec![],
    };
    run(&sys, &flat, sigma0, t_grid, &Solver::default(), |t, y, sigma| {
        out.times.push(t);
        out.means.push(y0.with_values(y));
        out.covariances.push(CovarianceState { t, sigma });
    })?;
    Ok(out)
}

/// Matrix sending class-`k` counts to ratio bins, `(K_max + 1) × (k + 1)`.
fn bin_map(k: u32, k_max: u32) -> Result<DMatrix<f64>> {
    let mut p = DMatrix::zeros(k_max as usize + 1, k as usize + 1);
    for n in 0..=k {
        p[(ratio_bin(n, k, k_max)?, n as usize)] = 1.0;
    }
    Ok(p)
}

/// Covariance of the ratio fluctuations `Z(j) = Σₖ D_k(n*(j, k))` from
/// independent per-class covariances `Σₖ`. Bins that no count of class `k`
/// reaches get nothing from that class.
pub fn ratio_covariance(per_class: &[(u32, DMatrix<f64>)], k_max: u32) -> Result<DMatrix<f64>> {
    let dim = k_max as usize + 1;
    let mut out = DMatrix::zeros(dim, dim);
    for (k, sigma) in per_class {
        let d = *k as usize + 1;
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(Error::domain(format!("covariance of class {k} must be {d}×{d}")));
        }
        let p = bin_map(*k, k_max)?;
        out += &p * sigma * p.transpose();
    }
    Ok(out)
}

/// Ratio covariance from the joint covariance of the flattened table,
/// keeping cross-class terms.
pub fn ratio_covariance_joint(capacities: &[u32], sigma: &DMatrix<f64>, k_max: u32) -> Result<DMatrix<f64>> {
    let d: usize = capacities.iter().map(|k| *k as usize + 1).sum();
    if sigma.nrows() != d || sigma.ncols() != d {
        return Err(Error::domain(format!("joint covariance must be {d}×{d}")));
    }
    let mut p = DMatrix::zeros(k_max as usize + 1, d);
    let mut off = 0;
    for &k in capacities {
        for n in 0..=k {
            p[(ratio_bin(n, k, k_max)?, off + n as usize)] = 1.0;
        }
        off += k as usize + 1;
    }
    Ok(&p * sigma * p.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::solve_equilibrium;
    use crate::meanfield::{drift, uniform_grid, Rk4};
    use crate::model::{ArrivalModel, CapacitySpec, ChoiceSpec, RawConfig};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn params(k: u32, gamma: f64, lambda: f64, p: f64, choice: ChoiceSpec) -> SystemParams {
        RawConfig {
            n_stations: 100,
            fleet: None,
            gamma: Some(gamma),
            capacity: CapacitySpec::Uniform(k),
            mu: 1.0,
            p,
            arrival: ArrivalModel::Constant(lambda),
            choice,
        }
        .validate()
        .unwrap()
    }

    #[test]
    fn jacobian_by_hand() {
        let pr = params(1, 0.5, 1.0, 0.0, ChoiceSpec::none());
        let j = jacobian(&EmpiricalMeasure::new(vec![0.5, 0.5]).unwrap(), &pr, 0.0).unwrap();
        assert_abs_diff_eq!(j, DMatrix::from_row_slice(2, 2, &[0.0, 1.5, 0.0, -1.5]), epsilon = 1e-15);
    }

    #[test]
    fn joint_jacobian_matches_differences() {
        let pr = params(4, 2.0, 1.2, 0.6, ChoiceSpec::exponential(0.7));
        let sys = CovarianceSystem {
            model: DriftModel::new(&pr),
            capacities: vec![4],
            d: 5,
            noise: Noise::Bracket,
        };
        let mut x = vec![0.1, 0.3, 0.2, 0.25, 0.15];
        x.extend((0..25).map(|i| ((i * 7) % 11) as f64 * 0.01));
        let mut exact = DMatrix::zeros(30, 30);
        let mut numeric = DMatrix::zeros(30, 30);
        sys.jacobian(0.0, &x, &mut exact);
        crate::meanfield::numeric_jacobian(&sys, 0.0, &x, &mut numeric);
        assert!((exact - numeric).abs().max() < 1e-3);
    }

    #[test]
    fn structured_shifted_solve_matches_dense() {
        let pr = params(4, 2.0, 1.2, 0.6, ChoiceSpec::exponential(0.7));
        let sys = CovarianceSystem {
            model: DriftModel::new(&pr),
            capacities: vec![4],
            d: 5,
            noise: Noise::Bracket,
        };
        let mut x = vec![0.1, 0.3, 0.2, 0.25, 0.15];
        let s = DMatrix::from_fn(5, 5, |i, j| 0.01 * ((i * 3 + j * 3 + i * j) % 7) as f64);
        x.extend(s.iter());
        let mut b: Vec<f64> = (0..5).map(|i| 0.1 * i as f64 - 0.2).collect();
        let bs = DMatrix::from_fn(5, 5, |i, j| ((i + 1) * (j + 1)) as f64 * 0.05);
        b.extend(bs.iter());
        let c = 0.3;
        let fast = sys.shifted_solver(0.0, &x, c).unwrap()(&b).unwrap();
        let mut jac = DMatrix::zeros(30, 30);
        sys.jacobian(0.0, &x, &mut jac);
        let dense = (DMatrix::identity(30, 30) - jac * c).lu().solve(&DVector::from_vec(b)).unwrap();
        let gap = fast.iter().zip(dense.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap < 1e-5, "{gap}");
    }

    #[test]
    fn jacobian_needs_weighted_mass() {
        let pr = params(3, 1.0, 1.0, 0.5, ChoiceSpec::minimum(2));
        assert!(jacobian(&EmpiricalMeasure::mass_at(3, 0).unwrap(), &pr, 0.0).is_err());
    }

    #[test]
    fn bracket_at_two_state_equilibrium() {
        let pr = params(1, 0.5, 1.0, 0.0, ChoiceSpec::none());
        let eq = solve_equilibrium(&pr).unwrap();
        let a = bracket_matrix(&eq.y_bar, &pr, 0.0).unwrap();
        let v = 2.0 * eq.y_bar[1];
        assert_abs_diff_eq!(a[(0, 0)], v, epsilon = 1e-12);
        assert_abs_diff_eq!(a[(0, 1)], -v, epsilon = 1e-12);
        assert_abs_diff_eq!(a[(0, 0)], 0.438_447_2, epsilon = 1e-7);
    }

    #[test]
    fn bracket_support_at_a_point_mass() {
        let pr = params(6, 3.0, 1.0, 0.3, ChoiceSpec::exponential(1.0));
        let a = bracket_matrix(&EmpiricalMeasure::mass_at(6, 2).unwrap(), &pr, 0.0).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                if !(1..=3).contains(&i) || !(1..=3).contains(&j) {
                    assert_eq!(a[(i, j)], 0.0, "({i},{j})");
                }
            }
        }
        assert_eq!(a[(1, 3)], 0.0);
        assert!(a[(2, 2)] > 0.0);
    }

    /// `σ′ = −2βσ + s²` has `σ(t) = s²/(2β)(1 − e^{−2βt})`.
    #[test]
    fn scalar_surrogate() {
        struct Scalar;
        impl OdeSystem for Scalar {
            fn dim(&self) -> usize {
                1
            }
            fn simplex_blocks(&self) -> Vec<usize> {
                vec![]
            }
            fn rhs(&self, _t: f64, x: &[f64], out: &mut [f64]) {
                let j = DMatrix::from_element(1, 1, -0.7);
                let a = DMatrix::from_element(1, 1, 0.3);
                out[0] = lyapunov_rhs(&j, &DMatrix::from_element(1, 1, x[0]), &a)[(0, 0)];
            }
        }
        let mut end = 0.0;
        Rk4::default().solve(&Scalar, &[0.0], &[0.0, 4.0], |_, x| end = x[0]).unwrap();
        let exact = 0.3 / 1.4 * (1.0 - (-1.4f64 * 4.0).exp());
        assert!((end - exact).abs() < 1e-8);
    }

    #[test]
    fn no_noise_keeps_zero_covariance() {
        let pr = params(3, 1.5, 1.0, 0.5, ChoiceSpec::exponential(1.0));
        let opts = CovarianceOptions {
            noise: Noise::Zero,
            ..Default::default()
        };
        let tr = integrate_covariance_with(&opts, &EmpiricalMeasure::uniform(3), &DMatrix::zeros(4, 4), &pr, &[0.0, 5.0])
            .unwrap();
        assert_eq!(tr.covariances[1].sigma.abs().max(), 0.0);
    }

    #[test]
    fn covariance_is_symmetric_psd_and_null_on_ones() {
        let pr = params(10, 5.0, 1.0, 0.5, ChoiceSpec::exponential(1.0));
        let tr = integrate_covariance(&EmpiricalMeasure::mass_at(10, 5).unwrap(), &DMatrix::zeros(11, 11), &pr, &uniform_grid(0.0, 30.0, 60))
            .unwrap();
        for c in &tr.covariances {
            assert!(c.asymmetry() <= 1e-10);
            assert!(c.min_eigenvalue() >= -1e-8);
            assert!(c.null_defect() <= 1e-8);
        }
        // the mean path is the mean-field trajectory
        let y = tr.means.last().unwrap();
        assert!(drift(y, &pr, 0.0).unwrap().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn ratio_covariance_single_class_is_identity() {
        let s = DMatrix::from_fn(5, 5, |i, j| 1.0 / (1.0 + i as f64 + j as f64));
        let r = ratio_covariance(&[(4, s.clone())], 4).unwrap();
        assert_eq!(r, s);
    }

    #[test]
    fn ratio_covariance_two_classes_by_hand() {
        let s2 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let s4 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![10.0, 20.0, 30.0, 40.0, 50.0]));
        let r = ratio_covariance(&[(2, s2), (4, s4)], 4).unwrap();
        // class 2 lands on bins 0, 2, 4
        assert_eq!(r.diagonal().as_slice(), &[11.0, 20.0, 32.0, 40.0, 53.0]);
        let joint = DMatrix::from_fn(8, 8, |i, j| if i == j { [1.0, 2.0, 3.0, 10.0, 20.0, 30.0, 40.0, 50.0][i] } else { 0.0 });
        assert_eq!(ratio_covariance_joint(&[2, 4], &joint, 4).unwrap(), r);
    }

    fn interior(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.01..1.0f64, len).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn jacobian_columns_and_bracket_rows_sum_to_zero(
            y in interior(9),
            p in 0.0..=1.0f64,
            theta in 0.0..2.0f64,
        ) {
            // γ = K keeps every state physical (return intensity ≥ 0)
            let pr = params(8, 8.0, 1.0, p, ChoiceSpec::exponential(theta));
            let y = EmpiricalMeasure::new_unchecked(y);
            let j = jacobian(&y, &pr, 0.0).unwrap();
            prop_assert!(j.row_sum().abs().max() <= 1e-12 * (1.0 + j.abs().max()));
            let a = bracket_matrix(&y, &pr, 0.0).unwrap();
            prop_assert!(a.column_sum().abs().max() <= 1e-14);
            prop_assert!(min_eigenvalue(&a) >= -1e-12);
        }
    }
}
