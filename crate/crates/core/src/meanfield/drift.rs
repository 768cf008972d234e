//! The mean-field vector field.
//!
//! With `φ(n) = (1 − p) + p·g(n)/Σⱼ g(j)yⱼ` and `a = μ(γ − Σⱼ j·yⱼ)` the
//! drift moves mass `λφ(n)yₙ` from `n` to `n − 1` (pickups, `n > 0`) and
//! `a·yₙ` from `n` to `n + 1` (returns, `n < K`). Every term is applied as a
//! flux between neighbouring cells so the components sum to zero by
//! construction.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::SystemParams;

use super::measure::{EmpiricalMeasure, HeterogeneousMeasure};

/// Choice denominators below this are treated as zero; informed riders then
/// find no bikes and leave.
pub const DENOMINATOR_FLOOR: f64 = 1e-300;

/// Scalars of the drift that depend on the whole measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftScalars {
    pub lambda: f64,
    /// Return intensity per station, `μ(γ − mean)`.
    pub a: f64,
    /// Choice denominator `Σ g(j)·yⱼ`.
    pub s: f64,
    /// `p/s`, or 0 when `s` is below [`DENOMINATOR_FLOOR`].
    pub informed: f64,
    pub p: f64,
}

impl DriftScalars {
    /// Pickup intensity multiplier `φ(n)` for a station with weight `g`.
    #[inline]
    pub fn phi(&self, g: f64) -> f64 {
        (1.0 - self.p) + self.informed * g
    }
}

/// Borrowed view of the parameters the drift needs.
#[derive(Debug, Clone, Copy)]
pub struct DriftModel<'a> {
    params: &'a SystemParams,
    weights: &'a [f64],
}

impl<'a> DriftModel<'a> {
    pub fn new(params: &'a SystemParams) -> Self {
        DriftModel {
            params,
            weights: params.weights().as_slice(),
        }
    }

    pub fn params(&self) -> &'a SystemParams {
        self.params
    }

    pub fn weights(&self) -> &'a [f64] {
        self.weights
    }

    /// Scalars from the choice sum `s` and the mean bike count.
    pub fn scalars_from(&self, t: f64, s: f64, mean: f64) -> DriftScalars {
        let p = self.params.p;
        DriftScalars {
            lambda: self.params.lambda(t),
            a: self.params.mu * (self.params.gamma - mean),
            s,
            informed: if s < DENOMINATOR_FLOOR { 0.0 } else { p / s },
            p,
        }
    }

    pub fn scalars(&self, t: f64, y: &[f64]) -> DriftScalars {
        let (s, mean) = y.iter().enumerate().fold((0.0, 0.0), |(s, m), (n, &v)| {
            (s + self.weights[n] * v, m + n as f64 * v)
        });
        self.scalars_from(t, s, mean)
    }

    /// Adds the birth-death fluxes of one capacity class to `out`.
    #[inline]
    fn accumulate(&self, sc: &DriftScalars, y: &[f64], out: &mut [f64]) {
        let k = y.len() - 1;
        for n in 0..=k {
            let yn = y[n];
            if n > 0 {
                let down = sc.lambda * sc.phi(self.weights[n]) * yn;
                out[n] -= down;
                out[n - 1] += down;
            }
            if n < k {
                let up = sc.a * yn;
                out[n] -= up;
                out[n + 1] += up;
            }
        }
    }

    /// `b(y)` written into `out` (same length as `y`).
    pub fn eval(&self, t: f64, y: &[f64], out: &mut [f64]) {
        let sc = self.scalars(t, y);
        out.iter_mut().for_each(|v| *v = 0.0);
        self.accumulate(&sc, y, out);
    }

    /// Drift of a flattened heterogeneous table whose rows have lengths
    /// `capacities[c] + 1`. The choice denominator and the return intensity
    /// are global across classes.
    pub fn eval_hetero(&self, t: f64, capacities: &[u32], flat: &[f64], out: &mut [f64]) {
        let mut s = 0.0;
        let mut mean = 0.0;
        let mut offset = 0;
        for &k in capacities {
            for n in 0..=k as usize {
                let v = flat[offset + n];
                s += self.weights[n] * v;
                mean += n as f64 * v;
            }
            offset += k as usize + 1;
        }
        let sc = self.scalars_from(t, s, mean);
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut offset = 0;
        for &k in capacities {
            let len = k as usize + 1;
            self.accumulate(&sc, &flat[offset..offset + len], &mut out[offset..offset + len]);
            offset += len;
        }
    }

    /// Jacobian `∂b/∂y` of the flattened heterogeneous drift, written into
    /// `jac` (square, side `flat.len()`). A single class gives the uniform
    /// Jacobian. Each flux `F = rate·yₙ` contributes its gradient with a minus
    /// sign to its source row and a plus sign to its target row, so columns
    /// sum to zero.
    pub fn jacobian_hetero_into(&self, t: f64, capacities: &[u32], flat: &[f64], jac: &mut DMatrix<f64>) {
        let dim = flat.len();
        // (count, offset) of every flat index
        let mut count = Vec::with_capacity(dim);
        let mut offset = 0;
        for &k in capacities {
            count.extend(0..=k as usize);
            offset += k as usize + 1;
        }
        debug_assert_eq!(offset, dim);
        let (s, mean) = flat.iter().zip(&count).fold((0.0, 0.0), |(s, m), (&v, &n)| {
            (s + self.weights[n] * v, m + n as f64 * v)
        });
        let sc = self.scalars_from(t, s, mean);
        let mu = self.params.mu;
        // ∂(p/s)/∂yᵢ = −p·g(i)/s²
        let dinformed = if sc.informed == 0.0 { 0.0 } else { -sc.informed / s };
        jac.fill(0.0);
        let mut grad = vec![0.0; dim];
        let mut base = 0;
        for &k in capacities {
            let k = k as usize;
            for n in 0..=k {
                let row = base + n;
                let yn = flat[row];
                if n > 0 {
                    let gn = self.weights[n];
                    for (i, gi) in grad.iter_mut().enumerate() {
                        *gi = sc.lambda * yn * gn * dinformed * self.weights[count[i]];
                    }
                    grad[row] += sc.lambda * sc.phi(gn);
                    for i in 0..dim {
                        jac[(row, i)] -= grad[i];
                        jac[(row - 1, i)] += grad[i];
                    }
                }
                if n < k {
                    for (i, gi) in grad.iter_mut().enumerate() {
                        *gi = -mu * count[i] as f64 * yn;
                    }
                    grad[row] += sc.a;
                    for i in 0..dim {
                        jac[(row, i)] -= grad[i];
                        jac[(row + 1, i)] += grad[i];
                    }
                }
            }
            base += k + 1;
        }
    }

    /// Jacobian of the uniform-capacity drift.
    pub fn jacobian_into(&self, t: f64, y: &[f64], jac: &mut DMatrix<f64>) {
        let k = (y.len() - 1) as u32;
        self.jacobian_hetero_into(t, &[k], y, jac);
    }
}

fn check_uniform_len(params: &SystemParams, len: usize) -> Result<()> {
    match params.uniform_capacity() {
        Some(k) if k as usize + 1 == len => Ok(()),
        Some(k) => Err(Error::domain(format!(
            "measure has {len} entries but capacity is {k}"
        ))),
        None => Err(Error::domain(
            "heterogeneous capacities: use the heterogeneous drift",
        )),
    }
}

/// Mean-field drift `b(y)` at time `t`.
pub fn drift(y: &EmpiricalMeasure, params: &SystemParams, t: f64) -> Result<Vec<f64>> {
    check_uniform_len(params, y.as_slice().len())?;
    let mut out = vec![0.0; y.as_slice().len()];
    DriftModel::new(params).eval(t, y.as_slice(), &mut out);
    Ok(out)
}

/// Drift of the joint (count, capacity) table. Capacity classes must match
/// the parameters' capacity set.
pub fn drift_hetero(table: &HeterogeneousMeasure, params: &SystemParams, t: f64) -> Result<HeterogeneousMeasure> {
    if table.capacities() != params.capacity.values() {
        return Err(Error::domain(format!(
            "table classes {:?} differ from configured capacities {:?}",
            table.capacities(),
            params.capacity.values()
        )));
    }
    let flat = table.flatten();
    let mut out = vec![0.0; flat.len()];
    DriftModel::new(params).eval_hetero(t, table.capacities(), &flat, &mut out);
    Ok(table.with_values(&out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArrivalModel, CapacitySpec, ChoiceSpec, RawConfig};
    use proptest::prelude::*;

    pub(crate) fn params(k: u32, gamma: f64, lambda: f64, p: f64, choice: ChoiceSpec) -> SystemParams {
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
    fn hand_evaluated_two_state() {
        let pr = params(1, 0.5, 1.0, 0.0, ChoiceSpec::none());
        let b = drift(&EmpiricalMeasure::new(vec![0.5, 0.5]).unwrap(), &pr, 0.0).unwrap();
        assert_eq!(b, vec![0.5, -0.5]);
    }

    #[test]
    fn conserves_mass_on_uniform_k2() {
        let pr = params(2, 1.0, 1.3, 0.4, ChoiceSpec::exponential(1.0));
        let b = drift(&EmpiricalMeasure::uniform(2), &pr, 0.0).unwrap();
        assert!(b.iter().sum::<f64>().abs() <= 1e-12);
    }

    #[test]
    fn flat_choice_with_full_information_matches_no_information() {
        let y = EmpiricalMeasure::new(vec![0.1, 0.2, 0.3, 0.15, 0.25]).unwrap();
        let informed = params(4, 2.0, 1.0, 1.0, ChoiceSpec::exponential(0.0));
        let blind = params(4, 2.0, 1.0, 0.0, ChoiceSpec::exponential(0.0));
        let a = drift(&y, &informed, 0.0).unwrap();
        let b = drift(&y, &blind, 0.0).unwrap();
        for (x, z) in a.iter().zip(&b) {
            assert!((x - z).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_denominator_drops_informed_term() {
        // g(0) = 0 and every station empty: only returns act
        let pr = params(3, 1.0, 1.0, 0.7, ChoiceSpec::minimum(2));
        let b = drift(&EmpiricalMeasure::mass_at(3, 0).unwrap(), &pr, 0.0).unwrap();
        assert_eq!(b, vec![-1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn wrong_length_rejected() {
        let pr = params(3, 1.0, 1.0, 0.0, ChoiceSpec::none());
        assert!(drift(&EmpiricalMeasure::uniform(4), &pr, 0.0).is_err());
    }

    #[test]
    fn hetero_single_class_equals_uniform_drift() {
        let pr = params(5, 2.0, 1.2, 0.6, ChoiceSpec::polynomial(1.5));
        let y = EmpiricalMeasure::new(vec![0.05, 0.1, 0.2, 0.3, 0.25, 0.1]).unwrap();
        let a = drift(&y, &pr, 0.0).unwrap();
        let b = drift_hetero(&HeterogeneousMeasure::from_uniform(&y), &pr, 0.0).unwrap();
        assert_eq!(b.row(0), a.as_slice());
    }

    /// Capacities {2, 4} with equal weight, p = 0, λ = 1, γ = 1.5, uniform
    /// rows (1/6 per cell of class 2, 1/10 per cell of class 4). The mean is
    /// 3·1/6 + 10·1/10 = 1.5, so returns vanish and only pickups move mass:
    /// class 2 → (1/6, 0, −1/6), class 4 → (1/10, 0, 0, 0, −1/10).
    #[test]
    fn hetero_hand_evaluation() {
        let pr = params(4, 1.5, 1.0, 0.0, ChoiceSpec::none())
            .modified(|raw| {
                raw.capacity = CapacitySpec::Distribution {
                    values: vec![2, 4],
                    fractions: vec![0.5, 0.5],
                }
            })
            .unwrap();
        let table = HeterogeneousMeasure::uniform(&pr.capacity);
        let b = drift_hetero(&table, &pr, 0.0).unwrap();
        let expect = [vec![1.0 / 6.0, 0.0, -1.0 / 6.0], vec![0.1, 0.0, 0.0, 0.0, -0.1]];
        for (row, want) in b.rows().iter().zip(&expect) {
            for (x, w) in row.iter().zip(want) {
                assert!((x - w).abs() < 1e-15, "{row:?}");
            }
        }
    }

    fn simplex(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.001..1.0f64, len).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn hetero_classes_are_closed(
            flat in simplex(11 + 21),
            p in 0.0..=1.0f64,
            theta in 0.0..2.0f64,
        ) {
            let pr = params(20, 8.0, 1.0, p, ChoiceSpec::exponential(theta))
                .modified(|raw| raw.capacity = CapacitySpec::Distribution {
                    values: vec![10, 20], fractions: vec![0.5, 0.5] })
                .unwrap();
            let shape = HeterogeneousMeasure::uniform(&pr.capacity);
            let b = drift_hetero(&shape.with_values(&flat), &pr, 0.0).unwrap();
            prop_assert!(b.total().abs() <= 1e-12);
            for m in b.class_masses() {
                prop_assert!(m.abs() <= 1e-12);
            }
        }
    }

    fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    /// `2[λ(1−p) + λp(C_max + ‖g‖₂)/C_min + μ·max(γ, K−γ) + μ‖(0..K)‖₂]`,
    /// which also covers the dependence of the return flux on the mean.
    fn lipschitz_bound(pr: &SystemParams, lambda: f64) -> f64 {
        let g = pr.weights().as_slice();
        let c_min = g.iter().cloned().fold(f64::INFINITY, f64::min);
        let c_max = g.iter().cloned().fold(0.0, f64::max);
        let g_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let k = pr.k_max() as f64;
        let index_norm = (0..=pr.k_max()).map(|n| (n * n) as f64).sum::<f64>().sqrt();
        2.0 * (lambda * (1.0 - pr.p)
            + lambda * pr.p * (c_max + g_norm) / c_min
            + pr.mu * pr.gamma.max(k - pr.gamma)
            + pr.mu * index_norm)
    }

    #[test]
    fn return_flux_breaks_the_mean_free_constant() {
        // δ₀ against 1% of the mass moved to K: the return rate moves by μKε
        let (k, gamma, lambda) = (20, 0.5, 0.1);
        let pr = params(k, gamma, lambda, 0.0, ChoiceSpec::none());
        let mut y = vec![0.0; 21];
        y[0] = 1.0;
        let mut z = y.clone();
        z[0] = 0.99;
        z[20] = 0.01;
        let by = drift(&EmpiricalMeasure::new(y.clone()).unwrap(), &pr, 0.0).unwrap();
        let bz = drift(&EmpiricalMeasure::new(z.clone()).unwrap(), &pr, 0.0).unwrap();
        let ratio = l2_distance(&by, &bz) / l2_distance(&y, &z);
        let mean_free = 2.0 * (lambda + gamma);
        assert!(ratio > 15.0 * mean_free, "ratio {ratio}");
        assert!(ratio <= lipschitz_bound(&pr, lambda));
    }

    proptest! {
        #[test]
        fn drift_is_lipschitz(
            k in 1u32..=20,
            gamma_frac in 0.01..0.99f64,
            lambda in 0.0..3.0f64,
            p in 0.0..=1.0f64,
            theta in prop_oneof![Just(None), (0.0..1.0f64).prop_map(Some)],
            seed_y in simplex(21),
            seed_z in simplex(21),
        ) {
            let choice = theta.map_or_else(ChoiceSpec::none, ChoiceSpec::exponential);
            let pr = params(k, gamma_frac * k as f64, lambda, p, choice);
            let cut = |v: &[f64]| {
                let head = &v[..=k as usize];
                let s: f64 = head.iter().sum();
                head.iter().map(|x| x / s).collect::<Vec<f64>>()
            };
            let (y, z) = (cut(&seed_y), cut(&seed_z));
            let by = drift(&EmpiricalMeasure::new(y.clone()).unwrap(), &pr, 0.0).unwrap();
            let bz = drift(&EmpiricalMeasure::new(z.clone()).unwrap(), &pr, 0.0).unwrap();
            let dy = l2_distance(&y, &z);
            prop_assume!(dy > 1e-9);
            prop_assert!(l2_distance(&by, &bz) <= lipschitz_bound(&pr, lambda) * dy * (1.0 + 1e-9));
        }
    }
}
