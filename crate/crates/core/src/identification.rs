//! Data-driven identification: DMD, sparse regression over a library
//! (sequential thresholded least squares) and iterative refinement of the
//! observable set toward a closed Koopman-invariant subspace.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dynamics::{PolySystem, TimeKind, Trajectory};
use crate::error::{Error, Result};
use crate::lifting::{advance, KoopmanModel, Observable, ObservableLibrary};
use crate::numerics::{lstsq, pinv, Mat, DEFAULT_RCOND};
use crate::par::{self, Execution};
use crate::poly::{Monomial, Polynomial};

pub const DEFAULT_THRESHOLD: f64 = 0.025;
pub const DEFAULT_MAX_ITER: usize = 10;

/// Paired snapshot matrices: `y` holds shifted snapshots (discrete) or
/// derivative estimates (continuous) for the states in `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub x: Mat,
    pub y: Mat,
    pub dt: f64,
    pub time_kind: TimeKind,
}

impl DataSet {
    pub fn new(x: Mat, y: Mat, dt: f64, time_kind: TimeKind) -> Result<Self> {
        if x.shape() != y.shape() {
            return Err(Error::DimensionMismatch(format!(
                "X is {:?}, Y is {:?}",
                x.shape(),
                y.shape()
            )));
        }
        Ok(Self { x, y, dt, time_kind })
    }

    pub fn samples(&self) -> usize {
        self.x.ncols()
    }

    pub fn dim(&self) -> usize {
        self.x.nrows()
    }

    /// `X = [x_0 … x_{M-2}]`, `Y = [x_1 … x_{M-1}]` from one trajectory of a map.
    pub fn from_shifts(traj: &Trajectory) -> Result<Self> {
        if traj.len() < 2 {
            return Err(Error::InsufficientData("need at least two snapshots".into()));
        }
        let all = traj.state_matrix();
        let m = traj.len() - 1;
        let dt = traj.uniform_step().unwrap_or(1.0);
        Self::new(
            all.columns(0, m).into_owned(),
            all.columns(1, m).into_owned(),
            dt,
            TimeKind::Discrete,
        )
    }

    /// Stacks data sets column-wise; all must share dimension and semantics.
    pub fn concat(sets: &[DataSet]) -> Result<Self> {
        let first = sets
            .first()
            .ok_or_else(|| Error::InsufficientData("no data sets".into()))?;
        if sets
            .iter()
            .any(|s| s.dim() != first.dim() || s.time_kind != first.time_kind)
        {
            return Err(Error::DimensionMismatch("incompatible data sets".into()));
        }
        let total: usize = sets.iter().map(DataSet::samples).sum();
        let mut x = Mat::zeros(first.dim(), total);
        let mut y = Mat::zeros(first.dim(), total);
        let mut off = 0;
        for s in sets {
            x.columns_mut(off, s.samples()).copy_from(&s.x);
            y.columns_mut(off, s.samples()).copy_from(&s.y);
            off += s.samples();
        }
        Self::new(x, y, first.dt, first.time_kind)
    }
}

/// Least-squares linear operator `Ξ = X′ X⁺`.
pub fn dmd(x: &Mat, xp: &Mat) -> Result<Mat> {
    if x.shape() != xp.shape() {
        return Err(Error::DimensionMismatch(format!(
            "X is {:?}, X' is {:?}",
            x.shape(),
            xp.shape()
        )));
    }
    if x.is_empty() {
        return Err(Error::InsufficientData("empty snapshot matrices".into()));
    }
    Ok(xp * pinv(x, DEFAULT_RCOND)?)
}

/// Finite-difference derivatives along a uniformly sampled trajectory.
///
/// Fourth-order central stencil where two neighbours exist on each side,
/// second-order central one step in from each end, second-order one-sided at
/// the end points.
pub fn estimate_derivatives(traj: &Trajectory) -> Result<DataSet> {
    let m = traj.len();
    if m < 5 {
        return Err(Error::InsufficientData(format!("{m} samples, need at least 5")));
    }
    let dt = traj.uniform_step().ok_or(Error::NonUniformSampling)?;
    let x = traj.state_matrix();
    let y = differentiate_columns(&x, dt);
    DataSet::new(x, y, dt, TimeKind::Continuous)
}

pub(crate) fn differentiate_columns(x: &Mat, dt: f64) -> Mat {
    let (n, m) = x.shape();
    let mut y = Mat::zeros(n, m);
    for i in 0..n {
        let v = |k: usize| x[(i, k)];
        y[(i, 0)] = (-3.0 * v(0) + 4.0 * v(1) - v(2)) / (2.0 * dt);
        y[(i, 1)] = (v(2) - v(0)) / (2.0 * dt);
        for k in 2..m - 2 {
            y[(i, k)] = (-v(k + 2) + 8.0 * v(k + 1) - 8.0 * v(k - 1) + v(k - 2)) / (12.0 * dt);
        }
        y[(i, m - 2)] = (v(m - 1) - v(m - 3)) / (2.0 * dt);
        y[(i, m - 1)] = (3.0 * v(m - 1) - 4.0 * v(m - 2) + v(m - 3)) / (2.0 * dt);
    }
    y
}

/// Indices where the fourth-order interior stencil applies.
pub(crate) fn interior(m: usize) -> std::ops::Range<usize> {
    2..m.saturating_sub(2)
}

/// Sparse coefficients `Ξᵀ` over a library: row `i` models target `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseModel {
    pub library: ObservableLibrary,
    pub xi_t: Mat,
    pub mask: Vec<Vec<bool>>,
    pub time_kind: TimeKind,
    pub threshold: f64,
    pub iterations: usize,
}

impl SparseModel {
    pub fn targets(&self) -> usize {
        self.xi_t.nrows()
    }

    /// Union of active library indices over all rows, ascending.
    pub fn active_observables(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .mask
            .iter()
            .flat_map(|row| row.iter().enumerate().filter(|(_, &a)| a).map(|(j, _)| j))
            .collect();
        set.into_iter().collect()
    }

    pub fn coeff(&self, row: usize, obs: &Monomial) -> f64 {
        self.library
            .index_of_monomial(obs)
            .map_or(0.0, |j| self.xi_t[(row, j)])
    }

    /// Identified right-hand side as a polynomial system.
    pub fn to_system(&self) -> Result<PolySystem> {
        let eqs = (0..self.targets())
            .map(|i| {
                let row: Vec<f64> = self.xi_t.row(i).iter().copied().collect();
                self.library.combination(&row).ok_or_else(|| {
                    Error::UnsupportedModel("identified model uses non-polynomial observables".into())
                })
            })
            .collect::<Result<Vec<Polynomial>>>()?;
        PolySystem::new("identified", self.time_kind, eqs)
    }

    pub fn to_json(&self) -> SparseModelJson {
        let rows = (0..self.targets())
            .map(|i| SparseRowJson {
                target: format!("x{}{}", i + 1, if self.time_kind == TimeKind::Continuous { "'" } else { "+" }),
                terms: (0..self.library.len())
                    .filter(|&j| self.mask[i][j])
                    .map(|j| SparseTermJson {
                        observable: self.library.get(j).clone(),
                        coeff: self.xi_t[(i, j)],
                    })
                    .collect(),
            })
            .collect();
        SparseModelJson {
            library: self.library.clone(),
            threshold: self.threshold,
            time_kind: self.time_kind,
            rows,
        }
    }

    pub fn from_json(j: &SparseModelJson) -> Result<Self> {
        let m = j.library.len();
        let mut xi_t = Mat::zeros(j.rows.len(), m);
        let mut mask = vec![vec![false; m]; j.rows.len()];
        for (i, row) in j.rows.iter().enumerate() {
            for term in &row.terms {
                let col = j
                    .library
                    .observables()
                    .iter()
                    .position(|o| *o == term.observable)
                    .ok_or_else(|| Error::Parse(format!("term {} not in library", term.observable)))?;
                xi_t[(i, col)] = term.coeff;
                mask[i][col] = true;
            }
        }
        Ok(Self {
            library: j.library.clone(),
            xi_t,
            mask,
            time_kind: j.time_kind,
            threshold: j.threshold,
            iterations: 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseModelJson {
    pub library: ObservableLibrary,
    pub threshold: f64,
    pub time_kind: TimeKind,
    pub rows: Vec<SparseRowJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseRowJson {
    pub target: String,
    pub terms: Vec<SparseTermJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseTermJson {
    pub observable: Observable,
    pub coeff: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SindyOptions {
    pub threshold: f64,
    pub max_iter: usize,
    /// Scale library columns to unit RMS before regression; the threshold
    /// then applies to the scaled coefficients.
    pub normalize: bool,
    pub exec: Execution,
}

impl Default for SindyOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            max_iter: DEFAULT_MAX_ITER,
            normalize: true,
            exec: Execution::default(),
        }
    }
}

/// Sequential thresholded least squares with default options apart from
/// `threshold` and `max_iter`.
pub fn sindy(data: &DataSet, library: &ObservableLibrary, threshold: f64, max_iter: usize) -> Result<SparseModel> {
    sindy_with(
        data,
        library,
        &SindyOptions {
            threshold,
            max_iter,
            ..SindyOptions::default()
        },
    )
}

pub fn sindy_with(data: &DataSet, library: &ObservableLibrary, opts: &SindyOptions) -> Result<SparseModel> {
    if !(opts.threshold >= 0.0) {
        return Err(Error::InvalidArgument("threshold must be non-negative".into()));
    }
    if data.samples() == 0 {
        return Err(Error::InsufficientData("empty data set".into()));
    }
    let theta = library.eval_matrix(&data.x)?;
    let m = library.len();
    let samples = data.samples();
    let scales: Vec<f64> = (0..m)
        .map(|j| {
            if !opts.normalize {
                return 1.0;
            }
            let rms = (theta.row(j).iter().map(|v| v * v).sum::<f64>() / samples as f64).sqrt();
            if rms > 0.0 {
                rms
            } else {
                1.0
            }
        })
        .collect();
    let design = Mat::from_fn(samples, m, |k, j| theta[(j, k)] / scales[j]);

    let rows = par::map_range(opts.exec, data.dim(), |i| {
        let target = Mat::from_fn(samples, 1, |k, _| data.y[(i, k)]);
        stlsq_row(&design, &target, opts.threshold, opts.max_iter, i)
    });

    let mut xi_t = Mat::zeros(data.dim(), m);
    let mut mask = Vec::with_capacity(data.dim());
    let mut iterations = 0;
    for (i, row) in rows.into_iter().enumerate() {
        let (coef, active, iters) = row?;
        for j in 0..m {
            xi_t[(i, j)] = coef[j] / scales[j];
        }
        mask.push(active);
        iterations = iterations.max(iters);
    }
    Ok(SparseModel {
        library: library.clone(),
        xi_t,
        mask,
        time_kind: data.time_kind,
        threshold: opts.threshold,
        iterations,
    })
}

type RowFit = (Vec<f64>, Vec<bool>, usize);

fn stlsq_row(design: &Mat, target: &Mat, threshold: f64, max_iter: usize, row: usize) -> Result<RowFit> {
    let m = design.ncols();
    let mut active = vec![true; m];
    let mut coef = solve_active(design, target, &active)?;
    let mut iters = 0;
    while iters < max_iter {
        iters += 1;
        let next: Vec<bool> = coef.iter().map(|c| c.abs() >= threshold).collect();
        if !next.iter().any(|&a| a) {
            return Err(Error::AllColumnsEliminated { row });
        }
        if next == active {
            break;
        }
        active = next;
        coef = solve_active(design, target, &active)?;
    }
    Ok((coef, active, iters))
}

fn solve_active(design: &Mat, target: &Mat, active: &[bool]) -> Result<Vec<f64>> {
    let cols: Vec<usize> = (0..active.len()).filter(|&j| active[j]).collect();
    let sub = design.select_columns(&cols);
    let sol = lstsq(&sub, target)?;
    let mut coef = vec![0.0; active.len()];
    for (k, &j) in cols.iter().enumerate() {
        coef[j] = sol[(k, 0)];
    }
    Ok(coef)
}

/// Outcome of [`refine_subspace`].
#[derive(Debug, Clone)]
pub struct Refinement {
    pub model: KoopmanModel,
    pub converged: bool,
    pub rounds: usize,
    /// Observables added by closure completion, in the order they were added.
    pub added: Vec<Monomial>,
}

#[derive(Debug, Clone, Copy)]
pub struct RefineOptions {
    pub max_rounds: usize,
    /// Optional sparsification of the refined regression; `None` is plain
    /// least squares.
    pub threshold: Option<f64>,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            max_rounds: 8,
            threshold: None,
        }
    }
}

/// Grows the observable set from the states plus the active terms of
/// `sparse` until the symbolic advance of every member stays in the set,
/// then regresses the advance of each observable onto the set to emit `K`.
pub fn refine_subspace(sparse: &SparseModel, data: &DataSet, max_rounds: usize) -> Result<Refinement> {
    refine_subspace_with(
        sparse,
        data,
        &RefineOptions {
            max_rounds,
            ..RefineOptions::default()
        },
    )
}

pub fn refine_subspace_with(sparse: &SparseModel, data: &DataSet, opts: &RefineOptions) -> Result<Refinement> {
    let n = data.dim();
    if sparse.library.dim() != n || sparse.time_kind != data.time_kind {
        return Err(Error::DimensionMismatch("sparse model and data disagree".into()));
    }
    let field = sparse.to_system()?;
    let mut set: BTreeSet<Monomial> = (0..n).map(|i| Monomial::var(n, i)).collect();
    for j in sparse.active_observables() {
        if let Some(m) = sparse.library.get(j).as_monomial() {
            set.insert(m.clone());
        }
    }

    let mut added = Vec::new();
    let mut rounds = 0;
    let mut converged = false;
    while rounds < opts.max_rounds {
        rounds += 1;
        let cap = 2 * set.iter().map(Monomial::degree).max().unwrap_or(1);
        let fresh: BTreeSet<Monomial> = set
            .iter()
            .flat_map(|m| {
                advance(&Polynomial::monomial(m.clone(), 1.0), &field)
                    .terms()
                    .map(|(mono, _)| mono.clone())
                    .collect::<Vec<_>>()
            })
            .filter(|mono| mono.degree() > 0 && !set.contains(mono) && mono.degree() <= cap)
            .collect();
        if fresh.is_empty() {
            converged = true;
            break;
        }
        added.extend(fresh.iter().cloned());
        set.extend(fresh);
    }

    let library = ObservableLibrary::from_monomials(n, set.into_iter().collect())?;
    let theta = library.eval_matrix(&data.x)?;
    let target = advance_data(&library, data)?;
    let k = match opts.threshold {
        None => lstsq(&theta.transpose(), &target.transpose())?.transpose(),
        Some(threshold) => {
            let lifted = DataSet::new(theta.clone(), target, data.dt, data.time_kind)?;
            let ident = ObservableLibrary::from_monomials(
                library.len(),
                (0..library.len()).map(|i| Monomial::var(library.len(), i)).collect(),
            )?;
            sindy_with(
                &lifted,
                &ident,
                &SindyOptions {
                    threshold,
                    ..SindyOptions::default()
                },
            )?
            .xi_t
        }
    };
    let model = KoopmanModel::new(library, k, data.time_kind)?;
    Ok(Refinement {
        model,
        converged,
        rounds,
        added,
    })
}

/// Advance of every library observable on the data: chain rule with the
/// derivative estimates (continuous) or evaluation at shifted states
/// (discrete).
fn advance_data(library: &ObservableLibrary, data: &DataSet) -> Result<Mat> {
    match data.time_kind {
        TimeKind::Discrete => library.eval_matrix(&data.y),
        TimeKind::Continuous => {
            let n = data.dim();
            let grads: Vec<Vec<Polynomial>> = (0..library.len())
                .map(|r| {
                    let p = library.polynomial(r).ok_or_else(|| {
                        Error::UnsupportedModel("chain rule needs monomial observables".into())
                    })?;
                    Ok((0..n).map(|i| p.derivative(i)).collect())
                })
                .collect::<Result<_>>()?;
            let mut out = Mat::zeros(library.len(), data.samples());
            let mut x = vec![0.0; n];
            for k in 0..data.samples() {
                for (i, xi) in x.iter_mut().enumerate() {
                    *xi = data.x[(i, k)];
                }
                for (r, g) in grads.iter().enumerate() {
                    out[(r, k)] = g.iter().enumerate().map(|(i, gi)| gi.eval(&x) * data.y[(i, k)]).sum();
                }
            }
            Ok(out)
        }
    }
}

/// Relative invariance defect of a model along a trajectory:
/// `RMS‖advance(Θ) − KΘ‖ / RMS‖Θ‖`. Continuous models use finite-difference
/// derivatives of the lifted trajectory, evaluated where the fourth-order
/// stencil applies.
pub fn invariance_residual(model: &KoopmanModel, traj: &Trajectory) -> Result<f64> {
    if traj.dim() != model.library.dim() {
        return Err(Error::DimensionMismatch("trajectory and library dimensions differ".into()));
    }
    let theta = model.library.eval_matrix(&traj.state_matrix())?;
    let m = traj.len();
    let (lhs, rhs, cols): (Mat, Mat, Vec<usize>) = match model.time_kind {
        TimeKind::Continuous => {
            if m < 5 {
                return Err(Error::InsufficientData(format!("{m} samples, need at least 5")));
            }
            let dt = traj.uniform_step().ok_or(Error::NonUniformSampling)?;
            let d = differentiate_columns(&theta, dt);
            (d, &model.k * &theta, interior(m).collect())
        }
        TimeKind::Discrete => {
            if m < 2 {
                return Err(Error::InsufficientData(format!("{m} samples, need at least 2")));
            }
            let next = theta.columns(1, m - 1).into_owned();
            let pred = &model.k * theta.columns(0, m - 1);
            (next, pred, (0..m - 1).collect())
        }
    };
    let mut num = 0.0;
    let mut den = 0.0;
    for &c in &cols {
        num += (lhs.column(c) - rhs.column(c)).norm_squared();
        den += theta.column(c).norm_squared();
    }
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok((num / den).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{builtin, integrate, iterate};
    use crate::lifting::{carleman_logistic, slow_manifold_lift_ct};
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeMap;

    fn traj_of(times: Vec<f64>, f: impl Fn(f64) -> f64) -> Trajectory {
        let states = times.iter().map(|&t| vec![f(t)]).collect();
        Trajectory::new(times, states, None).unwrap()
    }

    #[test]
    fn derivative_of_exponential() {
        let times: Vec<f64> = (0..=1000).map(|k| k as f64 * 0.01).collect();
        let d = estimate_derivatives(&traj_of(times.clone(), |t| (-0.05 * t).exp())).unwrap();
        for k in interior(times.len()) {
            let exact = -0.05 * (-0.05 * times[k]).exp();
            assert!((d.y[(0, k)] - exact).abs() < 1e-9);
        }
    }

    #[test]
    fn derivative_of_constant_and_square() {
        let times: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
        let c = estimate_derivatives(&traj_of(times.clone(), |_| 3.0)).unwrap();
        assert!(c.y.iter().all(|&v| v.abs() < 1e-12));
        let sq = estimate_derivatives(&traj_of(times, |t| t * t)).unwrap();
        assert_abs_diff_eq!(sq.y[(0, 5)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sq.y[(0, 0)], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sq.y[(0, 10)], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn derivative_errors() {
        let short = traj_of(vec![0.0, 1.0, 2.0], |t| t);
        assert!(matches!(estimate_derivatives(&short), Err(Error::InsufficientData(_))));
        let uneven = traj_of(vec![0.0, 0.1, 0.3, 0.4, 0.5, 0.6], |t| t);
        assert!(matches!(estimate_derivatives(&uneven), Err(Error::NonUniformSampling)));
    }

    #[test]
    fn dmd_recovers_diagonal_map() {
        let mut x = Mat::zeros(2, 51);
        x[(0, 0)] = 1.0;
        x[(1, 0)] = -2.0;
        for k in 1..51 {
            x[(0, k)] = 0.9 * x[(0, k - 1)];
            x[(1, k)] = 0.5 * x[(1, k - 1)] + 1e-3 * (k as f64).sin();
        }
        // forcing makes the snapshot matrix full rank; the map still fits exactly
        let xs = x.columns(0, 50).into_owned();
        let mut xp = x.columns(1, 50).into_owned();
        for k in 0..50 {
            xp[(1, k)] = 0.5 * xs[(1, k)];
        }
        let a = dmd(&xs, &xp).unwrap();
        assert!((a - Mat::from_row_slice(2, 2, &[0.9, 0.0, 0.0, 0.5])).norm() < 1e-10);
    }

    #[test]
    fn dmd_identity_on_span_and_errors() {
        let x = Mat::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        let a = dmd(&x, &x).unwrap();
        assert!((&a * &x - &x).norm() < 1e-12);
        assert!(matches!(dmd(&Mat::zeros(2, 0), &Mat::zeros(2, 0)), Err(Error::InsufficientData(_))));
        assert!(dmd(&Mat::zeros(2, 3), &Mat::zeros(2, 4)).is_err());
    }

    #[test]
    fn sindy_zero_threshold_is_least_squares() {
        let sys = builtin("logistic", &BTreeMap::new()).unwrap();
        let t = iterate(&sys, &[0.2], 100).unwrap();
        let data = DataSet::from_shifts(&t).unwrap();
        let lib = ObservableLibrary::monomials(1, 3).unwrap();
        let s = sindy(&data, &lib, 0.0, 10).unwrap();
        assert!(s.mask.iter().flatten().all(|&a| a));
        let theta = lib.eval_matrix(&data.x).unwrap();
        let direct = lstsq(&theta.transpose(), &data.y.transpose()).unwrap().transpose();
        assert!((s.xi_t - direct).norm() < 1e-10);
    }

    #[test]
    fn sindy_logistic_exact() {
        let r = 3.5;
        let sys = builtin("logistic", &BTreeMap::new()).unwrap();
        let t = iterate(&sys, &[0.2], 200).unwrap();
        let data = DataSet::from_shifts(&t).unwrap();
        let lib = ObservableLibrary::monomials(1, 2).unwrap();
        let s = sindy(&data, &lib, DEFAULT_THRESHOLD, DEFAULT_MAX_ITER).unwrap();
        assert_abs_diff_eq!(s.xi_t[(0, 0)], r, epsilon = 1e-10);
        assert_abs_diff_eq!(s.xi_t[(0, 1)], -r, epsilon = 1e-10);
    }

    #[test]
    fn sindy_huge_threshold_eliminates_everything() {
        let sys = builtin("logistic", &BTreeMap::new()).unwrap();
        let data = DataSet::from_shifts(&iterate(&sys, &[0.2], 50).unwrap()).unwrap();
        let lib = ObservableLibrary::monomials(1, 2).unwrap();
        assert!(matches!(
            sindy(&data, &lib, 1e6, 10),
            Err(Error::AllColumnsEliminated { row: 0 })
        ));
        assert!(sindy(&data, &lib, -1.0, 10).is_err());
    }

    #[test]
    fn sequential_and_parallel_rows_agree() {
        let sys = builtin("quad-manifold", &BTreeMap::new()).unwrap();
        let traj = integrate(&sys, &[1.0, -1.0], 5.0, 0.01, None).unwrap();
        let data = estimate_derivatives(&traj).unwrap();
        let lib = ObservableLibrary::monomials(2, 2).unwrap();
        let run = |exec| {
            sindy_with(&data, &lib, &SindyOptions { exec, ..SindyOptions::default() }).unwrap()
        };
        assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
    }

    #[test]
    fn sparse_json_round_trip() {
        let sys = builtin("logistic", &BTreeMap::new()).unwrap();
        let data = DataSet::from_shifts(&iterate(&sys, &[0.2], 50).unwrap()).unwrap();
        let s = sindy(&data, &ObservableLibrary::monomials(1, 3).unwrap(), 0.5, 10).unwrap();
        let text = serde_json::to_string(&s.to_json()).unwrap();
        let back = SparseModel::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.xi_t, s.xi_t);
        assert_eq!(back.mask, s.mask);
    }

    #[test]
    fn refine_linear_data_keeps_states() {
        let lin = PolySystem::new(
            "lin",
            TimeKind::Continuous,
            vec![
                Polynomial::from_terms(2, [(-0.5, vec![1, 0]), (1.0, vec![0, 1])]),
                Polynomial::from_terms(2, [(-1.0, vec![1, 0]), (-0.3, vec![0, 1])]),
            ],
        )
        .unwrap();
        let sets: Vec<DataSet> = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
            .iter()
            .map(|x0| estimate_derivatives(&integrate(&lin, x0, 5.0, 0.01, None).unwrap()).unwrap())
            .collect();
        let data = DataSet::concat(&sets).unwrap();
        let s = sindy(&data, &ObservableLibrary::monomials(2, 2).unwrap(), DEFAULT_THRESHOLD, 10).unwrap();
        let refined = refine_subspace(&s, &data, 5).unwrap();
        assert!(refined.converged);
        assert_eq!(refined.model.library.labels(), ["x1", "x2"]);
        let a = Mat::from_row_slice(2, 2, &[-0.5, 1.0, -1.0, -0.3]);
        assert!((refined.model.k - a).norm() < 1e-6);
    }

    #[test]
    fn refine_center_manifold_does_not_close() {
        let sys = builtin("center-manifold", &BTreeMap::new()).unwrap();
        let sets: Vec<DataSet> = [0.5, 0.3, -0.5]
            .iter()
            .map(|&x0| estimate_derivatives(&integrate(&sys, &[x0], 1.0, 0.01, None).unwrap()).unwrap())
            .collect();
        let data = DataSet::concat(&sets).unwrap();
        let s = sindy(&data, &ObservableLibrary::monomials(1, 3).unwrap(), 0.02, 10).unwrap();
        assert_eq!(s.active_observables(), vec![1]);
        let refined = refine_subspace(&s, &data, 4).unwrap();
        assert!(!refined.converged);
        let added: Vec<String> = refined.added.iter().map(|m| m.to_string()).collect();
        assert_eq!(added, ["x^3", "x^4", "x^5", "x^6"]);
    }

    #[test]
    fn invariance_residual_cases() {
        let (mu, lam) = (-0.05, -1.0);
        let sys = builtin("quad-manifold", &BTreeMap::new()).unwrap();
        let model = slow_manifold_lift_ct(mu, lam, &[(1.0, 2)]).unwrap();
        let traj = integrate(&sys, &[1.5, -1.0], 10.0, 0.01, None).unwrap();
        assert!(invariance_residual(&model, &traj).unwrap() < 1e-6);

        let lg = builtin("logistic", &[("r".to_string(), 3.9)].into_iter().collect()).unwrap();
        let chaos = iterate(&lg, &[0.3], 500).unwrap();
        assert!(invariance_residual(&carleman_logistic(3.9, 5).unwrap(), &chaos).unwrap() > 1e-2);

        let zero = Trajectory::new(
            (0..10).map(|k| k as f64 * 0.1).collect(),
            vec![vec![0.0, 0.0]; 10],
            None,
        )
        .unwrap();
        assert_eq!(invariance_residual(&model, &zero).unwrap(), 0.0);
        let tiny = Trajectory::new(vec![0.0, 0.1], vec![vec![0.0, 0.0]; 2], None).unwrap();
        assert!(invariance_residual(&model, &tiny).is_err());
    }
}
