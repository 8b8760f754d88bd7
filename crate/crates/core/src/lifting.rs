//! Observable libraries and closed-form Koopman-invariant lifts.
//!
//! A [`KoopmanModel`] pairs a finite operator matrix with the library that
//! defines its coordinates. Closed forms are provided for the slow-manifold
//! family (continuous and discrete) and for truncated Carleman operators; a
//! generic symbolic projection ([`project_system`]) rebuilds any of them from
//! the underlying polynomial system and doubles as an independent check.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dynamics::{PolySystem, TimeKind, Trajectory};
use crate::error::{Error, Result};
use crate::numerics::{ensure_finite, ensure_square, Mat};
use crate::poly::{monomials_up_to, Monomial, Polynomial};

/// Closed-form scalar observables outside the monomial dictionary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NamedObservable {
    /// `e^{-1/x}` on `x > 0`, extended continuously by 0 at `x = 0`.
    ExpNegInv,
}

impl NamedObservable {
    pub fn name(self) -> &'static str {
        match self {
            NamedObservable::ExpNegInv => "exp-neg-inv",
        }
    }

    pub fn eval(self, x: &[f64]) -> Result<f64> {
        match self {
            NamedObservable::ExpNegInv => {
                let v = x[0];
                if v > 0.0 {
                    Ok((-1.0 / v).exp())
                } else if v == 0.0 {
                    Ok(0.0)
                } else {
                    Err(Error::UndefinedObservable { name: self.name(), x: v })
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Observable {
    Monomial(Monomial),
    Named(NamedObservable),
    /// A general polynomial combination, e.g. an eigenfunction used as a
    /// coordinate.
    Polynomial(Polynomial),
}

impl Observable {
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        match self {
            Observable::Monomial(m) => Ok(m.eval(x)),
            Observable::Named(n) => n.eval(x),
            Observable::Polynomial(p) => Ok(p.eval(x)),
        }
    }

    pub fn as_monomial(&self) -> Option<&Monomial> {
        match self {
            Observable::Monomial(m) => Some(m),
            _ => None,
        }
    }

    pub fn to_polynomial(&self) -> Option<Polynomial> {
        match self {
            Observable::Monomial(m) => Some(Polynomial::monomial(m.clone(), 1.0)),
            Observable::Polynomial(p) => Some(p.clone()),
            Observable::Named(_) => None,
        }
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observable::Monomial(m) => write!(f, "{m}"),
            Observable::Named(NamedObservable::ExpNegInv) => f.write_str("exp(-1/x)"),
            Observable::Polynomial(p) => write!(f, "({p})"),
        }
    }
}

/// Ordered, duplicate-free list of observables over an `n`-dimensional state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableLibrary {
    dim: usize,
    observables: Vec<Observable>,
}

impl ObservableLibrary {
    pub fn new(dim: usize, observables: Vec<Observable>) -> Result<Self> {
        for (i, o) in observables.iter().enumerate() {
            if let Observable::Monomial(m) = o {
                if m.dim() != dim {
                    return Err(Error::DimensionMismatch(format!(
                        "observable {m} has {} exponents, library dimension is {dim}",
                        m.dim()
                    )));
                }
                if m.degree() == 0 {
                    return Err(Error::InvalidArgument("constant observable not allowed".into()));
                }
            }
            if let Observable::Polynomial(p) = o {
                if p.dim() != dim || p.is_zero() {
                    return Err(Error::InvalidArgument(format!(
                        "polynomial observable {p} must be non-zero over {dim} variables"
                    )));
                }
            }
            if matches!(o, Observable::Named(_)) && dim != 1 {
                return Err(Error::UnsupportedModel(
                    "named observables are one-dimensional".into(),
                ));
            }
            if observables[..i].contains(o) {
                return Err(Error::InvalidArgument(format!("duplicate observable {o}")));
            }
        }
        Ok(Self { dim, observables })
    }

    pub fn from_monomials(dim: usize, monomials: Vec<Monomial>) -> Result<Self> {
        Self::new(dim, monomials.into_iter().map(Observable::Monomial).collect())
    }

    /// All monomials of degree `1..=max_degree`, graded order, states first.
    pub fn monomials(dim: usize, max_degree: u32) -> Result<Self> {
        if dim == 0 || max_degree == 0 {
            return Err(Error::InvalidArgument("need dim >= 1 and degree >= 1".into()));
        }
        Self::from_monomials(dim, monomials_up_to(dim, max_degree))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.observables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observables.is_empty()
    }

    pub fn observables(&self) -> &[Observable] {
        &self.observables
    }

    pub fn get(&self, i: usize) -> &Observable {
        &self.observables[i]
    }

    /// True when the first `dim` observables are `x_1, …, x_n` in order.
    pub fn is_state_inclusive(&self) -> bool {
        self.observables.len() >= self.dim
            && (0..self.dim).all(|i| {
                self.observables[i].as_monomial().and_then(Monomial::as_var) == Some(i)
            })
    }

    /// Row index of every state coordinate, if all are present.
    pub fn state_rows(&self) -> Option<Vec<usize>> {
        (0..self.dim)
            .map(|i| {
                self.observables
                    .iter()
                    .position(|o| o.as_monomial().and_then(Monomial::as_var) == Some(i))
            })
            .collect()
    }

    pub fn index_of_monomial(&self, m: &Monomial) -> Option<usize> {
        self.observables
            .iter()
            .position(|o| o.as_monomial() == Some(m))
    }

    /// Monomials only; `None` if the library has a named observable.
    pub fn monomial_list(&self) -> Option<Vec<Monomial>> {
        self.observables.iter().map(|o| o.as_monomial().cloned()).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.observables.iter().map(|o| o.to_string()).collect()
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "state has {} entries, library dimension is {}",
                x.len(),
                self.dim
            )));
        }
        self.observables.iter().map(|o| o.eval(x)).collect()
    }

    /// `Θ(X)`: column `j` is the library evaluated at column `j` of `states`.
    pub fn eval_matrix(&self, states: &Mat) -> Result<Mat> {
        if states.nrows() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "state matrix has {} rows, library dimension is {}",
                states.nrows(),
                self.dim
            )));
        }
        let mut out = Mat::zeros(self.len(), states.ncols());
        let mut x = vec![0.0; self.dim];
        for j in 0..states.ncols() {
            for (i, xi) in x.iter_mut().enumerate() {
                *xi = states[(i, j)];
            }
            for (r, o) in self.observables.iter().enumerate() {
                out[(r, j)] = o.eval(&x)?;
            }
        }
        Ok(out)
    }

    /// Library observable `i` as a polynomial; `None` for named observables.
    pub fn polynomial(&self, i: usize) -> Option<Polynomial> {
        self.observables[i].to_polynomial()
    }

    /// `Σ_j c_j Θ_j(x)` as a polynomial.
    pub fn combination(&self, coeffs: &[f64]) -> Option<Polynomial> {
        let mut p = Polynomial::zero(self.dim);
        for (o, &c) in self.observables.iter().zip(coeffs) {
            if c != 0.0 {
                p = p + o.to_polynomial()?.scale(c);
            }
        }
        Some(p)
    }
}

/// Finite linear operator on the span of a library. For continuous time `k`
/// is the generator (`ẏ = K y`); for discrete time it is the one-step map.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanModel {
    pub library: ObservableLibrary,
    pub k: Mat,
    pub time_kind: TimeKind,
    pub state_rows: Vec<usize>,
}

impl KoopmanModel {
    pub fn new(library: ObservableLibrary, k: Mat, time_kind: TimeKind) -> Result<Self> {
        let m = ensure_square(&k)?;
        if m != library.len() {
            return Err(Error::DimensionMismatch(format!(
                "operator is {m}x{m}, library has {} observables",
                library.len()
            )));
        }
        ensure_finite(&k, "Koopman operator")?;
        let state_rows = library.state_rows().unwrap_or_default();
        Ok(Self {
            library,
            k,
            time_kind,
            state_rows,
        })
    }

    pub fn size(&self) -> usize {
        self.k.nrows()
    }

    pub fn lift_state(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.library.eval(x)
    }

    /// Propagates the lifted state `y0 = Θ(x0)` with the linear model and
    /// projects back onto the state rows. Continuous models are sampled every
    /// `dt` up to `horizon`; discrete models take `horizon` steps.
    pub fn predict(&self, x0: &[f64], horizon: f64, dt: f64) -> Result<Trajectory> {
        if self.state_rows.len() != self.library.dim() {
            return Err(Error::UnsupportedModel("model is not state-inclusive".into()));
        }
        let y0 = nalgebra::DVector::from_vec(self.lift_state(x0)?);
        let project = |y: &nalgebra::DVector<f64>| -> Vec<f64> {
            self.state_rows.iter().map(|&r| y[r]).collect()
        };
        let mut times = Vec::new();
        let mut states = Vec::new();
        match self.time_kind {
            TimeKind::Continuous => {
                if !(dt > 0.0) {
                    return Err(Error::InvalidArgument("dt must be positive".into()));
                }
                let steps = (horizon / dt).round() as usize;
                for s in 0..=steps {
                    let t = s as f64 * dt;
                    let y = (&self.k * t).exp() * &y0;
                    times.push(t);
                    states.push(project(&y));
                }
            }
            TimeKind::Discrete => {
                let mut y = y0;
                let steps = horizon.round() as usize;
                for s in 0..=steps {
                    times.push(s as f64);
                    states.push(project(&y));
                    if s < steps {
                        y = &self.k * y;
                    }
                }
            }
        }
        Trajectory::new(times, states, None)
    }

    /// Per-row polynomial residual `advance(Θ_k) − Σ_j K_kj Θ_j` against a
    /// polynomial system, where `advance` is the Lie derivative (continuous)
    /// or composition with the map (discrete). All zero iff the library span
    /// is invariant and the operator is exact.
    pub fn closure_residuals(&self, sys: &PolySystem) -> Result<Vec<Polynomial>> {
        if sys.time_kind != self.time_kind {
            return Err(Error::TimeKind("model and system time semantics differ"));
        }
        if sys.dim() != self.library.dim() {
            return Err(Error::DimensionMismatch("system and library dimensions differ".into()));
        }
        (0..self.size())
            .map(|r| {
                let obs = self.library.polynomial(r).ok_or_else(|| {
                    Error::UnsupportedModel("symbolic closure needs polynomial observables".into())
                })?;
                let adv = advance(&obs, sys);
                let row: Vec<f64> = self.k.row(r).iter().copied().collect();
                let lin = self.library.combination(&row).expect("polynomial library");
                Ok(adv - lin)
            })
            .collect()
    }

    pub fn to_json(&self) -> ModelJson {
        ModelJson {
            time_kind: self.time_kind,
            dim: self.library.dim(),
            observables: self.library.observables().to_vec(),
            k: rows_of(&self.k),
            state_rows: self.state_rows.clone(),
        }
    }

    pub fn from_json(j: &ModelJson) -> Result<Self> {
        let lib = ObservableLibrary::new(j.dim, j.observables.clone())?;
        let k = mat_from_nested(&j.k)?;
        let mut model = Self::new(lib, k, j.time_kind)?;
        if !j.state_rows.is_empty() {
            if j.state_rows.iter().any(|&r| r >= model.size()) {
                return Err(Error::Parse("state row out of range".into()));
            }
            model.state_rows = j.state_rows.clone();
        }
        Ok(model)
    }
}

/// Serialized form of a [`KoopmanModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelJson {
    pub time_kind: TimeKind,
    pub dim: usize,
    pub observables: Vec<Observable>,
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
    pub state_rows: Vec<usize>,
}

pub(crate) fn rows_of(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub(crate) fn mat_from_nested(rows: &[Vec<f64>]) -> Result<Mat> {
    let slices: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    crate::numerics::mat_from_rows(&slices)
}

/// Lie derivative (continuous) or pull-back through the map (discrete).
pub fn advance(obs: &Polynomial, sys: &PolySystem) -> Polynomial {
    match sys.time_kind {
        TimeKind::Continuous => obs.lie_derivative(&sys.equations),
        TimeKind::Discrete => obs.compose(&sys.equations),
    }
}

/// How [`project_system`] treats advance terms outside the library.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Closure {
    /// Fail if any term falls outside the span.
    Exact,
    /// Drop out-of-span terms (truncated Carleman projection).
    Truncate,
}

/// Builds the operator on a monomial library by symbolically advancing each
/// observable and reading off its coefficients.
pub fn project_system(sys: &PolySystem, library: ObservableLibrary, closure: Closure) -> Result<KoopmanModel> {
    if library.monomial_list().is_none() {
        return Err(Error::UnsupportedModel("projection needs a monomial library".into()));
    }
    let m = library.len();
    let mut k = Mat::zeros(m, m);
    for r in 0..m {
        let obs = library.polynomial(r).expect("monomial library");
        for (mono, c) in advance(&obs, sys).terms() {
            match library.index_of_monomial(mono) {
                Some(col) => k[(r, col)] += c,
                None if closure == Closure::Truncate => {}
                None => {
                    return Err(Error::UnsupportedModel(format!(
                        "advance of {} leaves the library span (term {mono})",
                        library.get(r)
                    )))
                }
            }
        }
    }
    KoopmanModel::new(library, k, sys.time_kind)
}

fn check_manifold_terms(poly: &[(f64, u32)]) -> Result<Vec<(f64, u32)>> {
    let mut terms: Vec<(f64, u32)> = Vec::new();
    for &(a, n) in poly {
        if n == 0 {
            return Err(Error::InvalidArgument("manifold exponents must be positive".into()));
        }
        if terms.iter().any(|&(_, m)| m == n) {
            return Err(Error::DuplicateExponent(n));
        }
        if !a.is_finite() {
            return Err(Error::NonFinite("manifold coefficient"));
        }
        terms.push((a, n));
    }
    terms.retain(|&(a, _)| a != 0.0);
    terms.sort_by_key(|&(_, n)| n);
    Ok(terms)
}

fn manifold_library(terms: &[(f64, u32)]) -> Result<ObservableLibrary> {
    let mut obs = vec![Monomial(vec![1, 0]), Monomial(vec![0, 1])];
    obs.extend(terms.iter().filter(|&&(_, n)| n > 1).map(|&(_, n)| Monomial(vec![n, 0])));
    ObservableLibrary::from_monomials(2, obs)
}

/// Generator on `[x1, x2, x1^{N_1}, …]` for `ẋ1 = μ x1`,
/// `ẋ2 = λ (x2 − Σ a_i x1^{N_i})`. A linear term (`N = 1`) folds into the
/// `x1` column.
pub fn slow_manifold_lift_ct(mu: f64, lambda: f64, poly: &[(f64, u32)]) -> Result<KoopmanModel> {
    let terms = check_manifold_terms(poly)?;
    let lib = manifold_library(&terms)?;
    let mut k = Mat::zeros(lib.len(), lib.len());
    k[(0, 0)] = mu;
    k[(1, 1)] = lambda;
    let mut col = 2;
    for &(a, n) in &terms {
        if n == 1 {
            k[(1, 0)] += -(a * lambda);
            continue;
        }
        k[(1, col)] = -(a * lambda);
        k[(col, col)] = mu * n as f64;
        col += 1;
    }
    KoopmanModel::new(lib, k, TimeKind::Continuous)
}

/// One-step operator for `x1⁺ = μ x1`, `x2⁺ = λ x2 + (1 − λ) Σ a_i x1^{N_i}`;
/// the diagonal carries `μ^{N_i}`.
pub fn slow_manifold_lift_dt(mu: f64, lambda: f64, poly: &[(f64, u32)]) -> Result<KoopmanModel> {
    let terms = check_manifold_terms(poly)?;
    let lib = manifold_library(&terms)?;
    let mut k = Mat::zeros(lib.len(), lib.len());
    k[(0, 0)] = mu;
    k[(1, 1)] = lambda;
    let mut col = 2;
    for &(a, n) in &terms {
        if n == 1 {
            k[(1, 0)] += a * (1.0 - lambda);
            continue;
        }
        k[(1, col)] = a * (1.0 - lambda);
        k[(col, col)] = repeated_power(mu, n);
        col += 1;
    }
    KoopmanModel::new(lib, k, TimeKind::Discrete)
}

/// The discrete map `x1⁺ = λ x1`, `x2⁺ = μ x2 + (λ² − μ) x1²` on `[x1, x2, x1²]`.
pub fn tu_lift(lambda: f64, mu: f64) -> Result<KoopmanModel> {
    let lib = manifold_library(&[(1.0, 2)])?;
    let l2 = lambda * lambda;
    let k = Mat::from_row_slice(3, 3, &[lambda, 0.0, 0.0, 0.0, mu, l2 - mu, 0.0, 0.0, l2]);
    KoopmanModel::new(lib, k, TimeKind::Discrete)
}

/// `x^n` as the left-to-right product, matching polynomial powers bit for bit.
fn repeated_power(x: f64, n: u32) -> f64 {
    (0..n).fold(1.0, |acc, _| acc * x)
}

fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Full (untruncated) row `n ≥ 1` of the logistic Carleman operator:
/// `(column, coefficient)` pairs `(n + k, rⁿ (−1)^k C(n, k))`, 1-based columns.
pub fn carleman_logistic_row(r: f64, n: usize) -> Vec<(usize, f64)> {
    let rn = repeated_power(r, n as u32);
    (0..=n)
        .map(|k| {
            let c = binomial(n as u64, k as u64) as f64;
            let signed = if k % 2 == 0 { c } else { -c };
            (n + k, rn * signed)
        })
        .collect()
}

/// Logistic-map operator on `[x, …, x^rank]` with columns past `rank` dropped.
pub fn carleman_logistic(r: f64, rank: usize) -> Result<KoopmanModel> {
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be at least 1".into()));
    }
    let lib = ObservableLibrary::monomials(1, rank as u32)?;
    let mut k = Mat::zeros(rank, rank);
    for n in 1..=rank {
        for (col, c) in carleman_logistic_row(r, n) {
            if col <= rank {
                k[(n - 1, col - 1)] = c;
            }
        }
    }
    KoopmanModel::new(lib, k, TimeKind::Discrete)
}

/// Generator of `ẋ = x²` on `[x, …, x^rank]`: `d/dt xⁱ = i x^{i+1}`.
pub fn carleman_center(rank: usize) -> Result<KoopmanModel> {
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be at least 1".into()));
    }
    let lib = ObservableLibrary::monomials(1, rank as u32)?;
    let k = Mat::from_fn(rank, rank, |i, j| if j == i + 1 { (i + 1) as f64 } else { 0.0 });
    KoopmanModel::new(lib, k, TimeKind::Continuous)
}

/// First sample time at which `‖pred − truth‖ > rel_tol · ‖truth‖`; `None`
/// if the prediction stays within tolerance over the common span.
pub fn divergence_horizon(pred: &Trajectory, truth: &Trajectory, rel_tol: f64) -> Option<f64> {
    pred.states
        .iter()
        .zip(&truth.states)
        .zip(&truth.times)
        .find(|((p, q), _)| {
            let err = p.iter().zip(q.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let nrm = q.iter().map(|b| b * b).sum::<f64>().sqrt();
            !(err <= rel_tol * nrm)
        })
        .map(|(_, &t)| t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{builtin, continuous_slow_manifold, discrete_slow_manifold, integrate, iterate, tu_map};
    use std::collections::BTreeMap;

    fn mat(rows: &[&[f64]]) -> Mat {
        crate::numerics::mat_from_rows(rows).unwrap()
    }

    #[test]
    fn monomial_libraries() {
        let lib = ObservableLibrary::monomials(2, 2).unwrap();
        assert_eq!(lib.labels(), ["x1", "x2", "x1^2", "x1 x2", "x2^2"]);
        assert!(lib.is_state_inclusive());
        let lin = ObservableLibrary::monomials(2, 1).unwrap();
        assert_eq!(lin.labels(), ["x1", "x2"]);
        assert_eq!(ObservableLibrary::monomials(1, 4).unwrap().labels(), ["x", "x^2", "x^3", "x^4"]);
        assert!(ObservableLibrary::monomials(0, 2).is_err());
    }

    #[test]
    fn library_rejects_duplicates() {
        let m = Monomial(vec![1, 0]);
        assert!(ObservableLibrary::from_monomials(2, vec![m.clone(), m]).is_err());
    }

    #[test]
    fn eval_library_values() {
        let lib = ObservableLibrary::from_monomials(
            2,
            vec![Monomial(vec![1, 0]), Monomial(vec![0, 1]), Monomial(vec![2, 0])],
        )
        .unwrap();
        assert_eq!(lib.eval(&[2.0, 3.0]).unwrap(), vec![2.0, 3.0, 4.0]);
        let five = ObservableLibrary::monomials(1, 5).unwrap();
        assert_eq!(five.eval(&[2.0]).unwrap(), vec![2.0, 4.0, 8.0, 16.0, 32.0]);
        let x = Mat::from_column_slice(2, 2, &[2.0, 3.0, 1.0, -1.0]);
        let theta = lib.eval_matrix(&x).unwrap();
        assert_eq!(theta.column(1).as_slice(), &[1.0, -1.0, 1.0]);
        assert!(lib.eval(&[1.0]).is_err());
    }

    #[test]
    fn named_observable_domain() {
        let lib = ObservableLibrary::new(1, vec![Observable::Named(NamedObservable::ExpNegInv)]).unwrap();
        assert!((lib.eval(&[1.0]).unwrap()[0] - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(lib.eval(&[0.0]).unwrap()[0], 0.0);
        assert!(matches!(lib.eval(&[-0.5]), Err(Error::UndefinedObservable { .. })));
    }

    #[test]
    fn quadratic_manifold_generator() {
        let (mu, lam) = (-0.05, 1.0);
        let m = slow_manifold_lift_ct(mu, lam, &[(1.0, 2)]).unwrap();
        assert_eq!(m.k, mat(&[&[mu, 0.0, 0.0], &[0.0, lam, -lam], &[0.0, 0.0, 2.0 * mu]]));
        assert_eq!(m.state_rows, vec![0, 1]);
    }

    #[test]
    fn quartic_manifold_generator() {
        let (mu, lam) = (-0.05, -1.0);
        let m = slow_manifold_lift_ct(mu, lam, &[(1.0, 4), (-2.0, 2)]).unwrap();
        assert_eq!(m.library.labels(), ["x1", "x2", "x1^2", "x1^4"]);
        assert_eq!(
            m.k,
            mat(&[
                &[mu, 0.0, 0.0, 0.0],
                &[0.0, lam, 2.0 * lam, -lam],
                &[0.0, 0.0, 2.0 * mu, 0.0],
                &[0.0, 0.0, 0.0, 4.0 * mu]
            ])
        );
    }

    #[test]
    fn zero_polynomial_is_linear() {
        let m = slow_manifold_lift_ct(-0.05, -1.0, &[]).unwrap();
        assert_eq!(m.k, mat(&[&[-0.05, 0.0], &[0.0, -1.0]]));
        let d = slow_manifold_lift_dt(0.9, 0.1, &[]).unwrap();
        assert_eq!(d.k, mat(&[&[0.9, 0.0], &[0.0, 0.1]]));
    }

    #[test]
    fn duplicate_exponents_rejected() {
        assert!(matches!(
            slow_manifold_lift_ct(-0.1, -1.0, &[(1.0, 2), (3.0, 2)]),
            Err(Error::DuplicateExponent(2))
        ));
    }

    #[test]
    fn discrete_manifold_operator() {
        let (mu, lam) = (0.9, 0.1);
        let m = slow_manifold_lift_dt(mu, lam, &[(1.0, 2)]).unwrap();
        assert_eq!(m.k, mat(&[&[mu, 0.0, 0.0], &[0.0, lam, 1.0 - lam], &[0.0, 0.0, mu * mu]]));
        assert_eq!(m.time_kind, TimeKind::Discrete);
    }

    #[test]
    fn tu_rewrite_matches_projection() {
        let (lam, mu) = (0.9, 0.5);
        let closed = tu_lift(lam, mu).unwrap();
        assert_eq!(
            closed.k,
            mat(&[&[lam, 0.0, 0.0], &[0.0, mu, lam * lam - mu], &[0.0, 0.0, lam * lam]])
        );
        let proj = project_system(&tu_map(lam, mu).unwrap(), closed.library.clone(), Closure::Exact).unwrap();
        assert_eq!(proj.k, closed.k);
    }

    #[test]
    fn symbolic_closure_is_exact() {
        let (mu, lam) = (-0.05, -1.0);
        let cases = [
            (
                slow_manifold_lift_ct(mu, lam, &[(1.0, 2)]).unwrap(),
                continuous_slow_manifold(mu, lam, &[(1.0, 2)]).unwrap(),
            ),
            (
                slow_manifold_lift_ct(mu, lam, &[(1.0, 4), (-2.0, 2)]).unwrap(),
                continuous_slow_manifold(mu, lam, &[(1.0, 4), (-2.0, 2)]).unwrap(),
            ),
            (
                slow_manifold_lift_dt(0.9, 0.1, &[(1.0, 2), (0.5, 3)]).unwrap(),
                discrete_slow_manifold(0.9, 0.1, &[(1.0, 2), (0.5, 3)]).unwrap(),
            ),
            (tu_lift(0.9, 0.5).unwrap(), tu_map(0.9, 0.5).unwrap()),
        ];
        for (model, sys) in &cases {
            for res in model.closure_residuals(sys).unwrap() {
                assert!(res.is_zero(), "residual {res}");
            }
        }
    }

    #[test]
    fn logistic_pascal_rows() {
        let r = 3.5;
        let m = carleman_logistic(r, 4).unwrap();
        assert_eq!(m.k.row(0).iter().copied().collect::<Vec<_>>(), vec![r, -r, 0.0, 0.0]);
        let r2 = r * r;
        assert_eq!(m.k.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, r2, -2.0 * r2, r2]);
        for n in 1..=8 {
            let s: f64 = carleman_logistic_row(r, n).iter().map(|&(_, c)| c).sum();
            assert_eq!(s, 0.0, "row {n}");
        }
        let proj = project_system(&builtin("logistic", &BTreeMap::new()).unwrap(), m.library.clone(), Closure::Truncate)
            .unwrap();
        assert_eq!(proj.k, m.k);
    }

    #[test]
    fn logistic_never_closes() {
        let sys = builtin("logistic", &BTreeMap::new()).unwrap();
        for rank in 1..=6 {
            let m = carleman_logistic(3.5, rank).unwrap();
            let res = m.closure_residuals(&sys).unwrap();
            assert!(res.iter().any(|p| !p.is_zero()), "rank {rank}");
        }
    }

    #[test]
    fn center_manifold_truncation() {
        let m = carleman_center(4).unwrap();
        assert_eq!(
            m.k,
            mat(&[
                &[0.0, 1.0, 0.0, 0.0],
                &[0.0, 0.0, 2.0, 0.0],
                &[0.0, 0.0, 0.0, 3.0],
                &[0.0, 0.0, 0.0, 0.0]
            ])
        );
        for rank in 1..=12 {
            assert_eq!(carleman_center(rank).unwrap().k.determinant(), 0.0);
        }
    }

    #[test]
    fn center_truncation_tracks_solution() {
        let x0 = 0.5;
        let exact = |t: f64| 1.0 / (1.0 / x0 - t);
        let max_err = |rank: usize| {
            let p = carleman_center(rank).unwrap().predict(&[x0], 1.0, 0.01).unwrap();
            p.times
                .iter()
                .zip(&p.states)
                .map(|(t, s)| (s[0] - exact(*t)).abs())
                .fold(0.0, f64::max)
        };
        let errs: Vec<f64> = [2, 4, 8].iter().map(|&r| max_err(r)).collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
        assert!(errs[2] < 5e-3);
    }

    #[test]
    fn lift_state_examples() {
        let quad = slow_manifold_lift_ct(-0.05, -1.0, &[(1.0, 2)]).unwrap();
        assert_eq!(quad.lift_state(&[2.0, 5.0]).unwrap(), vec![2.0, 5.0, 4.0]);
        assert_eq!(quad.lift_state(&[0.0, 0.0]).unwrap(), vec![0.0; 3]);
        let quartic = slow_manifold_lift_ct(-0.05, -1.0, &[(1.0, 4), (-2.0, 2)]).unwrap();
        assert_eq!(quartic.lift_state(&[1.0, -1.0]).unwrap(), vec![1.0, -1.0, 1.0, 1.0]);
    }

    #[test]
    fn lifted_prediction_matches_simulation() {
        let (mu, lam) = (-0.05, -1.0);
        let sys = continuous_slow_manifold(mu, lam, &[(1.0, 2)]).unwrap();
        let model = slow_manifold_lift_ct(mu, lam, &[(1.0, 2)]).unwrap();
        let x0 = [1.5, -1.0];
        let truth = integrate(&sys, &x0, 10.0, 0.01, None).unwrap();
        let pred = model.predict(&x0, 10.0, 0.01).unwrap();
        let worst = truth
            .states
            .iter()
            .zip(&pred.states)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q).abs()))
            .fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst}");

        let tu = tu_lift(0.9, 0.5).unwrap();
        let it = iterate(&tu_map(0.9, 0.5).unwrap(), &[1.0, 1.0], 20).unwrap();
        let p = tu.predict(&[1.0, 1.0], 20.0, 1.0).unwrap();
        for (a, b) in it.states.iter().zip(&p.states) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn model_json_round_trip() {
        let m = slow_manifold_lift_ct(-0.05, -1.0, &[(1.0, 4), (-2.0, 2)]).unwrap();
        let text = serde_json::to_string(&m.to_json()).unwrap();
        assert!(text.contains("\"K\""));
        let back: ModelJson = serde_json::from_str(&text).unwrap();
        assert_eq!(KoopmanModel::from_json(&back).unwrap(), m);

        let named = KoopmanModel::new(
            ObservableLibrary::new(1, vec![Observable::Named(NamedObservable::ExpNegInv)]).unwrap(),
            Mat::identity(1, 1),
            TimeKind::Continuous,
        )
        .unwrap();
        let text = serde_json::to_string(&named.to_json()).unwrap();
        assert!(text.contains("exp-neg-inv"));
        let back: ModelJson = serde_json::from_str(&text).unwrap();
        assert_eq!(KoopmanModel::from_json(&back).unwrap(), named);
    }

    #[test]
    fn divergence_horizon_detects_first_miss() {
        let truth = Trajectory::new(vec![0.0, 1.0, 2.0], vec![vec![1.0], vec![1.0], vec![1.0]], None).unwrap();
        let pred = Trajectory::new(vec![0.0, 1.0, 2.0], vec![vec![1.0], vec![1.05], vec![1.2]], None).unwrap();
        assert_eq!(divergence_horizon(&pred, &truth, 0.1), Some(2.0));
        assert_eq!(divergence_horizon(&truth, &truth, 0.1), None);
    }
}
