//! Riccati-based optimal control: CARE solver, LQR gains, Koopman optimal
//! control (LQR on a lifted model with the state cost embedded) and the
//! closed-loop cost comparison between the two.

use std::collections::BTreeMap;

use nalgebra::{DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate, Feedback, PolySystem, TimeKind, Trajectory};
use crate::error::{Error, Result};
use crate::lifting::{mat_from_nested, project_system, rows_of, Closure, KoopmanModel, ObservableLibrary};
use crate::numerics::{eig, eigenvalues, ensure_finite, inverse, kron, solve, symmetrize, CMat, Mat};
use crate::par::{self, Execution};
use crate::poly::Monomial;

/// Real parts at or above this count as not asymptotically stable in the
/// stabilizability test.
pub const PBH_STABILITY_MARGIN: f64 = -1e-9;
pub const PBH_RCOND: f64 = 1e-10;
/// Relative CARE residual accepted without Newton polishing, and the final
/// acceptance bound.
pub const CARE_TOL: f64 = 1e-8;
const NEWTON_MAX_ITER: usize = 30;
/// Multiple of the rounding floor accepted when that floor already exceeds
/// [`CARE_TOL`] (large `‖P‖`).
pub const CARE_FLOOR_FACTOR: f64 = 1e3;

/// `min ∫ xᵀQx + uᵀRu` subject to `ẋ = Ax + Bu`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrProblem {
    pub a: Mat,
    pub b: Mat,
    pub q: Mat,
    pub r: Mat,
}

impl LqrProblem {
    pub fn new(a: Mat, b: Mat, q: Mat, r: Mat) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::NotSquare { rows: n, cols: a.ncols() });
        }
        let m = b.ncols();
        if b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
            return Err(Error::DimensionMismatch(format!(
                "A {n}x{n}, B {}x{}, Q {}x{}, R {}x{}",
                b.nrows(),
                b.ncols(),
                q.nrows(),
                q.ncols(),
                r.nrows(),
                r.ncols()
            )));
        }
        for (m, what) in [(&a, "A"), (&b, "B"), (&q, "Q"), (&r, "R")] {
            ensure_finite(m, what)?;
        }
        check_symmetric(&q, "Q")?;
        check_symmetric(&r, "R")?;
        let q_min = min_sym_eigenvalue(&q);
        if q_min < -1e-12 * q.norm().max(1.0) {
            return Err(Error::InvalidArgument(format!("Q is not positive semidefinite (eigenvalue {q_min})")));
        }
        if m > 0 && min_sym_eigenvalue(&r) <= 0.0 {
            return Err(Error::InvalidArgument("R is not positive definite".into()));
        }
        Ok(Self { a, b, q, r })
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    /// `‖AᵀP + PA − PBR⁻¹BᵀP + Q‖_F`.
    pub fn residual(&self, p: &Mat) -> Result<f64> {
        let s = self.input_weight()?;
        Ok((self.a.transpose() * p + p * &self.a - p * s * p + &self.q).norm())
    }

    /// `B R⁻¹ Bᵀ`.
    fn input_weight(&self) -> Result<Mat> {
        if self.b.ncols() == 0 {
            return Ok(Mat::zeros(self.states(), self.states()));
        }
        Ok(&self.b * solve(&self.r, &self.b.transpose())?)
    }

    /// `1e-8 · max(1, ‖Q‖_F)`.
    pub fn tolerance(&self) -> f64 {
        CARE_TOL * self.q.norm().max(1.0)
    }

    /// Size of the residual expected from rounding alone at `P`:
    /// `ε (‖Q‖ + 2‖A‖‖P‖ + ‖P‖² ‖BR⁻¹Bᵀ‖)`.
    pub fn rounding_floor(&self, p: &Mat) -> Result<f64> {
        let s = self.input_weight()?;
        let pn = p.norm();
        Ok(f64::EPSILON * (self.q.norm() + 2.0 * self.a.norm() * pn + pn * pn * s.norm()))
    }

    fn accepts(&self, p: &Mat) -> Result<bool> {
        let bound = self.tolerance().max(CARE_FLOOR_FACTOR * self.rounding_floor(p)?);
        Ok(self.residual(p)? <= bound)
    }
}

fn check_symmetric(m: &Mat, what: &'static str) -> Result<()> {
    if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
        return Err(Error::InvalidArgument(format!("{what} is not symmetric")));
    }
    Ok(())
}

fn min_sym_eigenvalue(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

/// Eigenvalues of `A` with real part `≥ −1e-9` for which
/// `rank [A − λI, B] < n` (Popov–Belevitch–Hautus test).
pub fn pbh_uncontrollable_modes(a: &Mat, b: &Mat) -> Result<Vec<Complex64>> {
    let n = a.nrows();
    let vals = eigenvalues(a)?;
    let mut out: Vec<Complex64> = Vec::new();
    for lam in vals {
        if lam.re < PBH_STABILITY_MARGIN || out.iter().any(|z| (z - lam).norm() <= 1e-8) {
            continue;
        }
        let m = CMat::from_fn(n, n + b.ncols(), |i, j| {
            if j < n {
                let d = if i == j { lam } else { Complex64::new(0.0, 0.0) };
                Complex64::new(a[(i, j)], 0.0) - d
            } else {
                Complex64::new(b[(i, j - n)], 0.0)
            }
        });
        let sv = m.singular_values();
        let top = sv.max();
        let rank = sv.iter().filter(|&&s| s > PBH_RCOND * top.max(1.0)).count();
        if rank < n {
            out.push(lam);
        }
    }
    Ok(out)
}

/// Stabilizing solution of `AᵀP + PA − PBR⁻¹BᵀP + Q = 0`.
///
/// The stable invariant subspace of the Hamiltonian gives `P = X₂X₁⁻¹`;
/// if that is inaccurate or `X₁` is singular the matrix sign function is
/// used instead, and either start is polished with Newton–Kleinman steps.
/// The result meets [`LqrProblem::tolerance`] unless `‖P‖` is so large that
/// rounding alone exceeds it, in which case it is within
/// [`CARE_FLOOR_FACTOR`] of [`LqrProblem::rounding_floor`].
pub fn solve_care(prob: &LqrProblem) -> Result<Mat> {
    let n = prob.states();
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let modes = pbh_uncontrollable_modes(&prob.a, &prob.b)?;
    if !modes.is_empty() {
        return Err(Error::NotStabilizable {
            modes: modes.iter().map(|z| (z.re, z.im)).collect(),
        });
    }
    let s = prob.input_weight()?;
    // With no state cost and A Hurwitz, P = 0 is the stabilizing solution.
    if prob.q.iter().all(|&v| v == 0.0) && eigenvalues(&prob.a)?.iter().all(|z| z.re < 0.0) {
        return Ok(Mat::zeros(n, n));
    }
    let mut h = Mat::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&prob.a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&s));
    h.view_mut((n, 0), (n, n)).copy_from(&(-&prob.q));
    h.view_mut((n, n), (n, n)).copy_from(&(-prob.a.transpose()));

    let tol = prob.tolerance();
    let start = match hamiltonian_eigen_solution(&h, n) {
        Ok(p) if prob.residual(&p)? <= tol && is_stabilizing(prob, &s, &p)? => return Ok(p),
        Ok(p) if is_stabilizing(prob, &s, &p)? => p,
        _ => sign_function_solution(&h, n)?,
    };
    let p = newton_kleinman(prob, &s, start)?;
    if !prob.accepts(&p)? || !is_stabilizing(prob, &s, &p)? {
        return Err(Error::NoConvergence("CARE"));
    }
    Ok(p)
}

fn hamiltonian_eigen_solution(h: &Mat, n: usize) -> Result<Mat> {
    let pairs = eig(h)?;
    let stable: Vec<usize> = (0..2 * n).filter(|&i| pairs.eigenvalues[i].re < 0.0).collect();
    if stable.len() != n {
        return Err(Error::NoConvergence("Hamiltonian stable subspace"));
    }
    let x = CMat::from_fn(2 * n, n, |i, j| pairs.right[(i, stable[j])]);
    let x1 = x.rows(0, n).into_owned();
    let x2 = x.rows(n, n).into_owned();
    // P X1 = X2  ⇔  X1ᵀ Pᵀ = X2ᵀ
    let pt = x1
        .transpose()
        .lu()
        .solve(&x2.transpose())
        .ok_or(Error::Singular("CARE X1"))?;
    let p = pt.transpose().map(|z| z.re);
    ensure_finite(&p, "CARE solution")?;
    Ok(symmetrize(&p))
}

/// `W = sign(H)` by scaled Newton iteration; `P` solves
/// `[W12; W22 + I] P = −[W11 + I; W21]` in least squares.
fn sign_function_solution(h: &Mat, n: usize) -> Result<Mat> {
    let mut w = h.clone();
    for _ in 0..100 {
        let inv = inverse(&w)?;
        let det = w.clone().lu().determinant().abs();
        let c = if det > 0.0 && det.is_finite() {
            det.powf(-1.0 / (2 * n) as f64)
        } else {
            1.0
        };
        let next = (&w * c + inv / c) * 0.5;
        let delta = (&next - &w).norm();
        w = next;
        if delta <= 1e-13 * w.norm() {
            break;
        }
    }
    let id = Mat::identity(n, n);
    let mut lhs = Mat::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n)).copy_from(&(w.view((n, n), (n, n)) + &id));
    let mut rhs = Mat::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-(w.view((0, 0), (n, n)) + &id)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w.view((n, 0), (n, n))));
    let p = crate::numerics::lstsq(&lhs, &rhs)?;
    ensure_finite(&p, "CARE solution")?;
    Ok(symmetrize(&p))
}

fn is_stabilizing(prob: &LqrProblem, s: &Mat, p: &Mat) -> Result<bool> {
    let closed = &prob.a - s * p;
    Ok(eigenvalues(&closed)?.iter().all(|z| z.re < 0.0))
}

/// Newton–Kleinman: `A_kᵀ P + P A_k = −(Q + P_k S P_k)` with
/// `A_k = A − S P_k`, while the residual keeps falling.
fn newton_kleinman(prob: &LqrProblem, s: &Mat, mut p: Mat) -> Result<Mat> {
    let mut res = prob.residual(&p)?;
    for _ in 0..NEWTON_MAX_ITER {
        if res <= 0.01 * prob.tolerance() {
            break;
        }
        let ak = &prob.a - s * &p;
        let rhs = -(&prob.q + &p * s * &p);
        let next = match solve_lyapunov(&ak, &rhs) {
            Ok(x) => symmetrize(&x),
            Err(_) => break,
        };
        let next_res = prob.residual(&next)?;
        if !(next_res < res) {
            break;
        }
        p = next;
        res = next_res;
    }
    Ok(p)
}

/// Solves `AᵀX + XA = C` through its Kronecker form.
pub fn solve_lyapunov(a: &Mat, c: &Mat) -> Result<Mat> {
    let n = a.nrows();
    let id = Mat::identity(n, n);
    let at = a.transpose();
    let big = kron(&id, &at) + kron(&at, &id);
    let rhs = Mat::from_column_slice(n * n, 1, c.as_slice());
    let x = solve(&big, &rhs)?;
    Ok(Mat::from_column_slice(n, n, x.as_slice()))
}

/// `C = R⁻¹BᵀP`.
pub fn lqr_gain(prob: &LqrProblem) -> Result<Mat> {
    let p = solve_care(prob)?;
    gain_from_care(prob, &p)
}

fn gain_from_care(prob: &LqrProblem, p: &Mat) -> Result<Mat> {
    if prob.b.ncols() == 0 {
        return Ok(Mat::zeros(0, prob.states()));
    }
    solve(&prob.r, &(prob.b.transpose() * p))
}

/// `u = −C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFeedback {
    pub gain: Mat,
}

impl Feedback for LinearFeedback {
    fn inputs(&self) -> usize {
        self.gain.nrows()
    }

    fn control(&self, x: &[f64]) -> Vec<f64> {
        let u = -(&self.gain * DVector::from_column_slice(x));
        u.iter().copied().collect()
    }
}

/// LQR on a lifted model; the feedback `u = −C̃ Θ(x)` is nonlinear in `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct KoocController {
    pub gain: Mat,
    pub library: ObservableLibrary,
    pub care_solution: Mat,
    pub problem: LqrProblem,
}

impl Feedback for KoocController {
    fn inputs(&self) -> usize {
        self.gain.nrows()
    }

    fn control(&self, x: &[f64]) -> Vec<f64> {
        // a library that cannot be evaluated at x gives no actuation
        let theta = self.library.eval(x).unwrap_or_else(|_| vec![0.0; self.library.len()]);
        let u = -(&self.gain * DVector::from_vec(theta));
        u.iter().copied().collect()
    }
}

/// Lifted input matrix `B̃ = ∇Θ(0) B`. `bilinear` is set when some
/// observable's gradient along `B` depends on the state (e.g. `x1²` with
/// input on `x1`); those state-dependent terms are not representable in
/// `ẏ = Ky + B̃u` and are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedInput {
    pub b: Mat,
    pub bilinear: bool,
}

pub fn lift_input_map(library: &ObservableLibrary, b: &Mat) -> Result<LiftedInput> {
    let n = library.dim();
    if b.nrows() != n {
        return Err(Error::DimensionMismatch(format!("input map has {} rows, state has {n}", b.nrows())));
    }
    let mut out = Mat::zeros(library.len(), b.ncols());
    let mut bilinear = false;
    let origin = Monomial::one(n);
    for r in 0..library.len() {
        let p = library
            .polynomial(r)
            .ok_or_else(|| Error::UnsupportedModel("input lifting needs polynomial observables".into()))?;
        for j in 0..b.ncols() {
            let mut dp = crate::poly::Polynomial::zero(n);
            for i in 0..n {
                if b[(i, j)] != 0.0 {
                    dp = dp + p.derivative(i).scale(b[(i, j)]);
                }
            }
            out[(r, j)] = dp.coeff(&origin);
            bilinear |= dp.terms().any(|(m, _)| m.degree() > 0);
        }
    }
    Ok(LiftedInput { b: out, bilinear })
}

/// LQR on `(K, B̃, Q̃, R)` with `Q̃` carrying `Q_state` on the state rows.
pub fn kooc_synthesize(model: &KoopmanModel, b_lift: &Mat, q_state: &Mat, r: &Mat) -> Result<KoocController> {
    if model.time_kind != TimeKind::Continuous {
        return Err(Error::TimeKind("KOOC needs a continuous-time generator"));
    }
    let n = model.library.dim();
    if model.state_rows.len() != n {
        return Err(Error::UnsupportedModel("KOOC needs a state-inclusive model".into()));
    }
    if q_state.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!("state cost must be {n}x{n}")));
    }
    let m = model.size();
    let mut q = Mat::zeros(m, m);
    for (i, &ri) in model.state_rows.iter().enumerate() {
        for (j, &rj) in model.state_rows.iter().enumerate() {
            q[(ri, rj)] = q_state[(i, j)];
        }
    }
    let problem = LqrProblem::new(model.k.clone(), b_lift.clone(), q, r.clone())?;
    let p = solve_care(&problem)?;
    let gain = gain_from_care(&problem, &p)?;
    Ok(KoocController {
        gain,
        library: model.library.clone(),
        care_solution: p,
        problem,
    })
}

/// Cumulative trapezoid of `xᵀQx + uᵀRu` at every sample.
pub fn closed_loop_cost(traj: &Trajectory, q: &Mat, r: &Mat) -> Result<Vec<f64>> {
    let inputs = traj
        .inputs
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("trajectory carries no inputs".into()))?;
    let integrand: Vec<f64> = traj
        .states
        .iter()
        .zip(inputs)
        .map(|(x, u)| Ok(quad_form(q, x)? + quad_form(r, u)?))
        .collect::<Result<_>>()?;
    Ok(cumulative_trapezoid(&traj.times, &integrand))
}

fn quad_form(m: &Mat, v: &[f64]) -> Result<f64> {
    if m.shape() != (v.len(), v.len()) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} weight for a {}-vector",
            m.nrows(),
            m.ncols(),
            v.len()
        )));
    }
    let v = DVector::from_column_slice(v);
    Ok(v.dot(&(m * &v)))
}

fn cumulative_trapezoid(t: &[f64], f: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.len());
    let mut acc = 0.0;
    for k in 0..f.len() {
        if k > 0 {
            acc += 0.5 * (t[k] - t[k - 1]) * (f[k] + f[k - 1]);
        }
        out.push(acc);
    }
    out
}

/// Settings for [`compare_lqr_kooc`].
#[derive(Debug, Clone)]
pub struct ComparisonOptions {
    pub horizon: f64,
    pub dt: f64,
    pub q: Mat,
    pub r: Mat,
    /// Lift used for KOOC; defaults to `[x1, x2, x1²]`.
    pub library: Option<ObservableLibrary>,
    pub exec: Execution,
}

impl ComparisonOptions {
    pub fn new(n: usize, inputs: usize) -> Self {
        Self {
            horizon: 50.0,
            dt: crate::dynamics::DEFAULT_DT,
            q: Mat::identity(n, n),
            r: Mat::identity(inputs, inputs),
            library: None,
            exec: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub system: String,
    pub params: BTreeMap<String, f64>,
    pub x0: Vec<f64>,
    pub lqr_gain: Mat,
    pub kooc_gain: Mat,
    pub kooc_library: ObservableLibrary,
    pub input_bilinear: bool,
    pub lqr: Trajectory,
    pub kooc: Trajectory,
    /// Applied-input cost of each closed loop.
    pub j_lqr: Vec<f64>,
    pub j_kooc: Vec<f64>,
    /// Both costs evaluated with the LQR law `u = −Cx` in the input term,
    /// whatever input was actually applied.
    pub j_lqr_lqr_input: Vec<f64>,
    pub j_kooc_lqr_input: Vec<f64>,
    pub cost_ratio: f64,
    pub cost_ratio_lqr_input: f64,
}

/// `J_KOOC / J_LQR`; two zero costs compare as 1.
pub fn cost_ratio(j_kooc: f64, j_lqr: f64) -> f64 {
    if j_lqr == 0.0 && j_kooc == 0.0 {
        1.0
    } else {
        j_kooc / j_lqr
    }
}

fn default_lift(n: usize) -> Result<ObservableLibrary> {
    if n != 2 {
        return Err(Error::UnsupportedModel("default lift is [x1, x2, x1^2]; pass a library".into()));
    }
    ObservableLibrary::from_monomials(2, vec![Monomial(vec![1, 0]), Monomial(vec![0, 1]), Monomial(vec![2, 0])])
}

/// Designs LQR on the Jacobian at the origin and KOOC on an exact lift,
/// then runs both on the nonlinear system with continuous feedback.
pub fn compare_lqr_kooc(sys: &PolySystem, x0: &[f64], opts: &ComparisonOptions) -> Result<ComparisonReport> {
    let b = sys
        .input_map
        .clone()
        .ok_or_else(|| Error::UnsupportedModel(format!("system `{}` is not actuated", sys.name)))?;
    let n = sys.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch(format!("x0 has {} entries, system has {n}", x0.len())));
    }
    let a = sys.jacobian(&vec![0.0; n]);
    let lqr_problem = LqrProblem::new(a, b.clone(), opts.q.clone(), opts.r.clone())?;
    let lqr = LinearFeedback {
        gain: lqr_gain(&lqr_problem)?,
    };

    let library = match &opts.library {
        Some(l) => l.clone(),
        None => default_lift(n)?,
    };
    let model = project_system(sys, library, Closure::Exact)?;
    let lifted = lift_input_map(&model.library, &b)?;
    let kooc = kooc_synthesize(&model, &lifted.b, &opts.q, &opts.r)?;

    let (t_lqr, t_kooc) = par::join(
        opts.exec,
        || integrate(sys, x0, opts.horizon, opts.dt, Some(&lqr)),
        || integrate(sys, x0, opts.horizon, opts.dt, Some(&kooc)),
    );
    let (t_lqr, t_kooc) = (t_lqr?, t_kooc?);
    let j_lqr = closed_loop_cost(&t_lqr, &opts.q, &opts.r)?;
    let j_kooc = closed_loop_cost(&t_kooc, &opts.q, &opts.r)?;
    let with_lqr_input = |t: &Trajectory| -> Result<Vec<f64>> {
        let relabeled = Trajectory {
            inputs: Some(t.states.iter().map(|x| lqr.control(x)).collect()),
            ..t.clone()
        };
        closed_loop_cost(&relabeled, &opts.q, &opts.r)
    };
    let j_lqr_lqr_input = with_lqr_input(&t_lqr)?;
    let j_kooc_lqr_input = with_lqr_input(&t_kooc)?;
    let last = |v: &[f64]| v.last().copied().unwrap_or(0.0);
    Ok(ComparisonReport {
        system: sys.name.clone(),
        params: sys.params.clone(),
        x0: x0.to_vec(),
        lqr_gain: lqr.gain,
        kooc_gain: kooc.gain,
        kooc_library: kooc.library,
        input_bilinear: lifted.bilinear,
        cost_ratio: cost_ratio(last(&j_kooc), last(&j_lqr)),
        cost_ratio_lqr_input: cost_ratio(last(&j_kooc_lqr_input), last(&j_lqr_lqr_input)),
        lqr: t_lqr,
        kooc: t_kooc,
        j_lqr,
        j_kooc,
        j_lqr_lqr_input,
        j_kooc_lqr_input,
    })
}

/// Serialized summary of a [`ComparisonReport`]. Trajectories are referenced
/// by file name rather than embedded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonJson {
    pub system: String,
    pub params: BTreeMap<String, f64>,
    pub x0: Vec<f64>,
    pub gains: GainsJson,
    pub input_bilinear: bool,
    pub cost_ratio: f64,
    pub cost_ratio_lqr_input: f64,
    pub times: Vec<f64>,
    #[serde(rename = "J_lqr")]
    pub j_lqr: Vec<f64>,
    #[serde(rename = "J_kooc")]
    pub j_kooc: Vec<f64>,
    #[serde(rename = "J_lqr_lqr_input")]
    pub j_lqr_lqr_input: Vec<f64>,
    #[serde(rename = "J_kooc_lqr_input")]
    pub j_kooc_lqr_input: Vec<f64>,
    pub trajectories: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainsJson {
    pub lqr: Vec<Vec<f64>>,
    pub kooc: Vec<Vec<f64>>,
    pub kooc_observables: Vec<String>,
}

impl ComparisonReport {
    pub fn to_json(&self, trajectories: BTreeMap<String, String>) -> ComparisonJson {
        ComparisonJson {
            system: self.system.clone(),
            params: self.params.clone(),
            x0: self.x0.clone(),
            gains: GainsJson {
                lqr: rows_of(&self.lqr_gain),
                kooc: rows_of(&self.kooc_gain),
                kooc_observables: self.kooc_library.labels(),
            },
            input_bilinear: self.input_bilinear,
            cost_ratio: self.cost_ratio,
            cost_ratio_lqr_input: self.cost_ratio_lqr_input,
            times: self.lqr.times.clone(),
            j_lqr: self.j_lqr.clone(),
            j_kooc: self.j_kooc.clone(),
            j_lqr_lqr_input: self.j_lqr_lqr_input.clone(),
            j_kooc_lqr_input: self.j_kooc_lqr_input.clone(),
            trajectories,
        }
    }
}

impl GainsJson {
    pub fn lqr_matrix(&self) -> Result<Mat> {
        mat_from_nested(&self.lqr)
    }

    pub fn kooc_matrix(&self) -> Result<Mat> {
        mat_from_nested(&self.kooc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::builtin;
    use crate::lifting::slow_manifold_lift_ct;
    use crate::numerics::mat_from_rows;
    use approx::assert_abs_diff_eq;

    fn m(rows: &[&[f64]]) -> Mat {
        mat_from_rows(rows).unwrap()
    }

    fn scalar(a: f64, b: f64, q: f64, r: f64) -> LqrProblem {
        LqrProblem::new(m(&[&[a]]), m(&[&[b]]), m(&[&[q]]), m(&[&[r]])).unwrap()
    }

    #[test]
    fn scalar_care() {
        let prob = scalar(-1.0, 1.0, 1.0, 1.0);
        let p = solve_care(&prob).unwrap();
        assert_abs_diff_eq!(p[(0, 0)], 2f64.sqrt() - 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(lqr_gain(&prob).unwrap()[(0, 0)], 0.41421356, epsilon = 1e-8);
    }

    #[test]
    fn hurwitz_without_state_cost() {
        let a = m(&[&[-1.0, 2.0], &[0.0, -3.0]]);
        let prob = LqrProblem::new(a, m(&[&[0.0], &[1.0]]), Mat::zeros(2, 2), m(&[&[1.0]])).unwrap();
        assert!(solve_care(&prob).unwrap().amax() < 1e-12);
    }

    #[test]
    fn zero_input_map_gives_zero_gain() {
        let a = m(&[&[-1.0, 0.0], &[1.0, -2.0]]);
        let prob = LqrProblem::new(a, Mat::zeros(2, 1), Mat::identity(2, 2), m(&[&[1.0]])).unwrap();
        assert_eq!(lqr_gain(&prob).unwrap().amax(), 0.0);
    }

    #[test]
    fn linearized_demo_gain() {
        let a = m(&[&[-0.1, 0.0], &[0.0, 1.0]]);
        let prob = LqrProblem::new(a, m(&[&[0.0], &[1.0]]), Mat::identity(2, 2), m(&[&[1.0]])).unwrap();
        let c = lqr_gain(&prob).unwrap();
        assert_abs_diff_eq!(c[(0, 0)], 0.0, epsilon = 1e-12);
        assert!(c[(0, 1)] > 2.0);
        assert_abs_diff_eq!(c[(0, 1)], 1.0 + 2f64.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn lifted_demo_care() {
        let model = slow_manifold_lift_ct(-0.1, 1.0, &[(1.0, 2)]).unwrap();
        let b = m(&[&[0.0], &[1.0], &[0.0]]);
        let ctl = kooc_synthesize(&model, &b, &Mat::identity(2, 2), &m(&[&[1.0]])).unwrap();
        let p = &ctl.care_solution;
        assert!(ctl.problem.residual(p).unwrap() <= 1e-8);
        assert_eq!(p, &p.transpose());
        let closed = &model.k - &b * &ctl.gain;
        assert!(eigenvalues(&closed).unwrap().iter().all(|z| z.re < 0.0));
        // cross-checked against an independent Riccati solver
        assert_abs_diff_eq!(ctl.gain[(0, 1)], 2.41421356, epsilon = 1e-7);
        assert_abs_diff_eq!(ctl.gain[(0, 2)], -1.49559737, epsilon = 1e-7);
    }

    #[test]
    fn kooc_zero_state_cost() {
        let model = slow_manifold_lift_ct(-0.1, -1.0, &[(1.0, 2)]).unwrap();
        let b = m(&[&[0.0], &[1.0], &[0.0]]);
        let ctl = kooc_synthesize(&model, &b, &Mat::zeros(2, 2), &m(&[&[1.0]])).unwrap();
        assert!(ctl.gain.amax() < 1e-12);
    }

    #[test]
    fn limitation_is_not_stabilizable() {
        let sys = builtin("limitation", &BTreeMap::new()).unwrap();
        let model = project_system(&sys, default_lift(2).unwrap(), Closure::Exact).unwrap();
        let lifted = lift_input_map(&model.library, sys.input_map.as_ref().unwrap()).unwrap();
        assert!(lifted.bilinear);
        assert_eq!(lifted.b, m(&[&[1.0], &[0.0], &[0.0]]));
        let err = kooc_synthesize(&model, &lifted.b, &Mat::identity(2, 2), &m(&[&[1.0]])).unwrap_err();
        match err {
            Error::NotStabilizable { modes } => {
                assert_eq!(modes.len(), 1);
                assert_abs_diff_eq!(modes[0].0, 0.2, epsilon = 1e-12);
                assert!(err_message_names(&modes));
            }
            other => panic!("{other}"),
        }
    }

    fn err_message_names(modes: &[(f64, f64)]) -> bool {
        Error::NotStabilizable { modes: modes.to_vec() }.to_string().contains("0.2")
    }

    #[test]
    fn pbh_on_demo() {
        let sys = builtin("kooc-demo", &BTreeMap::new()).unwrap();
        let model = project_system(&sys, default_lift(2).unwrap(), Closure::Exact).unwrap();
        let lifted = lift_input_map(&model.library, sys.input_map.as_ref().unwrap()).unwrap();
        assert!(!lifted.bilinear);
        assert!(pbh_uncontrollable_modes(&model.k, &lifted.b).unwrap().is_empty());
    }

    #[test]
    fn cost_of_decaying_exponential() {
        let times: Vec<f64> = (0..=20000).map(|k| k as f64 * 0.001).collect();
        let states = times.iter().map(|t| vec![(-t).exp()]).collect();
        let inputs = times.iter().map(|_| vec![0.0]).collect();
        let traj = Trajectory::new(times, states, Some(inputs)).unwrap();
        let j = closed_loop_cost(&traj, &m(&[&[1.0]]), &m(&[&[1.0]])).unwrap();
        assert_abs_diff_eq!(*j.last().unwrap(), 0.5, epsilon = 1e-4);
        assert!(closed_loop_cost(&Trajectory { inputs: None, ..traj }, &m(&[&[1.0]]), &m(&[&[1.0]])).is_err());
    }

    #[test]
    fn lqr_gain_is_locally_optimal() {
        let prob = scalar(-1.0, 1.0, 1.0, 1.0);
        let c = lqr_gain(&prob).unwrap()[(0, 0)];
        let sys = PolySystem::new(
            "scalar",
            TimeKind::Continuous,
            vec![crate::poly::Polynomial::var(1, 0).scale(-1.0)],
        )
        .unwrap()
        .with_input_map(m(&[&[1.0]]))
        .unwrap();
        let cost = |g: f64| {
            let fb = LinearFeedback { gain: m(&[&[g]]) };
            let t = integrate(&sys, &[1.0], 30.0, 0.01, Some(&fb)).unwrap();
            *closed_loop_cost(&t, &prob.q, &prob.r).unwrap().last().unwrap()
        };
        let best = cost(c);
        assert!(cost(1.05 * c) > best);
        assert!(cost(0.95 * c) > best);
    }

    #[test]
    fn origin_start_costs_nothing() {
        let sys = builtin("kooc-demo", &BTreeMap::new()).unwrap();
        let mut opts = ComparisonOptions::new(2, 1);
        opts.horizon = 1.0;
        let rep = compare_lqr_kooc(&sys, &[0.0, 0.0], &opts).unwrap();
        assert_eq!(rep.cost_ratio, 1.0);
        assert_eq!(*rep.j_lqr.last().unwrap(), 0.0);
    }

    #[test]
    fn demo_comparison() {
        let sys = builtin("kooc-demo", &BTreeMap::new()).unwrap();
        let opts = ComparisonOptions::new(2, 1);
        let rep = compare_lqr_kooc(&sys, &[-5.0, 5.0], &opts).unwrap();
        assert_abs_diff_eq!(rep.cost_ratio, 0.2208, epsilon = 5e-3);
        assert!((0.25..=0.40).contains(&rep.cost_ratio_lqr_input), "{}", rep.cost_ratio_lqr_input);
        let end = rep.kooc.last_state().unwrap();
        // x1 is unactuated and decays as 5 e^{-0.1 t}
        assert!(end.iter().all(|v| v.abs() < 0.05), "{end:?}");
        assert!(rep.j_kooc.last().unwrap().is_finite());
        let seq = compare_lqr_kooc(&sys, &[-5.0, 5.0], &ComparisonOptions { exec: Execution::Sequential, ..opts })
            .unwrap();
        assert_eq!(seq, rep);
    }

    #[test]
    fn report_json_round_trip() {
        let sys = builtin("kooc-demo", &BTreeMap::new()).unwrap();
        let mut opts = ComparisonOptions::new(2, 1);
        opts.horizon = 2.0;
        let rep = compare_lqr_kooc(&sys, &[-1.0, 1.0], &opts).unwrap();
        let j = rep.to_json(BTreeMap::from([("lqr".to_string(), "lqr.csv".to_string())]));
        let s = serde_json::to_string(&j).unwrap();
        let back: ComparisonJson = serde_json::from_str(&s).unwrap();
        assert_eq!(back, j);
        assert_eq!(back.gains.kooc_matrix().unwrap(), rep.kooc_gain);
    }
}
