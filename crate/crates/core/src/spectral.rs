//! Koopman eigenfunctions from left eigenvectors of a finite operator,
//! trajectory-based verification and linear changes of coordinates.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{PolySystem, TimeKind, Trajectory};
use crate::error::{Error, Result};
use crate::identification::{differentiate_columns, interior};
use crate::lifting::{KoopmanModel, NamedObservable, Observable, ObservableLibrary};
use crate::numerics::{eig, inverse, normalize_phase, Mat, CMat};
use crate::poly::{Monomial, Polynomial};

/// Relative tolerance used to match eigenvalues.
pub const MATCH_TOL: f64 = 1e-8;

/// `φ(x) = Σ_j c_j Θ_j(x)` with `Kφ = λφ` (continuous rate or discrete
/// multiplier).
#[derive(Debug, Clone, PartialEq)]
pub struct Eigenfunction {
    pub eigenvalue: Complex64,
    pub coeffs: Vec<Complex64>,
    pub library: ObservableLibrary,
    pub time_kind: TimeKind,
}

impl Eigenfunction {
    /// Normalizes `coeffs` to unit norm with the largest entry real positive.
    pub fn from_coeffs(
        eigenvalue: Complex64,
        coeffs: Vec<Complex64>,
        library: ObservableLibrary,
        time_kind: TimeKind,
    ) -> Result<Self> {
        if coeffs.len() != library.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficients for {} observables",
                coeffs.len(),
                library.len()
            )));
        }
        if coeffs.iter().all(|c| *c == Complex64::new(0.0, 0.0)) {
            return Err(Error::InvalidArgument("eigenfunction coefficients are all zero".into()));
        }
        if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) || !eigenvalue.re.is_finite() {
            return Err(Error::NonFinite("eigenfunction"));
        }
        let v = normalize_phase(nalgebra::DVector::from_vec(coeffs));
        Ok(Self {
            eigenvalue,
            coeffs: v.iter().copied().collect(),
            library,
            time_kind,
        })
    }

    /// A single named observable with its known eigenvalue. For `e^{-1/x}`
    /// under `ẋ = x²` that eigenvalue is 1.
    pub fn named(obs: NamedObservable, eigenvalue: f64) -> Result<Self> {
        let lib = ObservableLibrary::new(1, vec![Observable::Named(obs)])?;
        Self::from_coeffs(
            Complex64::new(eigenvalue, 0.0),
            vec![Complex64::new(1.0, 0.0)],
            lib,
            TimeKind::Continuous,
        )
    }

    pub fn eval(&self, x: &[f64]) -> Result<Complex64> {
        let theta = self.library.eval(x)?;
        Ok(self.coeffs.iter().zip(&theta).map(|(c, t)| c * t).sum())
    }

    /// Real part of `φ` as a polynomial; `None` for named observables or a
    /// complex eigenfunction.
    pub fn polynomial(&self) -> Option<Polynomial> {
        if self.coeffs.iter().any(|c| c.im != 0.0) {
            return None;
        }
        let re: Vec<f64> = self.coeffs.iter().map(|c| c.re).collect();
        self.library.combination(&re)
    }

    pub fn to_json(&self) -> EigenfunctionJson {
        EigenfunctionJson {
            eigenvalue: [self.eigenvalue.re, self.eigenvalue.im],
            coeffs: self.coeffs.iter().map(|c| [c.re, c.im]).collect(),
            library: self.library.clone(),
            time_kind: self.time_kind,
        }
    }

    pub fn from_json(j: &EigenfunctionJson) -> Result<Self> {
        if j.coeffs.len() != j.library.len() {
            return Err(Error::Parse("coefficient count does not match library".into()));
        }
        Ok(Self {
            eigenvalue: Complex64::new(j.eigenvalue[0], j.eigenvalue[1]),
            coeffs: j.coeffs.iter().map(|c| Complex64::new(c[0], c[1])).collect(),
            library: j.library.clone(),
            time_kind: j.time_kind,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenfunctionJson {
    pub eigenvalue: [f64; 2],
    pub coeffs: Vec<[f64; 2]>,
    pub library: ObservableLibrary,
    pub time_kind: TimeKind,
}

/// One eigenfunction per left eigenpair of `K`, in eigenvalue order.
pub fn eigenfunctions(model: &KoopmanModel) -> Result<Vec<Eigenfunction>> {
    let pairs = eig(&model.k)?;
    (0..pairs.len())
        .map(|i| {
            Eigenfunction::from_coeffs(
                pairs.eigenvalues[i],
                pairs.left.row(i).iter().copied().collect(),
                model.library.clone(),
                model.time_kind,
            )
        })
        .collect()
}

/// Relative eigen-defect of `φ` along a trajectory. Continuous time compares
/// a finite-difference `d/dt φ(x(t))` with `λφ` on interior samples;
/// discrete time compares `φ(x_{k+1})` with `λφ(x_k)`. Both are normalised
/// by the RMS of `φ` over the same samples.
pub fn verify_eigenfunction(phi: &Eigenfunction, traj: &Trajectory) -> Result<f64> {
    if traj.dim() != phi.library.dim() {
        return Err(Error::DimensionMismatch("trajectory and library dimensions differ".into()));
    }
    let m = traj.len();
    let values: Vec<Complex64> = traj.states.iter().map(|x| phi.eval(x)).collect::<Result<_>>()?;
    let lam = phi.eigenvalue;
    let (num, den) = match phi.time_kind {
        TimeKind::Continuous => {
            if m < 5 {
                return Err(Error::InsufficientData(format!("{m} samples, need at least 5")));
            }
            let dt = traj.uniform_step().ok_or(Error::NonUniformSampling)?;
            let parts = Mat::from_fn(2, m, |r, k| if r == 0 { values[k].re } else { values[k].im });
            let d = differentiate_columns(&parts, dt);
            interior(m).fold((0.0, 0.0), |(n, s), k| {
                let dphi = Complex64::new(d[(0, k)], d[(1, k)]);
                (n + (dphi - lam * values[k]).norm_sqr(), s + values[k].norm_sqr())
            })
        }
        TimeKind::Discrete => {
            if m < 2 {
                return Err(Error::InsufficientData(format!("{m} samples, need at least 2")));
            }
            (0..m - 1).fold((0.0, 0.0), |(n, s), k| {
                (n + (values[k + 1] - lam * values[k]).norm_sqr(), s + values[k].norm_sqr())
            })
        }
    };
    if den == 0.0 {
        return Err(Error::DegenerateTrajectory);
    }
    Ok((num / den).sqrt())
}

/// `√2 [[cos θ, sin θ], [sin θ, −cos θ]]`; at 45° this is `η = x1 + x2`,
/// `ξ = x1 − x2`.
pub fn rotation_block(angle: f64) -> Mat {
    let (s, c) = angle.sin_cos();
    let r = std::f64::consts::SQRT_2;
    Mat::from_row_slice(2, 2, &[r * c, r * s, r * s, -r * c])
}

/// Rewrites a polynomial system in coordinates `z = S x`:
/// `ż = S f(S⁻¹ z)` (continuous) or `z⁺ = S F(S⁻¹ z)` (discrete).
pub fn change_coordinates(sys: &PolySystem, s: &Mat) -> Result<PolySystem> {
    let n = sys.dim();
    if s.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!("transform must be {n}x{n}")));
    }
    let s_inv = inverse(s)?;
    let back = linear_substitution(&s_inv);
    let pulled: Vec<Polynomial> = sys.equations.iter().map(|f| f.compose(&back)).collect();
    let eqs = (0..n)
        .map(|i| {
            (0..n).fold(Polynomial::zero(n), |acc, j| acc + pulled[j].scale(s[(i, j)]))
        })
        .collect();
    PolySystem::new(format!("{}-transformed", sys.name), sys.time_kind, eqs)
}

/// `x_i ↦ Σ_j m_ij z_j`.
fn linear_substitution(m: &Mat) -> Vec<Polynomial> {
    let n = m.nrows();
    (0..n)
        .map(|i| {
            let mut p = Polynomial::zero(n);
            for j in 0..n {
                p.add_term(Monomial::var(n, j), m[(i, j)]);
            }
            p
        })
        .collect()
}

/// Re-expresses a three-observable, two-state lift in coordinates
/// `(z1, z2) = S(angle) x` plus the real eigenfunction that involves the
/// extra observable. The new operator is `T K T⁻¹` and the new library is
/// `[z1, z2, φ(S⁻¹ z)]` over the rotated state.
pub fn rotate_model(model: &KoopmanModel, angle: f64) -> Result<KoopmanModel> {
    let lib = &model.library;
    if lib.dim() != 2 || lib.len() != 3 || model.state_rows.len() != 2 {
        return Err(Error::UnsupportedModel(
            "rotation needs a two-state lift with one extra observable".into(),
        ));
    }
    let extra = (0..3).find(|r| !model.state_rows.contains(r)).expect("three rows");
    let phi_row = extra_eigen_row(model, extra)?;
    let block = rotation_block(angle);
    let mut t = Mat::zeros(3, 3);
    for i in 0..2 {
        for j in 0..2 {
            t[(i, model.state_rows[j])] = block[(i, j)];
        }
    }
    for j in 0..3 {
        t[(2, j)] = phi_row[j];
    }
    let t_inv = inverse(&t)?;
    let k = &t * &model.k * &t_inv;

    let phi = lib
        .combination(&phi_row)
        .ok_or_else(|| Error::UnsupportedModel("rotation needs polynomial observables".into()))?;
    let back = linear_substitution(&inverse(&block)?);
    let observables = vec![
        Observable::Monomial(Monomial::var(2, 0)),
        Observable::Monomial(Monomial::var(2, 1)),
        Observable::Polynomial(phi.compose(&back)),
    ];
    KoopmanModel::new(ObservableLibrary::new(2, observables)?, k, model.time_kind)
}

/// Real left eigenvector with a non-zero coefficient on `extra`, choosing
/// the one with the largest state part, scaled so that its largest state
/// coefficient is 1.
fn extra_eigen_row(model: &KoopmanModel, extra: usize) -> Result<Vec<f64>> {
    let pairs = eig(&model.k)?;
    let scale = model.k.norm().max(1.0);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for i in 0..pairs.len() {
        if !pairs.is_real(i) {
            continue;
        }
        let row: Vec<f64> = pairs.left.row(i).iter().map(|z| z.re).collect();
        if row[extra].abs() <= 1e-12 * scale {
            continue;
        }
        let (pivot, weight) = model
            .state_rows
            .iter()
            .map(|&r| row[r])
            .fold((0.0f64, 0.0f64), |(p, w), v| if v.abs() > w { (v, v.abs()) } else { (p, w) });
        if weight <= 1e-12 && best.is_some() {
            continue;
        }
        if best.as_ref().is_none_or(|(w, _)| weight > *w) {
            let s = if weight > 1e-12 { pivot } else { row[extra] };
            best = Some((weight, row.iter().map(|v| v / s).collect()));
        }
    }
    best.map(|(_, r)| r)
        .ok_or_else(|| Error::UnsupportedModel("no real eigenfunction involves the extra observable".into()))
}

/// Slope `v3 / v2` of the right eigenvector of `K` for eigenvalue `2μ` on a
/// `[x1, x2, x1²]` lift, where `μ = K[x1, x1]`. This is the inclination of
/// the slow subspace in `(y2, y3)`.
pub fn slow_subspace_slope(model: &KoopmanModel) -> Result<f64> {
    let lib = &model.library;
    let sq = lib.index_of_monomial(&Monomial(vec![2, 0]));
    let (Some(sq), [r1, r2]) = (sq, model.state_rows.as_slice()) else {
        return Err(Error::UnsupportedModel("slope needs a [x1, x2, x1^2] lift".into()));
    };
    if model.time_kind != TimeKind::Continuous || model.size() != 3 {
        return Err(Error::UnsupportedModel("slope needs a continuous three-observable lift".into()));
    }
    let mu = model.k[(*r1, *r1)];
    let pairs = eig(&model.k)?;
    let i = pairs.match_eigenvalue(Complex64::new(2.0 * mu, 0.0), MATCH_TOL)?;
    let v = pairs.right.column(i);
    if v[*r2].norm() < 1e-14 {
        return Err(Error::DegenerateSpectrum("slow eigenvector has no x2 component".into()));
    }
    Ok((v[sq] / v[*r2]).re)
}

/// Left eigenvector matrix check: `max_i ‖ξ_i K − λ_i ξ_i‖`.
pub fn left_residual(model: &KoopmanModel, phis: &[Eigenfunction]) -> f64 {
    let kc: CMat = model.k.map(|v| Complex64::new(v, 0.0));
    phis.iter()
        .map(|p| {
            let xi = CMat::from_row_slice(1, p.coeffs.len(), &p.coeffs);
            (&xi * &kc - xi.scale(1.0) * p.eigenvalue).norm()
        })
        .fold(0.0, f64::max)
}
