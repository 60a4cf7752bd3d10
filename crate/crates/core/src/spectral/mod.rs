//! Finite-state Z^d extensions: a Markov chain on at most 64 states together
//! with an integer step function `kappa`, for which the twisted transfer
//! operator `P_t = P(e^{i t * kappa} ·)` is a finite matrix.  Everything the
//! perturbation theory promises — the leading eigenvalue `lambda_t`, its
//! projector decomposition, derivative tensors, and the cell-joint
//! expectations `E[u 1_{S_n = l} v ∘ T^n]` — is computable here exactly,
//! which makes these models the brute-force oracle for every expansion
//! formula in the toolkit.
//!
//! Derivative data follows the moment-form convention of [`crate::jet`]:
//! stored rank-k tensors are true t-derivatives divided by `i^k`.  In that
//! form the second derivative of `lambda` at 0 *is* the variance form
//! `Sigma^2` and the jet algebra stays real.

mod oracle;
mod perturb;

pub use oracle::{CellJoint, ChainCalculus};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use thiserror::Error;

use crate::jet::{NPoly, TensorJet};
use crate::tensor::SymTensor;

pub type C64 = Complex<f64>;

/// Hard cap on the state count; matrices stay small and dense.
pub const MAX_STATES: usize = 64;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("invalid model: {0}")]
    BadModel(String),
    #[error("spectral gap lost at t = ({0}, {1})")]
    GapLoss(f64, f64),
    #[error("displacement window overflow: |l| = {0} exceeds window {1}")]
    WindowOverflow(i64, i64),
    #[error("derivative order {0} not supported (max {1})")]
    OrderOverflow(usize, usize),
}

/// A probability-preserving finite-state base map with a centered lattice
/// step, i.e. the data of a Z^d extension (d = 1 or 2).
#[derive(Debug, Clone)]
pub struct MarkovModel {
    name: String,
    transition: DMatrix<f64>,
    stationary: DVector<f64>,
    kappa: Vec<[i64; 2]>,
    dim: usize,
}

impl MarkovModel {
    /// Validates row stochasticity, irreducibility/aperiodicity of the chain,
    /// centering of the step, and aperiodicity of the extension (the twisted
    /// operator must be strictly contracting away from t = 0, the finite-state
    /// avatar of the spectral-gap hypothesis outside a neighbourhood of 0).
    pub fn new(
        name: impl Into<String>,
        transition: DMatrix<f64>,
        kappa: Vec<[i64; 2]>,
        dim: usize,
    ) -> Result<Self, SpectralError> {
        let s = transition.nrows();
        if s == 0 || s > MAX_STATES || transition.ncols() != s {
            return Err(SpectralError::BadModel(format!(
                "need a square transition matrix with 1..={MAX_STATES} states"
            )));
        }
        if kappa.len() != s {
            return Err(SpectralError::BadModel(
                "kappa table must have one entry per state".into(),
            ));
        }
        if dim != 1 && dim != 2 {
            return Err(SpectralError::BadModel("dim must be 1 or 2".into()));
        }
        if dim == 1 && kappa.iter().any(|k| k[1] != 0) {
            return Err(SpectralError::BadModel(
                "d = 1 steps must have zero second component".into(),
            ));
        }
        for r in 0..s {
            let mut sum = 0.0;
            for c in 0..s {
                let p = transition[(r, c)];
                if p < 0.0 {
                    return Err(SpectralError::BadModel("negative transition weight".into()));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-14 {
                return Err(SpectralError::BadModel(format!(
                    "row {r} sums to {sum}, not 1"
                )));
            }
        }

        let stationary = stationary_distribution(&transition)
            .ok_or_else(|| SpectralError::BadModel("chain is not irreducible/aperiodic".into()))?;

        let mean: [f64; 2] = kappa.iter().zip(stationary.iter()).fold(
            [0.0, 0.0],
            |acc, (k, &p)| [acc[0] + p * k[0] as f64, acc[1] + p * k[1] as f64],
        );
        if mean[0].abs() > 1e-12 || mean[1].abs() > 1e-12 {
            return Err(SpectralError::BadModel(format!(
                "step is not centered: E[kappa] = ({}, {})",
                mean[0], mean[1]
            )));
        }

        let model = MarkovModel {
            name: name.into(),
            transition,
            stationary,
            kappa,
            dim,
        };
        model.check_extension_aperiodic()?;
        Ok(model)
    }

    /// Rejects extensions whose twisted operator keeps modulus-one spectrum
    /// away from t = 0 (e.g. the plain +/-e_1, +/-e_2 walk, which is
    /// 2-periodic on the lattice).
    fn check_extension_aperiodic(&self) -> Result<(), SpectralError> {
        let grid = 12usize;
        let step = 2.0 * std::f64::consts::PI / grid as f64;
        let t2_range: Vec<usize> = if self.dim == 2 { (0..grid).collect() } else { vec![0] };
        for i in 0..grid {
            for &j in &t2_range {
                let t = [-std::f64::consts::PI + i as f64 * step, -std::f64::consts::PI + j as f64 * step];
                if t[0].abs() < 0.3 && t[1].abs() < 0.3 {
                    continue;
                }
                let m = self.perturbed_operator(t);
                if spectral_radius_estimate_c(&m, 400) > 1.0 - 1e-9 {
                    return Err(SpectralError::BadModel(format!(
                        "extension is periodic: |spectrum| reaches 1 at t = ({}, {})",
                        t[0], t[1]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_states(&self) -> usize {
        self.transition.nrows()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn stationary(&self) -> &DVector<f64> {
        &self.stationary
    }

    pub fn kappa(&self) -> &[[i64; 2]] {
        &self.kappa
    }

    pub fn kappa_component(&self, axis: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.num_states(),
            self.kappa.iter().map(|k| k[axis] as f64),
        )
    }

    pub fn max_step(&self) -> i64 {
        self.kappa
            .iter()
            .map(|k| k[0].abs().max(k[1].abs()))
            .max()
            .unwrap_or(0)
    }

    /// All transition rows identical: the step sequence is i.i.d., which
    /// unlocks the scalar convolution fast path in the cell-joint oracle.
    pub fn is_iid(&self) -> bool {
        let s = self.num_states();
        (1..s).all(|r| (0..s).all(|c| self.transition[(r, c)] == self.transition[(0, c)]))
    }

    pub fn expectation(&self, u: &DVector<f64>) -> f64 {
        self.stationary.dot(u)
    }

    /// The twisted operator `P_t` as a matrix acting on state functions, with
    /// `E[e^{i t * S_n}] = stationary · P_t^n · 1`.
    pub fn perturbed_operator(&self, t: [f64; 2]) -> DMatrix<C64> {
        let s = self.num_states();
        let mut m = DMatrix::zeros(s, s);
        for a in 0..s {
            let phase = t[0] * self.kappa[a][0] as f64 + t[1] * self.kappa[a][1] as f64;
            let w = C64::from_polar(1.0, phase);
            for b in 0..s {
                m[(a, b)] = w * self.transition[(a, b)];
            }
        }
        m
    }

    /// Leading-eigenvalue decomposition `P_t = lambda Pi + R` with
    /// `Pi R = R Pi = 0`, `Pi^2 = Pi`, by power iteration with deflation.
    pub fn leading_triple(&self, t: [f64; 2]) -> Result<SpectralTriple, SpectralError> {
        let m = self.perturbed_operator(t);
        let s = self.num_states();
        let ones = DVector::from_element(s, C64::new(1.0, 0.0));
        let right = power_iterate(&m, &ones)
            .ok_or(SpectralError::GapLoss(t[0], t[1]))?;
        let stat = DVector::from_iterator(s, self.stationary.iter().map(|&p| C64::new(p, 0.0)));
        let left = power_iterate(&m.transpose(), &stat)
            .ok_or(SpectralError::GapLoss(t[0], t[1]))?;

        // Rayleigh quotient through the left vector.
        let mv = &m * &right.vector;
        let denom = left.vector.dot(&right.vector);
        if denom.norm() < 1e-13 {
            return Err(SpectralError::GapLoss(t[0], t[1]));
        }
        let lambda = left.vector.dot(&mv) / denom;

        let scale = denom;
        let mut projector = DMatrix::zeros(s, s);
        for i in 0..s {
            for j in 0..s {
                projector[(i, j)] = right.vector[i] * left.vector[j] / scale;
            }
        }
        let remainder = &m - projector.map(|x| x * lambda);
        let rho = spectral_radius_estimate_c(&remainder, 400);
        if rho >= lambda.norm() * (1.0 - 1e-9) {
            return Err(SpectralError::GapLoss(t[0], t[1]));
        }
        Ok(SpectralTriple {
            lambda,
            projector,
            remainder,
        })
    }

    /// Moment-form derivative tensors of the leading eigenvalue at t = 0 up
    /// to order `k_max` (at most 6), by the eigenvalue perturbation recursion
    /// on the exactly differentiated matrix family.
    pub fn lambda_derivatives(&self, k_max: usize) -> Result<SpectralData, SpectralError> {
        perturb::lambda_derivatives(self, k_max)
    }

    /// Moment-form derivative tensors of `(lambda^n / a^n)` at 0 as explicit
    /// polynomials in n, with `a_t = exp(-Sigma^2 * t^{⊗2} / 2)`.
    pub fn lambda_over_a_derivatives(&self, j_max: usize) -> Result<Vec<NPoly>, SpectralError> {
        let data = self.lambda_derivatives(j_max.min(6).max(2))?;
        data.lambda_over_a(j_max)
    }

    /// Exact `E[u · 1_{S_n = l} · v ∘ T^n]` for every reachable `l`, by
    /// dynamic programming over (state, displacement).
    pub fn cell_joint_table(
        &self,
        u: &DVector<f64>,
        v: &DVector<f64>,
        n: usize,
        window_cap: Option<i64>,
    ) -> Result<CellJoint, SpectralError> {
        oracle::cell_joint_table(self, u, v, n, window_cap)
    }

    /// Single-entry convenience over [`MarkovModel::cell_joint_table`].
    pub fn exact_cell_joint(
        &self,
        u: &DVector<f64>,
        v: &DVector<f64>,
        n: usize,
        l: [i64; 2],
    ) -> Result<f64, SpectralError> {
        let table = self.cell_joint_table(u, v, n, None)?;
        Ok(table.value(l))
    }

    /// Moment-form derivatives at t = 0 of
    /// `E[u e^{i t * S_n} v ∘ T^n] / lambda_t^n` up to order `m_max`
    /// (the finite-n coefficient tensors whose limits are the `A_m`).
    pub fn exact_am(
        &self,
        u: &DVector<f64>,
        v: &DVector<f64>,
        m_max: usize,
        n: usize,
    ) -> Result<Vec<SymTensor>, SpectralError> {
        if m_max > 4 {
            return Err(SpectralError::OrderOverflow(m_max, 4));
        }
        let numerator = oracle::twisted_moment_jet(self, u, v, m_max, n);
        let data = self.lambda_derivatives(m_max.max(2))?;
        let lam = data.lambda_jet_truncated(m_max);
        let g = lam.log().scale(-(n as f64)).exp();
        Ok(numerator.mul(&g).into_derivatives())
    }

    /// Moment tensors `E[S_n^{⊗p}]` for p up to 4, exactly.
    pub fn s_moments(&self, n: usize, p_max: usize) -> Vec<SymTensor> {
        let ones = DVector::from_element(self.num_states(), 1.0);
        oracle::twisted_moment_jet(self, &ones, &ones, p_max, n).into_derivatives()
    }

    /// Chain-calculus handle for exact stationary correlations.
    pub fn calculus(&self) -> ChainCalculus {
        ChainCalculus::new(self)
    }
}

/// Output of [`MarkovModel::leading_triple`].
#[derive(Debug, Clone)]
pub struct SpectralTriple {
    pub lambda: C64,
    pub projector: DMatrix<C64>,
    pub remainder: DMatrix<C64>,
}

/// Derivative tensors of the leading eigenvalue at 0 (moment form), plus the
/// variance form they contain.
#[derive(Debug, Clone)]
pub struct SpectralData {
    dim: usize,
    /// moment-form derivative tensors lambda^{(k)} / i^k, k = 0..=k_max
    lambda_moments: Vec<SymTensor>,
}

impl SpectralData {
    pub(crate) fn new(dim: usize, lambda_moments: Vec<SymTensor>) -> Self {
        SpectralData {
            dim,
            lambda_moments,
        }
    }

    pub fn order(&self) -> usize {
        self.lambda_moments.len() - 1
    }

    pub fn lambda_moment(&self, k: usize) -> &SymTensor {
        &self.lambda_moments[k]
    }

    /// Variance form `Sigma^2` (the moment-form second derivative).
    pub fn sigma2(&self) -> &SymTensor {
        &self.lambda_moments[2]
    }

    /// True fourth derivative tensor of `lambda` at 0 (equal to its moment
    /// form since i^4 = 1).
    pub fn lambda4(&self) -> &SymTensor {
        &self.lambda_moments[4]
    }

    /// `Lambda_4 = lambda_0^{(4)} - 3 sym((Sigma^2)^{⊗2})`, the fourth
    /// derivative of `lambda/a` at 0.
    pub fn capital_lambda4(&self) -> SymTensor {
        let s2 = self.sigma2();
        let s4 = s2
            .tensor_product(s2)
            .expect("rank 4")
            .symmetrized()
            .scale(3.0);
        self.lambda4().sub(&s4)
    }

    pub fn lambda_jet_truncated(&self, order: usize) -> TensorJet {
        TensorJet::from_derivatives(
            self.lambda_moments[..=order.min(self.order())].to_vec(),
            order,
        )
    }

    /// Gaussian comparison jet: moment tensors of N(0, Sigma^2).
    pub fn gaussian_jet(&self, order: usize) -> TensorJet {
        let h = TensorJet::from_derivatives(
            vec![
                SymTensor::zeros(self.dim, 0),
                SymTensor::zeros(self.dim, 1),
                self.sigma2().clone(),
            ],
            order,
        );
        h.exp()
    }

    /// Derivatives of `(lambda/a)^n` at 0 as polynomials in n.
    pub fn lambda_over_a(&self, j_max: usize) -> Result<Vec<NPoly>, SpectralError> {
        if j_max > self.order() {
            return Err(SpectralError::OrderOverflow(j_max, self.order()));
        }
        let lam = self.lambda_jet_truncated(j_max);
        let a = self.gaussian_jet(j_max);
        let h = lam.log().sub(&a.log());
        Ok(crate::jet::exp_n_jet(&h))
    }
}

/// Stationary distribution of an irreducible aperiodic row-stochastic matrix,
/// or None when power iteration fails to converge to a positive vector.
fn stationary_distribution(k: &DMatrix<f64>) -> Option<DVector<f64>> {
    let s = k.nrows();
    let mut pi = DVector::from_element(s, 1.0 / s as f64);
    for _ in 0..200_000 {
        let next = (k.transpose() * &pi).map(|x| x.max(0.0));
        let total: f64 = next.iter().sum();
        let next = next / total;
        let diff = (&next - &pi).abs().max();
        pi = next;
        if diff < 1e-15 {
            if pi.iter().any(|&p| p <= 1e-13) {
                return None;
            }
            return Some(pi);
        }
    }
    None
}

struct PowerResult {
    vector: DVector<C64>,
}

/// Direction of the dominant eigenvector; None when iteration stagnates
/// without converging (no usable gap).
fn power_iterate(m: &DMatrix<C64>, start: &DVector<C64>) -> Option<PowerResult> {
    let mut v = start.clone();
    let norm0 = v.norm();
    if norm0 == 0.0 {
        return None;
    }
    v /= C64::new(norm0, 0.0);
    for _ in 0..100_000 {
        let mut next = m * &v;
        let norm = next.norm();
        if norm < 1e-300 {
            return None;
        }
        next /= C64::new(norm, 0.0);
        // remove the global phase so the convergence test sees direction only
        let phase = next.dot(&v);
        let aligned = if phase.norm() > 1e-13 {
            next.map(|x| x * phase.conj() / phase.norm())
        } else {
            next.clone()
        };
        let diff = (&aligned - &v).norm();
        v = aligned;
        if diff < 1e-14 {
            return Some(PowerResult { vector: v });
        }
    }
    None
}

fn spectral_radius_estimate_c(m: &DMatrix<C64>, iters: usize) -> f64 {
    let s = m.nrows();
    let mut v = DVector::from_fn(s, |i, _| C64::new(1.0 + 0.1 * (i as f64 + 1.0), 0.017 * i as f64));
    v /= C64::new(v.norm(), 0.0);
    let mut rho: f64 = 0.0;
    let burn = iters / 2;
    for it in 0..iters {
        let next = m * &v;
        let norm = next.norm();
        if norm < 1e-300 {
            return 0.0;
        }
        if it >= burn {
            rho = rho.max(norm);
        }
        v = next / C64::new(norm, 0.0);
    }
    rho
}

/// Builtin models used throughout the tests and the verification CLI.
pub mod models {
    use super::*;

    /// Uniform i.i.d. steps on {(0,0), (±1,0), (0,±1)}: the five-point lazy
    /// walk on Z^2 with `lambda_t = (1 + 2 cos t1 + 2 cos t2) / 5`.
    pub fn w5() -> MarkovModel {
        let s = 5;
        let transition = DMatrix::from_element(s, s, 1.0 / s as f64);
        let kappa = vec![[0, 0], [1, 0], [-1, 0], [0, 1], [0, -1]];
        MarkovModel::new("w5", transition, kappa, 2).expect("w5 is a valid model")
    }

    /// Two communicating 5-step blocks with asymmetric mixing: a d = 2 chain
    /// with genuine temporal correlations, reversal-symmetric in law.
    pub fn correlated2d() -> MarkovModel {
        // states: (block, step); block A prefers staying, block B mixes fast
        let steps: [[i64; 2]; 5] = [[0, 0], [1, 0], [-1, 0], [0, 1], [0, -1]];
        let s = 10;
        let mut k = DMatrix::zeros(s, s);
        for a in 0..s {
            let block = a / 5;
            let (stay, leave) = if block == 0 { (0.8, 0.2) } else { (0.4, 0.6) };
            for b in 0..s {
                let tb = b / 5;
                let w = if tb == block { stay } else { leave };
                k[(a, b)] = w / 5.0;
            }
        }
        let mut kappa = Vec::with_capacity(s);
        for a in 0..s {
            kappa.push(steps[a % 5]);
        }
        MarkovModel::new("correlated2d", k, kappa, 2).expect("valid model")
    }

    /// Three-state d = 1 chain whose second eigenvalue has modulus exactly
    /// 1/2 (cyclic with weights 1/2, 1/2), steps {1, -1, 0}.
    pub fn decay_half() -> MarkovModel {
        let k = DMatrix::from_row_slice(
            3,
            3,
            &[0.5, 0.5, 0.0, 0.0, 0.5, 0.5, 0.5, 0.0, 0.5],
        );
        MarkovModel::new("decay-half", k, vec![[1, 0], [-1, 0], [0, 0]], 1)
            .expect("valid model")
    }

    /// d = 1 lazy walk, steps {0, 1, -1} uniform (cheap high-n oracle).
    pub fn w3_line() -> MarkovModel {
        let transition = DMatrix::from_element(3, 3, 1.0 / 3.0);
        MarkovModel::new("w3-line", transition, vec![[0, 0], [1, 0], [-1, 0]], 1)
            .expect("valid model")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn w5_eigenvalue_closed_form() {
        let m = models::w5();
        for t in [[0.0, 0.0], [0.3, -0.2], [1.0, 0.5], [2.5, 2.9]] {
            let triple = m.leading_triple(t).unwrap();
            let want = (1.0 + 2.0 * t[0].cos() + 2.0 * t[1].cos()) / 5.0;
            assert_abs_diff_eq!(triple.lambda.re, want, epsilon = 1e-12);
            assert_abs_diff_eq!(triple.lambda.im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn unperturbed_operator_fixes_constants() {
        let m = models::correlated2d();
        let triple = m.leading_triple([0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(triple.lambda.re, 1.0, epsilon = 1e-12);
        // Pi_0 = E[.] 1: applying the projector to any vector gives its mean
        let s = m.num_states();
        let u = DVector::from_fn(s, |i, _| C64::new((i * i) as f64, 0.0));
        let proj = &triple.projector * &u;
        let mean: f64 = (0..s).map(|i| m.stationary()[i] * (i * i) as f64).sum();
        for i in 0..s {
            assert_abs_diff_eq!(proj[i].re, mean, epsilon = 1e-10);
        }
    }

    #[test]
    fn projector_identities_hold() {
        let m = models::correlated2d();
        let triple = m.leading_triple([0.1, 0.0]).unwrap();
        let p2 = &triple.projector * &triple.projector;
        assert!((&p2 - &triple.projector).norm() < 1e-10, "Pi^2 = Pi");
        let pr = &triple.projector * &triple.remainder;
        let rp = &triple.remainder * &triple.projector;
        assert!(pr.norm() < 1e-10, "Pi R = 0");
        assert!(rp.norm() < 1e-10, "R Pi = 0");
        // reconstruction
        let m_t = m.perturbed_operator([0.1, 0.0]);
        let rebuilt = triple.projector.map(|x| x * triple.lambda) + &triple.remainder;
        assert!((&m_t - rebuilt).norm() < 1e-12);
    }

    #[test]
    fn two_state_triple_matches_closed_form_eigensolve() {
        // an asymmetric-looking but centered 2-state chain, d = 1
        let k = DMatrix::from_row_slice(2, 2, &[0.7, 0.3, 0.6, 0.4]);
        // stationary = (2/3, 1/3); kappa = (1, -2) gives E = 2/3 - 2/3 = 0
        let m = MarkovModel::new("two-state", k, vec![[1, 0], [-2, 0]], 1).unwrap();
        let t = [0.1, 0.0];
        let triple = m.leading_triple(t).unwrap();
        // independent 2x2 oracle: direct quadratic formula for the spectrum
        let mt = m.perturbed_operator(t);
        let tr = mt[(0, 0)] + mt[(1, 1)];
        let det = mt[(0, 0)] * mt[(1, 1)] - mt[(0, 1)] * mt[(1, 0)];
        let disc = (tr * tr - det * 4.0).sqrt();
        let l1 = (tr + disc) * 0.5;
        let l2 = (tr - disc) * 0.5;
        let want = if l1.norm() > l2.norm() { l1 } else { l2 };
        assert!((triple.lambda - want).norm() < 1e-12);
    }

    #[test]
    fn periodic_extension_is_rejected() {
        // plain ±e1/±e2 walk: S_n has period-2 parity, Hypothesis-style gap
        // off [-b,b]^2 fails at t = (pi, pi)
        let transition = DMatrix::from_element(4, 4, 0.25);
        let kappa = vec![[1, 0], [-1, 0], [0, 1], [0, -1]];
        let err = MarkovModel::new("plain-walk", transition, kappa, 2);
        assert!(matches!(err, Err(SpectralError::BadModel(_))));
    }

    #[test]
    fn non_centered_step_is_rejected() {
        let transition = DMatrix::from_element(2, 2, 0.5);
        let err = MarkovModel::new("drift", transition, vec![[1, 0], [2, 0]], 1);
        assert!(matches!(err, Err(SpectralError::BadModel(_))));
    }
}
