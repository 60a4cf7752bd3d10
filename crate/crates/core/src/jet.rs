//! Truncated multivariate Taylor data ("jets") whose k-th coefficient is a
//! symmetric rank-k tensor, with the product-rule algebra closed under
//! multiplication, exponential, logarithm, reciprocal and integer powers.
//!
//! A jet stores the derivative tensors `F^{(0)}(0), ..., F^{(order)}(0)` of a
//! smooth function of d variables; the product rule for symmetric derivative
//! tensors reads
//!
//! ```text
//! (FG)^{(k)} = sum_j C(k, j) sym(F^{(j)} ⊗ G^{(k-j)}).
//! ```
//!
//! Characteristic-function-like quantities are kept in *moment form*: the
//! stored rank-k tensor is the true derivative divided by `i^k`, which for
//! `E[exp(i t * S)]` is exactly the moment tensor `E[S^{⊗k}]`.  Because every
//! product pairs `i^j` with `i^{k-j}`, moment-form jets obey the same real
//! algebra as plain jets, so the whole calculus stays in `f64`.

use crate::tensor::SymTensor;

/// Binomial coefficients up to the maximum jet order.
pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

#[derive(Debug, Clone)]
pub struct TensorJet {
    coeffs: Vec<SymTensor>,
}

impl TensorJet {
    /// Jet of the constant function `c`.
    pub fn constant(dim: usize, order: usize, c: f64) -> Self {
        let mut coeffs = vec![SymTensor::scalar(dim, c)];
        for k in 1..=order {
            coeffs.push(SymTensor::zeros(dim, k));
        }
        TensorJet { coeffs }
    }

    /// Build from explicit derivative tensors (rank k at position k), padding
    /// with zeros up to `order`.
    pub fn from_derivatives(derivs: Vec<SymTensor>, order: usize) -> Self {
        let dim = derivs[0].dim();
        let mut coeffs = derivs;
        for t in &coeffs {
            debug_assert!(t.is_symmetric(1e-9));
        }
        while coeffs.len() <= order {
            coeffs.push(SymTensor::zeros(dim, coeffs.len()));
        }
        coeffs.truncate(order + 1);
        TensorJet { coeffs }
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.coeffs[0].dim()
    }

    pub fn coeff(&self, k: usize) -> &SymTensor {
        &self.coeffs[k]
    }

    pub fn into_derivatives(self) -> Vec<SymTensor> {
        self.coeffs
    }

    pub fn value(&self) -> f64 {
        self.coeffs[0].as_scalar()
    }

    pub fn scale(&self, c: f64) -> Self {
        TensorJet {
            coeffs: self.coeffs.iter().map(|t| t.scale(c)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.order(), other.order());
        TensorJet {
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a.add(b))
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.order(), other.order());
        let order = self.order();
        let mut coeffs = Vec::with_capacity(order + 1);
        for k in 0..=order {
            let mut acc = SymTensor::zeros(self.dim(), k);
            for j in 0..=k {
                let term = self.coeffs[j]
                    .tensor_product(&other.coeffs[k - j])
                    .expect("rank bounded by jet order");
                acc = acc.add(&term.scale(binomial(k, j)));
            }
            coeffs.push(acc.symmetrized());
        }
        TensorJet { coeffs }
    }

    /// `exp(self)`, via `F' = G' F`:
    /// `F_{k+1} = sum_j C(k, j) sym(G_{j+1} ⊗ F_{k-j})`.
    pub fn exp(&self) -> Self {
        let order = self.order();
        let dim = self.dim();
        let mut coeffs = vec![SymTensor::scalar(dim, self.value().exp())];
        for k in 0..order {
            let mut acc = SymTensor::zeros(dim, k + 1);
            for j in 0..=k {
                let term = self.coeffs[j + 1]
                    .tensor_product(&coeffs[k - j])
                    .expect("rank bounded by jet order");
                acc = acc.add(&term.scale(binomial(k, j)));
            }
            coeffs.push(acc.symmetrized());
        }
        TensorJet { coeffs }
    }

    /// `log(self)` for a jet with positive value, by inverting the exp
    /// recursion.
    pub fn log(&self) -> Self {
        let order = self.order();
        let dim = self.dim();
        let f0 = self.value();
        assert!(f0 > 0.0, "jet log needs a positive leading value");
        let mut logs = vec![SymTensor::scalar(dim, f0.ln())];
        for k in 0..order {
            // F_{k+1} = sum_{j=0..k} C(k,j) sym(L_{j+1} ⊗ F_{k-j}); solve for L_{k+1}.
            let mut rest = SymTensor::zeros(dim, k + 1);
            for j in 0..k {
                let term = logs[j + 1]
                    .tensor_product(&self.coeffs[k - j])
                    .expect("rank bounded by jet order");
                rest = rest.add(&term.scale(binomial(k, j)));
            }
            let lk = self.coeffs[k + 1].sub(&rest).scale(1.0 / f0);
            logs.push(lk.symmetrized());
        }
        TensorJet { coeffs: logs }
    }

    pub fn recip(&self) -> Self {
        self.log().scale(-1.0).exp()
    }

    /// `self^n` for real `n` (used for the n-th power of an eigenvalue jet).
    pub fn powf(&self, n: f64) -> Self {
        self.log().scale(n).exp()
    }
}

/// A tensor-valued polynomial in the integer time parameter `n`:
/// `sum_p coeffs[p] n^p`, all coefficients of one fixed rank.
#[derive(Debug, Clone)]
pub struct NPoly {
    coeffs: Vec<SymTensor>,
}

impl NPoly {
    pub fn zero(dim: usize, rank: usize) -> Self {
        NPoly {
            coeffs: vec![SymTensor::zeros(dim, rank)],
        }
    }

    pub fn constant(t: SymTensor) -> Self {
        NPoly { coeffs: vec![t] }
    }

    pub fn rank(&self) -> usize {
        self.coeffs[0].rank()
    }

    /// Degree in n after dropping numerically-zero leading coefficients.
    pub fn degree(&self, tol: f64) -> usize {
        for p in (0..self.coeffs.len()).rev() {
            if self.coeffs[p].max_abs() > tol {
                return p;
            }
        }
        0
    }

    pub fn coeff(&self, p: usize) -> &SymTensor {
        &self.coeffs[p]
    }

    pub fn num_powers(&self) -> usize {
        self.coeffs.len()
    }

    pub fn add(&self, other: &Self) -> Self {
        let dim = self.coeffs[0].dim();
        let rank = self.rank();
        let len = self.coeffs.len().max(other.coeffs.len());
        let mut coeffs = Vec::with_capacity(len);
        for p in 0..len {
            let mut t = SymTensor::zeros(dim, rank);
            if p < self.coeffs.len() {
                t = t.add(&self.coeffs[p]);
            }
            if p < other.coeffs.len() {
                t = t.add(&other.coeffs[p]);
            }
            coeffs.push(t);
        }
        NPoly { coeffs }
    }

    /// Outer product with another n-polynomial, shifting n-powers.
    pub fn tensor_mul(&self, other: &Self) -> Self {
        let dim = self.coeffs[0].dim();
        let rank = self.rank() + other.rank();
        let mut coeffs =
            vec![SymTensor::zeros(dim, rank); self.coeffs.len() + other.coeffs.len() - 1];
        for (p, a) in self.coeffs.iter().enumerate() {
            for (q, b) in other.coeffs.iter().enumerate() {
                let t = a.tensor_product(b).expect("rank bounded");
                coeffs[p + q] = coeffs[p + q].add(&t);
            }
        }
        NPoly { coeffs }
    }

    pub fn scale(&self, c: f64) -> Self {
        NPoly {
            coeffs: self.coeffs.iter().map(|t| t.scale(c)).collect(),
        }
    }

    /// Multiply by the monomial `n`.
    pub fn shift_up(&self) -> Self {
        let mut coeffs = vec![SymTensor::zeros(self.coeffs[0].dim(), self.rank())];
        coeffs.extend(self.coeffs.iter().cloned());
        NPoly { coeffs }
    }

    pub fn symmetrized(&self) -> Self {
        NPoly {
            coeffs: self.coeffs.iter().map(|t| t.symmetrized()).collect(),
        }
    }

    pub fn eval(&self, n: f64) -> SymTensor {
        let mut acc = SymTensor::zeros(self.coeffs[0].dim(), self.rank());
        let mut np = 1.0;
        for c in &self.coeffs {
            acc = acc.add(&c.scale(np));
            np *= n;
        }
        acc
    }
}

/// Derivative tensors of `exp(n H)` at 0 as explicit polynomials in `n`,
/// where `H` is a jet with `H(0) = 0`.  Same product-rule recursion as
/// [`TensorJet::exp`], with scalar coefficients promoted to n-polynomials.
pub fn exp_n_jet(h: &TensorJet) -> Vec<NPoly> {
    assert!(h.value().abs() < 1e-300, "exp_n_jet needs H(0) = 0");
    let order = h.order();
    let dim = h.dim();
    let mut out: Vec<NPoly> = vec![NPoly::constant(SymTensor::scalar(dim, 1.0))];
    for k in 0..order {
        let mut acc = NPoly::zero(dim, k + 1);
        for j in 0..=k {
            // (nH)_{j+1} ⊗ F_{k-j}
            let term = NPoly::constant(h.coeff(j + 1).clone())
                .shift_up()
                .tensor_mul(&out[k - j])
                .scale(binomial(k, j));
            acc = acc.add(&term);
        }
        out.push(acc.symmetrized());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_jet(rng: &mut ChaCha8Rng, order: usize, value: f64) -> TensorJet {
        let mut derivs = vec![SymTensor::scalar(2, value)];
        for k in 1..=order {
            let entries: Vec<f64> = (0..(1usize << k)).map(|_| rng.gen_range(-0.5..0.5)).collect();
            derivs.push(SymTensor::from_entries(2, k, entries).symmetrized());
        }
        TensorJet::from_derivatives(derivs, order)
    }

    #[test]
    fn log_inverts_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let g = random_jet(&mut rng, 5, 0.2);
            let back = g.exp().log();
            for k in 0..=5 {
                assert!(g.coeff(k).sub(back.coeff(k)).max_abs() < 1e-12);
            }
        }
    }

    #[test]
    fn recip_times_self_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_jet(&mut rng, 6, 1.3);
        let prod = f.mul(&f.recip());
        assert_abs_diff_eq!(prod.value(), 1.0, epsilon = 1e-13);
        for k in 1..=6 {
            assert!(prod.coeff(k).max_abs() < 1e-12, "rank {k}");
        }
    }

    #[test]
    fn mul_matches_univariate_leibniz() {
        // restrict to jets supported on the first coordinate and compare with
        // scalar series multiplication
        let a = [1.0, 0.3, -0.2, 0.5, 0.1];
        let b = [0.8, -0.6, 0.4, 0.0, -0.3];
        let e1 = SymTensor::vector(&[1.0, 0.0]);
        let mk = |c: &[f64]| {
            let derivs: Vec<SymTensor> = c
                .iter()
                .enumerate()
                .map(|(k, &v)| e1.tensor_power(k).unwrap().scale(v))
                .collect();
            TensorJet::from_derivatives(derivs, 4)
        };
        let ja = mk(&a);
        let jb = mk(&b);
        let prod = ja.mul(&jb);
        for k in 0..=4usize {
            let want: f64 = (0..=k).map(|j| binomial(k, j) * a[j] * b[k - j]).sum();
            let got = prod.coeff(k).get(&vec![1; k]);
            assert_abs_diff_eq!(got, want, epsilon = 1e-13);
        }
    }

    #[test]
    fn exp_n_jet_matches_powf_at_fixed_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let mut h = random_jet(&mut rng, 6, 0.0);
            // zero out the low-order coefficients like a lambda/a quotient
            let mut derivs = h.clone().into_derivatives();
            for d in derivs.iter_mut().take(4) {
                *d = SymTensor::zeros(2, d.rank());
            }
            h = TensorJet::from_derivatives(derivs, 6);

            let polys = exp_n_jet(&h);
            for n in [3.0_f64, 17.0] {
                let direct = h.scale(n).exp();
                for (k, p) in polys.iter().enumerate() {
                    let diff = p.eval(n).sub(direct.coeff(k)).max_abs();
                    assert!(diff < 1e-10, "k = {k}, n = {n}: diff {diff}");
                }
            }
            // degree bound: at most floor(k / 4) when H starts at rank 4
            for (k, p) in polys.iter().enumerate() {
                assert!(p.degree(1e-12) <= k / 4, "degree bound at rank {k}");
            }
        }
    }
}
