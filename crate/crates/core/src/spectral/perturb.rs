//! Eigenvalue perturbation for the twisted operator family `t -> P_t`.
//!
//! The matrix entries are trigonometric monomials `p_ab e^{i t * kappa(a)}`,
//! so every t-derivative at 0 is exact: in moment form the rank-k derivative
//! of the matrix has component `alpha` equal to `p_ab kappa(a)^alpha`.  The
//! Rayleigh–Schrödinger recursion then produces the derivative tensors of the
//! leading eigenvalue, order by order, with one LU factorization of the
//! shifted generator `K - I + 1 pi` shared across all orders.

use nalgebra::{DMatrix, DVector};

use super::{MarkovModel, SpectralData, SpectralError};
use crate::jet::binomial;
use crate::tensor::SymTensor;

/// A rank-k tensor whose components are state vectors.
struct VecTensor {
    dim: usize,
    rank: usize,
    comps: Vec<DVector<f64>>,
}

impl VecTensor {
    fn zeros(dim: usize, rank: usize, states: usize) -> Self {
        VecTensor {
            dim,
            rank,
            comps: vec![DVector::zeros(states); dim.pow(rank as u32)],
        }
    }

    fn class_of(&self, mut offset: usize) -> usize {
        if self.dim == 1 {
            return 0;
        }
        let mut c = 0;
        for _ in 0..self.rank {
            c += offset & 1;
            offset >>= 1;
        }
        c
    }

    fn symmetrized(mut self) -> Self {
        if self.rank <= 1 || self.dim == 1 {
            return self;
        }
        let states = self.comps[0].len();
        let mut sums = vec![DVector::<f64>::zeros(states); self.rank + 1];
        let mut counts = vec![0usize; self.rank + 1];
        for (o, v) in self.comps.iter().enumerate() {
            let c = self.class_of(o);
            sums[c] += v;
            counts[c] += 1;
        }
        for (o, v) in self.comps.iter_mut().enumerate() {
            let c = self.class_of(o);
            *v = &sums[c] / counts[c] as f64;
        }
        self
    }

    fn add_scaled(&mut self, other: &VecTensor, c: f64) {
        for (a, b) in self.comps.iter_mut().zip(&other.comps) {
            a.axpy(c, b, 1.0);
        }
    }
}

/// Moment-form matrix derivatives of the twisted operator at t = 0.
fn matrix_jet(model: &MarkovModel, k_max: usize) -> Vec<Vec<DMatrix<f64>>> {
    let dim = model.dim();
    let s = model.num_states();
    let k_mat = model.transition();
    let mut out = Vec::with_capacity(k_max + 1);
    for rank in 0..=k_max {
        let mut comps = Vec::with_capacity(dim.pow(rank as u32));
        for offset in 0..dim.pow(rank as u32) {
            // kappa(a)^alpha with alpha read off the offset digits
            let mut weights = vec![1.0; s];
            let mut o = offset;
            for _ in 0..rank {
                let axis = o % dim;
                o /= dim;
                for (a, w) in weights.iter_mut().enumerate() {
                    *w *= model.kappa()[a][axis] as f64;
                }
            }
            let mut m = DMatrix::zeros(s, s);
            for a in 0..s {
                for b in 0..s {
                    m[(a, b)] = weights[a] * k_mat[(a, b)];
                }
            }
            comps.push(m);
        }
        out.push(comps);
    }
    out
}

pub(super) fn lambda_derivatives(
    model: &MarkovModel,
    k_max: usize,
) -> Result<SpectralData, SpectralError> {
    if k_max > 6 {
        return Err(SpectralError::OrderOverflow(k_max, 6));
    }
    let dim = model.dim();
    let s = model.num_states();
    let pi = model.stationary();
    let mats = matrix_jet(model, k_max);

    // shifted generator K - I + 1 pi, invertible on the whole space
    let mut shifted = model.transition().clone();
    for i in 0..s {
        shifted[(i, i)] -= 1.0;
        for j in 0..s {
            shifted[(i, j)] += pi[j];
        }
    }
    let lu = shifted.lu();

    let mut lambda = vec![SymTensor::scalar(dim, 1.0)];
    let mut vecs = vec![VecTensor {
        dim,
        rank: 0,
        comps: vec![DVector::from_element(s, 1.0)],
    }];

    for k in 1..=k_max {
        // forcing = sum_{j=1..k} C(k,j) sym(M_j v_{k-j})
        let mut forcing = VecTensor::zeros(dim, k, s);
        for j in 1..=k {
            let mut term = VecTensor::zeros(dim, k, s);
            let stride = dim.pow(j as u32);
            for (beta, mat) in mats[j].iter().enumerate() {
                for (gamma, vec) in vecs[k - j].comps.iter().enumerate() {
                    term.comps[beta + stride * gamma] = mat * vec;
                }
            }
            forcing.add_scaled(&term.symmetrized(), binomial(k, j));
        }

        // lambda_k = pi . forcing
        let mut lam_k = SymTensor::zeros(dim, k);
        for (o, comp) in forcing.comps.iter().enumerate() {
            let mut idx = Vec::with_capacity(k);
            let mut oo = o;
            for _ in 0..k {
                idx.push(oo % dim + 1);
                oo /= dim;
            }
            lam_k.set(&idx, pi.dot(comp));
        }
        let lam_k = lam_k.symmetrized();

        // rhs_k = sum_{j=1..k} C(k,j) sym(lambda_j ⊗ v_{k-j}) - forcing
        let mut rhs = VecTensor::zeros(dim, k, s);
        rhs.add_scaled(&forcing, -1.0);
        for j in 1..=k {
            let lam_j = if j == k { &lam_k } else { &lambda[j] };
            let mut term = VecTensor::zeros(dim, k, s);
            let stride = dim.pow(j as u32);
            for beta in 0..dim.pow(j as u32) {
                let mut idx = Vec::with_capacity(j);
                let mut oo = beta;
                for _ in 0..j {
                    idx.push(oo % dim + 1);
                    oo /= dim;
                }
                let coeff = lam_j.get(&idx);
                for (gamma, vec) in vecs[k - j].comps.iter().enumerate() {
                    term.comps[beta + stride * gamma] = vec * coeff;
                }
            }
            rhs.add_scaled(&term.symmetrized(), binomial(k, j));
        }

        // solve (K - I + 1 pi) v_k = rhs componentwise; solutions satisfy
        // pi . v_k = 0 because pi . rhs = 0 by construction of lambda_k
        let mut vk = VecTensor::zeros(dim, k, s);
        for (o, r) in rhs.comps.iter().enumerate() {
            vk.comps[o] = lu.solve(r).ok_or_else(|| {
                SpectralError::BadModel("shifted generator is singular".into())
            })?;
        }
        lambda.push(lam_k);
        vecs.push(vk.symmetrized());
    }

    Ok(SpectralData::new(dim, lambda))
}
