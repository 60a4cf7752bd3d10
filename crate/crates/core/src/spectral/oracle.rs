//! Brute-force oracles for finite-state extensions: the (state, displacement)
//! dynamic program behind `E[u 1_{S_n = l} v ∘ T^n]`, exact moment jets of
//! the twisted expectation, and closed-form stationary correlation sums via
//! the fundamental matrix.

use nalgebra::{DMatrix, DVector, LU};

use super::{MarkovModel, SpectralError};
use crate::jet::{binomial, TensorJet};
use crate::tensor::SymTensor;

/// Exact joint law of (u at time 0, S_n, v at time n) over the displacement
/// window `[-window, window]^d`; mass outside the window is tracked in
/// `leaked` (zero when the window covers the full reachable set).
#[derive(Debug, Clone)]
pub struct CellJoint {
    dim: usize,
    window: i64,
    side: usize,
    values: Vec<f64>,
    leaked: f64,
    n: usize,
}

impl CellJoint {
    pub fn window(&self) -> i64 {
        self.window
    }

    pub fn leaked(&self) -> f64 {
        self.leaked
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn offset(&self, l: [i64; 2]) -> Option<usize> {
        if l[0].abs() > self.window || (self.dim == 2 && l[1].abs() > self.window) {
            return None;
        }
        if self.dim == 1 && l[1] != 0 {
            return None;
        }
        let x = (l[0] + self.window) as usize;
        Some(if self.dim == 2 {
            let y = (l[1] + self.window) as usize;
            y * self.side + x
        } else {
            x
        })
    }

    /// Value at `l`; exactly zero outside the window up to the leaked mass.
    pub fn value(&self, l: [i64; 2]) -> f64 {
        self.offset(l).map_or(0.0, |o| self.values[o])
    }

    pub fn checked_value(&self, l: [i64; 2]) -> Result<f64, SpectralError> {
        self.offset(l)
            .map(|o| self.values[o])
            .ok_or(SpectralError::WindowOverflow(
                l[0].abs().max(l[1].abs()),
                self.window,
            ))
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Iterate `(l, value)` over the window.
    pub fn iter(&self) -> impl Iterator<Item = ([i64; 2], f64)> + '_ {
        let side = self.side;
        let w = self.window;
        let dim = self.dim;
        self.values.iter().enumerate().map(move |(o, &v)| {
            let l = if dim == 2 {
                [(o % side) as i64 - w, (o / side) as i64 - w]
            } else {
                [o as i64 - w, 0]
            };
            (l, v)
        })
    }

    /// `sum_l value(l) * poly(l)` for a rank-p monomial `l^{⊗p}`, as a tensor.
    pub fn moment(&self, p: usize) -> SymTensor {
        let mut acc = SymTensor::zeros(self.dim, p);
        for (l, v) in self.iter() {
            if v == 0.0 {
                continue;
            }
            let lv = if self.dim == 2 {
                SymTensor::vector(&[l[0] as f64, l[1] as f64])
            } else {
                SymTensor::vector(&[l[0] as f64])
            };
            acc = acc.add(&lv.tensor_power(p).expect("rank bounded").scale(v));
        }
        acc
    }
}

fn plane_len(dim: usize, window: i64) -> usize {
    let side = (2 * window + 1) as usize;
    if dim == 2 {
        side * side
    } else {
        side
    }
}

/// Shift a displacement plane by a lattice step, accumulating into `out`
/// with weight; mass shifted out of the window is returned.
fn shift_accumulate(
    dim: usize,
    window: i64,
    input: &[f64],
    step: [i64; 2],
    weight: f64,
    out: &mut [f64],
) -> f64 {
    let side = (2 * window + 1) as i64;
    let mut leaked = 0.0;
    if dim == 1 {
        for (x, &v) in input.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let nx = x as i64 + step[0];
            if nx < 0 || nx >= side {
                leaked += (v * weight).abs();
            } else {
                out[nx as usize] += v * weight;
            }
        }
        return leaked;
    }
    for y in 0..side {
        let ny = y + step[1];
        let row = &input[(y * side) as usize..((y + 1) * side) as usize];
        if ny < 0 || ny >= side {
            leaked += row.iter().map(|v| (v * weight).abs()).sum::<f64>();
            continue;
        }
        let out_row = &mut out[(ny * side) as usize..((ny + 1) * side) as usize];
        if step[0] == 0 {
            for (o, &v) in out_row.iter_mut().zip(row) {
                *o += v * weight;
            }
        } else if step[0] > 0 {
            let s = step[0] as usize;
            for x in 0..(side as usize - s) {
                out_row[x + s] += row[x] * weight;
            }
            leaked += row[side as usize - s..]
                .iter()
                .map(|v| (v * weight).abs())
                .sum::<f64>();
        } else {
            let s = (-step[0]) as usize;
            for x in s..side as usize {
                out_row[x - s] += row[x] * weight;
            }
            leaked += row[..s].iter().map(|v| (v * weight).abs()).sum::<f64>();
        }
    }
    leaked
}

pub(super) fn cell_joint_table(
    model: &MarkovModel,
    u: &DVector<f64>,
    v: &DVector<f64>,
    n: usize,
    window_cap: Option<i64>,
) -> Result<CellJoint, SpectralError> {
    let dim = model.dim();
    let reachable = (n as i64) * model.max_step();
    let window = window_cap.map_or(reachable, |c| c.min(reachable)).max(1);
    let side = (2 * window + 1) as usize;
    let len = plane_len(dim, window);
    let s = model.num_states();
    let pi = model.stationary();

    if n == 0 {
        let mut values = vec![0.0; len];
        let center = if dim == 2 {
            (window as usize) * side + window as usize
        } else {
            window as usize
        };
        values[center] = (0..s).map(|a| pi[a] * u[a] * v[a]).sum();
        return Ok(CellJoint {
            dim,
            window,
            side,
            values,
            leaked: 0.0,
            n,
        });
    }

    let mut leaked = 0.0;
    if model.is_iid() {
        // i.i.d. fast path: v at time n is independent of (u at 0, S_n), and
        // the step sequence convolves as a scalar field
        let mut plane = vec![0.0; len];
        let center = if dim == 2 {
            (window as usize) * side + window as usize
        } else {
            window as usize
        };
        // first step carries the u weight
        {
            let mut first = vec![0.0; len];
            let mut delta = vec![0.0; len];
            delta[center] = 1.0;
            for a in 0..s {
                leaked +=
                    shift_accumulate(dim, window, &delta, model.kappa()[a], pi[a] * u[a], &mut first);
            }
            plane = first;
        }
        // group identical steps of the law into one shift each
        let mut law: Vec<([i64; 2], f64)> = Vec::new();
        for a in 0..s {
            let k = model.kappa()[a];
            match law.iter_mut().find(|(kk, _)| *kk == k) {
                Some((_, w)) => *w += pi[a],
                None => law.push((k, pi[a])),
            }
        }
        let mut next = vec![0.0; len];
        for _ in 1..n {
            next.iter_mut().for_each(|x| *x = 0.0);
            for &(k, w) in &law {
                leaked += shift_accumulate(dim, window, &plane, k, w, &mut next);
            }
            std::mem::swap(&mut plane, &mut next);
        }
        let ev = model.expectation(v);
        for x in &mut plane {
            *x *= ev;
        }
        return Ok(CellJoint {
            dim,
            window,
            side,
            values: plane,
            leaked,
            n,
        });
    }

    // general path: one displacement plane per state
    let mut planes: Vec<Vec<f64>> = vec![vec![0.0; len]; s];
    let center = if dim == 2 {
        (window as usize) * side + window as usize
    } else {
        window as usize
    };
    for a in 0..s {
        planes[a][center] = pi[a] * u[a];
    }
    let mut shifted: Vec<Vec<f64>> = vec![vec![0.0; len]; s];
    let k_mat = model.transition();
    for _ in 0..n {
        for a in 0..s {
            shifted[a].iter_mut().for_each(|x| *x = 0.0);
        }
        for a in 0..s {
            let (src, dst) = (&planes[a], &mut shifted[a]);
            leaked += shift_accumulate(dim, window, src, model.kappa()[a], 1.0, dst);
        }
        for b in 0..s {
            planes[b].iter_mut().for_each(|x| *x = 0.0);
        }
        for a in 0..s {
            for b in 0..s {
                let w = k_mat[(a, b)];
                if w == 0.0 {
                    continue;
                }
                for (dst, &src) in planes[b].iter_mut().zip(&shifted[a]) {
                    *dst += w * src;
                }
            }
        }
    }
    let mut values = vec![0.0; len];
    for b in 0..s {
        for (dst, &src) in values.iter_mut().zip(&planes[b]) {
            *dst += v[b] * src;
        }
    }
    Ok(CellJoint {
        dim,
        window,
        side,
        values,
        leaked,
        n,
    })
}

/// Moment-form jet of `t -> E[u e^{i t * S_n} v ∘ T^n]` at 0, propagated
/// through the chain one collision at a time.
pub(super) fn twisted_moment_jet(
    model: &MarkovModel,
    u: &DVector<f64>,
    v: &DVector<f64>,
    order: usize,
    n: usize,
) -> TensorJet {
    let dim = model.dim();
    let s = model.num_states();
    let k_mat = model.transition();

    // kappa-power weight per jet rank and tensor component
    let mut kpow: Vec<Vec<Vec<f64>>> = Vec::with_capacity(order + 1);
    for rank in 0..=order {
        let comps = dim.pow(rank as u32);
        let mut per_comp = Vec::with_capacity(comps);
        for offset in 0..comps {
            let mut w = vec![1.0; s];
            let mut o = offset;
            for _ in 0..rank {
                let axis = o % dim;
                o /= dim;
                for (a, x) in w.iter_mut().enumerate() {
                    *x *= model.kappa()[a][axis] as f64;
                }
            }
            per_comp.push(w);
        }
        kpow.push(per_comp);
    }

    // row jet: rank k holds dim^k rows over states
    let mut rows: Vec<Vec<DVector<f64>>> = (0..=order)
        .map(|k| vec![DVector::zeros(s); dim.pow(k as u32)])
        .collect();
    rows[0][0] = DVector::from_fn(s, |a, _| model.stationary()[a] * u[a]);

    let kt = k_mat.transpose();
    for _ in 0..n {
        let mut next: Vec<Vec<DVector<f64>>> = (0..=order)
            .map(|k| vec![DVector::zeros(s); dim.pow(k as u32)])
            .collect();
        for k in 0..=order {
            for j in 0..=k {
                // component = (delta from row rank k-j, gamma from kappa rank j)
                let c = binomial(k, j);
                let stride = dim.pow((k - j) as u32);
                for (gamma, w) in kpow[j].iter().enumerate() {
                    for (delta, row) in rows[k - j].iter().enumerate() {
                        let weighted = DVector::from_fn(s, |a, _| row[a] * w[a]);
                        // (row ∘ kappa^gamma) . K, accumulated
                        next[k][delta + stride * gamma].axpy(c, &(&kt * weighted), 1.0);
                    }
                }
            }
        }
        rows = next;
    }

    let mut derivs = Vec::with_capacity(order + 1);
    for (k, comps) in rows.iter().enumerate() {
        let mut t = SymTensor::zeros(dim, k);
        for (offset, row) in comps.iter().enumerate() {
            let mut idx = Vec::with_capacity(k);
            let mut o = offset;
            for _ in 0..k {
                idx.push(o % dim + 1);
                o /= dim;
            }
            t.set(&idx, row.dot(v));
        }
        derivs.push(t.symmetrized());
    }
    TensorJet::from_derivatives(derivs, order)
}

/// Closed-form stationary correlation sums for a finite chain, through the
/// fundamental matrix `Z = (I - K + 1 pi)^{-1}`.
pub struct ChainCalculus<'a> {
    model: &'a MarkovModel,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl<'a> ChainCalculus<'a> {
    pub fn new(model: &'a MarkovModel) -> Self {
        let s = model.num_states();
        let pi = model.stationary();
        let mut shifted = DMatrix::identity(s, s) - model.transition();
        for i in 0..s {
            for j in 0..s {
                shifted[(i, j)] += pi[j];
            }
        }
        ChainCalculus {
            model,
            lu: shifted.lu(),
        }
    }

    pub fn model(&self) -> &MarkovModel {
        self.model
    }

    fn project(&self, c: &DVector<f64>) -> DVector<f64> {
        let mean = self.model.stationary().dot(c);
        c.map(|x| x - mean)
    }

    /// `sum_{j >= 0} (K^j - 1 pi) c`.
    pub fn resolvent0(&self, c: &DVector<f64>) -> DVector<f64> {
        self.lu
            .solve(&self.project(c))
            .expect("shifted generator is invertible")
    }

    /// `sum_{j >= 1} j (K^j - 1 pi) c`.
    pub fn resolvent1(&self, c: &DVector<f64>) -> DVector<f64> {
        let once = self
            .lu
            .solve(&self.project(c))
            .expect("shifted generator is invertible");
        let twice = self.lu.solve(&once).expect("invertible");
        let a_applied = self.model.transition() * &twice;
        self.project(&a_applied)
    }

    /// `E[prod_i F_i ∘ T^{t_i}]` for time-sorted factors (times may repeat).
    pub fn correlation(&self, factors: &[(i64, &DVector<f64>)]) -> f64 {
        assert!(!factors.is_empty());
        let mut sorted: Vec<(i64, &DVector<f64>)> = factors.to_vec();
        sorted.sort_by_key(|(t, _)| *t);
        let mut row: DVector<f64> = self.model.stationary().clone();
        let mut time = sorted[0].0;
        let kt = self.model.transition().transpose();
        for (t, f) in sorted {
            for _ in 0..(t - time) {
                row = &kt * row;
            }
            time = t;
            row.component_mul_assign(f);
        }
        row.sum()
    }

    /// Exact `Sigma^2 = sum_k E[kappa ⊗ kappa ∘ T^k]`.
    pub fn sigma2(&self) -> SymTensor {
        let dim = self.model.dim();
        let mut out = SymTensor::zeros(dim, 2);
        let kappa: Vec<DVector<f64>> =
            (0..dim).map(|ax| self.model.kappa_component(ax)).collect();
        for i in 0..dim {
            for j in 0..dim {
                // lag-0 term plus one-sided tails in both directions
                let c0 = self.correlation(&[(0, &kappa[i]), (0, &kappa[j])]);
                let tail_j = {
                    // sum_{k>=1} E[kappa_i . kappa_j ∘ T^k]
                    let resolved = self.resolvent0(&kappa[j]);
                    let summed = resolved - self.project(&kappa[j]);
                    self.correlation(&[(0, &kappa[i]), (0, &summed)])
                };
                let tail_i = {
                    let resolved = self.resolvent0(&kappa[i]);
                    let summed = resolved - self.project(&kappa[i]);
                    self.correlation(&[(0, &kappa[j]), (0, &summed)])
                };
                out.set(&[i + 1, j + 1], c0 + tail_j + tail_i);
            }
        }
        out.symmetrized()
    }

    /// Exact `B_0 = sum_m |m| E[kappa ⊗ kappa ∘ T^m]`.
    pub fn b0(&self) -> SymTensor {
        let dim = self.model.dim();
        let mut out = SymTensor::zeros(dim, 2);
        let kappa: Vec<DVector<f64>> =
            (0..dim).map(|ax| self.model.kappa_component(ax)).collect();
        for i in 0..dim {
            for j in 0..dim {
                let weighted_j = self.resolvent1(&kappa[j]);
                let pos = self.correlation(&[(0, &kappa[i]), (0, &weighted_j)]);
                let weighted_i = self.resolvent1(&kappa[i]);
                let neg = self.correlation(&[(0, &kappa[j]), (0, &weighted_i)]);
                out.set(&[i + 1, j + 1], pos + neg);
            }
        }
        out.symmetrized()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::models;
    use approx::assert_abs_diff_eq;
    use num_complex::Complex;

    #[test]
    fn w5_single_and_double_step_values() {
        let m = models::w5();
        let ones = DVector::from_element(5, 1.0);
        assert_abs_diff_eq!(
            m.exact_cell_joint(&ones, &ones, 1, [1, 0]).unwrap(),
            0.2,
            epsilon = 1e-15
        );
        // five of the twenty-five step pairs cancel
        assert_abs_diff_eq!(
            m.exact_cell_joint(&ones, &ones, 2, [0, 0]).unwrap(),
            0.2,
            epsilon = 1e-15
        );
        for n in [1usize, 3, 7] {
            let table = m.cell_joint_table(&ones, &ones, n, None).unwrap();
            assert_abs_diff_eq!(table.total(), 1.0, epsilon = 1e-12);
            assert_eq!(table.leaked(), 0.0);
        }
    }

    #[test]
    fn characteristic_function_matches_dp_enumeration() {
        // E[e^{i t * S_n}] from the matrix power against the DP table, n = 6
        for model in [models::w5(), models::correlated2d()] {
            let s = model.num_states();
            let ones = DVector::from_element(s, 1.0);
            let table = model.cell_joint_table(&ones, &ones, 6, None).unwrap();
            for t in [[0.4, -0.9], [1.3, 0.2]] {
                let mut from_dp = Complex::new(0.0, 0.0);
                for (l, v) in table.iter() {
                    let phase = t[0] * l[0] as f64 + t[1] * l[1] as f64;
                    from_dp += Complex::from_polar(v, phase);
                }
                let mt = model.perturbed_operator(t);
                let mut vec =
                    DVector::from_element(s, Complex::new(1.0, 0.0));
                for _ in 0..6 {
                    vec = &mt * vec;
                }
                let mut from_power = Complex::new(0.0, 0.0);
                for a in 0..s {
                    from_power += Complex::new(model.stationary()[a], 0.0) * vec[a];
                }
                assert!((from_dp - from_power).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn window_cap_certifies_leak_and_overflow() {
        let m = models::w5();
        let ones = DVector::from_element(5, 1.0);
        let table = m.cell_joint_table(&ones, &ones, 64, Some(40)).unwrap();
        assert!(table.leaked() < 1e-9);
        assert!(table.checked_value([41, 0]).is_err());
        assert_abs_diff_eq!(table.total() + table.leaked(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn moments_match_between_dp_and_jet_propagation() {
        // sum_l P(S_n = l) poly(l) reproduces the exact moment tensors
        for model in [models::w5(), models::correlated2d()] {
            let s = model.num_states();
            let ones = DVector::from_element(s, 1.0);
            let n = 24;
            let table = model.cell_joint_table(&ones, &ones, n, None).unwrap();
            let moments = model.s_moments(n, 4);
            for p in 0..=4 {
                let from_dp = table.moment(p);
                let diff = from_dp.sub(&moments[p]).max_abs();
                assert!(
                    diff < 1e-10 * (1.0 + moments[p].max_abs()),
                    "{} moment {p}: diff {diff}",
                    model.name()
                );
            }
        }
    }

    #[test]
    fn w5_second_moment_is_linear_in_n() {
        let m = models::w5();
        for n in [10usize, 50] {
            let mom = m.s_moments(n, 2);
            assert_abs_diff_eq!(mom[2].get(&[1, 1]), 0.4 * n as f64, epsilon = 1e-10);
            assert_abs_diff_eq!(mom[2].get(&[1, 2]), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn local_limit_ratio_converges_at_gaussian_scaling() {
        // n^{d/2} P(S_n = 0) -> Phi(0) on aperiodic centered models
        for model in [models::w5(), models::correlated2d()] {
            let s = model.num_states();
            let ones = DVector::from_element(s, 1.0);
            let data = model.lambda_derivatives(2).unwrap();
            let gauss =
                crate::tensor::GaussianModel::new(data.sigma2().clone()).unwrap();
            let phi0 = gauss.density(&SymTensor::vector(&[0.0, 0.0]));
            let mut errs = Vec::new();
            for n in [64usize, 256] {
                let cap = (14.0 * (0.5 * n as f64).sqrt()) as i64;
                let table = model.cell_joint_table(&ones, &ones, n, Some(cap)).unwrap();
                let ratio = n as f64 * table.value([0, 0]) / phi0;
                errs.push((ratio - 1.0).abs());
            }
            assert!(errs[1] < errs[0], "{}: ratio not improving", model.name());
            assert!(errs[1] < 0.02, "{}: ratio error {}", model.name(), errs[1]);
        }
    }

    #[test]
    fn exact_am_limits() {
        let model = models::correlated2d();
        let s = model.num_states();
        let ones = DVector::from_element(s, 1.0);
        let u = DVector::from_fn(s, |i, _| if i % 5 == 1 { 1.0 } else { 0.0 });
        let v = DVector::from_fn(s, |i, _| (i as f64 * 0.37).sin());

        // A_1(1, 1) = 0: centering kills E[S_n]
        let am = model.exact_am(&ones, &ones, 4, 48).unwrap();
        assert!(am[1].max_abs() < 1e-12);

        // A_0(u, v) -> E[u] E[v] geometrically
        let want = model.expectation(&u) * model.expectation(&v);
        let a16 = model.exact_am(&u, &v, 0, 16).unwrap()[0].as_scalar();
        let a48 = model.exact_am(&u, &v, 0, 48).unwrap()[0].as_scalar();
        assert!((a48 - want).abs() < 1e-12);
        assert!((a48 - want).abs() <= (a16 - want).abs());

        // A_{2,n} stabilizes geometrically in n
        let a2_a = model.exact_am(&u, &v, 2, 40).unwrap()[2].clone();
        let a2_b = model.exact_am(&u, &v, 2, 80).unwrap()[2].clone();
        let a2_c = model.exact_am(&u, &v, 2, 160).unwrap()[2].clone();
        let d_ab = a2_a.sub(&a2_b).max_abs();
        let d_bc = a2_b.sub(&a2_c).max_abs();
        assert!(d_bc < 1e-11 && d_bc <= d_ab.max(1e-13));
    }

    #[test]
    fn chain_calculus_against_direct_sums() {
        let model = models::correlated2d();
        let calc = model.calculus();
        let k1 = model.kappa_component(0);
        let k2 = model.kappa_component(1);

        // truncated lag sums agree with the resolvent closed forms
        let mut direct = 0.0;
        for lag in 1..400 {
            direct += calc.correlation(&[(0, &k1), (lag, &k2)]);
        }
        let resolved = calc.resolvent0(&k2);
        let closed = calc.correlation(&[(0, &k1), (0, &resolved)])
            - calc.correlation(&[(0, &k1), (0, &calc.project(&k2))]);
        assert_abs_diff_eq!(direct, closed, epsilon = 1e-12);

        // Sigma^2 and B_0 match the DP moments: E[S_n^{⊗2}] = n Sigma^2 - B_0
        let sigma2 = calc.sigma2();
        let b0 = calc.b0();
        let n = 96;
        let mom = model.s_moments(n, 2);
        let predicted = sigma2.scale(n as f64).sub(&b0);
        assert!(mom[2].sub(&predicted).max_abs() < 1e-9);
    }

    #[test]
    fn evenness_for_reversal_symmetric_models() {
        // W5's step law is symmetric, so lambda is even: odd moment tensors
        // vanish and lambda_t is real on a grid
        let m = models::w5();
        for t in [[0.7, 0.1], [1.9, -2.2]] {
            let lam = m.leading_triple(t).unwrap().lambda;
            let lam_neg = m.leading_triple([-t[0], -t[1]]).unwrap().lambda;
            assert!((lam - lam_neg).norm() < 1e-12);
        }
    }
}
