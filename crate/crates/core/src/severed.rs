//! Exact inference in the severed model: the known-dynamics half of the
//! world with every unknown-state node removed.
//!
//! For an interface sequence (Y, Z) of horizon H this computes
//! `K = p(Z | Y)`, the expected known return given (Y, Z), and their
//! derivatives with respect to every action probability `p_a(a | o)`, all in
//! O(H) passes. The transition consuming `z_t` and `y_{t+1}` advances slice
//! `t` to slice `t + 1`:
//!
//! ```text
//! T_{x,x'}(y, z) = Σ_{o,a} p_o(o|x) p_a(a|o) p_z(z|x,a) p_x(x'|x,y,a)
//! α_0(x)      = p_x0(x | y_0)
//! α_{t+1}(x') = Σ_x T_{x,x'}(y_{t+1}, z_t) α_t(x)
//! β_{H-1}(x)  = Σ_{o,a} p_o(o|x) p_a(a|o) p_z(z_{H-1}|x,a)
//! β_t(x)      = Σ_{x'} T_{x,x'}(y_{t+1}, z_t) β_{t+1}(x')
//! ```
//!
//! Everything is carried in scaled form. With `c_t = p(z_t | z_{0:t-1}, Y)`,
//! `α̂_t` is the filtered distribution of `x_t` (rows sum to one),
//! `β̂_t = β_t / Π_{k≥t} c_k`, and `log K = Σ_t log c_t`. The posterior of
//! `x_t` given (Y, Z) is `α̂_t β̂_t`.
//!
//! The known-return gradient uses reward-accumulating companions of α and β
//! (`φ` carries rewards already collected up to slice t, `ψ` rewards still to
//! come after slice t), which gives the same derivative as differentiating
//! the α/β recursions directly but without one recursion per parameter.

use crate::error::{PkmdpError, Result};
use crate::model::{KnownModel, Policy};

/// Known-model tables reorganized for the recursions. `p_x` is stored
/// sparsely since every benchmark transition has tiny support.
#[derive(Debug, Clone)]
pub struct SeveredModel {
    n_x: usize,
    n_y: usize,
    n_z: usize,
    n_o: usize,
    n_a: usize,
    /// `[y][x]`
    p_x0: Vec<f64>,
    /// CSR over `(y, x, a)`.
    px_offsets: Vec<usize>,
    px_entries: Vec<(usize, f64)>,
    /// CSR over `x`, entries `(o, p_o(o|x))`.
    po_offsets: Vec<usize>,
    po_entries: Vec<(usize, f64)>,
    /// `[x][a][z]`
    p_z: Vec<f64>,
    r_x: Vec<f64>,
    has_reward: bool,
}

/// Per-policy quantities shared by every episode evaluated under it.
#[derive(Debug, Clone)]
pub struct PolicyTerms {
    /// `p_a(a|o)`, row-major `[o][a]`.
    probs: Vec<f64>,
    /// `q(x,a) p_z(z|x,a)` with `q(x,a) = Σ_o p_o(o|x) p_a(a|o)`, laid out `[z][x][a]`.
    emit: Vec<f64>,
    /// `Σ_a emit`, laid out `[z][x]`.
    emit_total: Vec<f64>,
}

impl PolicyTerms {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Dense `T(y, z)` for one interface pair, row-major `[x][x']`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub n: usize,
    pub entries: Vec<f64>,
}

impl TransitionMatrix {
    pub fn get(&self, x: usize, x_next: usize) -> f64 {
        self.entries[x * self.n + x_next]
    }
}

/// `log K` and `V / K` for one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Likelihood {
    pub log_k: f64,
    pub v_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct ForwardBackwardResult {
    n_x: usize,
    /// Filtered distributions, `H x |X|` row-major.
    pub alpha_hat: Vec<f64>,
    /// `log c_t` per slice.
    pub scale_log: Vec<f64>,
    /// Backward values scaled so that `Σ_x α̂_t(x) β̂_t(x) = 1`.
    pub beta_hat: Vec<f64>,
    pub log_k: f64,
    /// Expected known return given (Y, Z), i.e. `V / K`.
    pub v_ratio: f64,
}

impl ForwardBackwardResult {
    pub fn horizon(&self) -> usize {
        self.scale_log.len()
    }

    pub fn alpha(&self, t: usize) -> &[f64] {
        &self.alpha_hat[t * self.n_x..(t + 1) * self.n_x]
    }

    pub fn beta(&self, t: usize) -> &[f64] {
        &self.beta_hat[t * self.n_x..(t + 1) * self.n_x]
    }

    /// Posterior `p(x_t = x | Y, Z)`.
    pub fn posterior(&self, t: usize) -> Vec<f64> {
        self.alpha(t).iter().zip(self.beta(t)).map(|(a, b)| a * b).collect()
    }
}

/// Derivatives of one episode's `K` and `V` with respect to the raw action
/// probabilities, each divided by `K`.
#[derive(Debug, Clone)]
pub struct EpisodeGradients {
    pub log_k: f64,
    pub v_ratio: f64,
    /// `(∂K/∂p_a(a|o)) / K`, row-major `[o][a]`.
    pub grad_log_k: Vec<f64>,
    /// `(∂V/∂p_a(a|o)) / K`, row-major `[o][a]`.
    pub grad_v_over_k: Vec<f64>,
}

impl SeveredModel {
    pub fn new(model: &KnownModel) -> Self {
        let n_x = model.x_space.size();
        let n_y = model.y_space.size();
        let n_z = model.z_space.size();
        let n_o = model.o_space.size();
        let n_a = model.a_space.size();

        let mut p_x0 = vec![0.0; n_y * n_x];
        for y in 0..n_y {
            p_x0[y * n_x..(y + 1) * n_x].copy_from_slice(model.p_x0.row(&[y]));
        }

        let mut px_offsets = Vec::with_capacity(n_y * n_x * n_a + 1);
        let mut px_entries = Vec::new();
        px_offsets.push(0);
        for y in 0..n_y {
            for x in 0..n_x {
                for a in 0..n_a {
                    let row = model.p_x.row(&[x, y, a]);
                    px_entries.extend(row.iter().enumerate().filter(|(_, &p)| p != 0.0).map(|(xn, &p)| (xn, p)));
                    px_offsets.push(px_entries.len());
                }
            }
        }

        let mut po_offsets = Vec::with_capacity(n_x + 1);
        let mut po_entries = Vec::new();
        po_offsets.push(0);
        for x in 0..n_x {
            po_entries.extend(model.p_o.row(&[x]).iter().enumerate().filter(|(_, &p)| p != 0.0).map(|(o, &p)| (o, p)));
            po_offsets.push(po_entries.len());
        }

        let mut p_z = vec![0.0; n_x * n_a * n_z];
        for x in 0..n_x {
            for a in 0..n_a {
                let base = (x * n_a + a) * n_z;
                p_z[base..base + n_z].copy_from_slice(model.p_z.row(&[x, a]));
            }
        }

        Self {
            n_x,
            n_y,
            n_z,
            n_o,
            n_a,
            p_x0,
            px_offsets,
            px_entries,
            po_offsets,
            po_entries,
            p_z,
            has_reward: model.r_x.iter().any(|&r| r != 0.0),
            r_x: model.r_x.clone(),
        }
    }

    pub fn n_obs(&self) -> usize {
        self.n_o
    }

    pub fn n_actions(&self) -> usize {
        self.n_a
    }

    #[inline]
    fn px(&self, y: usize, x: usize, a: usize) -> &[(usize, f64)] {
        let i = (y * self.n_x + x) * self.n_a + a;
        &self.px_entries[self.px_offsets[i]..self.px_offsets[i + 1]]
    }

    #[inline]
    fn po(&self, x: usize) -> &[(usize, f64)] {
        &self.po_entries[self.po_offsets[x]..self.po_offsets[x + 1]]
    }

    #[inline]
    fn pz(&self, x: usize, a: usize, z: usize) -> f64 {
        self.p_z[(x * self.n_a + a) * self.n_z + z]
    }

    /// Precomputes the policy-dependent factors from a raw `[o][a]`
    /// probability matrix. Entries are used as given (no renormalization),
    /// so this also serves derivative checks on unnormalized tables.
    pub fn prepare(&self, probs: &[f64]) -> Result<PolicyTerms> {
        if probs.len() != self.n_o * self.n_a {
            return Err(PkmdpError::ShapeMismatch {
                expected: format!("{} x {} action probabilities", self.n_o, self.n_a),
                actual: probs.len().to_string(),
            });
        }
        let (n_x, n_a, n_z) = (self.n_x, self.n_a, self.n_z);
        let mut q = vec![0.0; n_x * n_a];
        for x in 0..n_x {
            for &(o, po) in self.po(x) {
                for a in 0..n_a {
                    q[x * n_a + a] += po * probs[o * n_a + a];
                }
            }
        }
        let mut emit = vec![0.0; n_z * n_x * n_a];
        let mut emit_total = vec![0.0; n_z * n_x];
        for z in 0..n_z {
            for x in 0..n_x {
                let mut total = 0.0;
                for a in 0..n_a {
                    let e = q[x * n_a + a] * self.pz(x, a, z);
                    emit[(z * n_x + x) * n_a + a] = e;
                    total += e;
                }
                emit_total[z * n_x + x] = total;
            }
        }
        Ok(PolicyTerms { probs: probs.to_vec(), emit, emit_total })
    }

    pub fn prepare_policy(&self, policy: &Policy) -> Result<PolicyTerms> {
        self.prepare(&policy.action_probs())
    }

    fn check_sequences(&self, ys: &[usize], zs: &[usize]) -> Result<()> {
        if ys.is_empty() || ys.len() != zs.len() {
            return Err(PkmdpError::InvalidSequence(format!(
                "need equal, non-empty y/z sequences (got {} and {})",
                ys.len(),
                zs.len()
            )));
        }
        if ys.iter().any(|&y| y >= self.n_y) || zs.iter().any(|&z| z >= self.n_z) {
            return Err(PkmdpError::InvalidSequence("value outside its space".into()));
        }
        Ok(())
    }

    /// `T(y, z)` as defined in the module docs; `y` is the value revealed in
    /// the slice being entered.
    pub fn transition_matrix(&self, terms: &PolicyTerms, y: usize, z: usize) -> Result<TransitionMatrix> {
        if y >= self.n_y || z >= self.n_z {
            return Err(PkmdpError::InvalidSequence(format!("(y, z) = ({y}, {z}) outside spaces")));
        }
        let n = self.n_x;
        let mut entries = vec![0.0; n * n];
        for x in 0..n {
            for a in 0..self.n_a {
                let e = terms.emit[(z * n + x) * self.n_a + a];
                for &(xn, p) in self.px(y, x, a) {
                    entries[x * n + xn] += e * p;
                }
            }
        }
        Ok(TransitionMatrix { n, entries })
    }

    /// One scaled forward step: writes `T^T α̂ / c` into `next` (and the
    /// reward-accumulating companion into `next_phi` when present).
    #[inline]
    #[allow(clippy::too_many_arguments, clippy::needless_range_loop)]
    fn forward_step(
        &self,
        terms: &PolicyTerms,
        z: usize,
        y_next: usize,
        inv_c: f64,
        alpha: &[f64],
        phi: Option<&[f64]>,
        next: &mut [f64],
        next_phi: Option<&mut [f64]>,
    ) {
        let (n_x, n_a) = (self.n_x, self.n_a);
        next.fill(0.0);
        match (phi, next_phi) {
            (Some(phi), Some(next_phi)) => {
                next_phi.fill(0.0);
                for x in 0..n_x {
                    let (ax, fx) = (alpha[x] * inv_c, phi[x] * inv_c);
                    if ax == 0.0 && fx == 0.0 {
                        continue;
                    }
                    let emit = &terms.emit[(z * n_x + x) * n_a..(z * n_x + x + 1) * n_a];
                    for (a, &e) in emit.iter().enumerate() {
                        if e == 0.0 {
                            continue;
                        }
                        for &(xn, p) in self.px(y_next, x, a) {
                            next[xn] += ax * e * p;
                            next_phi[xn] += fx * e * p;
                        }
                    }
                }
                for xn in 0..n_x {
                    next_phi[xn] += next[xn] * self.r_x[xn];
                }
            }
            _ => {
                for x in 0..n_x {
                    let ax = alpha[x] * inv_c;
                    if ax == 0.0 {
                        continue;
                    }
                    let emit = &terms.emit[(z * n_x + x) * n_a..(z * n_x + x + 1) * n_a];
                    for (a, &e) in emit.iter().enumerate() {
                        if e == 0.0 {
                            continue;
                        }
                        let w = ax * e;
                        for &(xn, p) in self.px(y_next, x, a) {
                            next[xn] += w * p;
                        }
                    }
                }
            }
        }
    }

    #[inline]
    fn slice_scale(&self, terms: &PolicyTerms, z: usize, alpha: &[f64], t: usize) -> Result<f64> {
        let totals = &terms.emit_total[z * self.n_x..(z + 1) * self.n_x];
        let c: f64 = alpha.iter().zip(totals).map(|(a, e)| a * e).sum();
        if c > 0.0 && c.is_finite() {
            Ok(c)
        } else {
            Err(PkmdpError::ImpossibleSequence { slice: t })
        }
    }

    /// Forward pass only: `log K` and `V / K`.
    pub fn likelihood(&self, terms: &PolicyTerms, ys: &[usize], zs: &[usize]) -> Result<Likelihood> {
        self.check_sequences(ys, zs)?;
        let n_x = self.n_x;
        let h = ys.len();
        let mut alpha = self.p_x0[ys[0] * n_x..(ys[0] + 1) * n_x].to_vec();
        let mut next = vec![0.0; n_x];
        let mut phi = if self.has_reward {
            Some(alpha.iter().zip(&self.r_x).map(|(a, r)| a * r).collect::<Vec<_>>())
        } else {
            None
        };
        let mut next_phi = phi.as_ref().map(|_| vec![0.0; n_x]);
        let mut log_k = 0.0;
        for t in 0..h {
            let z = zs[t];
            let c = self.slice_scale(terms, z, &alpha, t)?;
            log_k += c.ln();
            if t + 1 == h {
                let v_ratio = match &phi {
                    Some(phi) => {
                        let totals = &terms.emit_total[z * n_x..(z + 1) * n_x];
                        phi.iter().zip(totals).map(|(f, e)| f * e).sum::<f64>() / c
                    }
                    None => 0.0,
                };
                return Ok(Likelihood { log_k, v_ratio });
            }
            self.forward_step(terms, z, ys[t + 1], 1.0 / c, &alpha, phi.as_deref(), &mut next, next_phi.as_deref_mut());
            std::mem::swap(&mut alpha, &mut next);
            if let (Some(p), Some(np)) = (phi.as_mut(), next_phi.as_mut()) {
                std::mem::swap(p, np);
            }
        }
        unreachable!("horizon is at least one")
    }

    /// Scaled forward pass keeping every slice. Returns `(α̂, φ, c)`.
    fn forward_all(
        &self,
        terms: &PolicyTerms,
        ys: &[usize],
        zs: &[usize],
        with_phi: bool,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        self.check_sequences(ys, zs)?;
        let n_x = self.n_x;
        let h = ys.len();
        let mut alpha = vec![0.0; h * n_x];
        let mut phi = if with_phi { vec![0.0; h * n_x] } else { Vec::new() };
        let mut scale = vec![0.0; h];
        alpha[..n_x].copy_from_slice(&self.p_x0[ys[0] * n_x..(ys[0] + 1) * n_x]);
        if with_phi {
            for x in 0..n_x {
                phi[x] = alpha[x] * self.r_x[x];
            }
        }
        for t in 0..h {
            let (done, rest) = alpha.split_at_mut((t + 1) * n_x);
            let cur = &done[t * n_x..];
            let c = self.slice_scale(terms, zs[t], cur, t)?;
            scale[t] = c;
            if t + 1 == h {
                break;
            }
            let next = &mut rest[..n_x];
            if with_phi {
                let (pdone, prest) = phi.split_at_mut((t + 1) * n_x);
                self.forward_step(
                    terms,
                    zs[t],
                    ys[t + 1],
                    1.0 / c,
                    cur,
                    Some(&pdone[t * n_x..]),
                    next,
                    Some(&mut prest[..n_x]),
                );
            } else {
                self.forward_step(terms, zs[t], ys[t + 1], 1.0 / c, cur, None, next, None);
            }
        }
        Ok((alpha, phi, scale))
    }

    /// Scaled forward-backward pass.
    pub fn forward_backward(&self, terms: &PolicyTerms, ys: &[usize], zs: &[usize]) -> Result<ForwardBackwardResult> {
        let (alpha, _, scale) = self.forward_all(terms, ys, zs, false)?;
        let (n_x, n_a) = (self.n_x, self.n_a);
        let h = ys.len();
        let mut beta = vec![0.0; h * n_x];
        for t in (0..h).rev() {
            let z = zs[t];
            let inv_c = 1.0 / scale[t];
            for x in 0..n_x {
                let emit = &terms.emit[(z * n_x + x) * n_a..(z * n_x + x + 1) * n_a];
                let mut acc = 0.0;
                if t + 1 == h {
                    acc = terms.emit_total[z * n_x + x];
                } else {
                    let next = &beta[(t + 1) * n_x..(t + 2) * n_x];
                    for (a, &e) in emit.iter().enumerate() {
                        if e == 0.0 {
                            continue;
                        }
                        let b: f64 = self.px(ys[t + 1], x, a).iter().map(|&(xn, p)| p * next[xn]).sum();
                        acc += e * b;
                    }
                }
                beta[t * n_x + x] = acc * inv_c;
            }
        }
        let mut v_ratio = 0.0;
        if self.has_reward {
            for t in 0..h {
                for x in 0..n_x {
                    v_ratio += self.r_x[x] * alpha[t * n_x + x] * beta[t * n_x + x];
                }
            }
        }
        let scale_log: Vec<f64> = scale.iter().map(|c| c.ln()).collect();
        Ok(ForwardBackwardResult {
            n_x,
            log_k: scale_log.iter().sum(),
            alpha_hat: alpha,
            scale_log,
            beta_hat: beta,
            v_ratio,
        })
    }

    /// `log K`, `V / K`, `∇K / K` and `∇V / K` with respect to the raw
    /// action probabilities, each entry treated as a free parameter.
    pub fn gradients(&self, terms: &PolicyTerms, ys: &[usize], zs: &[usize]) -> Result<EpisodeGradients> {
        let with_reward = self.has_reward;
        let (alpha, phi, scale) = self.forward_all(terms, ys, zs, with_reward)?;
        let (n_x, n_a) = (self.n_x, self.n_a);
        let h = ys.len();

        let mut beta_next = vec![0.0; n_x];
        let mut psi_next = vec![0.0; n_x];
        let mut beta_cur = vec![0.0; n_x];
        let mut psi_cur = vec![0.0; n_x];
        // Accumulated over slices, indexed [x][a]; mapped to [o][a] at the end.
        let mut g_k = vec![0.0; n_x * n_a];
        let mut g_v = vec![0.0; n_x * n_a];

        for t in (0..h).rev() {
            let z = zs[t];
            let inv_c = 1.0 / scale[t];
            let last = t + 1 == h;
            let alpha_t = &alpha[t * n_x..(t + 1) * n_x];
            for x in 0..n_x {
                let mut beta_acc = 0.0;
                let mut psi_acc = 0.0;
                for a in 0..n_a {
                    let pz = self.pz(x, a, z);
                    if pz == 0.0 {
                        continue;
                    }
                    // B: expected scaled future given (x_t, a_t); D: same, reward-weighted.
                    let (b, d) = if last {
                        (1.0, 0.0)
                    } else {
                        let mut b = 0.0;
                        let mut d = 0.0;
                        for &(xn, p) in self.px(ys[t + 1], x, a) {
                            b += p * beta_next[xn];
                            if with_reward {
                                d += p * (self.r_x[xn] * beta_next[xn] + psi_next[xn]);
                            }
                        }
                        (b, d)
                    };
                    let e = terms.emit[(z * n_x + x) * n_a + a];
                    beta_acc += e * b;
                    psi_acc += e * d;
                    let w = pz * inv_c;
                    g_k[x * n_a + a] += w * alpha_t[x] * b;
                    if with_reward {
                        g_v[x * n_a + a] += w * (phi[t * n_x + x] * b + alpha_t[x] * d);
                    }
                }
                beta_cur[x] = beta_acc * inv_c;
                psi_cur[x] = psi_acc * inv_c;
            }
            std::mem::swap(&mut beta_cur, &mut beta_next);
            std::mem::swap(&mut psi_cur, &mut psi_next);
        }

        let mut grad_log_k = vec![0.0; self.n_o * n_a];
        let mut grad_v_over_k = vec![0.0; self.n_o * n_a];
        for x in 0..n_x {
            for &(o, po) in self.po(x) {
                for a in 0..n_a {
                    grad_log_k[o * n_a + a] += po * g_k[x * n_a + a];
                    grad_v_over_k[o * n_a + a] += po * g_v[x * n_a + a];
                }
            }
        }

        // β̂_0 and ψ_0 are now in beta_next / psi_next.
        let v_ratio = if with_reward {
            (0..n_x).map(|x| self.r_x[x] * alpha[x] * beta_next[x] + alpha[x] * psi_next[x]).sum()
        } else {
            0.0
        };
        Ok(EpisodeGradients { log_k: scale.iter().map(|c| c.ln()).sum(), v_ratio, grad_log_k, grad_v_over_k })
    }
}

/// `T(y, z)` under `policy`.
pub fn transition_matrix(model: &KnownModel, policy: &Policy, y: usize, z: usize) -> Result<TransitionMatrix> {
    let severed = SeveredModel::new(model);
    let terms = severed.prepare_policy(policy)?;
    severed.transition_matrix(&terms, y, z)
}

pub fn forward_backward(
    model: &KnownModel,
    policy: &Policy,
    ys: &[usize],
    zs: &[usize],
) -> Result<ForwardBackwardResult> {
    let severed = SeveredModel::new(model);
    let terms = severed.prepare_policy(policy)?;
    severed.forward_backward(&terms, ys, zs)
}

/// `∂ log K / ∂ p_a(a|o)`, row-major `[o][a]`.
pub fn grad_log_k(model: &KnownModel, policy: &Policy, ys: &[usize], zs: &[usize]) -> Result<Vec<f64>> {
    let severed = SeveredModel::new(model);
    let terms = severed.prepare_policy(policy)?;
    Ok(severed.gradients(&terms, ys, zs)?.grad_log_k)
}

/// `(∂V / ∂ p_a(a|o)) / K` together with `V / K`.
pub fn grad_v(model: &KnownModel, policy: &Policy, ys: &[usize], zs: &[usize]) -> Result<(Vec<f64>, f64)> {
    let severed = SeveredModel::new(model);
    let terms = severed.prepare_policy(policy)?;
    let g = severed.gradients(&terms, ys, zs)?;
    Ok((g.grad_v_over_k, g.v_ratio))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CondTable, FiniteSpace};
    use crate::oracle::{self, random_instance, random_interface};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn degenerate_interface(model: &mut KnownModel) {
        let y = FiniteSpace::singleton("y");
        let z = FiniteSpace::singleton("z");
        let x = model.x_space.clone();
        let a = model.a_space.clone();
        let p_x0 = model.p_x0.row(&[0]).to_vec();
        let old_px = model.p_x.clone();
        model.p_x0 = CondTable::from_fn("p_x0", &x, &[&y], |_, row| row.copy_from_slice(&p_x0));
        model.p_x =
            CondTable::from_fn("p_x", &x, &[&x, &y, &a], |p, row| row.copy_from_slice(old_px.row(&[p[0], 0, p[2]])));
        model.p_z = CondTable::deterministic("p_z", &z, &[&x, &a], |_| 0);
        model.y_space = y;
        model.z_space = z;
    }

    fn rel_close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn fully_degenerate_transition_is_one() {
        let one = |n: &str| FiniteSpace::singleton(n);
        let (x, y, z, o, a) = (one("x"), one("y"), one("z"), one("o"), one("a"));
        let model = KnownModel {
            p_x0: CondTable::deterministic("p_x0", &x, &[&y], |_| 0),
            p_x: CondTable::deterministic("p_x", &x, &[&x, &y, &a], |_| 0),
            p_o: CondTable::deterministic("p_o", &o, &[&x], |_| 0),
            p_z: CondTable::deterministic("p_z", &z, &[&x, &a], |_| 0),
            r_x: vec![0.0],
            x_space: x,
            y_space: y,
            z_space: z,
            o_space: o,
            a_space: a,
        };
        let t = transition_matrix(&model, &Policy::uniform(1, 1), 0, 0).unwrap();
        assert_eq!(t.entries.len(), 1);
        assert!((t.get(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_z_rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let mut inst = random_instance(&mut rng, 2);
            degenerate_interface(&mut inst.model);
            let t = transition_matrix(&inst.model, &inst.policy, 0, 0).unwrap();
            for x in 0..t.n {
                let sum: f64 = (0..t.n).map(|xn| t.get(x, xn)).sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transition_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..25 {
            let inst = random_instance(&mut rng, 2);
            let m = &inst.model;
            let probs = inst.policy.action_probs();
            for y in 0..m.y_space.size() {
                for z in 0..m.z_space.size() {
                    let fast = transition_matrix(m, &inst.policy, y, z).unwrap();
                    let slow = oracle::dense_transition(m, &probs, y, z);
                    for (f, s) in fast.entries.iter().zip(&slow) {
                        assert!((f - s).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn matches_brute_force_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..60 {
            let inst = random_instance(&mut rng, 4);
            let (ys, zs) = random_interface(&mut rng, &inst.model, inst.horizon);
            let fb = forward_backward(&inst.model, &inst.policy, &ys, &zs).unwrap();
            let (k, v) = oracle::brute_force_kv(&inst.model, &inst.policy.action_probs(), &ys, &zs).unwrap();
            let k_fast = fb.log_k.exp();
            assert!((k_fast - k).abs() < 1e-9, "{k_fast} vs {k}");
            assert!((fb.v_ratio * k_fast - v).abs() < 1e-9);
        }
    }

    #[test]
    fn scaled_invariants_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..20 {
            let inst = random_instance(&mut rng, 4);
            let (ys, zs) = random_interface(&mut rng, &inst.model, 60);
            let fb = forward_backward(&inst.model, &inst.policy, &ys, &zs).unwrap();
            let total: f64 = fb.scale_log.iter().sum();
            assert!((total - fb.log_k).abs() < 1e-12 * fb.log_k.abs().max(1.0));
            for t in 0..fb.horizon() {
                let s: f64 = fb.alpha(t).iter().sum();
                assert!((s - 1.0).abs() < 1e-10);
                let p: f64 = fb.posterior(t).iter().sum();
                assert!((p - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn scaled_matches_unscaled() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..20 {
            let inst = random_instance(&mut rng, 4);
            let probs = inst.policy.action_probs();
            let (ys, zs) = random_interface(&mut rng, &inst.model, inst.horizon);
            let fb = forward_backward(&inst.model, &inst.policy, &ys, &zs).unwrap();
            let (un, products) = oracle::unscaled_forward_backward(&inst.model, &probs, &ys, &zs).unwrap();
            let k = products[0];
            assert!((fb.log_k.exp() - k).abs() < 1e-12);
            let mut prefix = 1.0;
            for t in 0..ys.len() {
                for x in 0..inst.model.x_space.size() {
                    assert!((fb.alpha(t)[x] * prefix - un.alpha[t][x]).abs() < 1e-12);
                    assert!((fb.beta(t)[x] * k / prefix - un.beta[t][x]).abs() < 1e-12);
                }
                prefix *= fb.scale_log[t].exp();
            }
        }
    }

    #[test]
    fn degenerate_interface_gives_zero_log_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..10 {
            let mut inst = random_instance(&mut rng, 4);
            degenerate_interface(&mut inst.model);
            for h in [1, 7, 100] {
                let fb = forward_backward(&inst.model, &inst.policy, &vec![0; h], &vec![0; h]).unwrap();
                assert!(fb.log_k.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_reward_gives_zero_value_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut inst = random_instance(&mut rng, 4);
        inst.model.r_x.iter_mut().for_each(|r| *r = 0.0);
        let (ys, zs) = random_interface(&mut rng, &inst.model, 5);
        let fb = forward_backward(&inst.model, &inst.policy, &ys, &zs).unwrap();
        assert_eq!(fb.v_ratio, 0.0);
        let (g, v) = grad_v(&inst.model, &inst.policy, &ys, &zs).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn indicator_reward_bounds_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        for _ in 0..20 {
            let mut inst = random_instance(&mut rng, 4);
            let pick = rng.gen_range(0..inst.model.x_space.size());
            for (x, r) in inst.model.r_x.iter_mut().enumerate() {
                *r = if x == pick { 1.0 } else { 0.0 };
            }
            let h = 30;
            let (ys, zs) = random_interface(&mut rng, &inst.model, h);
            let fb = forward_backward(&inst.model, &inst.policy, &ys, &zs).unwrap();
            assert!(fb.v_ratio >= -1e-12 && fb.v_ratio <= h as f64 + 1e-12);
        }
    }

    #[test]
    fn impossible_sequence_is_reported() {
        let x = FiniteSpace::new("x", 2).unwrap();
        let y = FiniteSpace::singleton("y");
        let z = FiniteSpace::new("z", 2).unwrap();
        let o = FiniteSpace::singleton("o");
        let a = FiniteSpace::singleton("a");
        let model = KnownModel {
            p_x0: CondTable::deterministic("p_x0", &x, &[&y], |_| 0),
            p_x: CondTable::deterministic("p_x", &x, &[&x, &y, &a], |_| 0),
            p_o: CondTable::deterministic("p_o", &o, &[&x], |_| 0),
            // z always equals x, and x stays 0.
            p_z: CondTable::deterministic("p_z", &z, &[&x, &a], |p| p[0]),
            r_x: vec![0.0, 0.0],
            x_space: x,
            y_space: y,
            z_space: z,
            o_space: o,
            a_space: a,
        };
        let err = forward_backward(&model, &Policy::uniform(1, 1), &[0, 0, 0], &[0, 0, 1]).unwrap_err();
        assert!(matches!(err, PkmdpError::ImpossibleSequence { slice: 2 }));
    }

    #[test]
    fn single_action_closed_form() {
        // One observation, one action: K = p^H * Π_t (stuff independent of p),
        // so ∂ log K / ∂p = H / p.
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut model = oracle::random_known_model(&mut rng, 3);
        let o = FiniteSpace::singleton("o");
        let a = FiniteSpace::singleton("a");
        let old_px = model.p_x.clone();
        let old_pz = model.p_z.clone();
        let (x, y, z) = (model.x_space.clone(), model.y_space.clone(), model.z_space.clone());
        model.p_o = CondTable::deterministic("p_o", &o, &[&x], |_| 0);
        model.p_x =
            CondTable::from_fn("p_x", &x, &[&x, &y, &a], |p, row| row.copy_from_slice(old_px.row(&[p[0], p[1], 0])));
        model.p_z = CondTable::from_fn("p_z", &z, &[&x, &a], |p, row| row.copy_from_slice(old_pz.row(&[p[0], 0])));
        model.o_space = o;
        model.a_space = a;
        let severed = SeveredModel::new(&model);
        let p = 0.6;
        let terms = severed.prepare(&[p]).unwrap();
        for h in [1usize, 2, 3] {
            let (ys, zs) = random_interface(&mut rng, &model, h);
            let g = severed.gradients(&terms, &ys, &zs).unwrap();
            assert!((g.grad_log_k[0] - h as f64 / p).abs() < 1e-12);
        }

        // H = 1: V = Σ_x r(x) p_x0(x|y0) p_z(z0|x) p, so (∂V/∂p) / K = V / (K p).
        let (ys, zs) = (vec![0], vec![0]);
        let g = severed.gradients(&terms, &ys, &zs).unwrap();
        let mut v = 0.0;
        let mut k = 0.0;
        for xv in 0..model.x_space.size() {
            let w = model.p_x0.prob(&[0], xv) * model.p_z.prob(&[xv, 0], 0);
            k += w * p;
            v += model.r_x[xv] * w * p;
        }
        assert!((g.grad_v_over_k[0] - v / (k * p)).abs() < 1e-12);
    }

    #[test]
    fn horizon_one_value_gradient_by_hand() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..10 {
            let inst = random_instance(&mut rng, 1);
            let m = &inst.model;
            let probs = inst.policy.action_probs();
            let (ys, zs) = random_interface(&mut rng, m, 1);
            let (g, _) = grad_v(m, &inst.policy, &ys, &zs).unwrap();
            let k = forward_backward(m, &inst.policy, &ys, &zs).unwrap().log_k.exp();
            let n_a = m.n_actions();
            for o in 0..m.n_obs() {
                for a in 0..n_a {
                    let mut dv = 0.0;
                    for x in 0..m.x_space.size() {
                        dv += m.r_x[x] * m.p_x0.prob(&[ys[0]], x) * m.p_o.prob(&[x], o) * m.p_z.prob(&[x, a], zs[0]);
                    }
                    assert!((g[o * n_a + a] - dv / k).abs() < 1e-12);
                }
            }
            let _ = probs;
        }
    }

    #[test]
    fn gradients_match_finite_differences_on_raw_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let inst = random_instance(&mut rng, 4);
            let severed = SeveredModel::new(&inst.model);
            let probs = inst.policy.action_probs();
            let (ys, zs) = random_interface(&mut rng, &inst.model, inst.horizon);
            let g = severed.gradients(&severed.prepare(&probs).unwrap(), &ys, &zs).unwrap();
            let log_k = |p: &[f64]| severed.likelihood(&severed.prepare(p).unwrap(), &ys, &zs).unwrap().log_k;
            let value = |p: &[f64]| {
                let l = severed.likelihood(&severed.prepare(p).unwrap(), &ys, &zs).unwrap();
                l.v_ratio * l.log_k.exp()
            };
            let fd_k = oracle::finite_difference(log_k, &probs, 1e-6);
            let fd_v = oracle::finite_difference(value, &probs, 1e-6);
            let k = g.log_k.exp();
            for i in 0..probs.len() {
                assert!(rel_close(g.grad_log_k[i], fd_k[i], 1e-5), "{i}: {} vs {}", g.grad_log_k[i], fd_k[i]);
                assert!(
                    rel_close(g.grad_v_over_k[i] * k, fd_v[i], 1e-5),
                    "{i}: {} vs {}",
                    g.grad_v_over_k[i] * k,
                    fd_v[i]
                );
            }
        }
    }

    #[test]
    fn gradients_match_direct_derivative_recursions() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..20 {
            let inst = random_instance(&mut rng, 4);
            let probs = inst.policy.action_probs();
            let (ys, zs) = random_interface(&mut rng, &inst.model, inst.horizon);
            let (dk, dv) = oracle::unscaled_derivatives(&inst.model, &probs, &ys, &zs).unwrap();
            let gk = grad_log_k(&inst.model, &inst.policy, &ys, &zs).unwrap();
            let (gv, _) = grad_v(&inst.model, &inst.policy, &ys, &zs).unwrap();
            let k = forward_backward(&inst.model, &inst.policy, &ys, &zs).unwrap().log_k.exp();
            for i in 0..probs.len() {
                assert!((gk[i] * k - dk[i]).abs() < 1e-10 * (1.0 + dk[i].abs()));
                assert!((gv[i] * k - dv[i]).abs() < 1e-10 * (1.0 + dv[i].abs()));
            }
        }
    }

    #[test]
    fn degenerate_interface_gradient_is_row_constant() {
        // K is identically one on the simplex, so only the component along
        // each row's all-ones direction survives.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let mut inst = random_instance(&mut rng, 4);
            degenerate_interface(&mut inst.model);
            let h = inst.horizon;
            let g = grad_log_k(&inst.model, &inst.policy, &vec![0; h], &vec![0; h]).unwrap();
            let logits = inst.policy.logit_chain_rule(&g).unwrap();
            assert!(logits.iter().all(|v| v.abs() < 1e-12), "{logits:?}");
        }
    }

    #[test]
    fn gradients_agree_with_forward_backward_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..10 {
            let inst = random_instance(&mut rng, 4);
            let (ys, zs) = random_interface(&mut rng, &inst.model, 40);
            let severed = SeveredModel::new(&inst.model);
            let terms = severed.prepare_policy(&inst.policy).unwrap();
            let fb = severed.forward_backward(&terms, &ys, &zs).unwrap();
            let g = severed.gradients(&terms, &ys, &zs).unwrap();
            let l = severed.likelihood(&terms, &ys, &zs).unwrap();
            assert!((fb.v_ratio - g.v_ratio).abs() < 1e-10 * (1.0 + fb.v_ratio.abs()));
            assert!((fb.v_ratio - l.v_ratio).abs() < 1e-10 * (1.0 + fb.v_ratio.abs()));
            assert!((fb.log_k - g.log_k).abs() < 1e-12 * fb.log_k.abs().max(1.0));
        }
    }
}
