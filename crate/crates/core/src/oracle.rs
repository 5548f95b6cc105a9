//! Slow, independent reference computations used to validate the severed
//! model inference and the estimator on tiny instances.
//!
//! Nothing here shares code with [`crate::severed`]: K and V are obtained by
//! enumerating every (X, O, A) sequence, and the unscaled recursions below
//! build `T` densely with nested loops and differentiate α and β one
//! parameter at a time.

use rand::Rng;

use crate::error::{PkmdpError, Result};
use crate::model::{CondTable, FiniteSpace, KnownModel, Policy};

/// Maximum number of (X, O, A) sequences a brute-force enumeration may visit.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone)]
pub struct TinyInstance {
    pub model: KnownModel,
    pub horizon: usize,
    pub policy: Policy,
}

impl TinyInstance {
    pub fn enumeration_count(&self) -> u128 {
        enumeration_count(&self.model, self.horizon)
    }
}

pub fn enumeration_count(model: &KnownModel, horizon: usize) -> u128 {
    let per_slice = (model.x_space.size() * model.o_space.size() * model.a_space.size()) as u128;
    per_slice.saturating_pow(horizon as u32)
}

fn random_row<R: Rng>(rng: &mut R, row: &mut [f64]) {
    for p in row.iter_mut() {
        *p = rng.gen_range(0.05..1.0);
    }
    let total: f64 = row.iter().sum();
    for p in row.iter_mut() {
        *p /= total;
    }
}

/// Random known model with strictly positive tables. Space sizes are drawn
/// from `1..=max_size`.
pub fn random_known_model<R: Rng>(rng: &mut R, max_size: usize) -> KnownModel {
    let mut space = |name: &str| FiniteSpace::new(name, rng.gen_range(1..=max_size)).unwrap();
    let (x, y, z, o, a) = (space("x"), space("y"), space("z"), space("o"), space("a"));
    KnownModel {
        p_x0: CondTable::from_fn("p_x0", &x, &[&y], |_, row| random_row(rng, row)),
        p_x: CondTable::from_fn("p_x", &x, &[&x, &y, &a], |_, row| random_row(rng, row)),
        p_o: CondTable::from_fn("p_o", &o, &[&x], |_, row| random_row(rng, row)),
        p_z: CondTable::from_fn("p_z", &z, &[&x, &a], |_, row| random_row(rng, row)),
        r_x: (0..x.size()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        x_space: x,
        y_space: y,
        z_space: z,
        o_space: o,
        a_space: a,
    }
}

/// Collapses the interface of `model`: 𝒴 and 𝒵 become singletons, keeping the
/// dynamics that follow `y = 0`. The result is a fully known planning problem.
pub fn planning_reduction(model: &KnownModel) -> KnownModel {
    let y = FiniteSpace::singleton("y");
    let z = FiniteSpace::singleton("z");
    let (x, a) = (&model.x_space, &model.a_space);
    KnownModel {
        p_x0: CondTable::from_fn("p_x0", x, &[&y], |_, r| r.copy_from_slice(model.p_x0.row(&[0]))),
        p_x: CondTable::from_fn("p_x", x, &[x, &y, a], |p, r| r.copy_from_slice(model.p_x.row(&[p[0], 0, p[2]]))),
        p_o: model.p_o.clone(),
        p_z: CondTable::deterministic("p_z", &z, &[x, a], |_| 0),
        r_x: model.r_x.clone(),
        x_space: x.clone(),
        y_space: y,
        z_space: z,
        o_space: model.o_space.clone(),
        a_space: a.clone(),
    }
}

pub fn random_policy<R: Rng>(rng: &mut R, n_obs: usize, n_actions: usize, spread: f64) -> Policy {
    let logits = (0..n_obs * n_actions).map(|_| rng.gen_range(-spread..spread)).collect();
    Policy::from_logits(n_obs, n_actions, logits).unwrap()
}

/// Random instance within the enumeration bound: sizes ≤ 3, horizon ≤ `max_horizon`.
pub fn random_instance<R: Rng>(rng: &mut R, max_horizon: usize) -> TinyInstance {
    loop {
        let model = random_known_model(rng, 3);
        let horizon = rng.gen_range(1..=max_horizon);
        if enumeration_count(&model, horizon) > ENUMERATION_LIMIT {
            continue;
        }
        let policy = random_policy(rng, model.n_obs(), model.n_actions(), 1.5);
        return TinyInstance { model, horizon, policy };
    }
}

pub fn random_interface<R: Rng>(rng: &mut R, model: &KnownModel, horizon: usize) -> (Vec<usize>, Vec<usize>) {
    let ys = (0..horizon).map(|_| rng.gen_range(0..model.y_space.size())).collect();
    let zs = (0..horizon).map(|_| rng.gen_range(0..model.z_space.size())).collect();
    (ys, zs)
}

fn check_probs(model: &KnownModel, probs: &[f64]) -> Result<()> {
    let expected = model.n_obs() * model.n_actions();
    if probs.len() != expected {
        return Err(PkmdpError::ShapeMismatch {
            expected: format!("{expected} action probabilities"),
            actual: probs.len().to_string(),
        });
    }
    Ok(())
}

/// `(K, V)` by summing `Π_t p_x p_o p_a p_z` over every (X, O, A) sequence.
/// `probs` is a raw `[o][a]` matrix used as given.
pub fn brute_force_kv(model: &KnownModel, probs: &[f64], ys: &[usize], zs: &[usize]) -> Result<(f64, f64)> {
    check_probs(model, probs)?;
    model.check_sequences(ys, zs)?;
    let count = enumeration_count(model, ys.len());
    if count > ENUMERATION_LIMIT {
        return Err(PkmdpError::EnumerationBound { count, limit: ENUMERATION_LIMIT });
    }
    let mut k = 0.0;
    let mut v = 0.0;
    for x0 in 0..model.x_space.size() {
        let w = model.p_x0.prob(&[ys[0]], x0);
        enumerate(model, probs, ys, zs, 0, x0, w, 0.0, &mut k, &mut v);
    }
    Ok((k, v))
}

#[allow(clippy::too_many_arguments)]
fn enumerate(
    model: &KnownModel,
    probs: &[f64],
    ys: &[usize],
    zs: &[usize],
    t: usize,
    x: usize,
    weight: f64,
    reward: f64,
    k: &mut f64,
    v: &mut f64,
) {
    let n_a = model.n_actions();
    let reward = reward + model.r_x[x];
    for o in 0..model.n_obs() {
        let w_o = weight * model.p_o.prob(&[x], o);
        for a in 0..n_a {
            let w = w_o * probs[o * n_a + a] * model.p_z.prob(&[x, a], zs[t]);
            if t + 1 == ys.len() {
                *k += w;
                *v += w * reward;
            } else {
                for xn in 0..model.x_space.size() {
                    let wn = w * model.p_x.prob(&[x, ys[t + 1], a], xn);
                    enumerate(model, probs, ys, zs, t + 1, xn, wn, reward, k, v);
                }
            }
        }
    }
}

/// `Σ_Z K(Y, Z)` over every Z sequence of the horizon of `ys`; equals one
/// when the severed model is a proper distribution over Z given Y.
pub fn brute_force_z_normalization(model: &KnownModel, probs: &[f64], ys: &[usize]) -> Result<f64> {
    let n_z = model.z_space.size() as u128;
    let count = n_z.saturating_pow(ys.len() as u32);
    if count > ENUMERATION_LIMIT {
        return Err(PkmdpError::EnumerationBound { count, limit: ENUMERATION_LIMIT });
    }
    let mut zs = vec![0; ys.len()];
    let mut total = 0.0;
    for mut code in 0..count {
        for z in zs.iter_mut() {
            *z = (code % n_z) as usize;
            code /= n_z;
        }
        let (_, alpha_beta) = unscaled_forward_backward(model, probs, ys, &zs)?;
        total += alpha_beta[0];
    }
    Ok(total)
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` per coordinate.
pub fn finite_difference<F>(mut f: F, point: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            x[i] = point[i] + step;
            let up = f(&x);
            x[i] = point[i] - step;
            let down = f(&x);
            x[i] = point[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Dense `T(y, z)` by direct summation over (o, a), row-major `[x][x']`.
pub fn dense_transition(model: &KnownModel, probs: &[f64], y: usize, z: usize) -> Vec<f64> {
    let n_x = model.x_space.size();
    let n_a = model.n_actions();
    let mut t = vec![0.0; n_x * n_x];
    for x in 0..n_x {
        for xn in 0..n_x {
            let mut acc = 0.0;
            for o in 0..model.n_obs() {
                for a in 0..n_a {
                    acc += model.p_o.prob(&[x], o)
                        * probs[o * n_a + a]
                        * model.p_z.prob(&[x, a], z)
                        * model.p_x.prob(&[x, y, a], xn);
                }
            }
            t[x * n_x + xn] = acc;
        }
    }
    t
}

fn dense_transition_derivative(model: &KnownModel, o: usize, a: usize, y: usize, z: usize) -> Vec<f64> {
    let n_x = model.x_space.size();
    let mut d = vec![0.0; n_x * n_x];
    for x in 0..n_x {
        for xn in 0..n_x {
            d[x * n_x + xn] = model.p_o.prob(&[x], o) * model.p_z.prob(&[x, a], z) * model.p_x.prob(&[x, y, a], xn);
        }
    }
    d
}

fn final_emission(model: &KnownModel, probs: &[f64], z: usize) -> Vec<f64> {
    let n_a = model.n_actions();
    (0..model.x_space.size())
        .map(|x| {
            let mut acc = 0.0;
            for o in 0..model.n_obs() {
                for a in 0..n_a {
                    acc += model.p_o.prob(&[x], o) * probs[o * n_a + a] * model.p_z.prob(&[x, a], z);
                }
            }
            acc
        })
        .collect()
}

/// Unscaled α and β, each `H` rows of `|X|`, plus `Σ_x α_t(x) β_t(x)` per slice.
#[derive(Debug, Clone)]
pub struct Unscaled {
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

/// Unscaled recursions. Returns the α/β tables and the per-slice products
/// `Σ_x α_t(x) β_t(x)`, every one of which equals K.
pub fn unscaled_forward_backward(
    model: &KnownModel,
    probs: &[f64],
    ys: &[usize],
    zs: &[usize],
) -> Result<(Unscaled, Vec<f64>)> {
    check_probs(model, probs)?;
    model.check_sequences(ys, zs)?;
    let n_x = model.x_space.size();
    let h = ys.len();
    let mut alpha = vec![model.p_x0.row(&[ys[0]]).to_vec()];
    for t in 0..h - 1 {
        let tm = dense_transition(model, probs, ys[t + 1], zs[t]);
        let next = (0..n_x).map(|xn| (0..n_x).map(|x| tm[x * n_x + xn] * alpha[t][x]).sum()).collect();
        alpha.push(next);
    }
    let mut beta = vec![vec![0.0; n_x]; h];
    beta[h - 1] = final_emission(model, probs, zs[h - 1]);
    for t in (0..h - 1).rev() {
        let tm = dense_transition(model, probs, ys[t + 1], zs[t]);
        beta[t] = (0..n_x).map(|x| (0..n_x).map(|xn| tm[x * n_x + xn] * beta[t + 1][xn]).sum()).collect();
    }
    let products = (0..h).map(|t| alpha[t].iter().zip(&beta[t]).map(|(a, b)| a * b).sum()).collect();
    Ok((Unscaled { alpha, beta }, products))
}

/// `∂K/∂p_a(a|o)` and `∂V/∂p_a(a|o)` (unscaled) by running the derivative
/// recursions for α and β separately for every parameter.
pub fn unscaled_derivatives(
    model: &KnownModel,
    probs: &[f64],
    ys: &[usize],
    zs: &[usize],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (un, _) = unscaled_forward_backward(model, probs, ys, zs)?;
    let n_x = model.x_space.size();
    let (n_o, n_a) = (model.n_obs(), model.n_actions());
    let h = ys.len();
    let transitions: Vec<Vec<f64>> = (0..h - 1).map(|t| dense_transition(model, probs, ys[t + 1], zs[t])).collect();
    let mut dk = vec![0.0; n_o * n_a];
    let mut dv = vec![0.0; n_o * n_a];
    for o in 0..n_o {
        for a in 0..n_a {
            let dts: Vec<Vec<f64>> =
                (0..h - 1).map(|t| dense_transition_derivative(model, o, a, ys[t + 1], zs[t])).collect();
            let mut d_alpha = vec![vec![0.0; n_x]; h];
            for t in 0..h - 1 {
                for xn in 0..n_x {
                    d_alpha[t + 1][xn] = (0..n_x)
                        .map(|x| transitions[t][x * n_x + xn] * d_alpha[t][x] + dts[t][x * n_x + xn] * un.alpha[t][x])
                        .sum();
                }
            }
            let mut d_beta = vec![vec![0.0; n_x]; h];
            for (x, d) in d_beta[h - 1].iter_mut().enumerate() {
                *d = model.p_o.prob(&[x], o) * model.p_z.prob(&[x, a], zs[h - 1]);
            }
            for t in (0..h - 1).rev() {
                for x in 0..n_x {
                    d_beta[t][x] = (0..n_x)
                        .map(|xn| {
                            transitions[t][x * n_x + xn] * d_beta[t + 1][xn] + dts[t][x * n_x + xn] * un.beta[t + 1][xn]
                        })
                        .sum();
                }
            }
            // K = Σ_x α_0 β_0 and α_0 does not depend on the policy.
            dk[o * n_a + a] = (0..n_x).map(|x| un.alpha[0][x] * d_beta[0][x]).sum();
            let mut acc = 0.0;
            for t in 0..h {
                for x in 0..n_x {
                    acc += model.r_x[x] * (un.alpha[t][x] * d_beta[t][x] + un.beta[t][x] * d_alpha[t][x]);
                }
            }
            dv[o * n_a + a] = acc;
        }
    }
    Ok((dk, dv))
}
