//! Episode sampling and exact policy evaluation on full models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_policy_shape, EnvironmentSpec};
use crate::error::Result;
use crate::model::{CondTable, Episode, FullModel, Policy, TraceStep};

fn draw<R: Rng>(rng: &mut R, row: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Simulates one episode of `horizon` slices, drawing s, y, x, o, a, z in order.
pub fn sample_episode_model<R: Rng>(
    model: &FullModel,
    policy: &Policy,
    horizon: usize,
    rng: &mut R,
) -> Result<Episode> {
    let k = &model.known;
    check_policy_shape(policy, k.n_obs(), k.n_actions())?;
    let probs = policy.action_probs();
    let n_a = k.n_actions();
    let mut trace = Vec::with_capacity(horizon);
    let (mut prev_s, mut prev_x, mut prev_a, mut prev_z) = (0, 0, 0, 0);
    for t in 0..horizon {
        let s = if t == 0 { draw(rng, model.p_s0.row(&[])) } else { draw(rng, model.p_s.row(&[prev_s, prev_z])) };
        let y = draw(rng, model.p_y.row(&[s]));
        let x = if t == 0 { draw(rng, k.p_x0.row(&[y])) } else { draw(rng, k.p_x.row(&[prev_x, y, prev_a])) };
        let o = draw(rng, k.p_o.row(&[x]));
        let a = draw(rng, &probs[o * n_a..(o + 1) * n_a]);
        let z = draw(rng, k.p_z.row(&[x, a]));
        trace.push(TraceStep { s, y, x, o, a, z, r_s: model.r_s[s], r_x: k.r_x[x] });
        (prev_s, prev_x, prev_a, prev_z) = (s, x, a, z);
    }
    let mut episode = Episode::new(
        trace.iter().map(|st| st.y).collect(),
        trace.iter().map(|st| st.z).collect(),
        trace.iter().map(|st| st.r_s).sum(),
    )?;
    episode.debug_trace = Some(trace);
    Ok(episode)
}

/// Deterministic in `seed`.
pub fn sample_episode(spec: &EnvironmentSpec, policy: &Policy, horizon: usize, seed: u64) -> Result<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_episode_model(&spec.full_model, policy, horizon, &mut rng)
}

fn support<'a>(table: &'a CondTable, parents: &[usize]) -> impl Iterator<Item = (usize, f64)> + 'a {
    table.row(parents).iter().copied().enumerate().filter(|&(_, p)| p > 0.0)
}

/// Expected `Σ_t r_s(s_t) + r_x(x_t)` over `horizon` slices, by propagating
/// the joint distribution of `(s_t, x_t)`.
pub fn exact_return_model(model: &FullModel, policy: &Policy, horizon: usize) -> Result<f64> {
    let k = &model.known;
    check_policy_shape(policy, k.n_obs(), k.n_actions())?;
    let probs = policy.action_probs();
    let (n_s, n_x, n_a, n_z) = (model.s_space.size(), k.x_space.size(), k.n_actions(), k.z_space.size());
    let n = n_s * n_x;

    let mut dist = vec![0.0; n];
    for (s, ps) in support(&model.p_s0, &[]) {
        for (y, py) in support(&model.p_y, &[s]) {
            for (x, px) in support(&k.p_x0, &[y]) {
                dist[s * n_x + x] += ps * py * px;
            }
        }
    }
    let reward: Vec<f64> = (0..n).map(|j| model.r_s[j / n_x] + k.r_x[j % n_x]).collect();
    let expected = |d: &[f64]| d.iter().zip(&reward).map(|(a, b)| a * b).sum::<f64>();
    if horizon == 0 {
        return Ok(0.0);
    }

    // Sparse one-slice kernel over (s, x), built lazily for states that carry mass.
    let mut kernel: Vec<Option<Vec<(usize, f64)>>> = vec![None; n];
    let mut row = vec![0.0; n];
    let mut action_z = vec![0.0; n_a * n_z];
    let mut total = expected(&dist);
    for _ in 1..horizon {
        let mut next = vec![0.0; n];
        for j in 0..n {
            let mass = dist[j];
            if mass == 0.0 {
                continue;
            }
            let entries = kernel[j].get_or_insert_with(|| {
                let (s, x) = (j / n_x, j % n_x);
                action_z.iter_mut().for_each(|v| *v = 0.0);
                for (o, po) in support(&k.p_o, &[x]) {
                    for a in 0..n_a {
                        let pa = po * probs[o * n_a + a];
                        for (z, pz) in support(&k.p_z, &[x, a]) {
                            action_z[a * n_z + z] += pa * pz;
                        }
                    }
                }
                for a in 0..n_a {
                    for z in 0..n_z {
                        let w = action_z[a * n_z + z];
                        if w == 0.0 {
                            continue;
                        }
                        for (s2, ps) in support(&model.p_s, &[s, z]) {
                            for (y, py) in support(&model.p_y, &[s2]) {
                                for (x2, px) in support(&k.p_x, &[x, y, a]) {
                                    row[s2 * n_x + x2] += w * ps * py * px;
                                }
                            }
                        }
                    }
                }
                let mut out = Vec::new();
                for (i, v) in row.iter_mut().enumerate() {
                    if *v != 0.0 {
                        out.push((i, *v));
                        *v = 0.0;
                    }
                }
                out
            });
            for &(i, p) in entries.iter() {
                next[i] += mass * p;
            }
        }
        dist = next;
        total += expected(&dist);
    }
    Ok(total)
}

pub fn exact_return(spec: &EnvironmentSpec, policy: &Policy, horizon: usize) -> Result<f64> {
    exact_return_model(&spec.full_model, policy, horizon)
}
