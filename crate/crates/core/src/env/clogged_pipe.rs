//! Three-section pipe fed by a debris flow that the agent keeps clear.

use super::{action_space, observation_space, point_mass, EnvName, EnvironmentSpec, WorldChain};
use crate::error::{PkmdpError, Result};
use crate::model::{CondTable, FiniteSpace, FullModel, KnownModel};

pub const SECTIONS: usize = 3;
pub const N_OBS: usize = SECTIONS * 2 * 2;
pub const N_ACTIONS: usize = 8;
pub const N_CLOGS: usize = 1 << SECTIONS;
pub const N_FLOWS: usize = 3;

const FLOW_CHANGE: f64 = 0.1;
/// Chance that debris enters section 0, by flow state (clear, low, high).
pub const INFLOW: [f64; N_FLOWS] = [0.0, 0.3, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Left = 0,
    Right = 1,
    Wait = 2,
    Unclog = 3,
}

impl Move {
    pub fn of_action(a: usize) -> Move {
        [Move::Left, Move::Right, Move::Wait, Move::Unclog][a / 2]
    }
}

pub fn action(m: Move, set: bool) -> usize {
    m as usize * 2 + usize::from(set)
}

pub fn memory_after(a: usize) -> usize {
    a % 2
}

pub fn observation(pos: usize, mem: usize, clogged: bool) -> usize {
    (pos * 2 + mem) * 2 + usize::from(clogged)
}

fn clogged_at(clogs: usize, pos: usize) -> bool {
    clogs >> pos & 1 == 1
}

/// Debris at `pos` moves one section downstream; past the last section it leaves.
pub fn unclog(clogs: usize, pos: usize) -> usize {
    if !clogged_at(clogs, pos) {
        return clogs;
    }
    let cleared = clogs & !(1 << pos);
    if pos + 1 < SECTIONS {
        cleared | 1 << (pos + 1)
    } else {
        cleared
    }
}

fn apply_action_to_clogs(clogs: usize, pos: usize, a: usize) -> usize {
    if Move::of_action(a) == Move::Unclog {
        unclog(clogs, pos)
    } else {
        clogs
    }
}

pub fn move_position(pos: usize, a: usize) -> usize {
    match Move::of_action(a) {
        Move::Left => pos.saturating_sub(1),
        Move::Right => (pos + 1).min(SECTIONS - 1),
        Move::Wait | Move::Unclog => pos,
    }
}

/// Flow chain: 0.1 to each adjacent state.
pub fn flow_transition(flow: usize) -> Vec<(usize, f64)> {
    let mut out = Vec::with_capacity(3);
    let mut stay = 1.0;
    if flow > 0 {
        out.push((flow - 1, FLOW_CHANGE));
        stay -= FLOW_CHANGE;
    }
    if flow + 1 < N_FLOWS {
        out.push((flow + 1, FLOW_CHANGE));
        stay -= FLOW_CHANGE;
    }
    out.push((flow, stay));
    out.sort_by_key(|e| e.0);
    out
}

/// Clog status after new debris possibly enters, given the new flow state.
fn with_inflow(clogs: usize, flow: usize) -> Vec<(usize, f64)> {
    let q = INFLOW[flow];
    if q == 0.0 {
        vec![(clogs, 1.0)]
    } else {
        vec![(clogs, 1.0 - q), (clogs | 1, q)]
    }
}

/// (clogs, flow) after one slice, before the agent's move is applied.
fn pipe_step(clogs: usize, flow: usize, unclog_at: Option<usize>) -> Vec<((usize, usize), f64)> {
    let clogs = unclog_at.map_or(clogs, |p| unclog(clogs, p));
    let mut out = Vec::new();
    for (f, pf) in flow_transition(flow) {
        for (c, pc) in with_inflow(clogs, f) {
            out.push(((c, f), pf * pc));
        }
    }
    out
}

fn all_clear_reward(clogs: usize) -> f64 {
    if clogs == 0 {
        1.0
    } else {
        0.0
    }
}

fn world_index(clogs: usize, pos: usize, mem: usize, flow: usize) -> usize {
    ((clogs * SECTIONS + pos) * 2 + mem) * N_FLOWS + flow
}

/// The world as a Markov chain over its 144 (clogs, position, memory, flow) states.
pub fn world() -> WorldChain {
    let n = N_CLOGS * SECTIONS * 2 * N_FLOWS;
    let decode =
        |i: usize| (i / (SECTIONS * 2 * N_FLOWS), (i / (2 * N_FLOWS)) % SECTIONS, (i / N_FLOWS) % 2, i % N_FLOWS);
    let mut obs = Vec::with_capacity(n);
    let mut reward = Vec::with_capacity(n);
    let mut next = Vec::with_capacity(n);
    for i in 0..n {
        let (clogs, pos, mem, flow) = decode(i);
        debug_assert_eq!(world_index(clogs, pos, mem, flow), i);
        obs.push(observation(pos, mem, clogged_at(clogs, pos)));
        reward.push(all_clear_reward(clogs));
        next.push(
            (0..N_ACTIONS)
                .map(|a| {
                    let unclog_at = (Move::of_action(a) == Move::Unclog).then_some(pos);
                    pipe_step(clogs, flow, unclog_at)
                        .into_iter()
                        .map(|((c, f), p)| (world_index(c, move_position(pos, a), memory_after(a), f), p))
                        .collect()
                })
                .collect(),
        );
    }
    WorldChain { n_obs: N_OBS, n_actions: N_ACTIONS, initial: vec![(world_index(0, 0, 0, 0), 1.0)], obs, reward, next }
}

pub fn make_clogged_pipe(variant: u8) -> Result<EnvironmentSpec> {
    let o = observation_space("cp_obs", N_OBS);
    let a = action_space("cp_action", N_ACTIONS);
    let flows = FiniteSpace::with_labels("cp_flow", ["clear", "low", "high"]).unwrap();
    let (full_model, description) = match variant {
        1 => (variant_1(&o, &a), "only memory known: s is (clogs, position, flow); y is (position, clogged here); z is the non-memory action; x is (position, memory, clogged here)"),
        2 => (variant_2(&o, &a), "cart control known: s is (clogs, flow); y is the clog status; z is the unclog location; x is (position, memory, clogs) with reward on x"),
        3 => (variant_3(&o, &a, &flows), "only incoming flow unknown: s is the flow; y is whether debris entered; z is uninformative; x is (position, clogs, memory) with reward on x"),
        v => return Err(PkmdpError::InvalidVariant(v)),
    };
    Ok(EnvironmentSpec {
        name: EnvName::CloggedPipe,
        variant,
        full_model: full_model.validated()?,
        description: description.to_string(),
    })
}

fn table_from_outcomes<F>(name: &str, child: &FiniteSpace, parents: &[&FiniteSpace], mut f: F) -> CondTable
where
    F: FnMut(&[usize]) -> Vec<(usize, f64)>,
{
    CondTable::from_fn(name, child, parents, |p, row| {
        for (c, prob) in f(p) {
            row[c] += prob;
        }
    })
}

fn variant_1(o: &FiniteSpace, a: &FiniteSpace) -> FullModel {
    // s = (clogs * 3 + pos) * 3 + flow
    let s = FiniteSpace::new("cp_clogs_pos_flow", N_CLOGS * SECTIONS * N_FLOWS).unwrap();
    let y = FiniteSpace::new("cp_pos_clogged", SECTIONS * 2).unwrap();
    let z = FiniteSpace::new("cp_move", 4).unwrap();
    let x = FiniteSpace::new("cp_pos_mem_clogged", N_OBS).unwrap();
    let decode = |i: usize| (i / (SECTIONS * N_FLOWS), (i / N_FLOWS) % SECTIONS, i % N_FLOWS);
    let encode = |clogs: usize, pos: usize, flow: usize| (clogs * SECTIONS + pos) * N_FLOWS + flow;
    let known = KnownModel {
        p_x0: CondTable::deterministic("p_x0", &x, &[&y], |p| observation(p[0] / 2, 0, p[0] % 2 == 1)),
        p_x: CondTable::deterministic("p_x", &x, &[&x, &y, a], |p| {
            observation(p[1] / 2, memory_after(p[2]), p[1] % 2 == 1)
        }),
        p_o: super::identity_table("p_o", o, &[&x], 0),
        p_z: CondTable::deterministic("p_z", &z, &[&x, a], |p| p[1] / 2),
        r_x: vec![0.0; N_OBS],
        x_space: x,
        y_space: y.clone(),
        z_space: z.clone(),
        o_space: o.clone(),
        a_space: a.clone(),
    };
    FullModel {
        p_s0: point_mass("p_s0", &s, encode(0, 0, 0)),
        p_s: table_from_outcomes("p_s", &s, &[&s, &z], |p| {
            let (clogs, pos, flow) = decode(p[0]);
            let a = action(Move::of_action(p[1] * 2), false);
            let unclog_at = (Move::of_action(a) == Move::Unclog).then_some(pos);
            pipe_step(clogs, flow, unclog_at)
                .into_iter()
                .map(|((c, f), pr)| (encode(c, move_position(pos, a), f), pr))
                .collect()
        }),
        p_y: CondTable::deterministic("p_y", &y, &[&s], |p| {
            let (clogs, pos, _) = decode(p[0]);
            pos * 2 + usize::from(clogged_at(clogs, pos))
        }),
        r_s: (0..s.size()).map(|i| all_clear_reward(decode(i).0)).collect(),
        s_space: s,
        known,
    }
}

/// x = (pos * 2 + mem) * 8 + clogs, shared by variants 2 and 3.
fn pos_mem_clogs_space() -> FiniteSpace {
    FiniteSpace::new("cp_pos_mem_clogs", SECTIONS * 2 * N_CLOGS).unwrap()
}

fn pmc_decode(x: usize) -> (usize, usize, usize) {
    (x / (2 * N_CLOGS), (x / N_CLOGS) % 2, x % N_CLOGS)
}

fn pmc_encode(pos: usize, mem: usize, clogs: usize) -> usize {
    (pos * 2 + mem) * N_CLOGS + clogs
}

fn pmc_observation(o: &FiniteSpace, x: &FiniteSpace) -> CondTable {
    CondTable::deterministic("p_o", o, &[x], |p| {
        let (pos, mem, clogs) = pmc_decode(p[0]);
        observation(pos, mem, clogged_at(clogs, pos))
    })
}

fn variant_2(o: &FiniteSpace, a: &FiniteSpace) -> FullModel {
    // s = clogs * 3 + flow
    let s = FiniteSpace::new("cp_clogs_flow", N_CLOGS * N_FLOWS).unwrap();
    let y = FiniteSpace::new("cp_clogs", N_CLOGS).unwrap();
    let z = FiniteSpace::with_labels("cp_unclog_at", ["none", "s0", "s1", "s2"]).unwrap();
    let x = pos_mem_clogs_space();
    let known = KnownModel {
        p_x0: CondTable::deterministic("p_x0", &x, &[&y], |p| pmc_encode(0, 0, p[0])),
        p_x: CondTable::deterministic("p_x", &x, &[&x, &y, a], |p| {
            let (pos, _, _) = pmc_decode(p[0]);
            pmc_encode(move_position(pos, p[2]), memory_after(p[2]), p[1])
        }),
        p_o: pmc_observation(o, &x),
        p_z: CondTable::deterministic("p_z", &z, &[&x, a], |p| {
            if Move::of_action(p[1]) == Move::Unclog {
                pmc_decode(p[0]).0 + 1
            } else {
                0
            }
        }),
        r_x: (0..x.size()).map(|i| all_clear_reward(pmc_decode(i).2)).collect(),
        x_space: x,
        y_space: y.clone(),
        z_space: z.clone(),
        o_space: o.clone(),
        a_space: a.clone(),
    };
    FullModel {
        p_s0: point_mass("p_s0", &s, 0),
        p_s: table_from_outcomes("p_s", &s, &[&s, &z], |p| {
            let (clogs, flow) = (p[0] / N_FLOWS, p[0] % N_FLOWS);
            pipe_step(clogs, flow, p[1].checked_sub(1)).into_iter().map(|((c, f), pr)| (c * N_FLOWS + f, pr)).collect()
        }),
        p_y: CondTable::deterministic("p_y", &y, &[&s], |p| p[0] / N_FLOWS),
        r_s: vec![0.0; s.size()],
        s_space: s,
        known,
    }
}

fn variant_3(o: &FiniteSpace, a: &FiniteSpace, flows: &FiniteSpace) -> FullModel {
    let y = FiniteSpace::with_labels("cp_debris_entered", ["no", "yes"]).unwrap();
    let z = FiniteSpace::singleton("cp_none");
    let x = pos_mem_clogs_space();
    let known = KnownModel {
        p_x0: CondTable::deterministic("p_x0", &x, &[&y], |p| pmc_encode(0, 0, p[0])),
        p_x: CondTable::deterministic("p_x", &x, &[&x, &y, a], |p| {
            let (pos, _, clogs) = pmc_decode(p[0]);
            let clogs = apply_action_to_clogs(clogs, pos, p[2]) | p[1];
            pmc_encode(move_position(pos, p[2]), memory_after(p[2]), clogs)
        }),
        p_o: pmc_observation(o, &x),
        p_z: CondTable::deterministic("p_z", &z, &[&x, a], |_| 0),
        r_x: (0..x.size()).map(|i| all_clear_reward(pmc_decode(i).2)).collect(),
        x_space: x,
        y_space: y.clone(),
        z_space: z.clone(),
        o_space: o.clone(),
        a_space: a.clone(),
    };
    FullModel {
        p_s0: point_mass("p_s0", flows, 0),
        p_s: table_from_outcomes("p_s", flows, &[flows, &z], |p| flow_transition(p[0])),
        p_y: CondTable::from_fn("p_y", &y, &[flows], |p, row| {
            row[1] = INFLOW[p[0]];
            row[0] = 1.0 - INFLOW[p[0]];
        }),
        r_s: vec![0.0; N_FLOWS],
        s_space: flows.clone(),
        known,
    }
}
