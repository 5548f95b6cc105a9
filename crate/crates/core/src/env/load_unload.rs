//! Cart on a seven-position line that loads at the left end and delivers at
//! the right end, with one memory bit.

use super::{action_space, identity_table, observation_space, point_mass, EnvName, EnvironmentSpec, WorldChain};
use crate::error::{PkmdpError, Result};
use crate::model::{CondTable, FiniteSpace, FullModel, KnownModel, Policy};

pub const POSITIONS: usize = 7;
pub const N_OBS: usize = POSITIONS * 2;
pub const N_ACTIONS: usize = 4;

const LAST: usize = POSITIONS - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Cargo {
    Loaded = 0,
    Empty = 1,
    /// Delivered during this slice; the only rewarded value.
    JustUnloaded = 2,
}

impl Cargo {
    pub const ALL: [Cargo; 3] = [Cargo::Loaded, Cargo::Empty, Cargo::JustUnloaded];

    fn from_index(i: usize) -> Cargo {
        Cargo::ALL[i]
    }
}

/// Cargo after the cart arrives at `pos`.
pub fn next_cargo(prev: Cargo, pos: usize) -> Cargo {
    match pos {
        0 => Cargo::Loaded,
        LAST if prev == Cargo::Loaded => Cargo::JustUnloaded,
        LAST => Cargo::Empty,
        _ if prev == Cargo::JustUnloaded => Cargo::Empty,
        _ => prev,
    }
}

/// Action index `move * 2 + set`, with move 0 = left, 1 = right.
pub fn action(right: bool, set: bool) -> usize {
    usize::from(right) * 2 + usize::from(set)
}

pub fn memory_after(a: usize) -> usize {
    a % 2
}

pub fn moves_right(a: usize) -> bool {
    a / 2 == 1
}

pub fn destination(pos: usize, a: usize) -> usize {
    if moves_right(a) {
        (pos + 1).min(LAST)
    } else {
        pos.saturating_sub(1)
    }
}

pub fn observation(pos: usize, mem: usize) -> usize {
    pos * 2 + mem
}

/// 0 = left end, 1 = middle, 2 = right end.
fn category(pos: usize) -> usize {
    match pos {
        0 => 0,
        LAST => 2,
        _ => 1,
    }
}

fn cargo_at_category(prev: Cargo, cat: usize) -> Cargo {
    next_cargo(prev, [0, 1, LAST][cat])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct State {
    pos: usize,
    cargo: Cargo,
    mem: usize,
}

const START: State = State { pos: 0, cargo: Cargo::Loaded, mem: 0 };

impl State {
    fn index(self) -> usize {
        (self.pos * 3 + self.cargo as usize) * 2 + self.mem
    }

    fn from_index(i: usize) -> State {
        State { pos: i / 6, cargo: Cargo::from_index((i / 2) % 3), mem: i % 2 }
    }

    fn step(self, a: usize) -> State {
        let pos = destination(self.pos, a);
        State { pos, cargo: next_cargo(self.cargo, pos), mem: memory_after(a) }
    }

    fn reward(self) -> f64 {
        if self.cargo == Cargo::JustUnloaded {
            1.0
        } else {
            0.0
        }
    }
}

/// The world as a Markov chain over all 42 factored (position, cargo, memory) states.
pub fn world() -> WorldChain {
    let n = POSITIONS * 3 * 2;
    let states: Vec<State> = (0..n).map(State::from_index).collect();
    WorldChain {
        n_obs: N_OBS,
        n_actions: N_ACTIONS,
        initial: vec![(START.index(), 1.0)],
        obs: states.iter().map(|s| observation(s.pos, s.mem)).collect(),
        reward: states.iter().map(|s| s.reward()).collect(),
        next: states.iter().map(|s| (0..N_ACTIONS).map(|a| vec![(s.step(a).index(), 1.0)]).collect()).collect(),
    }
}

fn reachable_states() -> Vec<State> {
    world().reachable().into_iter().map(State::from_index).collect()
}

fn reward_on_just_unloaded(cargo: impl Iterator<Item = Cargo>) -> Vec<f64> {
    cargo.map(|c| if c == Cargo::JustUnloaded { 1.0 } else { 0.0 }).collect()
}

/// Policy that sweeps the cart back and forth, using the memory bit as the direction.
pub fn cycling_policy(margin: f64) -> Policy {
    let actions: Vec<usize> = (0..N_OBS)
        .map(|o| {
            let (pos, mem) = (o / 2, o % 2);
            let right = if pos == 0 {
                true
            } else if pos == LAST {
                false
            } else {
                mem == 1
            };
            action(right, right)
        })
        .collect();
    Policy::near_deterministic(N_ACTIONS, &actions, margin).expect("valid cycling policy")
}

pub fn make_load_unload(variant: u8) -> Result<EnvironmentSpec> {
    let o = observation_space("lu_obs", N_OBS);
    let a = action_space("lu_action", N_ACTIONS);
    let (full_model, description) = match variant {
        1 => (variant_1(&o, &a), "no world knowledge: s is the full state; y, x and o copy the observation; z copies the action"),
        2 => (variant_2(&o, &a), "memory dynamics known: s is (position, cargo); y is the position; z is the move; x is (position, memory)"),
        3 => (variant_3(&o, &a), "end-point and memory dynamics known: s is the cargo status; y is uninformative; z is the destination category; x is (position, memory)"),
        v => return Err(PkmdpError::InvalidVariant(v)),
    };
    Ok(EnvironmentSpec {
        name: EnvName::LoadUnload,
        variant,
        full_model: full_model.validated()?,
        description: description.to_string(),
    })
}

fn variant_1(o: &FiniteSpace, a: &FiniteSpace) -> FullModel {
    let states = reachable_states();
    let find = |st: State| states.binary_search(&st).expect("reachable successor");
    let s = FiniteSpace::new("lu_world", states.len()).unwrap();
    let y = FiniteSpace::new("lu_y", N_OBS).unwrap();
    let x = FiniteSpace::new("lu_x", N_OBS).unwrap();
    let z = FiniteSpace::new("lu_z", N_ACTIONS).unwrap();
    let known = KnownModel {
        p_x0: identity_table("p_x0", &x, &[&y], 0),
        p_x: identity_table("p_x", &x, &[&x, &y, a], 1),
        p_o: identity_table("p_o", o, &[&x], 0),
        p_z: identity_table("p_z", &z, &[&x, a], 1),
        r_x: vec![0.0; N_OBS],
        x_space: x,
        y_space: y.clone(),
        z_space: z.clone(),
        o_space: o.clone(),
        a_space: a.clone(),
    };
    FullModel {
        p_s0: point_mass("p_s0", &s, find(START)),
        p_s: CondTable::deterministic("p_s", &s, &[&s, &z], |p| find(states[p[0]].step(p[1]))),
        p_y: CondTable::deterministic("p_y", &y, &[&s], |p| observation(states[p[0]].pos, states[p[0]].mem)),
        r_s: reward_on_just_unloaded(states.iter().map(|st| st.cargo)),
        s_space: s,
        known,
    }
}

fn variant_2(o: &FiniteSpace, a: &FiniteSpace) -> FullModel {
    let mut pairs: Vec<(usize, Cargo)> = reachable_states().iter().map(|st| (st.pos, st.cargo)).collect();
    pairs.sort();
    pairs.dedup();
    let find = |p: (usize, Cargo)| pairs.binary_search(&p).expect("reachable successor");
    let s = FiniteSpace::new("lu_pos_cargo", pairs.len()).unwrap();
    let y = FiniteSpace::new("lu_pos", POSITIONS).unwrap();
    let x = FiniteSpace::new("lu_pos_mem", N_OBS).unwrap();
    let z = FiniteSpace::new("lu_move", 2).unwrap();
    let known = KnownModel {
        p_x0: CondTable::deterministic("p_x0", &x, &[&y], |p| observation(p[0], 0)),
        p_x: CondTable::deterministic("p_x", &x, &[&x, &y, a], |p| observation(p[1], memory_after(p[2]))),
        p_o: identity_table("p_o", o, &[&x], 0),
        p_z: CondTable::deterministic("p_z", &z, &[&x, a], |p| usize::from(moves_right(p[1]))),
        r_x: vec![0.0; N_OBS],
        x_space: x,
        y_space: y.clone(),
        z_space: z.clone(),
        o_space: o.clone(),
        a_space: a.clone(),
    };
    FullModel {
        p_s0: point_mass("p_s0", &s, find((0, Cargo::Loaded))),
        p_s: CondTable::deterministic("p_s", &s, &[&s, &z], |p| {
            let (pos, cargo) = pairs[p[0]];
            let dest = destination(pos, action(p[1] == 1, false));
            find((dest, next_cargo(cargo, dest)))
        }),
        p_y: CondTable::deterministic("p_y", &y, &[&s], |p| pairs[p[0]].0),
        r_s: reward_on_just_unloaded(pairs.iter().map(|p| p.1)),
        s_space: s,
        known,
    }
}

fn variant_3(o: &FiniteSpace, a: &FiniteSpace) -> FullModel {
    let s = FiniteSpace::with_labels("lu_cargo", ["loaded", "empty", "just_unloaded"]).unwrap();
    let y = FiniteSpace::singleton("lu_none");
    let x = FiniteSpace::new("lu_pos_mem", N_OBS).unwrap();
    let z = FiniteSpace::with_labels("lu_dest", ["left_end", "middle", "right_end"]).unwrap();
    let known = KnownModel {
        p_x0: point_mass_given("p_x0", &x, &[&y], observation(0, 0)),
        p_x: CondTable::deterministic("p_x", &x, &[&x, &y, a], |p| {
            observation(destination(p[0] / 2, p[2]), memory_after(p[2]))
        }),
        p_o: identity_table("p_o", o, &[&x], 0),
        p_z: CondTable::deterministic("p_z", &z, &[&x, a], |p| category(destination(p[0] / 2, p[1]))),
        r_x: vec![0.0; N_OBS],
        x_space: x,
        y_space: y.clone(),
        z_space: z.clone(),
        o_space: o.clone(),
        a_space: a.clone(),
    };
    FullModel {
        p_s0: point_mass("p_s0", &s, Cargo::Loaded as usize),
        p_s: CondTable::deterministic("p_s", &s, &[&s, &z], |p| {
            cargo_at_category(Cargo::from_index(p[0]), p[1]) as usize
        }),
        p_y: CondTable::deterministic("p_y", &y, &[&s], |_| 0),
        r_s: reward_on_just_unloaded(Cargo::ALL.into_iter()),
        s_space: s,
        known,
    }
}

fn point_mass_given(name: &str, child: &FiniteSpace, parents: &[&FiniteSpace], value: usize) -> CondTable {
    CondTable::deterministic(name, child, parents, |_| value)
}

/// Fully known version of the world: x is the full state and all reward sits in r_x.
pub fn planning_model() -> FullModel {
    let states = reachable_states();
    let find = |st: State| states.binary_search(&st).expect("reachable successor");
    let x = FiniteSpace::new("lu_world", states.len()).unwrap();
    let y = FiniteSpace::singleton("y");
    let z = FiniteSpace::singleton("z");
    let a = action_space("lu_action", N_ACTIONS);
    let known = KnownModel {
        p_x0: point_mass_given("p_x0", &x, &[&y], find(START)),
        p_x: CondTable::deterministic("p_x", &x, &[&x, &y, &a], |p| find(states[p[0]].step(p[2]))),
        p_o: CondTable::deterministic("p_o", &observation_space("lu_obs", N_OBS), &[&x], |p| {
            observation(states[p[0]].pos, states[p[0]].mem)
        }),
        p_z: CondTable::deterministic("p_z", &z, &[&x, &a], |_| 0),
        r_x: reward_on_just_unloaded(states.iter().map(|st| st.cargo)),
        x_space: x,
        y_space: y,
        z_space: z,
        o_space: observation_space("lu_obs", N_OBS),
        a_space: a,
    };
    super::planning_full_model(known)
}
