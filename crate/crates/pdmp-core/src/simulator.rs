//! Event-driven forward simulation of the N-particle process.
//!
//! A single engine drives both sampling and deterministic replay: the random
//! outcomes (collision-timing controls, impact directions, reflected
//! velocities) come from an `OutcomeSource`, so simulation and reconstruction
//! share every line of state-update code.

use crate::config::ModelConfig;
use crate::error::{KernelError, PathError};
use crate::kernels::Kernels;
use crate::linalg::{axpy, norm, scale, sub, Vector};
use rand::Rng;

/// One channel happening, stamped with its absolute time.
#[derive(Debug, Clone, PartialEq)]
pub struct Event<const D: usize> {
    pub t: f64,
    pub kind: EventKind<D>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind<const D: usize> {
    /// Overlap window opened for pair (i, j); consumes the k-th timing
    /// control gamma and schedules sigma inside the first half-window.
    WindowOpen {
        i: usize,
        j: usize,
        k: usize,
        gamma: f64,
        sigma: f64,
        t_exit_pred: f64,
    },
    /// The scheduled sigma fired. `suppressed` marks slow pairs outside the
    /// kernel support (window consumed, velocities unchanged).
    Collision {
        i: usize,
        j: usize,
        k: usize,
        s_entry: f64,
        t_exit_pred: f64,
        gamma: f64,
        e: Vector<D>,
        v_pre: (Vector<D>, Vector<D>),
        v_post: (Vector<D>, Vector<D>),
        suppressed: bool,
    },
    /// A reflection of i or j interrupted the pending window before sigma.
    WindowCancel { i: usize, j: usize, k: usize },
    /// Hypothesis p(ii): entrance while a member was overlapping a third
    /// particle; no channel opens and the pair passes through.
    Passthrough { i: usize, j: usize },
    /// Diffusive boundary reflection of particle i (its l-th).
    Reflection {
        i: usize,
        l: usize,
        x_hit: Vector<D>,
        v_pre: Vector<D>,
        v_post: Vector<D>,
    },
}

impl<const D: usize> EventKind<D> {
    /// Identity label, ignoring realized values; used for event-order
    /// comparison and class keys.
    pub fn identity(&self) -> EventId {
        match self {
            EventKind::WindowOpen { i, j, k, .. } => EventId::Window(*i, *j, *k),
            EventKind::Collision {
                i, j, k, suppressed, ..
            } => {
                if *suppressed {
                    EventId::SuppressedCollision(*i, *j, *k)
                } else {
                    EventId::Collision(*i, *j, *k)
                }
            }
            EventKind::WindowCancel { i, j, k } => EventId::Cancel(*i, *j, *k),
            EventKind::Passthrough { i, j } => EventId::Passthrough(*i, *j),
            EventKind::Reflection { i, l, .. } => EventId::Reflection(*i, *l),
        }
    }

    /// True for events at which some velocity jumps.
    pub fn is_jump(&self) -> bool {
        matches!(
            self,
            EventKind::Collision {
                suppressed: false,
                ..
            } | EventKind::Reflection { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventId {
    Window(usize, usize, usize),
    Collision(usize, usize, usize),
    SuppressedCollision(usize, usize, usize),
    Cancel(usize, usize, usize),
    Passthrough(usize, usize),
    Reflection(usize, usize),
}

impl std::fmt::Display for EventId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EventId::Window(i, j, k) => write!(f, "W({i},{j},{k})"),
            EventId::Collision(i, j, k) => write!(f, "C({i},{j},{k})"),
            EventId::SuppressedCollision(i, j, k) => write!(f, "S({i},{j},{k})"),
            EventId::Cancel(i, j, k) => write!(f, "X({i},{j},{k})"),
            EventId::Passthrough(i, j) => write!(f, "P({i},{j})"),
            EventId::Reflection(i, l) => write!(f, "R({i},{l})"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathStats {
    pub passthrough_suppressions: usize,
    pub canceled_windows: usize,
    pub suppressed_collisions: usize,
}

/// A full trajectory on [0, t_max]: initial state plus the ordered event log.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<const D: usize> {
    pub x0: Vec<Vector<D>>,
    pub v0: Vec<Vector<D>>,
    pub t_max: f64,
    pub events: Vec<Event<D>>,
    pub stats: PathStats,
}

impl<const D: usize> Trajectory<D> {
    pub fn n_particles(&self) -> usize {
        self.x0.len()
    }

    pub fn identity_sequence(&self) -> Vec<EventId> {
        self.events.iter().map(|e| e.kind.identity()).collect()
    }

    /// Velocity of particle i at time t (right-continuous at jumps).
    pub fn velocity_at(&self, i: usize, t: f64) -> Vector<D> {
        let mut v = self.v0[i];
        for ev in &self.events {
            if ev.t > t {
                break;
            }
            match &ev.kind {
                EventKind::Collision {
                    i: a,
                    j: b,
                    v_post,
                    suppressed: false,
                    ..
                } => {
                    if *a == i {
                        v = v_post.0;
                    } else if *b == i {
                        v = v_post.1;
                    }
                }
                EventKind::Reflection { i: a, v_post, .. } if *a == i => v = *v_post,
                _ => {}
            }
        }
        v
    }

    /// Position of particle i at time t, by integrating the piecewise
    /// constant velocity.
    pub fn position_at(&self, i: usize, t: f64) -> Vector<D> {
        let mut x = self.x0[i];
        let mut v = self.v0[i];
        let mut now = 0.0;
        for ev in &self.events {
            if ev.t > t {
                break;
            }
            x = axpy(&x, ev.t - now, &v);
            now = ev.t;
            match &ev.kind {
                EventKind::Collision {
                    i: a,
                    j: b,
                    v_post,
                    suppressed: false,
                    ..
                } => {
                    if *a == i {
                        v = v_post.0;
                    } else if *b == i {
                        v = v_post.1;
                    }
                }
                EventKind::Reflection { i: a, v_post, .. } if *a == i => v = *v_post,
                _ => {}
            }
        }
        axpy(&x, t - now, &v)
    }

    /// Times of velocity-jump events, in order.
    pub fn jump_times(&self) -> Vec<f64> {
        self.events
            .iter()
            .filter(|e| e.kind.is_jump())
            .map(|e| e.t)
            .collect()
    }
}

/// Outcome of a fired collision.
pub enum CollisionOutcome<const D: usize> {
    Suppressed,
    Jump {
        e: Vector<D>,
        v_post: (Vector<D>, Vector<D>),
    },
}

/// Source of the random (or replayed) outcomes consumed by the engine.
pub trait OutcomeSource<const D: usize> {
    fn gamma(&mut self, i: usize, j: usize, k: usize) -> Result<f64, PathError>;
    fn collision(
        &mut self,
        i: usize,
        j: usize,
        k: usize,
        v_i: &Vector<D>,
        v_j: &Vector<D>,
    ) -> Result<CollisionOutcome<D>, PathError>;
    fn reflection(
        &mut self,
        i: usize,
        l: usize,
        n_out: &Vector<D>,
        v_pre: &Vector<D>,
    ) -> Result<Vector<D>, PathError>;
}

/// Sampling source: draws every outcome from the model kernels.
pub struct SamplingSource<'a, const D: usize, R: Rng> {
    pub kernels: &'a Kernels<D>,
    pub rng: &'a mut R,
}

impl<'a, const D: usize, R: Rng> OutcomeSource<D> for SamplingSource<'a, D, R> {
    fn gamma(&mut self, _i: usize, _j: usize, _k: usize) -> Result<f64, PathError> {
        Ok(self.kernels.sample_gamma(self.rng)?)
    }

    fn collision(
        &mut self,
        _i: usize,
        _j: usize,
        _k: usize,
        v_i: &Vector<D>,
        v_j: &Vector<D>,
    ) -> Result<CollisionOutcome<D>, PathError> {
        let w = sub(v_i, v_j);
        if self.kernels.rel.eval(norm(&w)) == 0.0 {
            return Ok(CollisionOutcome::Suppressed);
        }
        let e = self.kernels.sample_impact(v_i, v_j, self.rng)?;
        let (a, _) = self.kernels.post_impact(v_i, v_j, &e);
        // partner from the exchange identity a_{j,i;k} = v_i- + v_j- - a_{i,j;k},
        // the same arithmetic replay uses
        let partner = sub(&crate::linalg::add(v_i, v_j), &a);
        Ok(CollisionOutcome::Jump {
            e,
            v_post: (a, partner),
        })
    }

    fn reflection(
        &mut self,
        _i: usize,
        _l: usize,
        n_out: &Vector<D>,
        _v_pre: &Vector<D>,
    ) -> Result<Vector<D>, PathError> {
        Ok(self.kernels.sample_reflected(n_out, self.rng)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PairPhase {
    Separated,
    /// Inside distance beta. `armed` carries the pending sigma.
    Overlap {
        armed: Option<Armed>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Armed {
    k: usize,
    s_entry: f64,
    t_exit_pred: f64,
    gamma: f64,
    sigma: f64,
}

#[derive(Debug, Clone, Copy)]
enum Candidate {
    Boundary { i: usize },
    Entrance { pair: usize },
    Sigma { pair: usize },
    Separation { pair: usize },
}

struct Engine<'a, const D: usize> {
    cfg: &'a ModelConfig,
    kernels: &'a Kernels<D>,
    t: f64,
    x: Vec<Vector<D>>,
    v: Vec<Vector<D>>,
    phases: Vec<PairPhase>,
    window_count: Vec<usize>,
    refl_count: Vec<usize>,
    n_collisions: usize,
    n_reflections: usize,
    events: Vec<Event<D>>,
    stats: PathStats,
}

fn pairs(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            out.push((i, j));
        }
    }
    out
}

impl<'a, const D: usize> Engine<'a, D> {
    fn new(
        cfg: &'a ModelConfig,
        kernels: &'a Kernels<D>,
        x0: Vec<Vector<D>>,
        v0: Vec<Vector<D>>,
    ) -> Self {
        let n = x0.len();
        Engine {
            cfg,
            kernels,
            t: 0.0,
            x: x0,
            v: v0,
            phases: vec![PairPhase::Separated; n * (n - 1) / 2],
            window_count: vec![0; n * (n - 1) / 2],
            refl_count: vec![0; n],
            n_collisions: 0,
            n_reflections: 0,
            events: Vec::new(),
            stats: PathStats::default(),
        }
    }

    fn n(&self) -> usize {
        self.x.len()
    }

    /// Relative displacement and velocity of pair (i, j) at the current time.
    fn pair_rel(&self, i: usize, j: usize) -> (Vector<D>, Vector<D>) {
        (sub(&self.x[i], &self.x[j]), sub(&self.v[i], &self.v[j]))
    }

    fn candidates(&self) -> Vec<(f64, Candidate)> {
        let mut out = Vec::new();
        for i in 0..self.n() {
            if let Some(dt) =
                crate::geometry::boundary_hit_time(&self.x[i], &self.v[i], self.kernels.domain.radius)
            {
                out.push((self.t + dt, Candidate::Boundary { i }));
            }
        }
        for (p, &(i, j)) in pairs(self.n()).iter().enumerate() {
            let (dx, dv) = self.pair_rel(i, j);
            match self.phases[p] {
                PairPhase::Separated => {
                    if let Some((s, _)) = crate::geometry::pair_overlap_window(&dx, &dv, self.kernels.beta)
                    {
                        out.push((self.t + s, Candidate::Entrance { pair: p }));
                    }
                }
                PairPhase::Overlap { armed: Some(a) } => {
                    out.push((a.sigma, Candidate::Sigma { pair: p }));
                }
                PairPhase::Overlap { armed: None } => {
                    if let Some(dt) =
                        crate::geometry::pair_separation_time(&dx, &dv, self.kernels.beta)
                    {
                        out.push((self.t + dt, Candidate::Separation { pair: p }));
                    }
                }
            }
        }
        out
    }

    fn advance_positions(&mut self, to: f64) {
        let dt = to - self.t;
        for i in 0..self.n() {
            self.x[i] = axpy(&self.x[i], dt, &self.v[i]);
        }
        self.t = to;
    }

    /// True when particle `p` currently overlaps any particle other than `other`.
    fn overlapping_third(&self, p: usize, other: usize) -> bool {
        for (idx, &(i, j)) in pairs(self.n()).iter().enumerate() {
            if matches!(self.phases[idx], PairPhase::Overlap { .. })
                && ((i == p && j != other) || (j == p && i != other))
            {
                return true;
            }
        }
        false
    }

    fn run<S: OutcomeSource<D>>(mut self, source: &mut S) -> Result<Trajectory<D>, PathError> {
        let t_max = self.cfg.simulation.t_max;
        let tie = self.cfg.simulation.tie_tol;
        loop {
            let cands = self.candidates();
            let mut best: Option<(f64, Candidate)> = None;
            let mut second = f64::INFINITY;
            for &(t, c) in &cands {
                match best {
                    None => best = Some((t, c)),
                    Some((tb, _)) if t < tb => {
                        second = tb;
                        best = Some((t, c));
                    }
                    Some(_) => second = second.min(t),
                }
            }
            let Some((t_ev, cand)) = best else {
                self.advance_positions(t_max);
                break;
            };
            if t_ev >= t_max {
                self.advance_positions(t_max);
                break;
            }
            if (second - t_ev).abs() < tie {
                return Err(PathError::SimultaneousEvents { t: t_ev });
            }
            self.advance_positions(t_ev);
            match cand {
                Candidate::Boundary { i } => self.do_reflection(i, source)?,
                Candidate::Entrance { pair } => self.do_entrance(pair, source)?,
                Candidate::Sigma { pair } => self.do_sigma(pair, source)?,
                Candidate::Separation { pair } => self.do_separation(pair)?,
            }
        }
        Ok(Trajectory {
            x0: vec![],
            v0: vec![],
            t_max,
            events: self.events,
            stats: self.stats,
        })
    }

    fn do_reflection<S: OutcomeSource<D>>(
        &mut self,
        i: usize,
        source: &mut S,
    ) -> Result<(), PathError> {
        if self.n_reflections >= self.cfg.simulation.cap_reflections {
            return Err(PathError::EventCapExceeded {
                kind: "reflection",
                cap: self.cfg.simulation.cap_reflections,
            });
        }
        // snap onto the sphere to keep |x_hit| = R exact
        let r = norm(&self.x[i]);
        self.x[i] = scale(&self.x[i], self.kernels.domain.radius / r);
        let x_hit = self.x[i];
        let n_out = scale(&x_hit, 1.0 / self.kernels.domain.radius);
        let l = self.refl_count[i] + 1;
        let v_pre = self.v[i];
        let v_post = source.reflection(i, l, &n_out, &v_pre)?;
        self.v[i] = v_post;
        self.refl_count[i] = l;
        self.n_reflections += 1;
        self.events.push(Event {
            t: self.t,
            kind: EventKind::Reflection {
                i,
                l,
                x_hit,
                v_pre,
                v_post,
            },
        });
        // a velocity change of i invalidates any pending sigma it is part of
        let plist = pairs(self.n());
        for (idx, &(a, b)) in plist.iter().enumerate() {
            if a != i && b != i {
                continue;
            }
            if let PairPhase::Overlap { armed: Some(arm) } = self.phases[idx] {
                self.events.push(Event {
                    t: self.t,
                    kind: EventKind::WindowCancel { i: a, j: b, k: arm.k },
                });
                self.stats.canceled_windows += 1;
                self.phases[idx] = PairPhase::Overlap { armed: None };
            }
        }
        Ok(())
    }

    fn do_entrance<S: OutcomeSource<D>>(
        &mut self,
        pair: usize,
        source: &mut S,
    ) -> Result<(), PathError> {
        let (i, j) = pairs(self.n())[pair];
        let (dx, dv) = self.pair_rel(i, j);
        // p(iii): the crossing must be transversal
        if crate::geometry::crossing_slope(&dx, &dv, self.kernels.beta)
            < self.cfg.simulation.tie_tol
        {
            return Err(PathError::TangentialCrossing { t: self.t });
        }
        if self.overlapping_third(i, j) || self.overlapping_third(j, i) {
            self.stats.passthrough_suppressions += 1;
            self.events.push(Event {
                t: self.t,
                kind: EventKind::Passthrough { i, j },
            });
            self.phases[pair] = PairPhase::Overlap { armed: None };
            return Ok(());
        }
        // the straight-line exit time from the entrance configuration
        let exit_rel = crate::geometry::pair_separation_time(&dx, &dv, self.kernels.beta)
            .or_else(|| {
                // numerically still a hair outside: take the far root
                crate::geometry::pair_overlap_window(&dx, &dv, self.kernels.beta).map(|(_, t)| t)
            })
            .ok_or(PathError::TangentialCrossing { t: self.t })?;
        let k = self.window_count[pair] + 1;
        let gamma = source.gamma(i, j, k)?;
        let s_entry = self.t;
        let t_exit_pred = self.t + exit_rel;
        let sigma = s_entry + 0.5 * gamma * (t_exit_pred - s_entry);
        self.window_count[pair] = k;
        self.phases[pair] = PairPhase::Overlap {
            armed: Some(Armed {
                k,
                s_entry,
                t_exit_pred,
                gamma,
                sigma,
            }),
        };
        self.events.push(Event {
            t: self.t,
            kind: EventKind::WindowOpen {
                i,
                j,
                k,
                gamma,
                sigma,
                t_exit_pred,
            },
        });
        Ok(())
    }

    fn do_sigma<S: OutcomeSource<D>>(
        &mut self,
        pair: usize,
        source: &mut S,
    ) -> Result<(), PathError> {
        let (i, j) = pairs(self.n())[pair];
        let PairPhase::Overlap { armed: Some(arm) } = self.phases[pair] else {
            unreachable!("sigma candidate without armed window");
        };
        if self.n_collisions >= self.cfg.simulation.cap_collisions {
            return Err(PathError::EventCapExceeded {
                kind: "collision",
                cap: self.cfg.simulation.cap_collisions,
            });
        }
        let v_pre = (self.v[i], self.v[j]);
        let outcome = source.collision(i, j, arm.k, &v_pre.0, &v_pre.1)?;
        self.n_collisions += 1;
        let (e, v_post, suppressed) = match outcome {
            CollisionOutcome::Suppressed => {
                self.stats.suppressed_collisions += 1;
                ([0.0; D], v_pre, true)
            }
            CollisionOutcome::Jump { e, v_post } => (e, v_post, false),
        };
        self.v[i] = v_post.0;
        self.v[j] = v_post.1;
        self.events.push(Event {
            t: self.t,
            kind: EventKind::Collision {
                i,
                j,
                k: arm.k,
                s_entry: arm.s_entry,
                t_exit_pred: arm.t_exit_pred,
                gamma: arm.gamma,
                e,
                v_pre,
                v_post,
                suppressed,
            },
        });
        // still penetrating; the channel re-arms only after separation
        self.phases[pair] = PairPhase::Overlap { armed: None };
        Ok(())
    }

    fn do_separation(&mut self, pair: usize) -> Result<(), PathError> {
        let (i, j) = pairs(self.n())[pair];
        let (dx, dv) = self.pair_rel(i, j);
        if crate::geometry::crossing_slope(&dx, &dv, self.kernels.beta)
            < self.cfg.simulation.tie_tol
        {
            return Err(PathError::TangentialCrossing { t: self.t });
        }
        self.phases[pair] = PairPhase::Separated;
        Ok(())
    }
}

/// Run the engine from a given initial state with the given outcome source.
pub fn run_path<const D: usize, S: OutcomeSource<D>>(
    cfg: &ModelConfig,
    kernels: &Kernels<D>,
    x0: Vec<Vector<D>>,
    v0: Vec<Vector<D>>,
    source: &mut S,
) -> Result<Trajectory<D>, PathError> {
    let engine = Engine::new(cfg, kernels, x0.clone(), v0.clone());
    let mut traj = engine.run(source)?;
    traj.x0 = x0;
    traj.v0 = v0;
    Ok(traj)
}

/// Sample an initial configuration and simulate one path.
pub fn simulate_path<const D: usize, R: Rng>(
    cfg: &ModelConfig,
    kernels: &Kernels<D>,
    rng: &mut R,
) -> Result<Trajectory<D>, PathError> {
    let (x0, v0) = kernels
        .sample_initial(cfg.particles.n, rng)
        .map_err(KernelError::into_path)?;
    let mut source = SamplingSource { kernels, rng };
    run_path(cfg, kernels, x0, v0, &mut source)
}

impl KernelError {
    fn into_path(self) -> PathError {
        PathError::Kernel(self)
    }
}

/// Result of one ensemble slot: the trajectory or the error that aborted it.
pub type PathResult<const D: usize> = Result<Trajectory<D>, PathError>;

/// Simulate `n_paths` independent trajectories with per-path substreams of
/// `seed`. Bit-identical across worker counts: path p always uses
/// `rng::path_rng(seed, p)`.
pub fn run_ensemble<const D: usize>(
    cfg: &ModelConfig,
    kernels: &Kernels<D>,
    n_paths: usize,
    seed: u64,
    workers: usize,
) -> Vec<PathResult<D>> {
    crate::parallel::indexed_map(n_paths, workers, |p| {
        let mut rng = crate::rng::path_rng(seed, p as u64);
        simulate_path(cfg, kernels, &mut rng)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::linalg::{dot, norm, unit};

    fn setup() -> (ModelConfig, Kernels<2>) {
        let cfg = ModelConfig::default_desk();
        let k = Kernels::<2>::new(&cfg);
        (cfg, k)
    }

    #[test]
    fn single_particle_is_a_billiard() {
        let (mut cfg, _) = setup();
        cfg.particles.n = 1;
        cfg.simulation.t_max = 6.0;
        let k = Kernels::<2>::new(&cfg);
        let mut rng = crate::rng::path_rng(1, 0);
        let traj = simulate_path(&cfg, &k, &mut rng).unwrap();
        assert!(traj.events.iter().all(|e| matches!(
            e.kind,
            EventKind::Reflection { .. }
        )));
        assert!(!traj.events.is_empty());
        for ev in &traj.events {
            if let EventKind::Reflection { x_hit, v_post, .. } = &ev.kind {
                assert!((norm(x_hit) - 1.0).abs() < 1e-12);
                let n = unit(x_hit);
                assert!(dot(&unit(v_post), &n) < -k.eps_cone);
            }
        }
    }

    #[test]
    fn head_on_pair_collides_inside_first_half_window() {
        let (mut cfg, _) = setup();
        cfg.particles.n = 2;
        cfg.simulation.t_max = 0.95;
        cfg.particles.beta = 0.5;
        let k = Kernels::<2>::new(&cfg);
        // the geometry example: entrance at 0.75, exit at 1.25
        let x0 = vec![[-1.0 + 0.6, 0.0], [1.0 - 0.6, 0.0]]; // keep inside unit disk
        let v0 = vec![[1.0, 0.0], [-1.0, 0.0]];
        // entrance when |dx + s dv| = 0.5: dx = (-0.8,0), dv = (2,0) -> s = 0.15
        let mut rng = crate::rng::path_rng(5, 3);
        let mut src = SamplingSource {
            kernels: &k,
            rng: &mut rng,
        };
        let traj = run_path(&cfg, &k, x0, v0, &mut src).unwrap();
        let mut saw_collision = false;
        for ev in &traj.events {
            if let EventKind::Collision {
                s_entry,
                t_exit_pred,
                suppressed,
                v_pre,
                v_post,
                ..
            } = &ev.kind
            {
                // exchange identity: partner is exactly the momentum complement
                assert_eq!(v_post.1[0], v_pre.0[0] + v_pre.1[0] - v_post.0[0]);
                assert!(!suppressed);
                assert!(ev.t > *s_entry && ev.t < (s_entry + t_exit_pred) / 2.0);
                saw_collision = true;
            }
            if let EventKind::WindowOpen {
                gamma, sigma, t_exit_pred, ..
            } = &ev.kind
            {
                let half = ev.t + 0.5 * (t_exit_pred - ev.t);
                assert!(*sigma > ev.t && *sigma < half);
                assert!((sigma - (ev.t + 0.5 * gamma * (t_exit_pred - ev.t))).abs() < 1e-15);
            }
        }
        assert!(saw_collision);
    }

    #[test]
    fn zero_events_when_horizon_before_entrance() {
        let (mut cfg, _) = setup();
        cfg.particles.n = 2;
        cfg.particles.beta = 0.5;
        cfg.simulation.t_max = 0.1; // entrance would be at 0.15
        let k = Kernels::<2>::new(&cfg);
        let x0 = vec![[-0.4, 0.0], [0.4, 0.0]];
        let v0 = vec![[1.0, 0.0], [-1.0, 0.0]];
        let mut rng = crate::rng::path_rng(6, 0);
        let mut src = SamplingSource {
            kernels: &k,
            rng: &mut rng,
        };
        let traj = run_path(&cfg, &k, x0, v0, &mut src).unwrap();
        assert!(traj.events.is_empty());
    }

    #[test]
    fn velocity_constancy_between_events() {
        let (cfg, k) = setup();
        let mut rng = crate::rng::path_rng(7, 1);
        let traj = simulate_path(&cfg, &k, &mut rng).unwrap();
        let jumps = traj.jump_times();
        for w in jumps.windows(2) {
            let tm = (w[0] + w[1]) / 2.0;
            for i in 0..traj.n_particles() {
                let va = traj.velocity_at(i, w[0] + 1e-12);
                let vb = traj.velocity_at(i, tm);
                assert_eq!(va, vb);
            }
        }
    }

    #[test]
    fn event_times_strictly_increase() {
        let (cfg, k) = setup();
        for p in 0..50u64 {
            let mut rng = crate::rng::path_rng(8, p);
            let Ok(traj) = simulate_path(&cfg, &k, &mut rng) else {
                continue;
            };
            let jumps = traj.jump_times();
            for w in jumps.windows(2) {
                assert!(w[1] > w[0] + cfg.simulation.tie_tol);
            }
        }
    }

    #[test]
    fn ensemble_is_deterministic_across_worker_counts() {
        let (mut cfg, _) = setup();
        cfg.simulation.t_max = 0.8;
        let k = Kernels::<2>::new(&cfg);
        let a = run_ensemble(&cfg, &k, 64, 123, 1);
        let b = run_ensemble(&cfg, &k, 64, 123, 8);
        for (x, y) in a.iter().zip(b.iter()) {
            match (x, y) {
                (Ok(tx), Ok(ty)) => assert_eq!(tx, ty),
                (Err(ex), Err(ey)) => assert_eq!(format!("{ex}"), format!("{ey}")),
                _ => panic!("worker count changed path outcome"),
            }
        }
    }
}
