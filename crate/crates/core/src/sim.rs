//! Fixed-step kinematic multi-agent simulator.
//!
//! Every agent is a unicycle integrated with explicit Euler at `DT`.
//! Steering is pure pursuit on the active lane with a small heading
//! damping term; longitudinal control is a saturated proportional law
//! toward the behavior's target speed. All agents are updated
//! simultaneously from the previous snapshot, in declaration order.

use alloc::string::String;
use alloc::vec::Vec;

use serde::Serialize;
use thiserror::Error;

use crate::geom::{normalize_angle, segment_distance, Vec2};
use crate::lang::{Action, AgentView, ConcreteAgent, ConcreteScenario, Direction};
use crate::road::{Lane, LaneId, Maneuver, RoadNetwork};
use crate::{DT, HISTORY_STEPS, HORIZON_STEPS};

/// Maximum acceleration, m/s^2.
pub const MAX_ACCEL: f64 = 3.0;
/// Maximum (emergency) deceleration, m/s^2.
pub const MAX_DECEL: f64 = 6.0;
/// Comfortable deceleration used for stop-line approach and curve speed.
pub const COMFORT_DECEL: f64 = 3.0;
/// Lateral acceleration budget on curved connectors, m/s^2.
pub const MAX_LATERAL_ACCEL: f64 = 3.0;
/// Proportional speed gain, 1/s.
pub const SPEED_GAIN: f64 = 2.0;
/// Minimum pure-pursuit lookahead, m.
pub const MIN_LOOKAHEAD: f64 = 3.0;
/// Heading damping gain added to pure pursuit.
pub const HEADING_DAMPING: f64 = 1.0;
/// Separation treated as contact by the time-to-collision estimate, m.
pub const TTC_RADIUS: f64 = 3.5;
/// How far ahead a waiting agent projects other agents' motion, s.
pub const CLEAR_HORIZON: f64 = 3.0;
/// Gap left before the stop line when waiting.
pub const STOP_MARGIN: f64 = 1.0;
const CURVE_PREVIEW: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentState {
    pub position: Vec2,
    /// Radians in (-pi, pi].
    pub heading: f64,
    pub speed: f64,
    pub lane: LaneId,
    /// Index into the agent's behavior list; equals its length once exhausted.
    pub behavior_step: usize,
}

/// Timestamped states of every agent; step `t` is at time `t * dt`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trace {
    pub dt: f64,
    /// Agent names in declaration order; indexes the inner vectors of `steps`.
    pub agents: Vec<String>,
    pub steps: Vec<Vec<AgentState>>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn agent_index(&self, name: &str) -> Option<usize> {
        self.agents.iter().position(|a| a == name)
    }

    pub fn state(&self, step: usize, agent: usize) -> &AgentState {
        &self.steps[step][agent]
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("n_steps {n_steps} is shorter than timepoint + horizon ({required})")]
    TooShort { n_steps: usize, required: usize },
    #[error("agent `{agent}` left the map at step {step}")]
    LeftMap { agent: String, step: usize },
    #[error("agent `{agent}` has no {direction:?} lane to change into at step {step}")]
    NoAdjacentLane {
        agent: String,
        step: usize,
        direction: Direction,
    },
    #[error("expected {expected} initial states, got {got}")]
    InitialStates { expected: usize, got: usize },
    #[error("unknown lane `{0}`")]
    UnknownLane(LaneId),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Pose {
    pub position: Vec2,
    pub heading: f64,
}

/// History for every agent and ground-truth future for the target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Window {
    pub timepoint: usize,
    /// Per agent (declaration order), steps `[timepoint - 20, timepoint)`.
    pub history: Vec<Vec<Pose>>,
    /// Target positions over `[timepoint, timepoint + horizon)`.
    pub future: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WindowError {
    #[error("timepoint {0} is below the minimum of {HISTORY_STEPS}")]
    TimepointTooEarly(usize),
    #[error("trace has {len} steps, {required} needed")]
    TraceTooShort { len: usize, required: usize },
    #[error("no agent with index {0}")]
    UnknownAgent(usize),
}

/// Splits `trace` at `timepoint` with the default horizon.
pub fn split_trace(trace: &Trace, timepoint: usize, target: usize) -> Result<Window, WindowError> {
    split_trace_with(trace, timepoint, target, HORIZON_STEPS)
}

pub fn split_trace_with(
    trace: &Trace,
    timepoint: usize,
    target: usize,
    horizon: usize,
) -> Result<Window, WindowError> {
    if timepoint < HISTORY_STEPS {
        return Err(WindowError::TimepointTooEarly(timepoint));
    }
    let required = timepoint + horizon;
    if trace.len() < required {
        return Err(WindowError::TraceTooShort {
            len: trace.len(),
            required,
        });
    }
    if target >= trace.agents.len() {
        return Err(WindowError::UnknownAgent(target));
    }
    let history = (0..trace.agents.len())
        .map(|a| {
            trace.steps[timepoint - HISTORY_STEPS..timepoint]
                .iter()
                .map(|s| Pose {
                    position: s[a].position,
                    heading: s[a].heading,
                })
                .collect()
        })
        .collect();
    let future = trace.steps[timepoint..required]
        .iter()
        .map(|s| s[target].position)
        .collect();
    Ok(Window {
        timepoint,
        history,
        future,
    })
}

/// First step at which two agents are closer than `radius`, with the pair.
pub fn collision_check(trace: &Trace, radius: f64) -> Option<(usize, usize, usize)> {
    for (t, states) in trace.steps.iter().enumerate() {
        for i in 0..states.len() {
            for j in i + 1..states.len() {
                if states[i].position.dist(states[j].position) < radius {
                    return Some((t, i, j));
                }
            }
        }
    }
    None
}

/// Smallest `t >= 0` with `|r + w t| <= radius`, if any.
pub fn time_to_contact(r: Vec2, w: Vec2, radius: f64) -> Option<f64> {
    let c = r.norm_sq() - radius * radius;
    if c <= 0.0 {
        return Some(0.0);
    }
    let a = w.norm_sq();
    if a < 1e-12 {
        return None;
    }
    let b = 2.0 * r.dot(w);
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let t = (-b - libm::sqrt(disc)) / (2.0 * a);
    (t >= 0.0).then_some(t)
}

/// Initial states as declared: on the lane centerline, aligned with it.
pub fn initial_states(scenario: &ConcreteScenario) -> Vec<AgentState> {
    scenario
        .agents
        .iter()
        .zip(scenario.initial_poses())
        .map(|(a, (position, heading))| AgentState {
            position,
            heading: normalize_angle(heading),
            speed: a.speed,
            lane: a.lane.clone(),
            behavior_step: a
                .behavior
                .iter()
                .position(|s| !matches!(s.action, Action::BrakeOnCollisionRisk { .. }))
                .unwrap_or(a.behavior.len()),
        })
        .collect()
}

/// Runs `scenario` for `n_steps` snapshots (step 0 is the initial state).
pub fn simulate(scenario: &ConcreteScenario, n_steps: usize) -> Result<Trace, SimError> {
    let required = scenario.timepoint as usize + HORIZON_STEPS;
    if n_steps < required {
        return Err(SimError::TooShort { n_steps, required });
    }
    simulate_from(scenario, initial_states(scenario), n_steps)
}

/// Runs `scenario` from explicit initial states, without the horizon check.
pub fn simulate_from(
    scenario: &ConcreteScenario,
    init: Vec<AgentState>,
    n_steps: usize,
) -> Result<Trace, SimError> {
    let net: &RoadNetwork = &scenario.network;
    if init.len() != scenario.agents.len() {
        return Err(SimError::InitialStates {
            expected: scenario.agents.len(),
            got: init.len(),
        });
    }
    for s in &init {
        net.lane(&s.lane)
            .map_err(|_| SimError::UnknownLane(s.lane.clone()))?;
    }
    let mut ctl: Vec<Controller<'_>> = scenario
        .agents
        .iter()
        .zip(&init)
        .map(|(a, s)| Controller::new(a, s.speed))
        .collect();
    let initial: Vec<Vec2> = init.iter().map(|s| s.position).collect();

    let mut steps: Vec<Vec<AgentState>> = Vec::with_capacity(n_steps);
    let mut cur = init;
    for t in 0..n_steps {
        if t + 1 == n_steps {
            steps.push(cur);
            break;
        }
        let view = SnapshotView {
            states: &cur,
            initial: &initial,
        };
        let mut next = Vec::with_capacity(cur.len());
        for (i, c) in ctl.iter_mut().enumerate() {
            next.push(c.tick(i, t, &cur, &view, net)?);
        }
        steps.push(core::mem::replace(&mut cur, next));
    }
    Ok(Trace {
        dt: DT,
        agents: scenario.agents.iter().map(|a| a.name.clone()).collect(),
        steps,
    })
}

struct SnapshotView<'a> {
    states: &'a [AgentState],
    initial: &'a [Vec2],
}

impl AgentView for SnapshotView<'_> {
    fn position(&self, agent: usize) -> Vec2 {
        self.states[agent].position
    }
    fn heading(&self, agent: usize) -> f64 {
        self.states[agent].heading
    }
    fn speed(&self, agent: usize) -> f64 {
        self.states[agent].speed
    }
    fn initial_position(&self, agent: usize) -> Vec2 {
        self.initial[agent]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum StopPhase {
    Approach,
    Stopped,
}

#[derive(Debug, Clone, Copy)]
struct LaneChange {
    /// Lateral offset from the target lane when the change began.
    lat0: f64,
    duration: f64,
}

struct Controller<'a> {
    agent: &'a ConcreteAgent,
    /// Indices of sequential (non-modifier) steps in `agent.behavior`.
    order: Vec<usize>,
    /// Position in `order`; `order.len()` once exhausted.
    pos: usize,
    ticks: u32,
    entered: bool,
    brake_ttc: Option<f64>,
    cruise: f64,
    lane_change: Option<LaneChange>,
    stop: StopPhase,
    on_connector: bool,
}

fn ticks_for(seconds: f64) -> u32 {
    libm::ceil(seconds / DT - 1e-9) as u32
}

impl<'a> Controller<'a> {
    fn new(agent: &'a ConcreteAgent, speed: f64) -> Self {
        let mut order = Vec::new();
        let mut brake_ttc: Option<f64> = None;
        for (i, s) in agent.behavior.iter().enumerate() {
            match s.action {
                Action::BrakeOnCollisionRisk { ttc } => {
                    brake_ttc = Some(brake_ttc.map_or(ttc, |b| b.max(ttc)))
                }
                _ => order.push(i),
            }
        }
        Controller {
            agent,
            order,
            pos: 0,
            ticks: 0,
            entered: false,
            brake_ttc,
            cruise: speed,
            lane_change: None,
            stop: StopPhase::Approach,
            on_connector: false,
        }
    }

    fn action(&self) -> Option<&'a Action> {
        self.order
            .get(self.pos)
            .map(|&i| &self.agent.behavior[i].action)
    }

    fn behavior_index(&self) -> usize {
        self.order
            .get(self.pos)
            .copied()
            .unwrap_or(self.agent.behavior.len())
    }

    /// Maneuver to take at the next junction: the current or next upcoming turn.
    fn intent(&self) -> Maneuver {
        self.order[self.pos.min(self.order.len())..]
            .iter()
            .find_map(|&i| match self.agent.behavior[i].action {
                Action::TurnAtIntersection { maneuver, .. } => Some(maneuver),
                _ => None,
            })
            .unwrap_or(Maneuver::Straight)
    }

    fn next_lane<'n>(&self, net: &'n RoadNetwork, lane: &'n Lane) -> Option<&'n Lane> {
        net.successor(lane, self.intent())
            .or_else(|| net.default_successor(lane))
    }

    fn step_done(
        &self,
        i: usize,
        cur: &[AgentState],
        view: &SnapshotView<'_>,
        net: &RoadNetwork,
    ) -> bool {
        let Some(&bi) = self.order.get(self.pos) else {
            return false;
        };
        let step = &self.agent.behavior[bi];
        if step.for_seconds.is_some_and(|s| self.ticks >= ticks_for(s)) {
            return true;
        }
        if step.until.as_ref().is_some_and(|c| c.eval(view)) {
            return true;
        }
        let me = &cur[i];
        match step.action {
            Action::FollowLane { .. } | Action::BrakeOnCollisionRisk { .. } => false,
            Action::LaneChange { duration, .. } => self.ticks >= ticks_for(duration),
            Action::TurnAtIntersection { .. } => {
                self.on_connector
                    && net
                        .lanes
                        .get(&me.lane)
                        .is_some_and(|l| l.maneuver.is_none())
            }
            Action::StopAndWait { clear_radius } => {
                self.stop == StopPhase::Stopped
                    && me.speed == 0.0
                    && self.is_clear(i, cur, clear_radius, net)
            }
        }
    }

    /// No other agent inside `radius`, and no other agent's constant-velocity
    /// path over the next `CLEAR_HORIZON` seconds passes within one lane
    /// width of the lane this agent is about to enter.
    fn is_clear(&self, i: usize, cur: &[AgentState], radius: f64, net: &RoadNetwork) -> bool {
        let me = &cur[i];
        let next = net.lanes.get(&me.lane).and_then(|l| self.next_lane(net, l));
        cur.iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .all(|(_, o)| {
                if o.position.dist(me.position) < radius {
                    return false;
                }
                let Some(lane) = next else { return true };
                let end = o.position + Vec2::from_angle(o.heading) * (o.speed * CLEAR_HORIZON);
                lane.centerline
                    .windows(2)
                    .all(|w| segment_distance(o.position, end, w[0], w[1]) >= lane.width)
            })
    }

    fn enter_step(
        &mut self,
        t: usize,
        me: &mut AgentState,
        net: &RoadNetwork,
    ) -> Result<(), SimError> {
        self.ticks = 0;
        self.stop = StopPhase::Approach;
        self.lane_change = None;
        match self.action() {
            Some(&Action::FollowLane { target_speed })
            | Some(&Action::TurnAtIntersection { target_speed, .. }) => {
                self.cruise = target_speed;
            }
            Some(&Action::LaneChange {
                direction,
                duration,
            }) => {
                let lane = net
                    .lane(&me.lane)
                    .map_err(|_| SimError::UnknownLane(me.lane.clone()))?;
                let adj = match direction {
                    Direction::Left => &lane.left_adjacent,
                    Direction::Right => &lane.right_adjacent,
                };
                let Some(adj) = adj else {
                    return Err(SimError::NoAdjacentLane {
                        agent: self.agent.name.clone(),
                        step: t,
                        direction,
                    });
                };
                let target = net
                    .lane(adj)
                    .map_err(|_| SimError::UnknownLane(adj.clone()))?;
                let (_, lat0) = target.project(me.position);
                me.lane = adj.clone();
                self.lane_change = Some(LaneChange { lat0, duration });
            }
            _ => {}
        }
        self.on_connector = net
            .lanes
            .get(&me.lane)
            .is_some_and(|l| l.maneuver.is_some());
        Ok(())
    }

    /// Reference lateral offset from the active lane `tau` seconds into the step.
    fn ref_lateral(&self, tau: f64) -> f64 {
        match self.lane_change {
            Some(lc) => lc.lat0 * (1.0 - tau / lc.duration).max(0.0),
            None => 0.0,
        }
    }

    fn tick(
        &mut self,
        i: usize,
        t: usize,
        cur: &[AgentState],
        view: &SnapshotView<'_>,
        net: &RoadNetwork,
    ) -> Result<AgentState, SimError> {
        let mut me = cur[i].clone();
        if !self.entered {
            self.entered = true;
            self.enter_step(t, &mut me, net)?;
        } else if self.step_done(i, cur, view, net) {
            self.pos += 1;
            self.enter_step(t, &mut me, net)?;
        }
        me.behavior_step = self.behavior_index();

        let lane = net
            .lane(&me.lane)
            .map_err(|_| SimError::UnknownLane(me.lane.clone()))?;
        let (s, _) = lane.project(me.position);
        let v = me.speed;
        let tau = self.ticks as f64 * DT;

        // steering: pure pursuit toward a lookahead point on the active path
        let lookahead = v.max(MIN_LOOKAHEAD);
        let tau_ahead = tau + lookahead / v.max(0.5);
        let (la_lane, la_s) = net.walk(lane, s, lookahead, |l| self.next_lane(net, l));
        let target = la_lane.point_from_offsets(la_s, self.ref_lateral(tau_ahead));
        let to_target = target - me.position;
        let alpha = normalize_angle(to_target.angle() - me.heading);
        let mut path_heading = lane.heading_at(s);
        if let Some(lc) = self.lane_change {
            if tau < lc.duration {
                path_heading += libm::atan2(-lc.lat0 / lc.duration, v.max(0.5));
            }
        }
        let ld = to_target.norm().max(1e-6);
        let kappa = 2.0 * libm::sin(alpha) / ld
            - HEADING_DAMPING * libm::sin(normalize_angle(me.heading - path_heading)) / lookahead;

        // longitudinal control
        let curve_cap = self.curve_speed_cap(net, lane, s);
        let mut accel = match self.action() {
            Some(&Action::StopAndWait { .. }) => {
                let d_stop = self.stop_distance(net, lane, s);
                if self.stop == StopPhase::Approach && (d_stop <= 0.1 || v == 0.0) {
                    self.stop = StopPhase::Stopped;
                }
                let v_des = match self.stop {
                    StopPhase::Approach => self
                        .cruise
                        .min(libm::sqrt(2.0 * COMFORT_DECEL * d_stop))
                        .min(curve_cap),
                    StopPhase::Stopped => 0.0,
                };
                (v_des - v) / DT
            }
            // above the curve profile, track it directly rather than lag behind
            _ if v > curve_cap => (curve_cap - v) / DT,
            _ => SPEED_GAIN * (self.cruise.min(curve_cap) - v),
        };
        if let Some(threshold) = self.brake_ttc {
            if self.collision_risk(i, cur, threshold) {
                accel = -MAX_DECEL;
            }
        }
        let accel = accel.clamp(-MAX_DECEL, MAX_ACCEL);

        // explicit Euler
        let mut next = me.clone();
        next.position = me.position + Vec2::from_angle(me.heading) * (v * DT);
        next.heading = normalize_angle(me.heading + v * kappa * DT);
        next.speed = (v + accel * DT).max(0.0);
        if self.stop == StopPhase::Stopped && next.speed < 1e-9 {
            next.speed = 0.0;
        }
        self.ticks += 1;

        // lane progression
        loop {
            let lane = net
                .lane(&next.lane)
                .map_err(|_| SimError::UnknownLane(next.lane.clone()))?;
            if lane.overshoot(next.position) <= 0.0 {
                break;
            }
            let Some(n) = self.next_lane(net, lane) else {
                return Err(SimError::LeftMap {
                    agent: self.agent.name.clone(),
                    step: t + 1,
                });
            };
            next.lane = n.id.clone();
            if n.maneuver.is_some() {
                self.on_connector = true;
            }
        }
        if net
            .lanes
            .get(&next.lane)
            .is_some_and(|l| l.maneuver.is_some())
        {
            self.on_connector = true;
        }
        Ok(next)
    }

    fn curve_speed_cap(&self, net: &RoadNetwork, lane: &Lane, s: f64) -> f64 {
        let mut d = 0.0;
        let mut cur = lane;
        let mut offset = s;
        while d <= CURVE_PREVIEW {
            if let Some(r) = cur.turn_radius {
                let v_cap = libm::sqrt(MAX_LATERAL_ACCEL * r);
                return libm::sqrt(v_cap * v_cap + 2.0 * COMFORT_DECEL * d);
            }
            d += cur.length() - offset;
            offset = 0.0;
            match self.next_lane(net, cur) {
                Some(n) => cur = n,
                None => break,
            }
        }
        f64::INFINITY
    }

    /// Distance to the stop point: just short of the junction when the
    /// current lane feeds one, otherwise here.
    fn stop_distance(&self, net: &RoadNetwork, lane: &Lane, s: f64) -> f64 {
        let feeds_junction = lane
            .successors
            .iter()
            .any(|id| net.lanes.get(id).is_some_and(|l| l.maneuver.is_some()));
        if feeds_junction {
            (lane.length() - STOP_MARGIN - s).max(0.0)
        } else {
            0.0
        }
    }

    fn collision_risk(&self, i: usize, cur: &[AgentState], threshold: f64) -> bool {
        let me = &cur[i];
        let fwd = Vec2::from_angle(me.heading);
        let my_vel = fwd * me.speed;
        cur.iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .any(|(_, o)| {
                let r = o.position - me.position;
                if r.dot(fwd) <= 0.0 {
                    return false;
                }
                let w = Vec2::from_angle(o.heading) * o.speed - my_vel;
                time_to_contact(r, w, TTC_RADIUS).is_some_and(|ttc| ttc < threshold)
            })
    }
}
