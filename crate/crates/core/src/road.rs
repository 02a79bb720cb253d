//! Parametric lane-graph road networks.
//!
//! Networks are built from a handful of parameters (straight multi-lane
//! roads, 3- and 4-way single-lane intersections) and are immutable once
//! constructed. Every lane carries a centerline polyline with cached
//! cumulative arc lengths so projection and arc-length lookup are cheap.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{segment_param, Vec2};

/// Maximum spacing between samples on turn connectors.
pub const ARC_SAMPLE_SPACING: f64 = 1.0;
/// Successor continuity tolerance.
pub const CONTINUITY_TOL: f64 = 0.1;
const MIN_POINT_SPACING: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LaneId(pub String);

impl LaneId {
    pub fn new(s: impl Into<String>) -> Self {
        LaneId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LaneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for LaneId {
    fn from(s: &str) -> Self {
        LaneId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Maneuver {
    Straight,
    Left,
    Right,
}

impl Maneuver {
    pub fn as_str(self) -> &'static str {
        match self {
            Maneuver::Straight => "straight",
            Maneuver::Left => "left",
            Maneuver::Right => "right",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RoadError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("lane {lane}: {reason}")]
    InvalidLane { lane: LaneId, reason: String },
    #[error("unknown lane `{0}`")]
    UnknownLane(LaneId),
    #[error("route `{route}`: {reason}")]
    InvalidRoute { route: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: LaneId,
    pub centerline: Vec<Vec2>,
    pub width: f64,
    pub successors: Vec<LaneId>,
    pub left_adjacent: Option<LaneId>,
    pub right_adjacent: Option<LaneId>,
    /// Set on intersection connectors.
    pub maneuver: Option<Maneuver>,
    /// Radius of a circular connector; `None` for straight geometry.
    pub turn_radius: Option<f64>,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl Lane {
    pub fn new(id: LaneId, centerline: Vec<Vec2>, width: f64) -> Result<Self, RoadError> {
        let bad = |reason: &str| RoadError::InvalidLane {
            lane: id.clone(),
            reason: reason.to_string(),
        };
        if centerline.len() < 2 {
            return Err(bad("centerline needs at least 2 points"));
        }
        if !(width > 0.0 && width.is_finite()) {
            return Err(bad("width must be positive"));
        }
        let mut cumulative = Vec::with_capacity(centerline.len());
        cumulative.push(0.0);
        for w in centerline.windows(2) {
            if !w[0].is_finite() || !w[1].is_finite() {
                return Err(bad("non-finite centerline point"));
            }
            let d = w[0].dist(w[1]);
            if d < MIN_POINT_SPACING {
                return Err(bad("consecutive centerline points closer than 0.01 m"));
            }
            let last = cumulative[cumulative.len() - 1];
            cumulative.push(last + d);
        }
        Ok(Lane {
            id,
            centerline,
            width,
            successors: Vec::new(),
            left_adjacent: None,
            right_adjacent: None,
            maneuver: None,
            turn_radius: None,
            cumulative,
        })
    }

    /// Rebuilds the arc-length cache; needed after deserialization.
    pub fn refresh(&mut self) -> Result<(), RoadError> {
        let fresh = Lane::new(self.id.clone(), self.centerline.clone(), self.width)?;
        self.cumulative = fresh.cumulative;
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn start(&self) -> Vec2 {
        self.centerline[0]
    }

    pub fn end(&self) -> Vec2 {
        self.centerline[self.centerline.len() - 1]
    }

    fn segment_at(&self, s: f64) -> usize {
        let n_seg = self.centerline.len() - 1;
        match self.cumulative.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(n_seg - 1),
            Err(i) => i.saturating_sub(1).min(n_seg - 1),
        }
    }

    fn tangent(&self, seg: usize) -> Vec2 {
        (self.centerline[seg + 1] - self.centerline[seg]).normalized()
    }

    /// Point at arc length `s`; beyond either end the end tangent is extended.
    pub fn point_at(&self, s: f64) -> Vec2 {
        let seg = self.segment_at(s);
        let a = self.centerline[seg];
        a + self.tangent(seg) * (s - self.cumulative[seg])
    }

    /// Travel direction at arc length `s`, in radians.
    pub fn heading_at(&self, s: f64) -> f64 {
        self.tangent(self.segment_at(s)).angle()
    }

    /// Point displaced `lateral` metres to the left of the centerline at `s`.
    pub fn point_from_offsets(&self, s: f64, lateral: f64) -> Vec2 {
        let seg = self.segment_at(s);
        self.point_at(s) + self.tangent(seg).left() * lateral
    }

    /// Arc offset (clamped to the lane) and signed lateral offset of `p`.
    pub fn project(&self, p: Vec2) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0usize, 0.0f64);
        for i in 0..self.centerline.len() - 1 {
            let (a, b) = (self.centerline[i], self.centerline[i + 1]);
            let t = segment_param(a, b, p);
            let c = a + (b - a) * t;
            let d = p.dist(c);
            if d < best.0 {
                best = (d, i, t);
            }
        }
        let (_, seg, t) = best;
        let seg_len = self.cumulative[seg + 1] - self.cumulative[seg];
        let s = self.cumulative[seg] + t * seg_len;
        let closest = self.point_at(s);
        let lateral = self.tangent(seg).cross(p - closest);
        (s, lateral)
    }

    /// Signed distance of `p` past the lane end along the final tangent.
    pub fn overshoot(&self, p: Vec2) -> f64 {
        let n = self.centerline.len();
        (p - self.end()).dot(self.tangent(n - 2))
    }
}

/// Parameters of a builder invocation; enough to rebuild a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builder", rename_all = "snake_case")]
pub enum MapSpec {
    Straight {
        n_lanes: u32,
        length: f64,
        lane_width: f64,
    },
    Intersection {
        arms: u32,
        arm_length: f64,
        lane_width: f64,
    },
}

impl MapSpec {
    pub fn build(&self) -> Result<RoadNetwork, RoadError> {
        match *self {
            MapSpec::Straight {
                n_lanes,
                length,
                lane_width,
            } => build_straight_road(n_lanes, length, lane_width),
            MapSpec::Intersection {
                arms,
                arm_length,
                lane_width,
            } => build_intersection(arms, arm_length, lane_width),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoadNetwork {
    pub lanes: BTreeMap<LaneId, Lane>,
    pub named_routes: BTreeMap<String, Vec<LaneId>>,
}

impl RoadNetwork {
    pub fn lane(&self, id: &LaneId) -> Result<&Lane, RoadError> {
        self.lanes
            .get(id)
            .ok_or_else(|| RoadError::UnknownLane(id.clone()))
    }

    pub fn lane_by_name(&self, name: &str) -> Option<&Lane> {
        self.lanes.get(&LaneId::from(name))
    }

    pub fn project_to_lane(&self, id: &LaneId, p: Vec2) -> Result<(f64, f64), RoadError> {
        Ok(self.lane(id)?.project(p))
    }

    /// Successor of `lane` taking `maneuver`, falling back to the only
    /// successor for plain continuations.
    pub fn successor(&self, lane: &Lane, maneuver: Maneuver) -> Option<&Lane> {
        let succ: Vec<&Lane> = lane
            .successors
            .iter()
            .filter_map(|id| self.lanes.get(id))
            .collect();
        if let Some(l) = succ.iter().find(|l| l.maneuver == Some(maneuver)) {
            return Some(l);
        }
        if succ.iter().all(|l| l.maneuver.is_none()) {
            return succ.first().copied();
        }
        None
    }

    /// Default continuation: straight if present, else the first successor.
    pub fn default_successor(&self, lane: &Lane) -> Option<&Lane> {
        self.successor(lane, Maneuver::Straight)
            .or_else(|| lane.successors.first().and_then(|id| self.lanes.get(id)))
    }

    /// Moves `ds` metres forward from arc offset `s` on `lane`, crossing
    /// junctions via `next`. Past a dead end the offset runs beyond the
    /// lane length.
    pub fn walk<'a>(
        &'a self,
        lane: &'a Lane,
        s: f64,
        ds: f64,
        mut next: impl FnMut(&'a Lane) -> Option<&'a Lane>,
    ) -> (&'a Lane, f64) {
        let (mut lane, mut s) = (lane, s + ds);
        while s > lane.length() {
            match next(lane) {
                Some(n) => {
                    s -= lane.length();
                    lane = n;
                }
                None => break,
            }
        }
        (lane, s)
    }

    pub fn validate(&self) -> Result<(), RoadError> {
        for (id, lane) in &self.lanes {
            if &lane.id != id {
                return Err(RoadError::InvalidLane {
                    lane: id.clone(),
                    reason: "key/id mismatch".into(),
                });
            }
            for s in &lane.successors {
                let next = self.lane(s)?;
                if next.start().dist(lane.end()) > CONTINUITY_TOL {
                    return Err(RoadError::InvalidLane {
                        lane: id.clone(),
                        reason: format!(
                            "successor {s} starts {:.3} m from lane end",
                            next.start().dist(lane.end())
                        ),
                    });
                }
            }
            if let Some(l) = &lane.left_adjacent {
                if self.lane(l)?.right_adjacent.as_ref() != Some(id) {
                    return Err(RoadError::InvalidLane {
                        lane: id.clone(),
                        reason: format!("asymmetric adjacency with {l}"),
                    });
                }
            }
            if let Some(r) = &lane.right_adjacent {
                if self.lane(r)?.left_adjacent.as_ref() != Some(id) {
                    return Err(RoadError::InvalidLane {
                        lane: id.clone(),
                        reason: format!("asymmetric adjacency with {r}"),
                    });
                }
            }
        }
        for (name, route) in &self.named_routes {
            let bad = |reason: String| RoadError::InvalidRoute {
                route: name.clone(),
                reason,
            };
            if route.is_empty() {
                return Err(bad("empty route".into()));
            }
            for w in route.windows(2) {
                let a = self.lane(&w[0])?;
                self.lane(&w[1])?;
                if !a.successors.contains(&w[1]) {
                    return Err(bad(format!("{} is not a successor of {}", w[1], w[0])));
                }
            }
            self.lane(&route[0])?;
        }
        Ok(())
    }
}

fn check_positive(name: &str, v: f64) -> Result<(), RoadError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(RoadError::InvalidArgument(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

/// `n_lanes` parallel lanes along +x; lane `i` is centred on `y = i * lane_width`.
pub fn build_straight_road(
    n_lanes: u32,
    length: f64,
    lane_width: f64,
) -> Result<RoadNetwork, RoadError> {
    if n_lanes == 0 {
        return Err(RoadError::InvalidArgument(
            "n_lanes must be at least 1".into(),
        ));
    }
    check_positive("length", length)?;
    check_positive("lane_width", lane_width)?;
    let mut net = RoadNetwork::default();
    for i in 0..n_lanes {
        let y = i as f64 * lane_width;
        let id = LaneId(format!("lane{i}"));
        let mut lane = Lane::new(
            id.clone(),
            vec![Vec2::new(0.0, y), Vec2::new(length, y)],
            lane_width,
        )?;
        if i + 1 < n_lanes {
            lane.left_adjacent = Some(LaneId(format!("lane{}", i + 1)));
        }
        if i > 0 {
            lane.right_adjacent = Some(LaneId(format!("lane{}", i - 1)));
        }
        net.named_routes.insert(id.0.clone(), vec![id.clone()]);
        net.lanes.insert(id, lane);
    }
    Ok(net)
}

const ARM_NAMES: [&str; 4] = ["north", "east", "south", "west"];

fn arm_direction(arm: usize) -> Vec2 {
    match arm {
        0 => Vec2::new(0.0, 1.0),
        1 => Vec2::new(1.0, 0.0),
        2 => Vec2::new(0.0, -1.0),
        _ => Vec2::new(-1.0, 0.0),
    }
}

fn connector_points(
    start: Vec2,
    heading: Vec2,
    end: Vec2,
    maneuver: Maneuver,
    radius: f64,
) -> Vec<Vec2> {
    match maneuver {
        Maneuver::Straight => {
            let len = start.dist(end);
            let n = libm::ceil(len / ARC_SAMPLE_SPACING).max(1.0) as usize;
            (0..=n)
                .map(|i| start + (end - start) * (i as f64 / n as f64))
                .collect()
        }
        Maneuver::Left | Maneuver::Right => {
            let sign = if maneuver == Maneuver::Left {
                1.0
            } else {
                -1.0
            };
            let centre = start + heading.left() * (sign * radius);
            let arc_len = radius * FRAC_PI_2;
            let n = libm::ceil(arc_len / ARC_SAMPLE_SPACING).max(1.0) as usize;
            let r0 = start - centre;
            let mut pts: Vec<Vec2> = (0..n)
                .map(|i| centre + r0.rotate(sign * FRAC_PI_2 * (i as f64 / n as f64)))
                .collect();
            // exact end point avoids accumulated trig error at the joint
            pts.push(end);
            pts
        }
    }
}

/// Single-lane 3- or 4-way intersection centred on the origin.
///
/// Arms are north/east/south/west (the 3-way variant drops north). Each
/// arm has an incoming lane `<arm>_in` ending at the box edge and an
/// outgoing lane `<arm>_out`; connectors `<a>_in-><b>_out` realise every
/// legal straight, left and right maneuver (no U-turns). Traffic keeps
/// right. The box half-size is twice the lane width.
pub fn build_intersection(
    arms: u32,
    arm_length: f64,
    lane_width: f64,
) -> Result<RoadNetwork, RoadError> {
    if arms != 3 && arms != 4 {
        return Err(RoadError::InvalidArgument(format!(
            "arms must be 3 or 4, got {arms}"
        )));
    }
    check_positive("arm_length", arm_length)?;
    check_positive("lane_width", lane_width)?;
    let present: Vec<usize> = if arms == 4 {
        vec![0, 1, 2, 3]
    } else {
        vec![1, 2, 3]
    };
    let half = 2.0 * lane_width;
    let off = lane_width / 2.0;
    let mut net = RoadNetwork::default();

    let in_id = |a: usize| LaneId(format!("{}_in", ARM_NAMES[a]));
    let out_id = |a: usize| LaneId(format!("{}_out", ARM_NAMES[a]));

    for &a in &present {
        let d = arm_direction(a);
        let in_off = (-d).right() * off;
        let out_off = d.right() * off;
        let lane_in = Lane::new(
            in_id(a),
            vec![d * (half + arm_length) + in_off, d * half + in_off],
            lane_width,
        )?;
        let lane_out = Lane::new(
            out_id(a),
            vec![d * half + out_off, d * (half + arm_length) + out_off],
            lane_width,
        )?;
        net.lanes.insert(lane_in.id.clone(), lane_in);
        net.lanes.insert(lane_out.id.clone(), lane_out);
    }

    for &a in &present {
        let travel = -arm_direction(a);
        let targets = [
            (Maneuver::Straight, travel, None),
            (Maneuver::Left, travel.left(), Some(half + off)),
            (Maneuver::Right, travel.right(), Some(half - off)),
        ];
        let mut successors = Vec::new();
        for (maneuver, exit_dir, radius) in targets {
            let Some(&b) = present.iter().find(|&&b| arm_direction(b) == exit_dir) else {
                continue;
            };
            let start = net.lanes[&in_id(a)].end();
            let end = net.lanes[&out_id(b)].start();
            let pts = connector_points(start, travel, end, maneuver, radius.unwrap_or(0.0));
            let name = format!("{}_in->{}_out", ARM_NAMES[a], ARM_NAMES[b]);
            let mut lane = Lane::new(LaneId(name.clone()), pts, lane_width)?;
            lane.maneuver = Some(maneuver);
            lane.turn_radius = radius;
            lane.successors.push(out_id(b));
            successors.push(lane.id.clone());
            net.named_routes
                .insert(name, vec![in_id(a), lane.id.clone(), out_id(b)]);
            net.lanes.insert(lane.id.clone(), lane);
        }
        net.lanes
            .get_mut(&in_id(a))
            .expect("incoming lane")
            .successors = successors;
    }
    Ok(net)
}
