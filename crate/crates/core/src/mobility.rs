//! Manhattan-grid mobility on a torus.
//!
//! Roads run along both axes every `block_spacing_m`; each road carries two
//! opposite one-way lanes `lane_offset_m` either side of its centre line.
//! Vehicles keep a constant speed and pick left / straight / right with equal
//! probability whenever they cross a road centre. A receiver trails its
//! transmitter along the same path and replays the transmitter's turns, so
//! the along-path separation of a pair never changes.

use std::collections::VecDeque;

use rand::Rng;
use serde::Serialize;

use crate::config::SimConfig;
use crate::error::{Error, Result};

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Heading {
    PosX,
    NegX,
    PosY,
    NegY,
}

impl Heading {
    pub fn is_horizontal(self) -> bool {
        matches!(self, Heading::PosX | Heading::NegX)
    }

    fn sign(self) -> f64 {
        match self {
            Heading::PosX | Heading::PosY => 1.0,
            Heading::NegX | Heading::NegY => -1.0,
        }
    }

    /// Index of the coordinate that changes while driving.
    fn axis(self) -> usize {
        if self.is_horizontal() {
            0
        } else {
            1
        }
    }

    fn left(self) -> Heading {
        match self {
            Heading::PosX => Heading::PosY,
            Heading::PosY => Heading::NegX,
            Heading::NegX => Heading::NegY,
            Heading::NegY => Heading::PosX,
        }
    }

    fn right(self) -> Heading {
        self.left().left().left()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoadGrid {
    pub area_side: f64,
    pub block_spacing: f64,
    pub lane_offset: f64,
    /// Road centre lines; the same set applies to both axes.
    pub roads: Vec<f64>,
}

impl RoadGrid {
    pub fn new(area_side: f64, block_spacing: f64, lane_offset: f64) -> Self {
        let n = (area_side / block_spacing).round().max(1.0) as usize;
        let roads = (0..n).map(|i| i as f64 * block_spacing).collect();
        RoadGrid {
            area_side,
            block_spacing,
            lane_offset,
            roads,
        }
    }

    pub fn from_config(cfg: &SimConfig) -> Self {
        Self::new(cfg.area_side_m, cfg.block_spacing_m, cfg.lane_offset_m)
    }

    pub fn wrap(&self, v: f64) -> f64 {
        let w = v.rem_euclid(self.area_side);
        if w >= self.area_side {
            0.0
        } else {
            w
        }
    }

    /// Minimum-image displacement `b - a` on the torus.
    pub fn delta(&self, a: f64, b: f64) -> f64 {
        let s = self.area_side;
        let d = (b - a).rem_euclid(s);
        if d > s / 2.0 {
            d - s
        } else {
            d
        }
    }

    /// Cross-axis coordinate of the lane a vehicle with `heading` uses on
    /// the road centred at `road`.
    pub fn lane_coord(&self, road: f64, heading: Heading) -> f64 {
        let off = match heading {
            Heading::PosX | Heading::NegY => -self.lane_offset,
            Heading::NegX | Heading::PosY => self.lane_offset,
        };
        self.wrap(road + off)
    }

    /// Nearest road centre to a cross-axis coordinate.
    pub fn nearest_road(&self, coord: f64) -> f64 {
        let i = (coord / self.block_spacing).round() as usize % self.roads.len();
        self.roads[i]
    }

    /// Distance from `p` to the next road centre strictly ahead along
    /// direction `sign`, and that centre.
    fn next_road(&self, p: f64, sign: f64) -> (f64, f64) {
        let s = self.block_spacing;
        let k = p / s;
        let next = if sign > 0.0 {
            ((k + EPS).floor() + 1.0) * s
        } else {
            ((k - EPS).ceil() - 1.0) * s
        };
        ((next - p).abs(), self.wrap(next))
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p.iter().all(|&c| (0.0..self.area_side).contains(&c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VehicleState {
    pub position: [f64; 2],
    pub heading: Heading,
    /// m/s
    pub speed: f64,
}

impl VehicleState {
    /// Whether the vehicle sits on the lane its heading requires.
    pub fn on_lane(&self, grid: &RoadGrid) -> bool {
        let cross = self.position[1 - self.heading.axis()];
        let road = grid.nearest_road(cross);
        grid.delta(grid.lane_coord(road, self.heading), cross).abs() < 1e-6
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
struct Turn {
    at: [f64; 2],
    heading: Heading,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VuePair {
    pub id: usize,
    pub tx: VehicleState,
    pub rx: VehicleState,
    #[serde(skip)]
    pending: VecDeque<Turn>,
}

impl VuePair {
    pub fn separation(&self, grid: &RoadGrid) -> f64 {
        let dx = grid.delta(self.tx.position[0], self.rx.position[0]);
        let dy = grid.delta(self.tx.position[1], self.rx.position[1]);
        dx.hypot(dy)
    }
}

/// Places `K` pairs on random lanes with each receiver `pair_distance_m`
/// behind its transmitter.
pub fn init_topology<R: Rng>(cfg: &SimConfig, rng: &mut R) -> Result<(RoadGrid, Vec<VuePair>)> {
    if cfg.num_pairs == 0 {
        return Err(Error::config("num_pairs", "need at least one VUE pair"));
    }
    let grid = RoadGrid::from_config(cfg);
    let speed = cfg.speed_kmh / 3.6;
    let headings = [Heading::PosX, Heading::NegX, Heading::PosY, Heading::NegY];
    let pairs = (0..cfg.num_pairs)
        .map(|id| {
            let heading = headings[rng.random_range(0..4)];
            let road = grid.roads[rng.random_range(0..grid.roads.len())];
            let along = rng.random_range(0.0..grid.area_side);
            let axis = heading.axis();
            let mut tx_pos = [0.0; 2];
            tx_pos[axis] = along;
            tx_pos[1 - axis] = grid.lane_coord(road, heading);
            let mut rx_pos = tx_pos;
            rx_pos[axis] = grid.wrap(along - heading.sign() * cfg.pair_distance_m);
            VuePair {
                id,
                tx: VehicleState {
                    position: tx_pos,
                    heading,
                    speed,
                },
                rx: VehicleState {
                    position: rx_pos,
                    heading,
                    speed,
                },
                pending: VecDeque::new(),
            }
        })
        .collect();
    Ok((grid, pairs))
}

/// Drives `v` forward by `dist`, calling `decide` at every road centre it
/// reaches with the intersection point and the current heading.
fn drive(
    grid: &RoadGrid,
    v: &mut VehicleState,
    mut dist: f64,
    mut decide: impl FnMut([f64; 2], Heading) -> Heading,
) {
    while dist > 0.0 {
        let axis = v.heading.axis();
        let sign = v.heading.sign();
        let (gap, road) = grid.next_road(v.position[axis], sign);
        if gap > dist {
            v.position[axis] = grid.wrap(v.position[axis] + sign * dist);
            return;
        }
        dist -= gap;
        v.position[axis] = road;
        let cross_road = grid.nearest_road(v.position[1 - axis]);
        let mut at = [0.0; 2];
        at[axis] = road;
        at[1 - axis] = cross_road;
        let next = decide(at, v.heading);
        if next != v.heading {
            // Enter the perpendicular road at its centre line, on the lane
            // that matches the new direction of travel.
            let new_axis = next.axis();
            v.position[1 - new_axis] = grid.lane_coord(at[1 - new_axis], next);
            v.position[new_axis] = at[new_axis];
            v.heading = next;
        }
    }
}

/// Advances every vehicle by `speed * dt`. Transmitters draw their turns;
/// receivers replay them at the same intersections.
pub fn step_mobility<R: Rng>(grid: &RoadGrid, pairs: &mut [VuePair], dt: f64, rng: &mut R) {
    if dt <= 0.0 {
        return;
    }
    for pair in pairs.iter_mut() {
        let pending = &mut pair.pending;
        let (tx_dist, rx_dist) = (pair.tx.speed * dt, pair.rx.speed * dt);
        drive(grid, &mut pair.tx, tx_dist, |at, heading| {
            let next = match rng.random_range(0..3) {
                0 => heading.left(),
                1 => heading,
                _ => heading.right(),
            };
            pending.push_back(Turn { at, heading: next });
            next
        });
        drive(grid, &mut pair.rx, rx_dist, |at, heading| {
            match pending.front() {
                Some(t)
                    if grid.delta(t.at[0], at[0]).abs() < 1e-6
                        && grid.delta(t.at[1], at[1]).abs() < 1e-6 =>
                {
                    pending.pop_front().map_or(heading, |t| t.heading)
                }
                _ => heading,
            }
        });
    }
}

/// Midpoint of each pair (minimum image on the torus).
pub fn pair_midpoints(grid: &RoadGrid, pairs: &[VuePair]) -> Vec<[f64; 2]> {
    pairs
        .iter()
        .map(|p| {
            let mut m = [0.0; 2];
            for (i, c) in m.iter_mut().enumerate() {
                let d = grid.delta(p.tx.position[i], p.rx.position[i]);
                *c = grid.wrap(p.tx.position[i] + d / 2.0);
            }
            m
        })
        .collect()
}
