//! Station lattice and Manhattan-grid vehicle movement.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }
}

/// Euclidean distance in meters.
pub fn distance(a: Position, b: Position) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Street grid over a rectangular area. Streets run along every multiple of
/// `spacing` in both axes, including the area edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub width: f64,
    pub height: f64,
    pub spacing: f64,
}

impl GridSpec {
    pub fn new(width: f64, height: f64, spacing: f64) -> Result<Self, ConfigError> {
        if !(width > 0.0 && height > 0.0) {
            return Err(ConfigError::invalid("topology", "area dimensions must be positive"));
        }
        if !(spacing > 0.0) {
            return Err(ConfigError::invalid(
                "mobility.street_spacing_m",
                "must be positive",
            ));
        }
        for (name, len) in [("width", width), ("height", height)] {
            let blocks = len / spacing;
            if (blocks - blocks.round()).abs() > 1e-9 || blocks.round() < 1.0 {
                return Err(ConfigError::invalid(
                    "mobility.street_spacing_m",
                    format!("{spacing} m does not divide the area {name} {len} m into whole blocks"),
                ));
            }
        }
        Ok(GridSpec {
            width,
            height,
            spacing,
        })
    }

    pub fn contains(&self, p: Position) -> bool {
        (-SNAP..=self.width + SNAP).contains(&p.x) && (-SNAP..=self.height + SNAP).contains(&p.y)
    }

    fn on_line(&self, c: f64) -> bool {
        let k = (c / self.spacing).round();
        (c - k * self.spacing).abs() < 1e-6
    }

    /// True if `p` lies on some street.
    pub fn on_street(&self, p: Position) -> bool {
        self.contains(p) && (self.on_line(p.x) || self.on_line(p.y))
    }

    pub fn intersections(&self) -> Vec<Position> {
        let nx = (self.width / self.spacing).round() as usize;
        let ny = (self.height / self.spacing).round() as usize;
        let mut out = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                out.push(Position::new(i as f64 * self.spacing, j as f64 * self.spacing));
            }
        }
        out
    }
}

/// Static base-station placement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaseStationLayout {
    pub stations: Vec<Position>,
    /// Index of the station acting as the collection server.
    pub server: usize,
}

/// Places `count` stations on a uniform square lattice, one per cell centre.
/// The server is the station nearest the area centre (lowest index on ties).
pub fn place_base_stations(
    count: usize,
    width: f64,
    height: f64,
) -> Result<BaseStationLayout, ConfigError> {
    let side = (count as f64).sqrt().round() as usize;
    if count == 0 || side * side != count {
        return Err(ConfigError::invalid(
            "topology.base_stations",
            format!("{count} is not a perfect square; stations form an n x n lattice"),
        ));
    }
    let dx = width / side as f64;
    let dy = height / side as f64;
    let mut stations = Vec::with_capacity(count);
    for j in 0..side {
        for i in 0..side {
            stations.push(Position::new((i as f64 + 0.5) * dx, (j as f64 + 0.5) * dy));
        }
    }
    let centre = Position::new(width / 2.0, height / 2.0);
    let server = stations
        .iter()
        .enumerate()
        .min_by(|a, b| distance(*a.1, centre).total_cmp(&distance(*b.1, centre)))
        .map(|(i, _)| i)
        .expect("at least one station");
    Ok(BaseStationLayout { stations, server })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heading {
    N,
    E,
    S,
    W,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::N, Heading::E, Heading::S, Heading::W];

    pub fn unit(self) -> (f64, f64) {
        match self {
            Heading::N => (0.0, 1.0),
            Heading::E => (1.0, 0.0),
            Heading::S => (0.0, -1.0),
            Heading::W => (-1.0, 0.0),
        }
    }

    pub fn left(self) -> Heading {
        match self {
            Heading::N => Heading::W,
            Heading::W => Heading::S,
            Heading::S => Heading::E,
            Heading::E => Heading::N,
        }
    }

    pub fn right(self) -> Heading {
        self.left().left().left()
    }

    fn is_vertical(self) -> bool {
        matches!(self, Heading::N | Heading::S)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Turn {
    Straight,
    Left,
    Right,
}

impl Turn {
    pub fn apply(self, h: Heading) -> Heading {
        match self {
            Turn::Straight => h,
            Turn::Left => h.left(),
            Turn::Right => h.right(),
        }
    }
}

/// Turn probabilities at an intersection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnProbabilities {
    pub straight: f64,
    pub left: f64,
    pub right: f64,
}

impl Default for TurnProbabilities {
    fn default() -> Self {
        TurnProbabilities {
            straight: 0.5,
            left: 0.25,
            right: 0.25,
        }
    }
}

/// Kinematic state of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleMotion {
    pub position: Position,
    pub heading: Heading,
    /// Meters per second.
    pub speed: f64,
}

impl VehicleMotion {
    /// Index of the street the vehicle is travelling along (column for
    /// N/S headings, row for E/W).
    pub fn street_index(&self, grid: &GridSpec) -> usize {
        let c = if self.heading.is_vertical() {
            self.position.x
        } else {
            self.position.y
        };
        (c / grid.spacing).round() as usize
    }
}

fn leaves_area(grid: &GridSpec, at: Position, h: Heading) -> bool {
    match h {
        Heading::N => at.y >= grid.height - SNAP,
        Heading::S => at.y <= SNAP,
        Heading::E => at.x >= grid.width - SNAP,
        Heading::W => at.x <= SNAP,
    }
}

/// Legal turns at intersection `at` with their renormalized probabilities.
pub fn turn_options(
    grid: &GridSpec,
    at: Position,
    heading: Heading,
    probs: &TurnProbabilities,
) -> Vec<(Turn, f64)> {
    let raw = [
        (Turn::Straight, probs.straight),
        (Turn::Left, probs.left),
        (Turn::Right, probs.right),
    ];
    let legal: Vec<(Turn, f64)> = raw
        .into_iter()
        .filter(|(t, p)| *p > 0.0 && !leaves_area(grid, at, t.apply(heading)))
        .collect();
    let total: f64 = legal.iter().map(|(_, p)| p).sum();
    if total <= 0.0 {
        // Only possible with degenerate probabilities; fall back to any legal turn.
        let any: Vec<Turn> = [Turn::Straight, Turn::Left, Turn::Right]
            .into_iter()
            .filter(|t| !leaves_area(grid, at, t.apply(heading)))
            .collect();
        let p = 1.0 / any.len() as f64;
        return any.into_iter().map(|t| (t, p)).collect();
    }
    legal.into_iter().map(|(t, p)| (t, p / total)).collect()
}

/// Draws the turn taken at intersection `at`.
pub fn choose_turn<R: Rng + ?Sized>(
    grid: &GridSpec,
    at: Position,
    heading: Heading,
    probs: &TurnProbabilities,
    rng: &mut R,
) -> Turn {
    let options = turn_options(grid, at, heading, probs);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (turn, p) in &options {
        acc += p;
        if u < acc {
            return *turn;
        }
    }
    options.last().expect("at least one legal turn").0
}

fn snap(c: f64, spacing: f64) -> f64 {
    let k = (c / spacing).round() * spacing;
    if (c - k).abs() < 1e-6 {
        k
    } else {
        c
    }
}

/// Distance along `heading` from `p` to the next intersection ahead.
fn to_next_intersection(grid: &GridSpec, p: Position, heading: Heading) -> f64 {
    let (c, forward) = match heading {
        Heading::N => (p.y, true),
        Heading::S => (p.y, false),
        Heading::E => (p.x, true),
        Heading::W => (p.x, false),
    };
    let k = c / grid.spacing;
    let kr = k.round();
    let next = if (k - kr).abs() < 1e-9 {
        if forward {
            kr + 1.0
        } else {
            kr - 1.0
        }
    } else if forward {
        k.ceil()
    } else {
        k.floor()
    };
    (next * grid.spacing - c).abs()
}

/// Advances `motion` by `dt` seconds along the street grid, drawing a turn at
/// every intersection reached. Returns the new state and the number of
/// intersections crossed.
pub fn manhattan_step<R: Rng + ?Sized>(
    motion: VehicleMotion,
    dt: f64,
    grid: &GridSpec,
    probs: &TurnProbabilities,
    rng: &mut R,
) -> (VehicleMotion, usize) {
    debug_assert!(dt > 0.0);
    let mut m = motion;
    let mut remaining = m.speed * dt;
    let mut crossings = 0;
    while remaining > 0.0 {
        let gap = to_next_intersection(grid, m.position, m.heading);
        let (ux, uy) = m.heading.unit();
        if remaining < gap {
            m.position.x += ux * remaining;
            m.position.y += uy * remaining;
            break;
        }
        m.position.x = snap(m.position.x + ux * gap, grid.spacing);
        m.position.y = snap(m.position.y + uy * gap, grid.spacing);
        remaining -= gap;
        let turn = choose_turn(grid, m.position, m.heading, probs, rng);
        m.heading = turn.apply(m.heading);
        crossings += 1;
    }
    m.position.x = m.position.x.clamp(0.0, grid.width);
    m.position.y = m.position.y.clamp(0.0, grid.height);
    (m, crossings)
}

/// Random initial state: a random intersection and a legal heading.
pub fn random_start<R: Rng + ?Sized>(grid: &GridSpec, speed: f64, rng: &mut R) -> VehicleMotion {
    let nodes = grid.intersections();
    let at = nodes[rng.gen_range(0..nodes.len())];
    let legal: Vec<Heading> = Heading::ALL
        .into_iter()
        .filter(|h| !leaves_area(grid, at, *h))
        .collect();
    let heading = legal[rng.gen_range(0..legal.len())];
    VehicleMotion {
        position: at,
        heading,
        speed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::RngStream;
    use proptest::prelude::*;

    fn grid() -> GridSpec {
        GridSpec::new(1000.0, 1000.0, 200.0).unwrap()
    }

    #[test]
    fn default_lattice_has_25_stations_in_bounds() {
        let layout = place_base_stations(25, 1000.0, 1000.0).unwrap();
        assert_eq!(layout.stations.len(), 25);
        assert_eq!(layout.stations[0], Position::new(100.0, 100.0));
        assert_eq!(layout.stations[1], Position::new(300.0, 100.0));
        assert_eq!(layout.stations[layout.server], Position::new(500.0, 500.0));
        assert_eq!(layout.server, 12);
        for s in &layout.stations {
            assert!(grid().contains(*s));
        }
    }

    #[test]
    fn non_square_station_count_is_rejected() {
        let err = place_base_stations(24, 1000.0, 1000.0).unwrap_err();
        assert!(err.to_string().contains("base_stations"));
    }

    #[test]
    fn grid_must_divide_area() {
        assert!(GridSpec::new(1000.0, 1000.0, 300.0).is_err());
        assert!(GridSpec::new(1000.0, 1000.0, 250.0).is_ok());
    }

    #[test]
    fn distance_basics() {
        let o = Position::new(0.0, 0.0);
        assert_eq!(distance(o, o), 0.0);
        assert_eq!(distance(o, Position::new(3.0, 4.0)), 5.0);
    }

    #[test]
    fn mid_block_moves_straight() {
        let g = grid();
        let m = VehicleMotion {
            position: Position::new(200.0, 50.0),
            heading: Heading::N,
            speed: 10.0,
        };
        let mut rng = RngStream::new(1, "t");
        let (next, crossings) = manhattan_step(m, 0.1, &g, &TurnProbabilities::default(), &mut rng);
        assert_eq!(crossings, 0);
        assert_eq!(next.heading, Heading::N);
        assert!((next.position.y - 51.0).abs() < 1e-12);
        assert_eq!(next.position.x, 200.0);
    }

    #[test]
    fn corner_forces_the_only_legal_turn() {
        let g = grid();
        // heading north on x=0 into the (0,1000) corner: only east is legal
        let opts = turn_options(&g, Position::new(0.0, 1000.0), Heading::N, &TurnProbabilities::default());
        assert_eq!(opts, vec![(Turn::Right, 1.0)]);

        let m = VehicleMotion {
            position: Position::new(0.0, 999.5),
            heading: Heading::N,
            speed: 10.0,
        };
        let mut rng = RngStream::new(3, "t");
        let (next, crossings) = manhattan_step(m, 0.1, &g, &TurnProbabilities::default(), &mut rng);
        assert_eq!(crossings, 1);
        assert_eq!(next.heading, Heading::E);
        assert!((next.position.x - 0.5).abs() < 1e-9);
        assert_eq!(next.position.y, 1000.0);
    }

    #[test]
    fn boundary_renormalizes_remaining_turns() {
        let g = grid();
        // heading west onto the x=0 edge: straight is illegal, left/right split evenly
        let opts = turn_options(&g, Position::new(0.0, 400.0), Heading::W, &TurnProbabilities::default());
        assert_eq!(opts.len(), 2);
        for (_, p) in &opts {
            assert!((p - 0.5).abs() < 1e-12);
        }
        // interior keeps the nominal split
        let opts = turn_options(&g, Position::new(400.0, 400.0), Heading::W, &TurnProbabilities::default());
        let total: f64 = opts.iter().map(|o| o.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(opts.len(), 3);
    }

    #[test]
    fn interior_turn_frequencies_match() {
        let g = grid();
        let mut rng = RngStream::new(2024, "turns");
        let probs = TurnProbabilities::default();
        let at = Position::new(400.0, 600.0);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for i in 0..n {
            let h = Heading::ALL[i % 4];
            match choose_turn(&g, at, h, &probs, &mut rng) {
                Turn::Straight => counts[0] += 1,
                Turn::Left => counts[1] += 1,
                Turn::Right => counts[2] += 1,
            }
        }
        let f: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        assert!((f[0] - 0.5).abs() <= 0.01, "{f:?}");
        assert!((f[1] - 0.25).abs() <= 0.01, "{f:?}");
        assert!((f[2] - 0.25).abs() <= 0.01, "{f:?}");
    }

    proptest! {
        #[test]
        fn vehicle_stays_on_streets_in_bounds(seed in any::<u64>(), steps in 1usize..3000, speed in 1.0f64..40.0) {
            let g = grid();
            let mut rng = RngStream::new(seed, "mobility");
            let probs = TurnProbabilities::default();
            let mut m = random_start(&g, speed, &mut rng);
            for _ in 0..steps {
                m = manhattan_step(m, 0.1, &g, &probs, &mut rng).0;
                prop_assert!(g.contains(m.position));
                prop_assert!(g.on_street(m.position), "{:?}", m);
            }
        }

        #[test]
        fn distance_is_symmetric(ax in 0.0f64..1000.0, ay in 0.0f64..1000.0, bx in 0.0f64..1000.0, by in 0.0f64..1000.0) {
            let a = Position::new(ax, ay);
            let b = Position::new(bx, by);
            prop_assert_eq!(distance(a, b), distance(b, a));
        }
    }
}
