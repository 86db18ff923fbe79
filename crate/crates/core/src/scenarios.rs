//! Built-in scenarios: a furnished 500 x 1000 cm room with eight teaching
//! places, and a larger floor with nineteen places and sixteen names.
//!
//! Patrols are planned by BFS over a clearance-eroded grid and followed by
//! a turn-then-step controller; everything is pure geometry, so the
//! scenario is identical on every call. All randomness stays in the
//! simulation noise.

use crate::geom::{normalize_angle, Pose};
use crate::grid::{CellState, DistanceField, OccupancyGrid};
use crate::speech::Word;
use crate::world::{Control, MotionNoise, NoiseConfig, Scenario, TeachingEvent};

/// Clearance kept between the patrol path and obstacles, cm.
const ROUTE_CLEARANCE: f64 = 20.0;

/// A named teaching place: label, spoken names, and its map position.
#[derive(Debug, Clone)]
pub struct Place {
    pub label: String,
    /// One or more names; visits cycle through them.
    pub names: Vec<Word>,
    pub at: [f64; 2],
}

fn place(label: &str, names: &[&[&str]], at: [f64; 2]) -> Place {
    Place {
        label: label.to_string(),
        names: names.iter().map(|syls| Word::from_syls(syls.iter().copied())).collect(),
        at,
    }
}

/// The room map: border walls plus furniture blocks.
pub fn room_map() -> OccupancyGrid {
    let mut g = OccupancyGrid::filled(100, 200, 5.0, CellState::Free);
    // Border walls.
    g.fill_rect(0.0, 0.0, 500.0, 10.0, CellState::Occupied);
    g.fill_rect(0.0, 990.0, 500.0, 1000.0, CellState::Occupied);
    g.fill_rect(0.0, 0.0, 10.0, 1000.0, CellState::Occupied);
    g.fill_rect(490.0, 0.0, 500.0, 1000.0, CellState::Occupied);
    // A partial divider splits the room into two similar halves, which
    // keeps global localization ambiguous for a while.
    g.fill_rect(10.0, 495.0, 320.0, 515.0, CellState::Occupied);
    // Furniture, lower half: TV stand (left wall), sofa block, trash bin
    // (right wall).
    g.fill_rect(10.0, 220.0, 45.0, 290.0, CellState::Occupied);
    g.fill_rect(215.0, 370.0, 300.0, 410.0, CellState::Occupied);
    g.fill_rect(455.0, 230.0, 490.0, 280.0, CellState::Occupied);
    // Upper half: bookshelf (left wall), kitchen counter (right wall),
    // two tables.
    g.fill_rect(10.0, 660.0, 45.0, 740.0, CellState::Occupied);
    g.fill_rect(440.0, 700.0, 490.0, 810.0, CellState::Occupied);
    g.fill_rect(120.0, 890.0, 185.0, 940.0, CellState::Occupied);
    g.fill_rect(320.0, 560.0, 385.0, 610.0, CellState::Occupied);
    g
}

/// Eight teaching places of the room. One place answers to two names and
/// one name covers two places.
pub fn room_places() -> Vec<Place> {
    vec![
        place("entrance", &[&["geN", "kaN"]], [250.0, 60.0]),
        place("tv_front", &[&["te", "re", "bi", "ma", "e"]], [95.0, 255.0]),
        place("trash", &[&["go", "mi", "ba", "ko"]], [405.0, 255.0]),
        place("sofa_front", &[&["so", "faa", "ma", "e"]], [255.0, 325.0]),
        place(
            "kitchen",
            &[&["kiq", "chiN"], &["dai", "do", "ko", "ro"]],
            [395.0, 755.0],
        ),
        place("bookshelf", &[&["hoN", "da", "na"]], [95.0, 700.0]),
        // One semantic place, two physical spots: the model is expected to
        // join them under a single concept.
        place("table_area", &[&["tee", "bu", "ru", "no", "a", "ta", "ri"]], [150.0, 845.0]),
        place("table_area", &[&["tee", "bu", "ru", "no", "a", "ta", "ri"]], [420.0, 585.0]),
    ]
}

fn room_noise() -> NoiseConfig {
    NoiseConfig {
        motion: MotionNoise { sigma_rot1: 0.015, sigma_trans: 2.0, sigma_rot2: 0.015 },
        beam_sigma: 3.0,
        max_range: 300.0,
        beam_count: 21,
        fov: std::f64::consts::PI,
        map_flip_rate: 0.0,
    }
}

/// Build the room scenario: a patrol visiting the eight places with 90
/// teaching utterances over the ten phrase templates.
pub fn room_scenario() -> (Scenario, OccupancyGrid) {
    let grid = room_map();
    let places = room_places();
    // 90 teachings over 8 places.
    let quotas = [12usize, 11, 11, 11, 12, 11, 11, 11];
    build_patrol(
        grid,
        &places,
        &quotas,
        Pose::new(250.0, 60.0, std::f64::consts::FRAC_PI_2),
        room_noise(),
        30.0,
    )
}

/// The floor map: a corridor with rooms on both sides.
pub fn floor_map() -> OccupancyGrid {
    let mut g = OccupancyGrid::filled(200, 120, 10.0, CellState::Free);
    let (w, h) = (2000.0, 1200.0);
    g.fill_rect(0.0, 0.0, w, 20.0, CellState::Occupied);
    g.fill_rect(0.0, h - 20.0, w, h, CellState::Occupied);
    g.fill_rect(0.0, 0.0, 20.0, h, CellState::Occupied);
    g.fill_rect(w - 20.0, 0.0, w, h, CellState::Occupied);
    // South rooms (y < 500) separated by dividers; corridor spans y 500-700.
    for i in 0..4 {
        let x = 400.0 + 400.0 * i as f64;
        g.fill_rect(x, 20.0, x + 20.0, 500.0, CellState::Occupied);
    }
    g.fill_rect(0.0, 480.0, w, 500.0, CellState::Occupied);
    for i in 0..5 {
        let x = 140.0 + 400.0 * i as f64;
        g.fill_rect(x, 480.0, x + 120.0, 500.0, CellState::Free);
    }
    // North rooms (y > 700).
    for i in 0..3 {
        let x = 600.0 + 500.0 * i as f64;
        g.fill_rect(x, 700.0, x + 20.0, h - 20.0, CellState::Occupied);
    }
    g.fill_rect(0.0, 700.0, w, 720.0, CellState::Occupied);
    for i in 0..4 {
        let x = 240.0 + 500.0 * i as f64;
        g.fill_rect(x, 700.0, x + 120.0, 720.0, CellState::Free);
    }
    // Scattered fixtures.
    g.fill_rect(300.0, 80.0, 360.0, 140.0, CellState::Occupied);
    g.fill_rect(1500.0, 900.0, 1580.0, 960.0, CellState::Occupied);
    g.fill_rect(900.0, 300.0, 960.0, 380.0, CellState::Occupied);
    g
}

/// Nineteen places and sixteen names distributed over the floor: three
/// names cover two places each, one place has two names.
pub fn floor_places() -> Vec<Place> {
    let toire: &[&str] = &["to", "i", "re"];
    let kaidan: &[&str] = &["ka", "i", "daN", "ma", "e"];
    let gomibako: &[&str] = &["go", "mi", "ba", "ko"];
    vec![
        place("toilet", &[toire], [200.0, 250.0]),
        place("toilet", &[toire], [1800.0, 250.0]),
        place("stairs", &[kaidan], [150.0, 600.0]),
        place("stairs", &[kaidan], [1850.0, 600.0]),
        place("trash", &[gomibako], [1000.0, 600.0]),
        place("trash", &[gomibako], [1540.0, 850.0]),
        place(
            "kitchen",
            &[&["kiq", "chiN"], &["dai", "do", "ko", "ro"]],
            [350.0, 900.0],
        ),
        place("entrance", &[&["geN", "kaN"]], [600.0, 100.0]),
        place("meeting_room", &[&["ka", "i", "gi", "shi", "tsu"]], [1000.0, 250.0]),
        place("copier", &[&["ko", "pi", "ki", "ma", "e"]], [1400.0, 250.0]),
        place("library", &[&["to", "sho", "shi", "tsu"]], [1800.0, 900.0]),
        place("lab", &[&["keN", "kyu", "shi", "tsu"]], [950.0, 900.0]),
        place("table_area", &[&["tee", "bu", "ru", "no", "a", "ta", "ri"]], [1300.0, 900.0]),
        place("sofa_front", &[&["so", "faa", "ma", "e"]], [650.0, 600.0]),
        place("tv_front", &[&["te", "re", "bi", "ma", "e"]], [200.0, 100.0]),
        place("bookshelf", &[&["hoN", "da", "na"]], [750.0, 900.0]),
        place("locker", &[&["roq", "kaa"]], [1750.0, 100.0]),
        place("printer", &[&["pu", "riN", "taa"]], [1450.0, 600.0]),
        place("table_area", &[&["tee", "bu", "ru", "no", "a", "ta", "ri"]], [700.0, 300.0]),
    ]
}

fn floor_noise() -> NoiseConfig {
    NoiseConfig {
        motion: MotionNoise { sigma_rot1: 0.015, sigma_trans: 2.5, sigma_rot2: 0.015 },
        beam_sigma: 4.0,
        max_range: 400.0,
        beam_count: 21,
        fov: std::f64::consts::PI,
        map_flip_rate: 0.0,
    }
}

/// Build the floor scenario: 100 teachings over 19 places.
pub fn floor_scenario() -> (Scenario, OccupancyGrid) {
    let grid = floor_map();
    let places = floor_places();
    // 100 teachings over 19 places: 5 each plus one extra for the first 5.
    let mut quotas = vec![5usize; 19];
    for q in quotas.iter_mut().take(5) {
        *q += 1;
    }
    build_patrol(
        grid,
        &places,
        &quotas,
        Pose::new(600.0, 100.0, std::f64::consts::FRAC_PI_2),
        floor_noise(),
        40.0,
    )
}

/// Obstacle-aware point-to-point router over the eroded free grid.
struct Router<'a> {
    grid: &'a OccupancyGrid,
    field: DistanceField,
}

impl<'a> Router<'a> {
    fn new(grid: &'a OccupancyGrid) -> Router<'a> {
        Router { grid, field: DistanceField::build(grid) }
    }

    fn routable(&self, x: f64, y: f64) -> bool {
        self.field.distance_at(x, y).map_or(false, |d| d >= ROUTE_CLEARANCE)
    }

    fn segment_clear(&self, a: [f64; 2], b: [f64; 2]) -> bool {
        let dist = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let steps = (dist / 4.0).ceil() as usize + 1;
        (0..=steps).all(|i| {
            let t = i as f64 / steps as f64;
            self.routable(a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]))
        })
    }

    /// Waypoints from `from` to `to`: BFS over eroded cells, then greedy
    /// line-of-sight shortcutting. Panics when no route exists; the
    /// built-in maps are constructed so one always does.
    fn route(&self, from: [f64; 2], to: [f64; 2]) -> Vec<[f64; 2]> {
        let res = self.grid.resolution;
        let cell_of = |p: [f64; 2]| -> (usize, usize) {
            ((p[0] / res) as usize, (p[1] / res) as usize)
        };
        let center = |c: (usize, usize)| -> [f64; 2] {
            [(c.0 as f64 + 0.5) * res, (c.1 as f64 + 0.5) * res]
        };
        let start = cell_of(from);
        let goal = cell_of(to);
        let w = self.grid.width;
        let h = self.grid.height;
        let idx = |c: (usize, usize)| c.1 * w + c.0;

        let mut parent: Vec<i32> = vec![-2; w * h]; // -2 unvisited, -1 root
        let mut queue = std::collections::VecDeque::new();
        parent[idx(start)] = -1;
        queue.push_back(start);
        let mut found = false;
        while let Some(c) = queue.pop_front() {
            if c == goal {
                found = true;
                break;
            }
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nx = c.0 as i64 + dx;
                    let ny = c.1 as i64 + dy;
                    if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                        continue;
                    }
                    let n = (nx as usize, ny as usize);
                    if parent[idx(n)] != -2 {
                        continue;
                    }
                    let p = center(n);
                    if !(self.routable(p[0], p[1]) || n == goal) {
                        continue;
                    }
                    parent[idx(n)] = idx(c) as i32;
                    queue.push_back(n);
                }
            }
        }
        assert!(found, "no route from {from:?} to {to:?}");

        let mut cells = vec![goal];
        let mut cur = goal;
        while parent[idx(cur)] >= 0 {
            let p = parent[idx(cur)] as usize;
            cur = (p % w, p / w);
            cells.push(cur);
        }
        cells.reverse();

        let mut points: Vec<[f64; 2]> = cells.into_iter().map(center).collect();
        points[0] = from;
        let last = points.len() - 1;
        points[last] = to;

        // Greedy shortcutting: extend each segment while the straight line
        // stays clear. Adjacent path cells are always acceptable.
        let mut waypoints = Vec::new();
        let mut i = 0usize;
        while i < points.len() - 1 {
            let mut j = i + 1;
            while j + 1 < points.len() && self.segment_clear(points[i], points[j + 1]) {
                j += 1;
            }
            waypoints.push(points[j]);
            i = j;
        }
        waypoints
    }
}

/// Generate a waypoint patrol over the places with teaching events on
/// arrival.
fn build_patrol(
    grid: OccupancyGrid,
    places: &[Place],
    quotas: &[usize],
    initial_pose: Pose,
    noise: NoiseConfig,
    step_len: f64,
) -> (Scenario, OccupancyGrid) {
    assert_eq!(places.len(), quotas.len());
    let router = Router::new(&grid);
    for p in places {
        assert!(
            router.routable(p.at[0], p.at[1]),
            "place {} at {:?} has insufficient clearance",
            p.label,
            p.at
        );
    }

    let mut remaining = quotas.to_vec();
    let mut name_cursor = vec![0usize; places.len()];
    let mut controls: Vec<Control> = Vec::new();
    let mut events: Vec<TeachingEvent> = Vec::new();
    let mut pose = initial_pose;
    let mut template_cursor = 0usize;

    let total: usize = quotas.iter().sum();
    let mut visit_order = Vec::with_capacity(total);
    // Round-robin over places that still owe teachings.
    while visit_order.len() < total {
        for (i, r) in remaining.iter_mut().enumerate() {
            if *r > 0 {
                visit_order.push(i);
                *r -= 1;
            }
        }
    }

    for &target_idx in &visit_order {
        let p = &places[target_idx];
        for waypoint in router.route([pose.x, pose.y], p.at) {
            let mut guard = 0;
            loop {
                let dx = waypoint[0] - pose.x;
                let dy = waypoint[1] - pose.y;
                let dist = (dx * dx + dy * dy).sqrt();
                if dist <= 0.5 || guard > 500 {
                    break;
                }
                guard += 1;
                let bearing = dy.atan2(dx);
                let rot1 = normalize_angle(bearing - pose.theta);
                let trans = dist.min(step_len);
                let control = Control::new(rot1, trans, 0.0);
                pose = crate::world::apply_control(&pose, &control);
                controls.push(control);
            }
        }
        // Teach on arrival: pick the next name and phrase template.
        let name = p.names[name_cursor[target_idx] % p.names.len()].clone();
        name_cursor[target_idx] += 1;
        let template = template_cursor % crate::speech::HELD_OUT_TEMPLATE;
        template_cursor += 1;
        events.push(TeachingEvent { t: controls.len(), place: p.label.clone(), name, template });
        // A small turn in place keeps successive teachings at one spot from
        // colliding on the same time step.
        let turn = Control::new(0.6, 0.0, 0.0);
        pose = crate::world::apply_control(&pose, &turn);
        controls.push(turn);
    }

    let scenario = Scenario {
        map: "map.grid".to_string(),
        initial_pose,
        controls,
        teaching_events: events,
        noise,
    };
    (scenario, grid)
}

/// Resolve a scenario source: `builtin:room`, `builtin:floor`, or a path.
pub fn resolve_scenario(source: &str) -> Option<(Scenario, OccupancyGrid)> {
    match source {
        "builtin:room" => Some(room_scenario()),
        "builtin:floor" => Some(floor_scenario()),
        _ => None,
    }
}
