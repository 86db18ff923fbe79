//! Occupancy grids: the plain-text map format, ray casting, and the
//! obstacle distance field used by the range-sensor likelihood.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Pose;

/// State of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellState {
    Free,
    Occupied,
    Unknown,
}

impl CellState {
    fn from_char(ch: char) -> Option<CellState> {
        match ch {
            '.' => Some(CellState::Free),
            '#' => Some(CellState::Occupied),
            '?' => Some(CellState::Unknown),
            _ => None,
        }
    }

    fn to_char(self) -> char {
        match self {
            CellState::Free => '.',
            CellState::Occupied => '#',
            CellState::Unknown => '?',
        }
    }
}

/// A fixed-resolution occupancy grid.
///
/// World coordinates are centimeters with the origin at the lower-left
/// corner; cell `(0, 0)` covers `[0, resolution) x [0, resolution)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    /// Cell edge length in centimeters.
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major, `cells[y * width + x]`.
    pub cells: Vec<CellState>,
}

impl OccupancyGrid {
    pub fn filled(width: usize, height: usize, resolution: f64, state: CellState) -> Self {
        OccupancyGrid { resolution, width, height, cells: vec![state; width * height] }
    }

    /// Parse the text format: a `W H RES_CM` header line, then `H` rows of
    /// `W` characters, listed top row first (the last line is `y = 0`).
    /// Lines starting with `;` are comments.
    pub fn parse(text: &str) -> Result<OccupancyGrid> {
        let mut lines = text.lines().filter(|l| !l.trim_start().starts_with(';'));
        let header = lines.next().unwrap_or("").trim().to_string();
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::GridHeader { line: header });
        }
        let width: usize = parts[0].parse().map_err(|_| Error::GridHeader { line: header.clone() })?;
        let height: usize = parts[1].parse().map_err(|_| Error::GridHeader { line: header.clone() })?;
        let resolution: f64 = parts[2].parse().map_err(|_| Error::GridHeader { line: header.clone() })?;
        if width == 0 || height == 0 || resolution <= 0.0 {
            return Err(Error::GridHeader { line: header });
        }

        let mut cells = vec![CellState::Unknown; width * height];
        let mut filled = 0usize;
        for (row_idx, line) in lines.enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if row_idx >= height {
                return Err(Error::GridDimensions {
                    expected: width * height,
                    found: filled + line.chars().count(),
                });
            }
            let y = height - 1 - row_idx;
            let mut count = 0;
            for (x, ch) in line.chars().enumerate() {
                if x >= width {
                    return Err(Error::GridDimensions {
                        expected: width * height,
                        found: filled + line.chars().count(),
                    });
                }
                let state = CellState::from_char(ch)
                    .ok_or(Error::GridCell { ch, line: row_idx + 2 })?;
                cells[y * width + x] = state;
                count += 1;
            }
            if count != width {
                return Err(Error::GridDimensions { expected: width * height, found: filled + count });
            }
            filled += count;
        }
        if filled != width * height {
            return Err(Error::GridDimensions { expected: width * height, found: filled });
        }
        Ok(OccupancyGrid { resolution, width, height, cells })
    }

    pub fn load(path: &Path) -> Result<OccupancyGrid> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Render back to the text format parsed by [`OccupancyGrid::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * (self.height + 1));
        let _ = writeln!(out, "{} {} {}", self.width, self.height, self.resolution);
        for row in (0..self.height).rev() {
            for x in 0..self.width {
                out.push(self.cells[row * self.width + x].to_char());
            }
            out.push('\n');
        }
        out
    }

    pub fn cell(&self, x: usize, y: usize) -> CellState {
        self.cells[y * self.width + x]
    }

    pub fn set_cell(&mut self, x: usize, y: usize, state: CellState) {
        self.cells[y * self.width + x] = state;
    }

    /// World extent in centimeters.
    pub fn world_size(&self) -> (f64, f64) {
        (self.width as f64 * self.resolution, self.height as f64 * self.resolution)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (w, h) = self.world_size();
        x >= 0.0 && y >= 0.0 && x < w && y < h
    }

    pub fn cell_index_at(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !self.contains(x, y) {
            return None;
        }
        let cx = (x / self.resolution) as usize;
        let cy = (y / self.resolution) as usize;
        Some((cx.min(self.width - 1), cy.min(self.height - 1)))
    }

    pub fn is_occupied_at(&self, x: f64, y: f64) -> bool {
        match self.cell_index_at(x, y) {
            Some((cx, cy)) => self.cell(cx, cy) == CellState::Occupied,
            None => false,
        }
    }

    /// Fill the axis-aligned rectangle `[x0, x1) x [y0, y1)` (cm).
    pub fn fill_rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, state: CellState) {
        let cx0 = (x0 / self.resolution).floor().max(0.0) as usize;
        let cy0 = (y0 / self.resolution).floor().max(0.0) as usize;
        let cx1 = ((x1 / self.resolution).ceil() as usize).min(self.width);
        let cy1 = ((y1 / self.resolution).ceil() as usize).min(self.height);
        for y in cy0..cy1 {
            for x in cx0..cx1 {
                self.set_cell(x, y, state);
            }
        }
    }

    /// Cast a ray from `pose` at absolute `angle` and return the distance to
    /// the first occupied cell, clamped to `max_range`.
    ///
    /// Unknown cells do not block the ray. Leaving the map counts as seeing
    /// nothing. Errors if the pose is outside the map.
    pub fn raycast(&self, pose: &Pose, angle: f64, max_range: f64) -> Result<f64> {
        if !self.contains(pose.x, pose.y) {
            return Err(Error::OutOfBounds { x: pose.x, y: pose.y });
        }
        let (mut cx, mut cy) = self.cell_index_at(pose.x, pose.y).unwrap();
        if self.cell(cx, cy) == CellState::Occupied {
            return Ok(0.0);
        }

        let dx = angle.cos();
        let dy = angle.sin();
        let res = self.resolution;

        // Amanatides & Woo traversal.
        let step_x: isize = if dx > 0.0 { 1 } else { -1 };
        let step_y: isize = if dy > 0.0 { 1 } else { -1 };
        let next_boundary = |c: usize, step: isize, res: f64| -> f64 {
            if step > 0 { (c as f64 + 1.0) * res } else { c as f64 * res }
        };
        let mut t_max_x = if dx != 0.0 {
            (next_boundary(cx, step_x, res) - pose.x) / dx
        } else {
            f64::INFINITY
        };
        let mut t_max_y = if dy != 0.0 {
            (next_boundary(cy, step_y, res) - pose.y) / dy
        } else {
            f64::INFINITY
        };
        let t_delta_x = if dx != 0.0 { res / dx.abs() } else { f64::INFINITY };
        let t_delta_y = if dy != 0.0 { res / dy.abs() } else { f64::INFINITY };

        loop {
            let t;
            if t_max_x < t_max_y {
                t = t_max_x;
                t_max_x += t_delta_x;
                let nx = cx as isize + step_x;
                if nx < 0 || nx as usize >= self.width {
                    return Ok(max_range);
                }
                cx = nx as usize;
            } else {
                t = t_max_y;
                t_max_y += t_delta_y;
                let ny = cy as isize + step_y;
                if ny < 0 || ny as usize >= self.height {
                    return Ok(max_range);
                }
                cy = ny as usize;
            }
            if t >= max_range {
                return Ok(max_range);
            }
            if self.cell(cx, cy) == CellState::Occupied {
                return Ok(t.min(max_range));
            }
        }
    }

    /// Flip free/occupied cells independently with probability `rate`.
    ///
    /// Models an approximately correct map handed to the robot; unknown
    /// cells are untouched.
    pub fn corrupted(&self, rate: f64, rng: &mut impl Rng) -> OccupancyGrid {
        let mut out = self.clone();
        if rate <= 0.0 {
            return out;
        }
        for cell in out.cells.iter_mut() {
            if *cell != CellState::Unknown && rng.random::<f64>() < rate {
                *cell = match *cell {
                    CellState::Free => CellState::Occupied,
                    CellState::Occupied => CellState::Free,
                    CellState::Unknown => CellState::Unknown,
                };
            }
        }
        out
    }
}

/// Distance (cm) from each cell center to the nearest occupied cell center.
///
/// Exact Euclidean transform, computed once per map and shared by all
/// particles.
#[derive(Debug, Clone)]
pub struct DistanceField {
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    dist: Vec<f64>,
}

impl DistanceField {
    pub fn build(grid: &OccupancyGrid) -> DistanceField {
        let w = grid.width;
        let h = grid.height;
        let inf = f64::INFINITY;
        // Squared distances in cell units, seeded with 0 at obstacles.
        let mut sq = vec![inf; w * h];
        for i in 0..w * h {
            if grid.cells[i] == CellState::Occupied {
                sq[i] = 0.0;
            }
        }

        // Felzenszwalb & Huttenlocher: 1D transforms along columns, then rows.
        let mut column = vec![0.0; h];
        for x in 0..w {
            for y in 0..h {
                column[y] = sq[y * w + x];
            }
            let out = edt_1d(&column);
            for y in 0..h {
                sq[y * w + x] = out[y];
            }
        }
        let mut row = vec![0.0; w];
        for y in 0..h {
            row.copy_from_slice(&sq[y * w..(y + 1) * w]);
            let out = edt_1d(&row);
            sq[y * w..(y + 1) * w].copy_from_slice(&out);
        }

        let dist = sq
            .into_iter()
            .map(|d| if d.is_finite() { d.sqrt() * grid.resolution } else { f64::INFINITY })
            .collect();
        DistanceField { resolution: grid.resolution, width: w, height: h, dist }
    }

    /// Distance to the nearest obstacle from a world point; `None` off-map.
    pub fn distance_at(&self, x: f64, y: f64) -> Option<f64> {
        if x < 0.0 || y < 0.0 {
            return None;
        }
        let cx = (x / self.resolution) as usize;
        let cy = (y / self.resolution) as usize;
        if cx >= self.width || cy >= self.height {
            return None;
        }
        Some(self.dist[cy * self.width + cx])
    }
}

/// 1D squared-distance transform of a sampled function `f`.
fn edt_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n]; // parabola locations
    let mut z = vec![0.0f64; n + 1]; // boundaries
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;

    let sq = |i: usize| (i * i) as f64;
    for q in 1..n {
        if f[q] == f64::INFINITY {
            continue;
        }
        loop {
            let p = v[k];
            if f[p] == f64::INFINITY {
                // First finite parabola.
                if k == 0 {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
                continue;
            }
            let s = ((f[q] + sq(q)) - (f[p] + sq(p))) / (2.0 * q as f64 - 2.0 * p as f64);
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }

    let mut k = 0usize;
    for q in 0..n {
        if f[v[0]] == f64::INFINITY {
            out[q] = f64::INFINITY;
            continue;
        }
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        out[q] = d * d + f[p];
    }
    out
}
