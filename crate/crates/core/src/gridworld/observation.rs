use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{GridWorld, Pos};

/// Half-width of the ego-centric window.
pub const VIEW_RADIUS: usize = 3;
/// Side of the ego-centric window.
pub const VIEW_SIZE: usize = 2 * VIEW_RADIUS + 1;
/// Number of compass sectors used to encode the goal bearing.
pub const DIRECTION_SECTORS: u8 = 8;

const CELL_BITS: u32 = 2;
const PATCH_CELLS: usize = VIEW_SIZE * VIEW_SIZE;
const PATCH_BITS: u32 = PATCH_CELLS as u32 * CELL_BITS;
const PATCH_MASK: u128 = (1u128 << PATCH_BITS) - 1;
const LOW_BITS: u128 = 0x5555_5555_5555_5555_5555_5555_5555_5555 & PATCH_MASK;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CellKind {
    Empty = 0,
    Wall = 1,
    Goal = 2,
    OutOfBounds = 3,
}

impl CellKind {
    pub const ALL: [CellKind; 4] = [CellKind::Empty, CellKind::Wall, CellKind::Goal, CellKind::OutOfBounds];

    fn from_bits(bits: u8) -> CellKind {
        CellKind::ALL[(bits & 3) as usize]
    }

    pub fn symbol(self) -> char {
        match self {
            CellKind::Empty => '.',
            CellKind::Wall => '#',
            CellKind::Goal => 'G',
            CellKind::OutOfBounds => '~',
        }
    }

    fn from_symbol(ch: char) -> Option<CellKind> {
        CellKind::ALL.into_iter().find(|k| k.symbol() == ch)
    }
}

/// Compass sector (0 = north, clockwise, 8 sectors) of the bearing from
/// `from` to `to`. Sector 0 when the two coincide.
pub fn direction_sector(from: Pos, to: Pos) -> u8 {
    if from == to {
        return 0;
    }
    let north = from.row as f64 - to.row as f64;
    let east = to.col as f64 - from.col as f64;
    let bearing = east.atan2(north).rem_euclid(std::f64::consts::TAU);
    let width = std::f64::consts::TAU / DIRECTION_SECTORS as f64;
    (((bearing + width / 2.0) / width).floor() as u8) % DIRECTION_SECTORS
}

/// What the agent sees: a 7x7 window centred on itself and the goal bearing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Observation {
    pub patch: [[CellKind; VIEW_SIZE]; VIEW_SIZE],
    pub reward_direction: u8,
}

impl Observation {
    pub fn at(grid: &GridWorld, agent: Pos) -> Observation {
        let mut patch = [[CellKind::OutOfBounds; VIEW_SIZE]; VIEW_SIZE];
        for (dr, row) in patch.iter_mut().enumerate() {
            for (dc, cell) in row.iter_mut().enumerate() {
                let r = agent.row as isize + dr as isize - VIEW_RADIUS as isize;
                let c = agent.col as isize + dc as isize - VIEW_RADIUS as isize;
                if r < 0 || c < 0 {
                    continue;
                }
                let p = Pos::new(r as usize, c as usize);
                if !grid.in_bounds(p) {
                    continue;
                }
                *cell = if grid.is_wall(p) {
                    CellKind::Wall
                } else if p == grid.goal() {
                    CellKind::Goal
                } else {
                    CellKind::Empty
                };
            }
        }
        Observation {
            patch,
            reward_direction: direction_sector(agent, grid.goal()),
        }
    }

    pub fn center(&self) -> CellKind {
        self.patch[VIEW_RADIUS][VIEW_RADIUS]
    }

    pub fn digest(&self) -> ObsDigest {
        let mut bits: u128 = 0;
        for (i, cell) in self.patch.iter().flatten().enumerate() {
            bits |= (*cell as u128) << (i as u32 * CELL_BITS);
        }
        bits |= (self.reward_direction as u128) << PATCH_BITS;
        ObsDigest(bits)
    }
}

/// Packed observation: 2 bits per window cell, then 3 bits of direction sector.
///
/// Serialized as 49 cell symbols (row-major), a colon, and the sector digit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObsDigest(pub u128);

impl ObsDigest {
    pub fn cell(&self, row: usize, col: usize) -> CellKind {
        let i = (row * VIEW_SIZE + col) as u32;
        CellKind::from_bits(((self.0 >> (i * CELL_BITS)) & 3) as u8)
    }

    pub fn direction(&self) -> u8 {
        ((self.0 >> PATCH_BITS) & 7) as u8
    }

    pub fn observation(&self) -> Observation {
        let mut patch = [[CellKind::OutOfBounds; VIEW_SIZE]; VIEW_SIZE];
        for (r, row) in patch.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = self.cell(r, c);
            }
        }
        Observation {
            patch,
            reward_direction: self.direction(),
        }
    }

    /// Number of window cells whose category differs, plus one if the sectors differ.
    pub fn mismatches(&self, other: &ObsDigest) -> u32 {
        let x = (self.0 ^ other.0) & PATCH_MASK;
        let cells = ((x | (x >> 1)) & LOW_BITS).count_ones();
        cells + u32::from(self.direction() != other.direction())
    }
}

impl fmt::Display for ObsDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::with_capacity(PATCH_CELLS + 2);
        for r in 0..VIEW_SIZE {
            for c in 0..VIEW_SIZE {
                s.push(self.cell(r, c).symbol());
            }
        }
        write!(f, "{s}:{}", self.direction())
    }
}

impl FromStr for ObsDigest {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (cells, dir) = s
            .split_once(':')
            .ok_or_else(|| format!("observation digest `{s}` lacks `:`"))?;
        if cells.chars().count() != PATCH_CELLS {
            return Err(format!("observation digest needs {PATCH_CELLS} cells"));
        }
        let dir: u8 = dir.parse().map_err(|e| format!("bad sector: {e}"))?;
        if dir >= DIRECTION_SECTORS {
            return Err(format!("sector {dir} out of range"));
        }
        let mut bits = (dir as u128) << PATCH_BITS;
        for (i, ch) in cells.chars().enumerate() {
            let kind = CellKind::from_symbol(ch).ok_or_else(|| format!("bad cell `{ch}`"))?;
            bits |= (kind as u128) << (i as u32 * CELL_BITS);
        }
        Ok(ObsDigest(bits))
    }
}

impl Serialize for ObsDigest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ObsDigest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
