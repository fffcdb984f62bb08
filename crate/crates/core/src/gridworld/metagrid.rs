//! Procedural MetaGrid maps tiled from 7x7 building blocks.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GridError, GridWorld, Pos, Task};

pub const BLOCK_SIZE: usize = 7;
const DOOR: usize = BLOCK_SIZE / 2;
const MATCH_RETRIES: usize = 16;
const LAYOUT_RETRIES: usize = 32;

/// Edge openings of a block, in N, E, S, W order.
type Openings = [bool; 4];
const N: usize = 0;
const E: usize = 1;
const S: usize = 2;
const W: usize = 3;

struct Block {
    rows: [&'static str; BLOCK_SIZE],
    openings: Openings,
}

const BLOCKS: [Block; 5] = [
    // open room
    Block {
        rows: [
            "###.###", "#.....#", "#.....#", ".......", "#.....#", "#.....#", "###.###",
        ],
        openings: [true, true, true, true],
    },
    // room with pillars
    Block {
        rows: [
            "###.###", "#.....#", "#.#.#.#", ".......", "#.#.#.#", "#.....#", "###.###",
        ],
        openings: [true, true, true, true],
    },
    // east-west hall
    Block {
        rows: [
            "#######", "#.....#", "#.###.#", ".......", "#.###.#", "#.....#", "#######",
        ],
        openings: [false, true, false, true],
    },
    // north-south hall
    Block {
        rows: [
            "###.###", "#.#.#.#", "#.#.#.#", "#.....#", "#.#.#.#", "#.#.#.#", "###.###",
        ],
        openings: [true, false, true, false],
    },
    // three-way junction with an inner wall
    Block {
        rows: [
            "###.###", "#.....#", "#.###.#", "#.#....", "#.#.#.#", "#...#.#", "###.###",
        ],
        openings: [true, true, true, false],
    },
];

fn block_cells(block: &Block) -> [[bool; BLOCK_SIZE]; BLOCK_SIZE] {
    let mut cells = [[false; BLOCK_SIZE]; BLOCK_SIZE];
    for (r, line) in block.rows.iter().enumerate() {
        for (c, ch) in line.chars().enumerate() {
            cells[r][c] = ch == '#';
        }
    }
    cells
}

/// Cross-shaped corridor with doorways on the requested edges.
fn corridor_cells(openings: Openings) -> [[bool; BLOCK_SIZE]; BLOCK_SIZE] {
    let mut cells = [[true; BLOCK_SIZE]; BLOCK_SIZE];
    for cell in &mut cells[DOOR][1..BLOCK_SIZE - 1] {
        *cell = false;
    }
    for row in &mut cells[1..BLOCK_SIZE - 1] {
        row[DOOR] = false;
    }
    cells[0][DOOR] = !openings[N];
    cells[DOOR][BLOCK_SIZE - 1] = !openings[E];
    cells[BLOCK_SIZE - 1][DOOR] = !openings[S];
    cells[DOOR][0] = !openings[W];
    cells
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MetaGridSize {
    pub rows: usize,
    pub cols: usize,
}

impl MetaGridSize {
    pub const S14: MetaGridSize = MetaGridSize { rows: 14, cols: 14 };
    pub const S21: MetaGridSize = MetaGridSize { rows: 21, cols: 21 };

    pub fn new(rows: usize, cols: usize) -> Result<Self, GridError> {
        if rows == 0 || cols == 0 || !rows.is_multiple_of(BLOCK_SIZE) || !cols.is_multiple_of(BLOCK_SIZE) {
            return Err(GridError::BadSize(format!("{rows}x{cols}")));
        }
        Ok(MetaGridSize { rows, cols })
    }

    /// Minimum success return; 14x14 comes from the published table, larger
    /// maps get a looser bar.
    pub fn success_threshold(self) -> f64 {
        if self.rows <= 14 && self.cols <= 14 {
            0.95
        } else {
            0.90
        }
    }
}

impl fmt::Display for MetaGridSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl FromStr for MetaGridSize {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GridError::BadSize(s.to_string());
        let (r, c) = s.split_once('x').ok_or_else(bad)?;
        MetaGridSize::new(r.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?)
    }
}

impl Serialize for MetaGridSize {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MetaGridSize {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Places blocks row-major so each shared edge has matching doorways.
fn tile(br: usize, bc: usize, rng: &mut impl Rng) -> Vec<Vec<[[bool; BLOCK_SIZE]; BLOCK_SIZE]>> {
    let mut openings: Vec<Vec<Openings>> = vec![vec![[false; 4]; bc]; br];
    let mut cells = vec![vec![[[true; BLOCK_SIZE]; BLOCK_SIZE]; bc]; br];
    for i in 0..br {
        for j in 0..bc {
            let need_w = (j > 0).then(|| openings[i][j - 1][E]);
            let need_n = (i > 0).then(|| openings[i - 1][j][S]);
            let fits = |o: &Openings| need_w.is_none_or(|w| o[W] == w) && need_n.is_none_or(|n| o[N] == n);
            let mut placed = None;
            for _ in 0..MATCH_RETRIES {
                let block = BLOCKS.choose(rng).expect("blocks");
                if fits(&block.openings) {
                    placed = Some((block.openings, block_cells(block)));
                    break;
                }
            }
            let (o, c) = placed.unwrap_or_else(|| {
                let o = [need_n.unwrap_or(true), true, true, need_w.unwrap_or(true)];
                (o, corridor_cells(o))
            });
            openings[i][j] = o;
            cells[i][j] = c;
        }
    }
    cells
}

fn assemble(size: MetaGridSize, blocks: &[Vec<[[bool; BLOCK_SIZE]; BLOCK_SIZE]>]) -> Vec<bool> {
    let mut walls = vec![true; size.rows * size.cols];
    for r in 0..size.rows {
        for c in 0..size.cols {
            let edge = r == 0 || c == 0 || r + 1 == size.rows || c + 1 == size.cols;
            let block = &blocks[r / BLOCK_SIZE][c / BLOCK_SIZE];
            walls[r * size.cols + c] = edge || block[r % BLOCK_SIZE][c % BLOCK_SIZE];
        }
    }
    walls
}

fn all_free_connected(size: MetaGridSize, walls: &[bool]) -> bool {
    let free: Vec<usize> = (0..walls.len()).filter(|&i| !walls[i]).collect();
    let Some(&first) = free.first() else {
        return false;
    };
    let start = Pos::new(first / size.cols, first % size.cols);
    let probe = match GridWorld::new(size.cols, size.rows, walls.to_vec(), start, start) {
        Ok(g) => g,
        Err(_) => return false,
    };
    let dist = probe.distances_from(start);
    free.iter().all(|&i| dist[i].is_some())
}

/// Generates a connected MetaGrid task; the same seed always yields the same task.
pub fn generate_metagrid(size: MetaGridSize, rng_seed: u64) -> Result<Task, GridError> {
    let size = MetaGridSize::new(size.rows, size.cols)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (br, bc) = (size.rows / BLOCK_SIZE, size.cols / BLOCK_SIZE);
    let mut walls = None;
    for _ in 0..LAYOUT_RETRIES {
        let candidate = assemble(size, &tile(br, bc, &mut rng));
        if all_free_connected(size, &candidate) {
            walls = Some(candidate);
            break;
        }
    }
    let walls = walls.unwrap_or_else(|| {
        let open = vec![vec![corridor_cells([true; 4]); bc]; br];
        assemble(size, &open)
    });
    let free: Vec<Pos> = (0..walls.len())
        .filter(|&i| !walls[i])
        .map(|i| Pos::new(i / size.cols, i % size.cols))
        .collect();
    let picks: Vec<Pos> = free.choose_multiple(&mut rng, 2).copied().collect();
    let grid = GridWorld::new(size.cols, size.rows, walls, picks[0], picks[1])?;
    let task_id = format!("metagrid{size}/{rng_seed}");
    Ok(Task::new(grid, size.success_threshold(), task_id, rng_seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_are_internally_connected() {
        for (i, block) in BLOCKS.iter().enumerate() {
            let cells = block_cells(block);
            let size = MetaGridSize::new(BLOCK_SIZE, BLOCK_SIZE).unwrap();
            // seal the frame so the probe grid is a closed arena
            let walls: Vec<bool> = (0..BLOCK_SIZE * BLOCK_SIZE)
                .map(|k| {
                    let (r, c) = (k / BLOCK_SIZE, k % BLOCK_SIZE);
                    cells[r][c] || r == 0 || c == 0 || r == BLOCK_SIZE - 1 || c == BLOCK_SIZE - 1
                })
                .collect();
            assert!(all_free_connected(size, &walls), "block {i}");
            for (side, (r, c)) in [(0, DOOR), (DOOR, 6), (6, DOOR), (DOOR, 0)].into_iter().enumerate() {
                assert_eq!(!cells[r][c], block.openings[side], "block {i} side {side}");
            }
        }
    }

    #[test]
    fn same_seed_same_task() {
        for seed in 0..20 {
            let a = generate_metagrid(MetaGridSize::S14, seed).unwrap();
            let b = generate_metagrid(MetaGridSize::S14, seed).unwrap();
            assert_eq!(a.grid(), b.grid());
        }
    }

    #[test]
    fn maps_are_connected_and_goal_reachable() {
        for seed in 0..200 {
            for size in [MetaGridSize::S14, MetaGridSize::S21] {
                let t = generate_metagrid(size, seed).unwrap();
                let g = t.grid();
                assert_eq!((g.height(), g.width()), (size.rows, size.cols));
                assert_ne!(g.spawn(), g.goal());
                assert!(g.shortest_path_len(g.spawn(), g.goal()).is_some());
                let dist = g.distances_from(g.spawn());
                assert!(g.free_cells().iter().all(|&p| dist[g.index(p)].is_some()));
            }
        }
    }

    #[test]
    fn large_maps_are_three_by_three_blocks() {
        let t = generate_metagrid(MetaGridSize::S21, 7).unwrap();
        let g = t.grid();
        // block interiors never straddle the 7-cell seams: seam rows/cols are
        // walls except at doorway columns/rows
        for seam in [6, 7, 13, 14] {
            for k in 0..21 {
                if k % BLOCK_SIZE != DOOR {
                    assert!(g.is_wall(Pos::new(seam, k)), "row seam {seam} col {k}");
                    assert!(g.is_wall(Pos::new(k, seam)), "col seam {seam} row {k}");
                }
            }
        }
    }

    #[test]
    fn seeds_vary_layouts() {
        let layouts: std::collections::HashSet<String> = (0..30)
            .map(|s| generate_metagrid(MetaGridSize::S14, s).unwrap().grid().to_ascii())
            .collect();
        assert!(layouts.len() > 20);
    }

    #[test]
    fn bad_sizes_rejected() {
        assert!("15x14".parse::<MetaGridSize>().is_err());
        assert_eq!("21x21".parse::<MetaGridSize>().unwrap(), MetaGridSize::S21);
    }
}
