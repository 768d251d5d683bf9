//! Context-availability masks: which relative offsets inside the 5×5 window
//! hold already-decoded latent codes at a given stage.
//!
//! Because a stage map is n-periodic, availability at an offset (dy, dx)
//! depends only on the stage of the wrapped within-patch cell, so a mask is
//! a pure function of (stage map, stage) and is computed in O(25) without
//! looking at the grid. [`brute_force_mask`] materializes a full grid and
//! reads availability directly; it exists as an independent oracle and must
//! always agree.

use crate::error::Error;
use crate::grid::{LatentDims, StageMap};
use crate::Result;

/// Radius of the (fixed) 5×5 context window.
pub const WINDOW_RADIUS: isize = 2;

const SIDE: usize = 5;

/// 5×5 boolean window of offsets (dy, dx) ∈ {−2..2}² available as context.
/// The center (0, 0) is never available: a cell is not its own context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ContextMask {
    avail: [[bool; SIDE]; SIDE],
}

impl ContextMask {
    pub fn empty() -> Self {
        Self {
            avail: [[false; SIDE]; SIDE],
        }
    }

    /// Builds a mask from offsets; offsets outside the window or at the
    /// center are rejected with a panic since they indicate a logic bug.
    pub fn from_offsets<I: IntoIterator<Item = (isize, isize)>>(offsets: I) -> Self {
        let mut mask = Self::empty();
        for (dy, dx) in offsets {
            mask.set(dy, dx, true);
        }
        mask
    }

    fn index(dy: isize, dx: isize) -> (usize, usize) {
        assert!(
            dy.abs() <= WINDOW_RADIUS && dx.abs() <= WINDOW_RADIUS,
            "offset ({dy}, {dx}) outside 5x5 window"
        );
        ((dy + WINDOW_RADIUS) as usize, (dx + WINDOW_RADIUS) as usize)
    }

    fn set(&mut self, dy: isize, dx: isize, value: bool) {
        assert!(!(dy == 0 && dx == 0), "center offset is never context");
        let (r, c) = Self::index(dy, dx);
        self.avail[r][c] = value;
    }

    pub fn is_available(&self, dy: isize, dx: isize) -> bool {
        let (r, c) = Self::index(dy, dx);
        self.avail[r][c]
    }

    /// Available offsets in row-major window order (dy, then dx, ascending).
    /// This order fixes floating-point accumulation downstream.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let mut out = Vec::new();
        for dy in -WINDOW_RADIUS..=WINDOW_RADIUS {
            for dx in -WINDOW_RADIUS..=WINDOW_RADIUS {
                if (dy != 0 || dx != 0) && self.is_available(dy, dx) {
                    out.push((dy, dx));
                }
            }
        }
        out
    }

    pub fn count(&self) -> usize {
        self.avail.iter().flatten().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// 25-bit row-major pattern; bit (dy+2)·5 + (dx+2). The center bit is
    /// always zero, so patterns double as cache keys for predictor lookups.
    pub fn bits(&self) -> u32 {
        let mut bits = 0u32;
        for dy in -WINDOW_RADIUS..=WINDOW_RADIUS {
            for dx in -WINDOW_RADIUS..=WINDOW_RADIUS {
                if self.is_available(dy, dx) {
                    bits |= 1 << ((dy + WINDOW_RADIUS) * 5 + (dx + WINDOW_RADIUS));
                }
            }
        }
        bits
    }

    /// ASCII rendering: 5 lines of 5 chars, `#` available, `.` not, `o` center.
    pub fn render(&self) -> String {
        let mut out = String::with_capacity(SIDE * (SIDE + 1));
        for dy in -WINDOW_RADIUS..=WINDOW_RADIUS {
            for dx in -WINDOW_RADIUS..=WINDOW_RADIUS {
                out.push(if dy == 0 && dx == 0 {
                    'o'
                } else if self.is_available(dy, dx) {
                    '#'
                } else {
                    '.'
                });
            }
            if dy != WINDOW_RADIUS {
                out.push('\n');
            }
        }
        out
    }
}

/// A stage mask with border effects applied at a concrete grid position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BorderClippedMask {
    base: ContextMask,
    clipped: ContextMask,
}

impl BorderClippedMask {
    pub fn base(&self) -> ContextMask {
        self.base
    }

    pub fn clipped(&self) -> ContextMask {
        self.clipped
    }
}

/// Context mask for `stage` of `map`: offset (dy, dx) is available iff the
/// wrapped within-patch cell it lands on is decoded at an earlier stage.
///
/// For multi-cell stages the mask must be identical from every cell of the
/// stage (true for the checkerboard by parity symmetry); otherwise the stage
/// map admits no position-independent mask and an error is returned.
pub fn stage_mask(map: &StageMap, stage: usize) -> Result<ContextMask> {
    if stage >= map.num_stages() {
        return Err(Error::StageOutOfRange {
            stage,
            num_stages: map.num_stages(),
        });
    }
    let n = map.n() as isize;
    let cells = map.cells_of_stage(stage);
    debug_assert!(!cells.is_empty(), "StageMap guarantees non-empty stages");

    let mask_from = |(py, px): (usize, usize)| {
        let mut mask = ContextMask::empty();
        for dy in -WINDOW_RADIUS..=WINDOW_RADIUS {
            for dx in -WINDOW_RADIUS..=WINDOW_RADIUS {
                if dy == 0 && dx == 0 {
                    continue;
                }
                let wy = (py as isize + dy).rem_euclid(n) as usize;
                let wx = (px as isize + dx).rem_euclid(n) as usize;
                if map.stage_at(wy, wx) < stage {
                    mask.set(dy, dx, true);
                }
            }
        }
        mask
    };

    let first = mask_from(cells[0]);
    for &cell in &cells[1..] {
        if mask_from(cell) != first {
            return Err(Error::NonUniformStageMask { stage });
        }
    }
    Ok(first)
}

/// Independent oracle for [`stage_mask`]: materializes the stage of every
/// position of a `dims` grid, picks an interior position of the requested
/// stage (at least 2 cells from every border), and reads availability by
/// comparing the stages of absolute neighbors.
pub fn brute_force_mask(map: &StageMap, stage: usize, dims: LatentDims) -> Result<ContextMask> {
    if stage >= map.num_stages() {
        return Err(Error::StageOutOfRange {
            stage,
            num_stages: map.num_stages(),
        });
    }
    let (h, w) = (dims.height(), dims.width());
    let n = map.n();
    if h % n != 0 || w % n != 0 {
        return Err(Error::DimsNotDivisible { h, w, n });
    }
    if h < 8 || w < 8 {
        return Err(Error::GridTooSmall {
            h,
            w,
            reason: "oracle needs at least 8x8",
        });
    }

    let stage_grid: Vec<usize> = (0..h * w)
        .map(|i| map.stage_of_position(i / w, i % w))
        .collect();

    let r = WINDOW_RADIUS as usize;
    let interior = (r..h - r)
        .flat_map(|y| (r..w - r).map(move |x| (y, x)))
        .find(|&(y, x)| stage_grid[y * w + x] == stage);
    let (y, x) = interior.ok_or(Error::GridTooSmall {
        h,
        w,
        reason: "no interior position of the requested stage",
    })?;

    let mut mask = ContextMask::empty();
    for dy in -WINDOW_RADIUS..=WINDOW_RADIUS {
        for dx in -WINDOW_RADIUS..=WINDOW_RADIUS {
            if dy == 0 && dx == 0 {
                continue;
            }
            let ny = (y as isize + dy) as usize;
            let nx = (x as isize + dx) as usize;
            if stage_grid[ny * w + nx] < stage {
                mask.set(dy, dx, true);
            }
        }
    }
    Ok(mask)
}

/// Removes offsets that fall outside the grid at position (y, x).
pub fn clip_mask(mask: ContextMask, y: usize, x: usize, dims: LatentDims) -> BorderClippedMask {
    debug_assert!(y < dims.height() && x < dims.width());
    let mut clipped = ContextMask::empty();
    for (dy, dx) in mask.offsets() {
        let ny = y as isize + dy;
        let nx = x as isize + dx;
        if ny >= 0 && (ny as usize) < dims.height() && nx >= 0 && (nx as usize) < dims.width() {
            clipped.set(dy, dx, true);
        }
    }
    BorderClippedMask {
        base: mask,
        clipped,
    }
}

/// Raster-scan causal half-window: strictly earlier rows, plus earlier
/// columns of the same row. 12 offsets.
pub fn ar_causal_mask() -> ContextMask {
    let mut mask = ContextMask::empty();
    for dy in -WINDOW_RADIUS..=WINDOW_RADIUS {
        for dx in -WINDOW_RADIUS..=WINDOW_RADIUS {
            if dy < 0 || (dy == 0 && dx < 0) {
                mask.set(dy, dx, true);
            }
        }
    }
    mask
}

/// How many of the four-adjacent offsets (±1, 0), (0, ±1) are available.
/// Their presence is the strongest single predictor of rate reduction.
pub fn four_adjacency_count(mask: &ContextMask) -> usize {
    [(-1, 0), (1, 0), (0, -1), (0, 1)]
        .into_iter()
        .filter(|&(dy, dx)| mask.is_available(dy, dx))
        .count()
}
