//! Patch-grid geometry: decoding orders, stage maps, latent dimensions, and
//! the padding calculator.
//!
//! A decoding order for an n×n patch is written as n² hex digits, row-major,
//! top row first: digit k at position (row·n + col) means cell (row, col) is
//! decoded at stage k. `"0123"` is the 2×2 raster order; the digits a–f stand
//! for stages 10–15 in 4×4 orders.

use num_integer::Integer;
use num_rational::Ratio;

use crate::error::Error;
use crate::Result;

/// Largest supported patch side. The 5×5 context window stops covering a full
/// patch period beyond this, and padding costs explode.
pub const MAX_PATCH_SIDE: usize = 4;

/// Dimensions of a (channel-collapsed) latent grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LatentDims {
    h: usize,
    w: usize,
}

impl LatentDims {
    pub fn new(h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::InvalidDims {
                h,
                w,
                reason: "height and width must be at least 1",
            });
        }
        Ok(Self { h, w })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn positions(&self) -> usize {
        self.h * self.w
    }
}

/// A bijective decoding order for an n×n patch: one cell per stage.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PatchOrder {
    n: usize,
    stages: Vec<u8>,
    practicality_warning: bool,
}

impl PatchOrder {
    /// Builds an order from per-cell stages (row-major). Rejects anything
    /// that is not a permutation of 0..n².
    pub fn new(n: usize, stages: Vec<u8>) -> Result<Self> {
        if n == 0 || n > MAX_PATCH_SIDE {
            return Err(Error::UnsupportedPatchSize { n });
        }
        let cells = n * n;
        if stages.len() != cells {
            return Err(Error::InvalidOrderLength { len: stages.len() });
        }
        let mut seen = vec![false; cells];
        for &s in &stages {
            let s = s as usize;
            if s >= cells {
                return Err(Error::NotAPermutation {
                    expected: cells,
                    stage: s,
                    problem: "out of range",
                });
            }
            if seen[s] {
                return Err(Error::NotAPermutation {
                    expected: cells,
                    stage: s,
                    problem: "appears twice",
                });
            }
            seen[s] = true;
        }
        // lcm(16n, 64) > 64 only for n = 3; such patch sides need heavy
        // image padding and are flagged as impractical, not rejected.
        let practicality_warning = required_padding_multiple(n) > 64;
        Ok(Self {
            n,
            stages,
            practicality_warning,
        })
    }

    /// Parses the row-major hex form. The string length must be a supported
    /// perfect square (1, 4, 9 or 16 digits).
    pub fn parse(text: &str) -> Result<Self> {
        let len = text.chars().count();
        let n = match len {
            1 => 1,
            4 => 2,
            9 => 3,
            16 => 4,
            _ => return Err(Error::InvalidOrderLength { len }),
        };
        let mut stages = Vec::with_capacity(len);
        for ch in text.chars() {
            let digit = ch
                .to_digit(16)
                .ok_or(Error::InvalidOrderDigit { ch })?;
            stages.push(digit as u8);
        }
        Self::new(n, stages)
    }

    /// Inverse of [`PatchOrder::parse`].
    pub fn format(&self) -> String {
        self.stages
            .iter()
            .map(|&s| std::char::from_digit(s as u32, 16).expect("stage < 16"))
            .collect()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_stages(&self) -> usize {
        self.n * self.n
    }

    pub fn stages(&self) -> &[u8] {
        &self.stages
    }

    /// Stage of within-patch cell (row, col).
    pub fn stage_at(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.n && col < self.n);
        self.stages[row * self.n + col] as usize
    }

    /// Stage of an absolute grid position; periodic with period n both ways.
    pub fn stage_of_position(&self, y: usize, x: usize) -> usize {
        self.stage_at(y % self.n, x % self.n)
    }

    /// Within-patch cell decoded at `stage`.
    pub fn cell_of_stage(&self, stage: usize) -> (usize, usize) {
        debug_assert!(stage < self.num_stages());
        let idx = self
            .stages
            .iter()
            .position(|&s| s as usize == stage)
            .expect("bijective order");
        (idx / self.n, idx % self.n)
    }

    /// True when lcm(16n, 64) exceeds 64, i.e. the patch side needs extra
    /// image padding beyond the usual multiple-of-64 requirement (n = 3).
    pub fn practicality_warning(&self) -> bool {
        self.practicality_warning
    }

    /// Applies a symmetry of the square to the cell grid, keeping stages
    /// attached to their cells.
    pub fn transform(&self, t: D4) -> PatchOrder {
        let n = self.n;
        let mut stages = vec![0u8; n * n];
        for r in 0..n {
            for c in 0..n {
                let (tr, tc) = t.apply(r, c, n);
                stages[tr * n + tc] = self.stages[r * n + c];
            }
        }
        PatchOrder::new(n, stages).expect("transform of a permutation is a permutation")
    }

    /// The 2×2 raster order `"0123"`.
    pub fn raster(n: usize) -> Result<Self> {
        Self::new(n, (0..(n * n) as u8).collect())
    }
}

impl std::fmt::Display for PatchOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.format())
    }
}

/// The eight symmetries of the square.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum D4 {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    FlipRows,
    FlipCols,
    Transpose,
    AntiTranspose,
}

impl D4 {
    pub const ALL: [D4; 8] = [
        D4::Identity,
        D4::Rot90,
        D4::Rot180,
        D4::Rot270,
        D4::FlipRows,
        D4::FlipCols,
        D4::Transpose,
        D4::AntiTranspose,
    ];

    /// Image of cell (r, c) in an n×n grid.
    pub fn apply(&self, r: usize, c: usize, n: usize) -> (usize, usize) {
        let m = n - 1;
        match self {
            D4::Identity => (r, c),
            D4::Rot90 => (c, m - r),
            D4::Rot180 => (m - r, m - c),
            D4::Rot270 => (m - c, r),
            D4::FlipRows => (m - r, c),
            D4::FlipCols => (r, m - c),
            D4::Transpose => (c, r),
            D4::AntiTranspose => (m - c, m - r),
        }
    }

    /// Image of a relative offset under the same symmetry.
    pub fn apply_offset(&self, dy: isize, dx: isize) -> (isize, isize) {
        match self {
            D4::Identity => (dy, dx),
            D4::Rot90 => (dx, -dy),
            D4::Rot180 => (-dy, -dx),
            D4::Rot270 => (-dx, dy),
            D4::FlipRows => (-dy, dx),
            D4::FlipCols => (dy, -dx),
            D4::Transpose => (dx, dy),
            D4::AntiTranspose => (-dx, -dy),
        }
    }
}

/// Which cells of the checkerboard are anchors (stage 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parity {
    /// Anchors at cells with (row + col) even — the usual depiction.
    #[default]
    Even,
    /// Anchors at cells with (row + col) odd. Equivalent by symmetry.
    Odd,
}

/// Assignment of within-patch cells to decoding stages. Bijective maps come
/// from a [`PatchOrder`]; the checkerboard assigns two cells per stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageMap {
    n: usize,
    stage_of: Vec<u8>,
    num_stages: usize,
}

impl StageMap {
    /// Builds a map from per-cell stages, requiring every stage in
    /// 0..=max(stages) to be assigned at least one cell.
    pub fn new(n: usize, stage_of: Vec<u8>) -> Result<Self> {
        if n == 0 || n > MAX_PATCH_SIDE {
            return Err(Error::UnsupportedPatchSize { n });
        }
        let cells = n * n;
        if stage_of.len() != cells {
            return Err(Error::InvalidOrderLength { len: stage_of.len() });
        }
        let num_stages = stage_of.iter().map(|&s| s as usize + 1).max().unwrap_or(0);
        let mut counts = vec![0usize; num_stages];
        for &s in &stage_of {
            counts[s as usize] += 1;
        }
        if let Some(stage) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyStage { stage, cells });
        }
        Ok(Self {
            n,
            stage_of,
            num_stages,
        })
    }

    pub fn from_order(order: &PatchOrder) -> Self {
        Self {
            n: order.n(),
            stage_of: order.stages().to_vec(),
            num_stages: order.num_stages(),
        }
    }

    /// The 2-stage checkerboard map on a 2×2 patch.
    pub fn checkerboard(anchor_parity: Parity) -> Self {
        let anchor = |r: usize, c: usize| match anchor_parity {
            Parity::Even => (r + c) % 2 == 0,
            Parity::Odd => (r + c) % 2 == 1,
        };
        let mut stage_of = Vec::with_capacity(4);
        for r in 0..2 {
            for c in 0..2 {
                stage_of.push(if anchor(r, c) { 0 } else { 1 });
            }
        }
        Self {
            n: 2,
            stage_of,
            num_stages: 2,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_stages(&self) -> usize {
        self.num_stages
    }

    pub fn stage_at(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.n && col < self.n);
        self.stage_of[row * self.n + col] as usize
    }

    /// Stage of an absolute grid position (n-periodic).
    pub fn stage_of_position(&self, y: usize, x: usize) -> usize {
        self.stage_at(y % self.n, x % self.n)
    }

    /// Within-patch cells decoded at `stage`, row-major.
    pub fn cells_of_stage(&self, stage: usize) -> Vec<(usize, usize)> {
        let mut cells = Vec::new();
        for r in 0..self.n {
            for c in 0..self.n {
                if self.stage_at(r, c) == stage {
                    cells.push((r, c));
                }
            }
        }
        cells
    }

    /// One cell per stage, i.e. the map came from a [`PatchOrder`].
    pub fn is_bijective(&self) -> bool {
        self.num_stages == self.n * self.n
    }

    /// Exact fraction of cells decoded at stage 0 (the anchors).
    pub fn anchor_fraction(&self) -> Ratio<u64> {
        let anchors = self.stage_of.iter().filter(|&&s| s == 0).count() as u64;
        Ratio::new(anchors, (self.n * self.n) as u64)
    }
}

/// Image sizes must be padded to a multiple of lcm(16n, 64): the analysis
/// transform downscales by 16 so the latent grid needs 16n | H, and the
/// hyperprior stack already requires 64 | H.
pub fn required_padding_multiple(n: usize) -> usize {
    (16 * n).lcm(&64)
}

/// Result of padding an H×W image for an n×n patch split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Padding {
    pub padded_h: usize,
    pub padded_w: usize,
    /// padded area / original area − 1.
    pub overhead: f64,
}

/// Smallest dimensions ≥ (h, w) divisible by [`required_padding_multiple`].
pub fn pad_image_dims(h: usize, w: usize, n: usize) -> Result<Padding> {
    if n == 0 || n > MAX_PATCH_SIDE {
        return Err(Error::UnsupportedPatchSize { n });
    }
    if h == 0 || w == 0 {
        return Err(Error::InvalidDims {
            h,
            w,
            reason: "image dimensions must be at least 1",
        });
    }
    let m = required_padding_multiple(n);
    let round_up = |v: usize| v.div_ceil(m) * m;
    let (ph, pw) = (round_up(h), round_up(w));
    let overhead = (ph * pw) as f64 / (h * w) as f64 - 1.0;
    Ok(Padding {
        padded_h: ph,
        padded_w: pw,
        overhead,
    })
}
