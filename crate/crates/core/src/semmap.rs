//! Semantic maps: temporal label smoothing, pose-stamped rasterization onto
//! a self-expanding grid, and palette rendering.

use std::collections::BTreeMap;

use crate::error::{DeduceError, Result};
use crate::raster::{RgbImage, Rgb, BLACK, GLYPH_H, GLYPH_W, WHITE};
use crate::types::{ClassSet, FrameRecord, Pose, SceneLabel};

pub const DEFAULT_RESOLUTION: f64 = 0.1;
pub const DEFAULT_STAMP_RADIUS: f64 = 0.5;
pub const DEFAULT_WINDOW: usize = 5;

/// Hard cap on grid size so a stray pose cannot exhaust memory.
pub const MAX_CELLS: usize = 1 << 26;

/// Sliding-window majority vote. Windows are truncated at the ends; ties go
/// to the centre label when it is among the leaders, otherwise the lowest id.
pub fn smooth_sequence(labels: &[SceneLabel], window: usize) -> Result<Vec<SceneLabel>> {
    if labels.is_empty() {
        return Err(DeduceError::Empty("label sequence".into()));
    }
    if window == 0 || window % 2 == 0 {
        return Err(DeduceError::InvalidConfig(format!("window must be odd and >= 1, got {window}")));
    }
    let half = window / 2;
    let mut out = Vec::with_capacity(labels.len());
    for i in 0..labels.len() {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(labels.len());
        let mut counts: BTreeMap<SceneLabel, usize> = BTreeMap::new();
        for l in &labels[lo..hi] {
            *counts.entry(*l).or_default() += 1;
        }
        let best = counts.values().copied().max().unwrap_or(0);
        let centre = labels[i];
        let winner = if counts[&centre] == best {
            centre
        } else {
            *counts.iter().find(|(_, c)| **c == best).map(|(l, _)| l).expect("non-empty window")
        };
        out.push(winner);
    }
    Ok(out)
}

/// State of one grid cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    /// `None` = unknown (never visited).
    pub label: Option<SceneLabel>,
    /// Majority count over total stamps.
    pub confidence: f64,
    pub visit_count: u32,
}

/// Grid aligned to the global lattice `index = floor(coord / resolution)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticGrid {
    resolution: f64,
    num_classes: usize,
    min_ix: i64,
    min_iy: i64,
    width: usize,
    height: usize,
    /// Per-cell label counts, `num_classes` per cell, row-major with row 0 at `min_iy`.
    counts: Vec<u32>,
}

impl SemanticGrid {
    /// A grid with no cells.
    pub fn new(resolution: f64, num_classes: usize) -> Result<Self> {
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(DeduceError::InvalidConfig(format!("resolution must be positive, got {resolution}")));
        }
        Ok(SemanticGrid {
            resolution,
            num_classes,
            min_ix: 0,
            min_iy: 0,
            width: 0,
            height: 0,
            counts: Vec::new(),
        })
    }

    /// An all-unknown grid of `width x height` cells with its lower-left cell at `(min_ix, min_iy)`.
    pub fn with_extent(resolution: f64, num_classes: usize, min_ix: i64, min_iy: i64, width: usize, height: usize) -> Result<Self> {
        let mut g = Self::new(resolution, num_classes)?;
        if width * height > MAX_CELLS {
            return Err(DeduceError::InvalidConfig("grid too large".into()));
        }
        g.min_ix = min_ix;
        g.min_iy = min_iy;
        g.width = width;
        g.height = height;
        g.counts = vec![0; width * height * num_classes];
        Ok(g)
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// World coordinates of the grid's lower-left corner.
    pub fn origin(&self) -> (f64, f64) {
        (self.min_ix as f64 * self.resolution, self.min_iy as f64 * self.resolution)
    }

    /// Lattice index of a world coordinate.
    pub fn index_of(&self, x: f64, y: f64) -> (i64, i64) {
        ((x / self.resolution).floor() as i64, (y / self.resolution).floor() as i64)
    }

    /// Cell at column `col`, row `row` (row 0 = lowest y).
    pub fn cell(&self, col: usize, row: usize) -> Cell {
        let base = (row * self.width + col) * self.num_classes;
        let counts = &self.counts[base..base + self.num_classes];
        let total: u32 = counts.iter().sum();
        if total == 0 {
            return Cell {
                label: None,
                confidence: 0.0,
                visit_count: 0,
            };
        }
        let (best, n) = counts
            .iter()
            .enumerate()
            .fold((0, 0), |(bi, bn), (i, c)| if *c > bn { (i, *c) } else { (bi, bn) });
        Cell {
            label: Some(SceneLabel(best)),
            confidence: n as f64 / total as f64,
            visit_count: total,
        }
    }

    /// Cell containing world point `(x, y)`, if inside the grid.
    pub fn cell_at(&self, x: f64, y: f64) -> Option<Cell> {
        let (ix, iy) = self.index_of(x, y);
        let col = usize::try_from(ix - self.min_ix).ok().filter(|c| *c < self.width)?;
        let row = usize::try_from(iy - self.min_iy).ok().filter(|r| *r < self.height)?;
        Some(self.cell(col, row))
    }

    /// Cell at lattice index, if inside the grid.
    pub fn cell_at_index(&self, ix: i64, iy: i64) -> Option<Cell> {
        let col = usize::try_from(ix - self.min_ix).ok().filter(|c| *c < self.width)?;
        let row = usize::try_from(iy - self.min_iy).ok().filter(|r| *r < self.height)?;
        Some(self.cell(col, row))
    }

    pub fn lattice_bounds(&self) -> (i64, i64, i64, i64) {
        (
            self.min_ix,
            self.min_iy,
            self.min_ix + self.width as i64 - 1,
            self.min_iy + self.height as i64 - 1,
        )
    }

    fn ensure(&mut self, ix0: i64, iy0: i64, ix1: i64, iy1: i64) -> Result<()> {
        let (nx0, ny0, nx1, ny1) = if self.width == 0 {
            (ix0, iy0, ix1, iy1)
        } else {
            let (a, b, c, d) = self.lattice_bounds();
            (a.min(ix0), b.min(iy0), c.max(ix1), d.max(iy1))
        };
        let w = usize::try_from(nx1 - nx0 + 1).map_err(|_| DeduceError::InvalidConfig("grid extent".into()))?;
        let h = usize::try_from(ny1 - ny0 + 1).map_err(|_| DeduceError::InvalidConfig("grid extent".into()))?;
        if w.checked_mul(h).map_or(true, |n| n > MAX_CELLS) {
            return Err(DeduceError::InvalidConfig(format!("grid of {w}x{h} cells exceeds the size cap")));
        }
        if (nx0, ny0, w, h) == (self.min_ix, self.min_iy, self.width, self.height) {
            return Ok(());
        }
        let k = self.num_classes;
        let mut counts = vec![0u32; w * h * k];
        for row in 0..self.height {
            for col in 0..self.width {
                let ncol = (self.min_ix + col as i64 - nx0) as usize;
                let nrow = (self.min_iy + row as i64 - ny0) as usize;
                let src = (row * self.width + col) * k;
                let dst = (nrow * w + ncol) * k;
                counts[dst..dst + k].copy_from_slice(&self.counts[src..src + k]);
            }
        }
        self.min_ix = nx0;
        self.min_iy = ny0;
        self.width = w;
        self.height = h;
        self.counts = counts;
        Ok(())
    }

    /// Adds one vote for `label` to every cell whose centre lies within
    /// `radius` of the centre of the cell containing `(x, y)`. Grows as needed.
    pub fn stamp(&mut self, x: f64, y: f64, label: SceneLabel, radius: f64) -> Result<()> {
        if !(x.is_finite() && y.is_finite()) {
            return Err(DeduceError::NonFinite("pose".into()));
        }
        if label.0 >= self.num_classes {
            return Err(DeduceError::InvalidConfig(format!("label {label} outside class set")));
        }
        let (cx, cy) = self.index_of(x, y);
        let reach = (radius / self.resolution).floor() as i64;
        self.ensure(cx - reach, cy - reach, cx + reach, cy + reach)?;
        let r2 = radius * radius + 1e-9 * self.resolution * self.resolution;
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let d2 = ((dx * dx + dy * dy) as f64) * self.resolution * self.resolution;
                if d2 <= r2 {
                    let col = (cx + dx - self.min_ix) as usize;
                    let row = (cy + dy - self.min_iy) as usize;
                    self.counts[(row * self.width + col) * self.num_classes + label.0] += 1;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterConfig {
    pub resolution: f64,
    pub stamp_radius: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        RasterConfig {
            resolution: DEFAULT_RESOLUTION,
            stamp_radius: DEFAULT_STAMP_RADIUS,
        }
    }
}

/// Stamps every labeled pose into a fresh grid.
pub fn rasterize(posed: &[(Pose, SceneLabel)], num_classes: usize, cfg: &RasterConfig) -> Result<SemanticGrid> {
    if posed.is_empty() {
        return Err(DeduceError::Empty("no posed frames".into()));
    }
    if !(cfg.stamp_radius.is_finite() && cfg.stamp_radius >= 0.0) {
        return Err(DeduceError::InvalidConfig("stamp radius must be >= 0".into()));
    }
    let mut grid = SemanticGrid::new(cfg.resolution, num_classes)?;
    for (pose, label) in posed {
        grid.stamp(pose.x, pose.y, *label, cfg.stamp_radius)?;
    }
    Ok(grid)
}

/// Pairs frame poses with labels; every frame must carry a pose.
pub fn posed_labels(frames: &[FrameRecord], labels: &[SceneLabel]) -> Result<Vec<(Pose, SceneLabel)>> {
    if frames.len() != labels.len() {
        return Err(DeduceError::DimensionMismatch {
            expected: frames.len(),
            found: labels.len(),
        });
    }
    frames
        .iter()
        .zip(labels)
        .map(|(f, l)| f.pose.map(|p| (p, *l)).ok_or_else(|| DeduceError::MissingPose(f.frame_id.clone())))
        .collect()
}

/// Label → color. Colors are pairwise distinct and never white (white marks unknown cells).
#[derive(Debug, Clone, PartialEq)]
pub struct Palette {
    class_set: ClassSet,
    colors: BTreeMap<SceneLabel, Rgb>,
}

const NAMED_COLORS: [(&str, Rgb); 8] = [
    ("bathroom", [31, 119, 180]),
    ("bedroom", [255, 127, 14]),
    ("corridor", [44, 160, 44]),
    ("dining_room", [214, 39, 40]),
    ("kitchen", [148, 103, 189]),
    ("living_room", [140, 86, 75]),
    ("office", [227, 119, 194]),
    ("conference_room", [188, 189, 34]),
];

const SPARE_COLORS: [Rgb; 8] = [
    [127, 127, 127],
    [23, 190, 207],
    [0, 0, 128],
    [128, 128, 0],
    [0, 128, 128],
    [128, 0, 0],
    [0, 200, 0],
    [60, 60, 60],
];

impl Palette {
    pub fn new(class_set: ClassSet, colors: BTreeMap<SceneLabel, Rgb>) -> Result<Self> {
        for (l, c) in &colors {
            if l.0 >= class_set.len() {
                return Err(DeduceError::InvalidPalette(format!("label {l} outside class set")));
            }
            if *c == WHITE {
                return Err(DeduceError::InvalidPalette("white is reserved for unknown cells".into()));
            }
            if colors.iter().any(|(m, d)| m != l && d == c) {
                return Err(DeduceError::InvalidPalette(format!("color {c:?} used twice")));
            }
        }
        Ok(Palette { class_set, colors })
    }

    /// Fixed colors for the known scene names; other classes draw from a spare list.
    pub fn default_for(class_set: &ClassSet) -> Self {
        let mut spare = SPARE_COLORS.iter();
        let mut used: Vec<Rgb> = Vec::new();
        let mut colors = BTreeMap::new();
        for label in class_set.labels() {
            let name = class_set.name(label);
            let named = NAMED_COLORS.iter().find(|(n, _)| *n == name).map(|(_, c)| *c);
            let color = match named.filter(|c| !used.contains(c)) {
                Some(c) => c,
                None => loop {
                    match spare.next() {
                        Some(c) if !used.contains(c) && !NAMED_COLORS.iter().any(|(_, n)| n == c) => break *c,
                        Some(_) => continue,
                        // deterministic fallback for very large class sets
                        None => {
                            let i = label.0 as u32;
                            break [(i * 37 % 250) as u8, (i * 91 % 250) as u8, (i * 53 % 250) as u8];
                        }
                    }
                },
            };
            used.push(color);
            colors.insert(label, color);
        }
        Palette {
            class_set: class_set.clone(),
            colors,
        }
    }

    pub fn color(&self, label: SceneLabel) -> Option<Rgb> {
        self.colors.get(&label).copied()
    }

    pub fn class_set(&self) -> &ClassSet {
        &self.class_set
    }

    /// Legend rows: each palette entry in class order, then `unknown`.
    pub fn legend(&self) -> Vec<(String, Rgb)> {
        let mut rows: Vec<(String, Rgb)> = self
            .colors
            .iter()
            .map(|(l, c)| (self.class_set.name(*l).to_string(), *c))
            .collect();
        rows.push(("unknown".to_string(), WHITE));
        rows
    }

    /// Reverse lookup used to read labels back from a rendered map.
    pub fn label_of(&self, color: Rgb) -> Option<SceneLabel> {
        self.colors.iter().find(|(_, c)| **c == color).map(|(l, _)| *l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderOptions {
    /// Side of each cell's pixel block.
    pub cell_px: usize,
    pub legend: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions { cell_px: 4, legend: true }
    }
}

const LEGEND_ROW: usize = GLYPH_H + 4;
const SWATCH: usize = GLYPH_H + 2;

/// Renders one `cell_px` block per cell (north up), unknown cells white,
/// with an optional legend strip underneath.
pub fn render(grid: &SemanticGrid, palette: &Palette, opts: &RenderOptions) -> Result<RgbImage> {
    if opts.cell_px == 0 {
        return Err(DeduceError::InvalidConfig("cell_px must be >= 1".into()));
    }
    let map_w = grid.width * opts.cell_px;
    let map_h = grid.height * opts.cell_px;
    let legend = palette.legend();
    let (legend_w, legend_h) = if opts.legend {
        let longest = legend.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
        (2 + SWATCH + 4 + longest * (GLYPH_W + 1), legend.len() * LEGEND_ROW + 2)
    } else {
        (0, 0)
    };
    let width = map_w.max(legend_w);
    let mut img = RgbImage::filled(width, map_h + legend_h, WHITE);

    for row in 0..grid.height {
        for col in 0..grid.width {
            let cell = grid.cell(col, row);
            let Some(label) = cell.label else { continue };
            let color = palette.color(label).ok_or_else(|| {
                let name = if label.0 < palette.class_set.len() {
                    palette.class_set.name(label).to_string()
                } else {
                    label.to_string()
                };
                DeduceError::MissingPalette(name)
            })?;
            let py = (grid.height - 1 - row) * opts.cell_px;
            img.fill_rect(col * opts.cell_px, py, opts.cell_px, opts.cell_px, color);
        }
    }

    if opts.legend {
        for (i, (name, color)) in legend.iter().enumerate() {
            let y = map_h + 2 + i * LEGEND_ROW;
            img.fill_rect(2, y, SWATCH, SWATCH, BLACK);
            img.fill_rect(3, y + 1, SWATCH - 2, SWATCH - 2, *color);
            img.draw_text(2 + SWATCH + 4, y + 1, name, BLACK);
        }
    }
    Ok(img)
}

/// Reads cell labels back from the map area of a rendered image by sampling block centres.
pub fn decode_cells(img: &RgbImage, grid_w: usize, grid_h: usize, cell_px: usize, palette: &Palette) -> Vec<Vec<Option<SceneLabel>>> {
    (0..grid_h)
        .map(|row| {
            (0..grid_w)
                .map(|col| {
                    let px = col * cell_px + cell_px / 2;
                    let py = (grid_h - 1 - row) * cell_px + cell_px / 2;
                    palette.label_of(img.get(px, py))
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: SceneLabel = SceneLabel(0);
    const B: SceneLabel = SceneLabel(1);
    const C: SceneLabel = SceneLabel(2);

    #[test]
    fn window_one_is_identity() {
        let seq = vec![A, B, C, A, B];
        assert_eq!(smooth_sequence(&seq, 1).unwrap(), seq);
    }

    #[test]
    fn isolated_outlier_is_removed() {
        assert_eq!(smooth_sequence(&[A, A, B, A, A], 3).unwrap(), vec![A; 5]);
    }

    #[test]
    fn unanimity_is_kept() {
        for w in [1, 3, 5, 9] {
            assert_eq!(smooth_sequence(&[C; 6], w).unwrap(), vec![C; 6]);
        }
    }

    #[test]
    fn smoothing_errors() {
        assert!(smooth_sequence(&[], 3).is_err());
        assert!(smooth_sequence(&[A], 2).is_err());
        assert!(smooth_sequence(&[A], 0).is_err());
    }

    #[test]
    fn tie_prefers_centre() {
        // window [B, A, C]: three-way tie, centre A wins
        assert_eq!(smooth_sequence(&[B, A, C], 3).unwrap()[1], A);
        // truncated window at the start [A, B]: tie, centre A
        assert_eq!(smooth_sequence(&[A, B], 3).unwrap(), vec![A, B]);
    }

    #[test]
    fn single_pose_stamps_a_disc() {
        let grid = rasterize(&[(Pose { x: 0.05, y: 0.05, t: 0.0 }, B)], 3, &RasterConfig::default()).unwrap();
        let c = grid.cell_at(0.05, 0.05).unwrap();
        assert_eq!((c.label, c.confidence, c.visit_count), (Some(B), 1.0, 1));
        assert_eq!(grid.width(), 11);
        // 0.5 m away along an axis is inside, diagonal corner is not
        assert_eq!(grid.cell_at(0.55, 0.05).unwrap().label, Some(B));
        assert_eq!(grid.cell_at(0.55, 0.55).unwrap().label, None);
    }

    #[test]
    fn majority_with_confidence() {
        let p = Pose { x: 1.0, y: 1.0, t: 0.0 };
        let posed = [(p, A), (p, A), (p, B), (p, A)];
        let cfg = RasterConfig { resolution: 0.1, stamp_radius: 0.0 };
        let grid = rasterize(&posed, 3, &cfg).unwrap();
        let c = grid.cell_at(1.0, 1.0).unwrap();
        assert_eq!(c.label, Some(A));
        assert!((c.confidence - 0.75).abs() < 1e-15);
        assert_eq!(c.visit_count, 4);
    }

    #[test]
    fn grid_grows_without_losing_cells() {
        let cfg = RasterConfig { resolution: 0.5, stamp_radius: 0.0 };
        let posed = [
            (Pose { x: 0.1, y: 0.1, t: 0.0 }, A),
            (Pose { x: -3.2, y: 2.0, t: 1.0 }, B),
            (Pose { x: 4.0, y: -7.9, t: 2.0 }, C),
        ];
        let grid = rasterize(&posed, 3, &cfg).unwrap();
        for (p, l) in &posed {
            assert_eq!(grid.cell_at(p.x, p.y).unwrap().label, Some(*l));
        }
        assert_eq!(grid.origin(), (-3.5, -8.0));
    }

    #[test]
    fn palette_rejects_duplicates_and_white() {
        let cs = ClassSet::new(["a", "b"]).unwrap();
        let dup = BTreeMap::from([(A, [1, 2, 3]), (B, [1, 2, 3])]);
        assert!(Palette::new(cs.clone(), dup).is_err());
        assert!(Palette::new(cs, BTreeMap::from([(A, WHITE)])).is_err());
    }

    #[test]
    fn default_palettes_are_distinct() {
        for cs in [ClassSet::home7(), ClassSet::office5()] {
            let p = Palette::default_for(&cs);
            let colors: Vec<Rgb> = cs.labels().map(|l| p.color(l).unwrap()).collect();
            let mut dedup = colors.clone();
            dedup.sort();
            dedup.dedup();
            assert_eq!(dedup.len(), colors.len());
            assert!(!colors.contains(&WHITE));
        }
        let office = Palette::default_for(&ClassSet::office5());
        assert_eq!(office.legend().len(), 6);
    }

    #[test]
    fn missing_palette_entry_is_reported() {
        let cs = ClassSet::new(["a", "b"]).unwrap();
        let palette = Palette::new(cs, BTreeMap::from([(A, [9, 9, 9])])).unwrap();
        let grid = rasterize(&[(Pose { x: 0.0, y: 0.0, t: 0.0 }, B)], 2, &RasterConfig::default()).unwrap();
        assert!(matches!(render(&grid, &palette, &RenderOptions::default()), Err(DeduceError::MissingPalette(n)) if n == "b"));
    }

    #[test]
    fn empty_grid_renders_white() {
        let grid = SemanticGrid::with_extent(0.1, 7, 0, 0, 6, 4).unwrap();
        let img = render(&grid, &Palette::default_for(&ClassSet::home7()), &RenderOptions { cell_px: 3, legend: false }).unwrap();
        assert_eq!((img.width(), img.height()), (18, 12));
        assert!(img.as_raw().iter().all(|b| *b == 255));
    }
}
