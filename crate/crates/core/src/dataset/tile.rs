//! Row-major tiling of large rasters into fixed-size patches and back.

use crate::raster::{Raster, RasterData, ScoreStack};
use crate::{Error, Result};

pub const DEFAULT_TILE: usize = 306;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tile {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    /// Set when the tile was shrunk to fit the source edge.
    pub clamped: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileGrid {
    pub width: usize,
    pub height: usize,
    pub size: usize,
    pub rows: usize,
    pub cols: usize,
    pub tiles: Vec<Tile>,
}

impl TileGrid {
    /// Edge tiles that would overhang the source are shrunk, not padded.
    pub fn new(width: usize, height: usize, size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::arg("tile size must be >= 1"));
        }
        if width == 0 || height == 0 {
            return Err(Error::arg("cannot tile an empty raster"));
        }
        let (rows, cols) = (height.div_ceil(size), width.div_ceil(size));
        let mut tiles = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let (x, y) = (c * size, r * size);
                let (w, h) = (size.min(width - x), size.min(height - y));
                tiles.push(Tile {
                    x,
                    y,
                    width: w,
                    height: h,
                    clamped: w < size || h < size,
                });
            }
        }
        Ok(TileGrid {
            width,
            height,
            size,
            rows,
            cols,
            tiles,
        })
    }

    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    pub fn is_exact(&self) -> bool {
        self.tiles.iter().all(|t| !t.clamped)
    }
}

pub fn tile(raster: &Raster, size: usize) -> Result<(TileGrid, Vec<Raster>)> {
    let grid = TileGrid::new(raster.width(), raster.height(), size)?;
    let tiles = grid
        .tiles
        .iter()
        .map(|t| raster.crop(t.x, t.y, t.width, t.height))
        .collect::<Result<Vec<_>>>()?;
    Ok((grid, tiles))
}

/// Crops every class plane of `stack` to `t`.
pub fn crop_stack(stack: &ScoreStack, t: &Tile) -> Result<ScoreStack> {
    if t.x + t.width > stack.width() || t.y + t.height > stack.height() {
        return Err(Error::arg("tile lies outside the score stack"));
    }
    let mut data = Vec::with_capacity(stack.num_classes() * t.width * t.height);
    for plane in stack.planes() {
        for row in t.y..t.y + t.height {
            let start = row * stack.width() + t.x;
            data.extend_from_slice(&plane[start..start + t.width]);
        }
    }
    ScoreStack::new(t.width, t.height, stack.classes().to_vec(), data)
}

/// Reassembles tiles produced by [`tile`] for `grid`.
pub fn stitch(grid: &TileGrid, tiles: &[Raster]) -> Result<Raster> {
    if tiles.len() != grid.len() {
        return Err(Error::arg(format!(
            "{} tiles for a {}x{} grid",
            tiles.len(),
            grid.rows,
            grid.cols
        )));
    }
    let channels = tiles[0].channels();
    for (t, r) in grid.tiles.iter().zip(tiles) {
        if (r.width(), r.height(), r.channels()) != (t.width, t.height, channels) {
            return Err(Error::arg(format!("tile at ({}, {}) has the wrong shape", t.x, t.y)));
        }
    }
    fn paste<T: Copy + Default>(grid: &TileGrid, c: usize, parts: Vec<&[T]>) -> Vec<T> {
        let mut out = vec![T::default(); grid.width * grid.height * c];
        for (t, src) in grid.tiles.iter().zip(parts) {
            for row in 0..t.height {
                let dst = ((t.y + row) * grid.width + t.x) * c;
                out[dst..dst + t.width * c].copy_from_slice(&src[row * t.width * c..(row + 1) * t.width * c]);
            }
        }
        out
    }
    let data = match tiles[0].data() {
        RasterData::U8(_) => RasterData::U8(paste(
            grid,
            channels,
            tiles
                .iter()
                .map(|r| r.as_u8().ok_or_else(|| Error::arg("tiles mix sample types")))
                .collect::<Result<_>>()?,
        )),
        RasterData::F32(_) => RasterData::F32(paste(
            grid,
            channels,
            tiles
                .iter()
                .map(|r| match r.data() {
                    RasterData::F32(v) => Ok(v.as_slice()),
                    RasterData::U8(_) => Err(Error::arg("tiles mix sample types")),
                })
                .collect::<Result<_>>()?,
        )),
    };
    Raster::new(grid.width, grid.height, channels, data)
}
