//! Random-walk propagation of score planes over a sparse affinity graph.

use crate::par::{self, Execution};
use crate::raster::{Plane, ScoreStack};
use crate::wcam::{Reader, Writer, EXT_SPARSE};
use crate::{Error, Result};

/// Symmetric CSR affinity matrix over grid cells, unit diagonal, values in (0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct SparseAffinity {
    width: usize,
    height: usize,
    offsets: Vec<usize>,
    cols: Vec<u32>,
    values: Vec<f32>,
}

fn check_csr(n: usize, offsets: &[usize], cols: &[u32]) -> Result<()> {
    if offsets.len() != n + 1 || offsets[0] != 0 || offsets[n] != cols.len() {
        return Err(Error::Validation("CSR offsets do not match the grid".into()));
    }
    for i in 0..n {
        let (a, b) = (offsets[i], offsets[i + 1]);
        if a > b {
            return Err(Error::Validation(format!("row {i} has decreasing offsets")));
        }
        let row = &cols[a..b];
        if row.windows(2).any(|w| w[0] >= w[1]) || row.last().is_some_and(|&c| c as usize >= n) {
            return Err(Error::Validation(format!("row {i} columns unsorted or out of range")));
        }
    }
    Ok(())
}

impl SparseAffinity {
    pub fn from_csr(width: usize, height: usize, offsets: Vec<usize>, cols: Vec<u32>, values: Vec<f32>) -> Result<Self> {
        let n = width * height;
        check_csr(n, &offsets, &cols)?;
        if values.len() != cols.len() {
            return Err(Error::Validation("CSR values and columns differ in length".into()));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(Error::Validation(format!("affinity {v} outside (0, 1]")));
        }
        let a = SparseAffinity {
            width,
            height,
            offsets,
            cols,
            values,
        };
        for i in 0..n {
            match a.get(i, i) {
                Some(v) if v == 1.0 => {}
                _ => return Err(Error::Validation(format!("row {i} lacks a unit diagonal"))),
            }
            let (cols, _) = a.row(i);
            if let Some(&j) = cols.iter().find(|&&j| a.get(j as usize, i).is_none()) {
                return Err(Error::Validation(format!("entry ({i}, {j}) has no transpose")));
            }
        }
        Ok(a)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f32]) {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        (&self.cols[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f32> {
        let (cols, vals) = self.row(i);
        cols.binary_search(&(j as u32)).ok().map(|k| vals[k])
    }

    /// Layout after the `EXT_SPARSE` header: `u8 kind` (0 = affinity), `u32 width,
    /// u32 height, u64 nnz`, then `cells + 1` u64 row offsets, `nnz` u32 columns and
    /// `nnz` f32 values.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut w = Writer::with_header(EXT_SPARSE);
        w.u8(0);
        w.dim(self.width)?;
        w.dim(self.height)?;
        w.u64(self.nnz() as u64);
        for &o in &self.offsets {
            w.u64(o as u64);
        }
        for &c in &self.cols {
            w.u32(c);
        }
        for &v in &self.values {
            w.f32(v);
        }
        Ok(w.finish())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (mut r, kind) = Reader::open(bytes)?;
        let sub = if kind == EXT_SPARSE { r.u8()? } else { u8::MAX };
        if sub != 0 {
            return Err(Error::format(5, "expected a sparse affinity matrix"));
        }
        let width = r.u32()? as usize;
        let height = r.u32()? as usize;
        let nnz = r.u64()? as usize;
        let at = r.offset();
        let cells = width
            .checked_mul(height)
            .and_then(|n| n.checked_add(1))
            .ok_or_else(|| Error::format(at, "dimension overflow"))?;
        r.payload_len(&[cells], 8)?;
        let offsets = (0..cells).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let n = r.payload_len(&[nnz], 4)?;
        let cols = r.u32s(n / 4)?;
        let n = r.payload_len(&[nnz], 4)?;
        let values = r.f32s(n / 4)?;
        r.finish()?;
        SparseAffinity::from_csr(width, height, offsets, cols, values).map_err(|e| Error::format(at, e.to_string()))
    }
}

/// Random-walk hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WalkConfig {
    /// Elementwise power applied to affinities, >= 1.
    pub beta: f64,
    /// Number of transition applications.
    pub iterations: usize,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            beta: 8.0,
            iterations: 16,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 1.0 && self.beta.is_finite()) {
            return Err(Error::arg(format!("beta must be >= 1, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Row-stochastic transition matrix sharing the affinity's sparsity pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseTransition {
    width: usize,
    height: usize,
    offsets: Vec<usize>,
    cols: Vec<u32>,
    values: Vec<f64>,
}

impl SparseTransition {
    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        (&self.cols[a..b], &self.values[a..b])
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).1.iter().sum()
    }
}

pub fn build_transition(aff: &SparseAffinity, beta: f64) -> Result<SparseTransition> {
    build_transition_with(Execution::default(), aff, beta)
}

/// `T(i, j) = W(i, j)^beta / sum_k W(i, k)^beta`, with 64-bit row sums.
pub fn build_transition_with(exec: Execution, aff: &SparseAffinity, beta: f64) -> Result<SparseTransition> {
    WalkConfig { beta, iterations: 0 }.validate()?;
    let rows = par::map_range(exec, aff.cells(), |i| {
        let (_, vals) = aff.row(i);
        let powered: Vec<f64> = vals.iter().map(|&v| (v as f64).powf(beta)).collect();
        let sum: f64 = powered.iter().sum();
        (sum, powered)
    });
    let mut values = Vec::with_capacity(aff.nnz());
    for (i, (sum, powered)) in rows.into_iter().enumerate() {
        if !(sum > 0.0) {
            return Err(Error::Internal(format!("transition row {i} is empty")));
        }
        values.extend(powered.into_iter().map(|v| v / sum));
    }
    Ok(SparseTransition {
        width: aff.width,
        height: aff.height,
        offsets: aff.offsets.clone(),
        cols: aff.cols.clone(),
        values,
    })
}

pub fn propagate(t: &SparseTransition, plane: &Plane, iterations: usize) -> Result<Plane> {
    propagate_with(Execution::default(), t, plane, iterations)
}

/// Applies `plane <- T * plane` `iterations` times. Intermediate vectors stay in f64
/// and every output element is owned by one row, so results are independent of the
/// execution strategy.
pub fn propagate_with(exec: Execution, t: &SparseTransition, plane: &Plane, iterations: usize) -> Result<Plane> {
    if (plane.width(), plane.height()) != (t.width, t.height) {
        return Err(Error::arg(format!(
            "plane {}x{} does not match transition grid {}x{}",
            plane.width(),
            plane.height(),
            t.width,
            t.height
        )));
    }
    if iterations == 0 {
        return Ok(plane.clone());
    }
    let mut cur: Vec<f64> = plane.data().iter().map(|&v| v as f64).collect();
    let mut next = vec![0.0f64; cur.len()];
    let rows_per_chunk = 256;
    for _ in 0..iterations {
        let src = &cur;
        par::for_each_chunk_mut(exec, &mut next, rows_per_chunk, |chunk, dst| {
            let base = chunk * rows_per_chunk;
            for (k, out) in dst.iter_mut().enumerate() {
                let (cols, vals) = t.row(base + k);
                *out = cols.iter().zip(vals).map(|(&j, &v)| v * src[j as usize]).sum();
            }
        });
        std::mem::swap(&mut cur, &mut next);
    }
    Plane::new(plane.width(), plane.height(), cur.into_iter().map(|v| v as f32).collect())
}

/// Propagates every class plane and the background plane with the same walk.
pub fn propagate_stack(t: &SparseTransition, stack: &ScoreStack, bg: &Plane, cfg: &WalkConfig) -> Result<(ScoreStack, Plane)> {
    cfg.validate()?;
    if (stack.width(), stack.height()) != (t.width, t.height) {
        return Err(Error::arg("score stack does not match the transition grid"));
    }
    let planes = (0..stack.num_classes())
        .map(|c| propagate(t, &stack.plane_owned(c), cfg.iterations))
        .collect::<Result<Vec<_>>>()?;
    let bg = propagate(t, bg, cfg.iterations)?;
    Ok((ScoreStack::from_planes(stack.classes().to_vec(), planes)?, bg))
}
