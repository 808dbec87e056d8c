//! On-disk policy cache.
//!
//! File layout (all little-endian):
//!
//! | field            | type            |
//! |------------------|-----------------|
//! | magic `CRPOL001` | 8 bytes         |
//! | grid hash        | u64             |
//! | goal x, goal y   | f64, f64        |
//! | n (actions)      | u32             |
//! | tol              | f64             |
//! | origin x, y      | f64, f64        |
//! | cell size        | f64             |
//! | width, height    | u32, u32        |
//! | goal cell        | u32             |
//! | iterations       | u32             |
//! | converged        | u8              |
//! | cost_to_go       | f64 × cells     |
//! | best_action      | u16 × cells     |

use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{value_iteration, ActionSet, PolicyError, PolicyField};
use crate::geom::Vec2;
use crate::scenario::{CostGrid, GridHeader};

const MAGIC: &[u8; 8] = b"CRPOL001";

pub fn encode_policy(field: &PolicyField) -> Vec<u8> {
    let cells = field.cost_to_go.len();
    let mut out = Vec::with_capacity(96 + 10 * cells);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&field.grid_hash.to_le_bytes());
    out.extend_from_slice(&field.goal.x.to_le_bytes());
    out.extend_from_slice(&field.goal.y.to_le_bytes());
    out.extend_from_slice(&(field.actions.len() as u32).to_le_bytes());
    out.extend_from_slice(&field.tol.to_le_bytes());
    out.extend_from_slice(&field.header.origin.x.to_le_bytes());
    out.extend_from_slice(&field.header.origin.y.to_le_bytes());
    out.extend_from_slice(&field.header.cell_size.to_le_bytes());
    out.extend_from_slice(&(field.header.width as u32).to_le_bytes());
    out.extend_from_slice(&(field.header.height as u32).to_le_bytes());
    out.extend_from_slice(&(field.goal_cell as u32).to_le_bytes());
    out.extend_from_slice(&(field.iterations as u32).to_le_bytes());
    out.push(field.converged as u8);
    for v in &field.cost_to_go {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for a in &field.best_action {
        out.extend_from_slice(&a.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], PolicyError> {
        let end = self.pos + N;
        let slice = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| PolicyError::Cache("truncated file".into()))?;
        self.pos = end;
        Ok(slice.try_into().unwrap())
    }

    fn f64(&mut self) -> Result<f64, PolicyError> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn u32(&mut self) -> Result<u32, PolicyError> {
        Ok(u32::from_le_bytes(self.take()?))
    }
}

pub fn decode_policy(bytes: &[u8]) -> Result<PolicyField, PolicyError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if &r.take::<8>()? != MAGIC {
        return Err(PolicyError::Cache("bad magic".into()));
    }
    let grid_hash = u64::from_le_bytes(r.take()?);
    let goal = Vec2::new(r.f64()?, r.f64()?);
    let n = r.u32()? as usize;
    let tol = r.f64()?;
    let origin = Vec2::new(r.f64()?, r.f64()?);
    let cell_size = r.f64()?;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let goal_cell = r.u32()? as usize;
    let iterations = r.u32()? as usize;
    let converged = r.take::<1>()?[0] != 0;
    let cells = width * height;
    if goal_cell >= cells {
        return Err(PolicyError::Cache("goal cell out of range".into()));
    }
    let cost_to_go = (0..cells).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    let best_action = (0..cells)
        .map(|_| r.take::<2>().map(u16::from_le_bytes))
        .collect::<Result<Vec<_>, _>>()?;
    if r.pos != bytes.len() {
        return Err(PolicyError::Cache("trailing bytes".into()));
    }
    Ok(PolicyField {
        goal,
        goal_cell,
        header: GridHeader {
            origin,
            cell_size,
            width,
            height,
        },
        grid_hash,
        tol,
        iterations,
        converged,
        actions: ActionSet::new(n)?,
        cost_to_go,
        best_action,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Built,
}

/// Directory of policy files keyed by grid contents, goal and solver settings.
#[derive(Debug, Clone)]
pub struct PolicyCache {
    dir: PathBuf,
}

impl PolicyCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, grid: &CostGrid, goal: Vec2, n: usize, tol: f64) -> PathBuf {
        let mut h = Sha256::new();
        h.update(goal.x.to_le_bytes());
        h.update(goal.y.to_le_bytes());
        h.update((n as u64).to_le_bytes());
        h.update(tol.to_le_bytes());
        let key = u64::from_le_bytes(h.finalize()[..8].try_into().unwrap());
        self.dir
            .join(format!("policy-{:016x}-{key:016x}.bin", grid.content_hash()))
    }

    /// Returns the cached field when its header matches, otherwise runs
    /// value iteration and writes the result atomically.
    pub fn load_or_build(
        &self,
        grid: &CostGrid,
        goal: Vec2,
        n: usize,
        tol: f64,
        max_iter: usize,
    ) -> Result<(PolicyField, CacheStatus), PolicyError> {
        let path = self.path_for(grid, goal, n, tol);
        if let Ok(bytes) = std::fs::read(&path) {
            if let Ok(field) = decode_policy(&bytes) {
                if field.grid_hash == grid.content_hash()
                    && field.goal == goal
                    && field.actions.len() == n
                    && field.tol == tol
                {
                    return Ok((field, CacheStatus::Hit));
                }
            }
        }
        let field = value_iteration(grid, goal, &ActionSet::new(n)?, tol, max_iter)?;
        std::fs::create_dir_all(&self.dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(&encode_policy(&field))?;
        tmp.persist(&path).map_err(|e| PolicyError::Io(e.error))?;
        Ok((field, CacheStatus::Built))
    }
}
