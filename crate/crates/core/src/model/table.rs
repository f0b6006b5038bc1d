use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Dense conditional probability table: one row per parent configuration
/// (mixed radix over the parents, last parent fastest), one column per
/// state of the child.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct CptTable {
    columns: usize,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("table rows have inconsistent lengths")]
pub struct TableShapeError;

impl CptTable {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, TableShapeError> {
        let columns = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != columns) {
            return Err(TableShapeError);
        }
        Ok(CptTable { columns, values: rows.into_iter().flatten().collect() })
    }

    /// `rows` copies of the unit vector on `state`.
    pub fn degenerate(rows: usize, columns: usize, state: usize) -> Self {
        let mut values = alloc::vec![0.0; rows * columns];
        for r in 0..rows {
            values[r * columns + state] = 1.0;
        }
        CptTable { columns, values }
    }

    /// `rows` copies of the uniform distribution.
    pub fn uniform(rows: usize, columns: usize) -> Self {
        CptTable { columns, values: alloc::vec![1.0 / columns as f64; rows * columns] }
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn row_count(&self) -> usize {
        if self.columns == 0 {
            0
        } else {
            self.values.len() / self.columns
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.columns..(r + 1) * self.columns]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.columns..(r + 1) * self.columns]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.columns.max(1))
    }

    pub fn rows_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.values.chunks_mut(self.columns.max(1))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl TryFrom<Vec<Vec<f64>>> for CptTable {
    type Error = TableShapeError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        CptTable::from_rows(rows)
    }
}

impl From<CptTable> for Vec<Vec<f64>> {
    fn from(t: CptTable) -> Self {
        t.to_rows()
    }
}

/// CPT of a task `θ_i` given `(W_t, other parents)`.
///
/// Rows conditioned on the inactive phase live in `base`. An active phase
/// `w_j` has its own table only when `i ∈ I(w_j)`; for every other phase the
/// base rows are returned, so rows outside the task set are duplicates of
/// the `w_0` rows by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskCpt {
    pub base: CptTable,
    pub phases: BTreeMap<usize, CptTable>,
}

impl TaskCpt {
    pub fn new(base: CptTable) -> Self {
        TaskCpt { base, phases: BTreeMap::new() }
    }

    pub fn with_phase(mut self, phase: usize, table: CptTable) -> Self {
        self.phases.insert(phase, table);
        self
    }

    pub fn table(&self, phase: usize) -> &CptTable {
        self.phases.get(&phase).unwrap_or(&self.base)
    }

    pub fn row(&self, phase: usize, config: usize) -> &[f64] {
        self.table(phase).row(config)
    }

    /// Same shape, every row the unit vector on `state`.
    pub fn degenerate_like(&self, state: usize) -> Self {
        let force = |t: &CptTable| CptTable::degenerate(t.row_count(), t.columns(), state);
        TaskCpt { base: force(&self.base), phases: self.phases.iter().map(|(&j, t)| (j, force(t))).collect() }
    }

    /// Every stored table, the base first.
    pub fn tables(&self) -> impl Iterator<Item = (Option<usize>, &CptTable)> {
        core::iter::once((None, &self.base)).chain(self.phases.iter().map(|(&j, t)| (Some(j), t)))
    }

    pub fn tables_mut(&mut self) -> impl Iterator<Item = (Option<usize>, &mut CptTable)> {
        core::iter::once((None, &mut self.base)).chain(self.phases.iter_mut().map(|(&j, t)| (Some(j), t)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(CptTable::from_rows(vec![vec![0.5, 0.5], vec![1.0]]).is_err());
    }

    #[test]
    fn phases_outside_the_task_set_read_base_rows() {
        let base = CptTable::from_rows(vec![vec![0.9, 0.1], vec![0.4, 0.6]]).unwrap();
        let active = CptTable::from_rows(vec![vec![0.2, 0.8], vec![0.1, 0.9]]).unwrap();
        let cpt = TaskCpt::new(base.clone()).with_phase(2, active.clone());
        assert_eq!(cpt.row(0, 1), base.row(1));
        assert_eq!(cpt.row(1, 1), base.row(1));
        assert_eq!(cpt.row(2, 1), active.row(1));
        assert_eq!(cpt.row(3, 0), base.row(0));
    }

    #[test]
    fn degenerate_keeps_shape() {
        let base = CptTable::uniform(4, 3);
        let cpt = TaskCpt::new(base).with_phase(1, CptTable::uniform(4, 3)).degenerate_like(2);
        for (_, t) in cpt.tables() {
            assert_eq!(t.row_count(), 4);
            assert!(t.rows().all(|r| r == [0.0, 0.0, 1.0]));
        }
    }
}
