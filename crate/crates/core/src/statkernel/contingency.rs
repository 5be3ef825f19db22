use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::StatError;

/// Cross-tabulated counts of two categorical variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub row_variable: String,
    pub col_variable: String,
    pub row_levels: Vec<String>,
    pub col_levels: Vec<String>,
    /// `counts[i][j]` counts rows at `row_levels[i]` and `col_levels[j]`.
    pub counts: Vec<Vec<u64>>,
    pub row_totals: Vec<u64>,
    pub col_totals: Vec<u64>,
    pub grand_total: u64,
}

/// Cross-tabulate two equally long categorical columns over the rows where
/// both cells are present. Levels are ordered lexicographically.
pub fn contingency<R, C>(
    row_variable: &str,
    rows: &[Option<R>],
    col_variable: &str,
    cols: &[Option<C>],
) -> Result<ContingencyTable, StatError>
where
    R: AsRef<str>,
    C: AsRef<str>,
{
    if rows.len() != cols.len() {
        return Err(StatError::InvalidArgument(format!(
            "columns {row_variable:?} and {col_variable:?} differ in length ({} vs {})",
            rows.len(),
            cols.len()
        )));
    }
    let mut cells: BTreeMap<(&str, &str), u64> = BTreeMap::new();
    let mut row_set = BTreeMap::new();
    let mut col_set = BTreeMap::new();
    for (r, c) in rows.iter().zip(cols) {
        if let (Some(r), Some(c)) = (r, c) {
            let (r, c) = (r.as_ref(), c.as_ref());
            *cells.entry((r, c)).or_default() += 1;
            row_set.insert(r, ());
            col_set.insert(c, ());
        }
    }
    let row_levels: Vec<&str> = row_set.into_keys().collect();
    let col_levels: Vec<&str> = col_set.into_keys().collect();
    let counts: Vec<Vec<u64>> = row_levels
        .iter()
        .map(|r| col_levels.iter().map(|c| cells.get(&(*r, *c)).copied().unwrap_or(0)).collect())
        .collect();
    let row_totals: Vec<u64> = counts.iter().map(|row| row.iter().sum()).collect();
    let col_totals: Vec<u64> =
        (0..col_levels.len()).map(|j| counts.iter().map(|row| row[j]).sum()).collect();
    let grand_total = row_totals.iter().sum();
    Ok(ContingencyTable {
        row_variable: row_variable.to_owned(),
        col_variable: col_variable.to_owned(),
        row_levels: row_levels.into_iter().map(str::to_owned).collect(),
        col_levels: col_levels.into_iter().map(str::to_owned).collect(),
        counts,
        row_totals,
        col_totals,
        grand_total,
    })
}
