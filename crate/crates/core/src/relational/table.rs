//! Columnar table with per-column lineage.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Logical column type. Arrays are fixed-dimension float vectors packed
/// into a single column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataType {
    Int64,
    Float32,
    Str,
    /// Fixed-dimension float32 array; dimension must be > 0.
    FloatArray(usize),
}

impl DataType {
    /// Width of one value in float32 slots. Strings count as one slot;
    /// they only occur as categorical keys and one-hot inputs.
    pub fn slots(&self) -> usize {
        match self {
            DataType::Int64 | DataType::Float32 | DataType::Str => 1,
            DataType::FloatArray(d) => *d,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Int64(Vec<i64>),
    Float32(Vec<f32>),
    Str(Vec<String>),
    /// Row-major packed arrays: `data.len() == rows * dim`.
    FloatArray { dim: usize, data: Vec<f32> },
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Int64(v) => v.len(),
            ColumnData::Float32(v) => v.len(),
            ColumnData::Str(v) => v.len(),
            ColumnData::FloatArray { dim, data } => {
                if *dim == 0 {
                    0
                } else {
                    data.len() / dim
                }
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DataType {
        match self {
            ColumnData::Int64(_) => DataType::Int64,
            ColumnData::Float32(_) => DataType::Float32,
            ColumnData::Str(_) => DataType::Str,
            ColumnData::FloatArray { dim, .. } => DataType::FloatArray(*dim),
        }
    }

    /// Gather rows by index into a new column. Panics on out-of-range
    /// indices; callers produce indices from the same table.
    pub fn gather(&self, idx: &[usize]) -> ColumnData {
        match self {
            ColumnData::Int64(v) => ColumnData::Int64(idx.iter().map(|&i| v[i]).collect()),
            ColumnData::Float32(v) => ColumnData::Float32(idx.iter().map(|&i| v[i]).collect()),
            ColumnData::Str(v) => ColumnData::Str(idx.iter().map(|&i| v[i].clone()).collect()),
            ColumnData::FloatArray { dim, data } => {
                let d = *dim;
                let mut out = Vec::with_capacity(idx.len() * d);
                for &i in idx {
                    out.extend_from_slice(&data[i * d..(i + 1) * d]);
                }
                ColumnData::FloatArray { dim: d, data: out }
            }
        }
    }
}

/// Named, typed column. `lineage` names the leaf relation the column
/// originated from; joins preserve it.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub lineage: String,
    pub data: ColumnData,
}

impl Column {
    pub fn new(name: impl Into<String>, lineage: impl Into<String>, data: ColumnData) -> Self {
        Column {
            name: name.into(),
            lineage: lineage.into(),
            data,
        }
    }

    pub fn dtype(&self) -> DataType {
        self.data.dtype()
    }
}

/// Immutable columnar relation. All columns share the row count and
/// column names are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<Column>,
    pub row_count: usize,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: Vec<Column>) -> Result<Self> {
        let name = name.into();
        let row_count = columns.first().map(|c| c.data.len()).unwrap_or(0);
        for c in &columns {
            if c.data.len() != row_count {
                return Err(Error::SchemaMismatch(format!(
                    "column `{}` has {} rows, expected {}",
                    c.name,
                    c.data.len(),
                    row_count
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::SchemaMismatch(format!(
                    "duplicate column name `{}`",
                    c.name
                )));
            }
        }
        Ok(Table {
            name,
            columns,
            row_count,
        })
    }

    /// Empty table with the given schema; lineage set to the table name.
    pub fn empty(name: impl Into<String>, schema: &[(String, DataType)]) -> Self {
        let name = name.into();
        let columns = schema
            .iter()
            .map(|(n, t)| {
                let data = match t {
                    DataType::Int64 => ColumnData::Int64(vec![]),
                    DataType::Float32 => ColumnData::Float32(vec![]),
                    DataType::Str => ColumnData::Str(vec![]),
                    DataType::FloatArray(d) => ColumnData::FloatArray {
                        dim: *d,
                        data: vec![],
                    },
                };
                Column::new(n.clone(), name.clone(), data)
            })
            .collect();
        Table {
            name,
            columns,
            row_count: 0,
        }
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::UnknownColumn(format!("{}.{}", self.name, name)))
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}
