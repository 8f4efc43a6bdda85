//! Immutable columnar tables, equi-joins with lineage tracking, and
//! histogram statistics for cardinality estimation.

pub(crate) mod csv_io;
pub(crate) mod histogram;
pub(crate) mod join;
pub(crate) mod table;

pub use csv_io::{load_csv, load_csv_named, write_csv};
pub use histogram::{build_histogram, estimate_join_cardinality, Histogram, DEFAULT_BUCKETS};
pub use join::{hash_join, JoinOptions};
pub use table::{Column, ColumnData, DataType, Table};
