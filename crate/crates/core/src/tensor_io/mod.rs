//! Bit-exact matrix files and the model-dump bundle built on them.

mod dump;
mod matrix;

pub use dump::{
    load_dump, write_dump, ConstraintTag, LastLayer, ModelDump, SplitData, TaskSpec, Targets,
    MANIFEST_FILE, SCHEMA_VERSION,
};
pub use matrix::{
    encode_header, encode_matrix, read_any_matrix, read_matrix, write_matrix, AnyMatrix, DType,
    Element, Matrix, HEADER_LEN, MAGIC, VERSION,
};
