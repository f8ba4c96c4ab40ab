//! Synthetic workloads and trace files.

pub mod format;
pub mod gen;

pub use format::{dump_text, read_trace, write_trace, TraceReader, TraceWriter};
pub use gen::{histogram_preset, interleave, GeneratorKind, GeneratorSpec, TraceGenerator};
