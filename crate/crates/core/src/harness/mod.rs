//! Workload generation, engine races and reports.

pub mod gen;
pub mod race;
pub mod stream;

pub use gen::{adversarial_triangle, retail_query, retail_stream, KeyDist, Oumv, StreamSpec};
pub use race::{run_race, write_report, RaceError, RaceOptions, ReportRow, RunReport};
pub use stream::{Command, Stream};
