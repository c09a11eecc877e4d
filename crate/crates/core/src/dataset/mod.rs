//! Toy VQA-style datasets: types, generation, persistence and statistics.

mod generator;
mod io;
mod stats;
mod types;

pub use generator::{generate_toy_dataset, ShiftMode, ShiftSpec, ToyGenerator};
pub use io::{load_split, save_split, write_split, read_split, SCHEMA_VERSION};
pub use stats::{dataset_stats, DatasetStats};
pub use types::{AnswerSpace, Category, Instance, QuestionType, QuestionTypeTable, Split};
