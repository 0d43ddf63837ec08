//! Finite populations, Monte Carlo replication, summaries and artifacts.

mod io;
mod population;
mod replicate;
mod summary;

pub use io::{
    histogram, load_records, read_records_csv, save_histogram, save_json, save_records, write_records_csv,
    HistogramRow, RECORD_COLUMNS,
};
pub use population::{
    generate_population, theory_variances, Link, PopulationSpec, PotentialOutcomeTable, TheoryVariances, TwoArmTheory,
};
pub use replicate::{run_replications, run_rerandomized, ReplicationConfig, ReplicationRecord, CRE};
pub use summary::{
    mc_mean, mc_ratio, mc_variance, summarize, GapSummary, KindSummary, McValue, Provenance, SchemeSummary, Summary,
    MIN_ACCEPTED, SCHEMA_VERSION,
};

/// Stream id reserved for population generation under a master seed.
pub const POPULATION_STREAM: u64 = u64::MAX;
