//! Well-tempered metadynamics along a learned collective variable.

mod bias;
mod run;

pub use bias::{
    read_hills, write_hills, BiasState, Hill, MetadConfig, Skip, DEFAULT_BINS, GRID_MARGIN,
    HILL_CUTOFF,
};
pub use run::{merged_hills, run_metad, run_walkers, BiasedCv, MetadRun};
