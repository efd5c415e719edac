//! Synthetic two-view data with a controlled dependence between the latent
//! clusterings, and Monte Carlo power studies on top of it.

mod design;
mod power;

pub use design::{
    draw_view, sample_latent_pairs, sample_views, ComponentFamily, CouplingDesign, MeanCatalog, SimDesign,
    SimulatedData,
};
pub use power::{
    run_power_study, CellSummary, KFit, Method, NoiseFamily, PowerCell, PowerGrid, PowerRow, PowerSettings,
    PowerTable, ReplicateRecord,
};
