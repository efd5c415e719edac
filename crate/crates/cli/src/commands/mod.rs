pub mod fit;
pub mod plot_data;
pub mod power;
pub mod simulate;
