//! Dataset plumbing: canonical scenario JSON, the ETH/UCY text loader,
//! sliding-window scenario extraction, and a synthetic scenario generator.

pub mod ethucy;
pub mod json;
pub mod synth;
pub mod window;

pub use ethucy::{load_ethucy, ColumnOrder, EthucyDataset};
pub use json::{load_scenario, load_scenario_dir, save_scenario, scenario_to_json};
pub use synth::{synth_scenarios, AgentGroup, Archetype, SynthSpec};
pub use window::{window_scenarios, WindowOptions};
