//! Network model and power-flow mathematics.

mod ac;
mod admittance;
mod agc;
mod dc;
mod network;
mod operating;
mod state;

pub use ac::{ac_solve, bus_admittance, AcOptions, AcSolution, AcSolver, BusSpec, PowerFlowSpec};
pub use admittance::{branch_admittance, branch_power, BranchAdmittance, BranchFlow};
pub use agc::{apply_agc, AgcDispatch, LimitViolation};
pub use dc::{dc_solve, susceptance_matrix, DcState, ReducedSusceptance};
pub use network::{Bus, BusId, End, Generator, Line, LineId, Network};
pub use operating::OperatingPoint;
pub use state::{bus_injection, bus_injections, PhasorState, Role};

pub(crate) use admittance::{admittance_unchecked, end_flow};
#[cfg(test)]
pub(crate) use network::testnets;
