//! File formats, parameter sweeps, verification campaigns and the command
//! line front end for [`gridstore_core`].

pub mod campaign;
pub mod cli;
pub mod io;
pub mod sweep;
