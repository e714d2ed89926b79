//! File formats, run configuration and the subcommand implementations
//! behind the `neuroalign` binary.

mod commands;
mod config;
mod data;
mod manifest;
mod pixmap;
mod tensorfile;

pub use commands::{
    cmd_bands, cmd_blur, cmd_eval, cmd_gradcheck, cmd_synth, cmd_train, write_report, Globals, QuerySource,
};
pub use config::{BandSettings, RunConfig};
pub use data::{param_path, read_dataset, read_params, write_dataset, write_params};
pub use manifest::{sha256_hex, Manifest, ManifestEntry, OutDir, MANIFEST_FILE};
pub use pixmap::{
    decode_p5, decode_p6, dequantize, encode_p5, encode_p6, quantize, read_p5, read_p6, write_p5, write_p6,
};
pub use tensorfile::{decode_tensor, encode_tensor, read_tensor, write_tensor, DTYPE_F32, FORMAT_VERSION, MAGIC};

use crate::error::Error;

/// Process exit status for a failed command: divergence has its own code
/// so scripts can tell it apart from bad input.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Diverged { .. } => 3,
        _ => 1,
    }
}
