//! Run manifests: everything needed to replay a simulation bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use hbt_core::tagstream::{DetectorModel, TagStream, CH1, CH2};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::format::Format;
use crate::fsio;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// `false` for a no-ion background stream.
    pub emissions: bool,
    pub duration_ps: u64,
    pub format: Format,
    /// File name of the stream, relative to the manifest.
    pub output: String,
    /// Git-style SHA-256 blob hash of the stream file.
    pub output_hash: String,
    pub tags_ch1: u64,
    pub tags_ch2: u64,
    /// Detector after calibration, for reference.
    pub resolved_detector: DetectorModel,
    pub config: RunConfig,
}

impl Manifest {
    #[allow(clippy::too_many_arguments)]
    pub fn for_stream(
        config: &RunConfig,
        detector: &DetectorModel,
        seed: u64,
        emissions: bool,
        format: Format,
        out: &Path,
        stream: &TagStream,
        bytes: &[u8],
    ) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: "simulate".into(),
            seed,
            emissions,
            duration_ps: stream.header.duration_ps,
            format,
            output: out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            output_hash: fsio::content_hash(bytes),
            tags_ch1: stream.count(CH1),
            tags_ch2: stream.count(CH2),
            resolved_detector: *detector,
            config: config.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fsio::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    /// Manifest path for a stream file: `<stream>.manifest.toml`.
    pub fn path_for(stream: &Path) -> std::path::PathBuf {
        let mut name = stream.as_os_str().to_owned();
        name.push(".manifest.toml");
        name.into()
    }
}
