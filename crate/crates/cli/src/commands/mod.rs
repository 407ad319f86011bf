pub mod convert;
pub mod decide;
pub mod histogram;
pub mod phantom;
pub mod split;

use std::path::Path;

use huwin_core::hu_norm::HuWindow;

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

/// Directory name as a patient key.
pub(crate) fn dir_key(path: &Path) -> String {
    path.file_name()
        .and_then(|n| n.to_str())
        .filter(|n| !n.is_empty() && *n != "." && *n != "..")
        .unwrap_or("series")
        .to_string()
}

/// A configured window, or a preset of that name.
pub(crate) fn find_window(cfg: &PipelineConfig, name: &str) -> CliResult<HuWindow> {
    let presets = HuWindow::presets();
    cfg.windows
        .iter()
        .chain(presets.iter())
        .find(|w| w.name().eq_ignore_ascii_case(name))
        .cloned()
        .ok_or_else(|| CliError::Usage(format!("unknown window {name:?}")))
}
