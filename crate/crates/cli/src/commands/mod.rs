pub mod evaluate;
pub mod stats;
pub mod sweep;
pub mod train;
pub mod translate;

use std::path::Path;

use anyhow::Context;

pub(crate) fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}
