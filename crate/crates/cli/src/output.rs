use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::Context;

use crate::tasks::Artifacts;

/// Writes `contents` to a sibling temp file and renames it into place.
fn write_atomic(path: &Path, contents: &[u8]) -> anyhow::Result<()> {
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    f.write_all(contents)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn write_all(dir: &Path, a: &Artifacts) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut report = serde_json::to_string_pretty(&a.report)?;
    report.push('\n');
    write_atomic(&dir.join("report.json"), report.as_bytes())?;
    write_atomic(&dir.join("data.csv"), a.data_csv.as_bytes())?;
    write_atomic(&dir.join("summary.txt"), a.summary.as_bytes())?;
    for (name, bytes) in &a.extra {
        write_atomic(&dir.join(name), bytes)?;
    }
    Ok(())
}
