//! Artifact directory with fingerprinted, atomically renamed files.
//!
//! Every artifact starts with a `# fingerprint: <sha256>` header derived
//! from the producing parameters; loading with a different fingerprint
//! fails before any computation uses the data. Files are written to a
//! `.partial` sibling first and renamed on success, so an interrupted or
//! failed run leaves only `.partial` leftovers.

use rp4bp::{Error, Result};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

pub const SUBDIRS: &[&str] = &["families", "manifolds", "planet", "traces", "reports"];

pub fn fingerprint(canonical: &str) -> String {
    let mut h = Sha256::new();
    h.update(canonical.as_bytes());
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Shortest decimal representation that parses back to the same f64
/// (the standard library's default float formatting).
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

#[derive(Debug, Clone)]
pub struct ArtifactStore {
    root: PathBuf,
}

impl ArtifactStore {
    pub fn open(root: &Path) -> Result<Self> {
        for d in SUBDIRS {
            fs::create_dir_all(root.join(d))?;
        }
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.path(rel).exists()
    }

    /// Write header + body to `<rel>.partial`, then rename to `<rel>`.
    pub fn write(&self, rel: &str, fp: &str, body: &str) -> Result<PathBuf> {
        let full = self.path(rel);
        let partial = full.with_extension(format!(
            "{}.partial",
            full.extension().and_then(|e| e.to_str()).unwrap_or("dat")
        ));
        fs::write(&partial, format!("# fingerprint: {fp}\n{body}"))?;
        fs::rename(&partial, &full)?;
        Ok(full)
    }

    /// Keep a failed run's partial output next to the final name.
    pub fn write_partial(&self, rel: &str, fp: &str, body: &str) -> Result<PathBuf> {
        let partial = self.path(&format!("{rel}.partial"));
        fs::write(&partial, format!("# fingerprint: {fp}\n{body}"))?;
        Ok(partial)
    }

    /// Load an artifact body, failing loudly on a fingerprint mismatch.
    pub fn load(&self, rel: &str, expected_fp: &str) -> Result<String> {
        let full = self.path(rel);
        let text = fs::read_to_string(&full)?;
        let (head, body) = text
            .split_once('\n')
            .ok_or_else(|| Error::Domain(format!("artifact {rel} has no header")))?;
        let found = head
            .strip_prefix("# fingerprint: ")
            .ok_or_else(|| Error::Domain(format!("artifact {rel} has no fingerprint header")))?;
        if found != expected_fp {
            return Err(Error::Domain(format!(
                "artifact {rel} was produced under different parameters \
                 (fingerprint {found} != expected {expected_fp}); refusing to load"
            )));
        }
        Ok(body.to_string())
    }
}
