//! Provenance stamped on every emitted report.

use std::io::{self, Write};

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    /// Hash of the result-affecting configuration.
    pub config_hash: String,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, seed: Option<u64>) -> Self {
        Self {
            tool: "utlab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config_hash.into(),
            seed,
        }
    }

    /// `# tool=utlab version=.. config=.. seed=..`, written as the first line
    /// of CSV reports (readers skip `#` comment lines).
    pub fn comment_line(&self) -> String {
        let seed = self.seed.map_or_else(|| "none".to_string(), |s| s.to_string());
        format!(
            "# tool={} version={} config={} seed={}",
            self.tool, self.version, self.config_hash, seed
        )
    }

    pub fn write_comment<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", self.comment_line())
    }
}
