//! Line-oriented `key = value` text, optionally followed by a binary blob.
//!
//! Dataset files and checkpoints are a manifest, a line holding only `---`,
//! then raw little-endian data. Config files are a bare manifest.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

const BLOB_MARKER: &[u8] = b"---\n";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace, keeping first-insertion order.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn require(&self, key: &str, path: &Path) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::format(path, format!("missing key `{key}`")))
    }

    pub fn parse<T: FromStr>(&self, key: &str, path: &Path) -> Result<T> {
        let raw = self.require(key, path)?;
        raw.parse()
            .map_err(|_| Error::format(path, format!("bad value `{raw}` for `{key}`")))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    /// Blank lines and `#` comments are skipped. Repeated keys are an error.
    pub fn parse_text(text: &str, path: &Path) -> Result<Manifest> {
        let mut m = Manifest::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::format(path, format!("line {}: expected `key = value`", n + 1))
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::format(path, format!("line {}: empty key", n + 1)));
            }
            if m.get(k).is_some() {
                return Err(Error::format(path, format!("line {}: duplicate key `{k}`", n + 1)));
            }
            m.set(k, v.trim());
        }
        Ok(m)
    }

    pub fn write_with_blob(&self, path: &Path, blob: &[u8]) -> Result<()> {
        let mut bytes = self.to_text().into_bytes();
        bytes.extend_from_slice(BLOB_MARKER);
        bytes.extend_from_slice(blob);
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read_with_blob(path: &Path, what: &'static str) -> Result<(Manifest, Vec<u8>)> {
        let bytes = read_file(path, what)?;
        let split = find_marker(&bytes)
            .ok_or_else(|| Error::format(path, "missing `---` line after the manifest"))?;
        let text = std::str::from_utf8(&bytes[..split])
            .map_err(|_| Error::format(path, "manifest is not UTF-8"))?;
        let manifest = Manifest::parse_text(text, path)?;
        Ok((manifest, bytes[split + BLOB_MARKER.len()..].to_vec()))
    }
}

/// Read a whole file, mapping a missing file to [`Error::NotFound`].
pub fn read_file(path: &Path, what: &'static str) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound {
                what,
                path: path.to_path_buf(),
            }
        } else {
            Error::io(path, e)
        }
    })
}

fn find_marker(bytes: &[u8]) -> Option<usize> {
    if bytes.starts_with(BLOB_MARKER) {
        return Some(0);
    }
    bytes
        .windows(BLOB_MARKER.len() + 1)
        .position(|w| w[0] == b'\n' && &w[1..] == BLOB_MARKER)
        .map(|p| p + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip_and_errors() {
        let p = Path::new("x");
        let mut m = Manifest::new();
        m.set("a", 1);
        m.set("b", "two words");
        m.set("a", 3);
        let back = Manifest::parse_text(&m.to_text(), p).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.parse::<u32>("a", p).unwrap(), 3);
        assert!(Manifest::parse_text("novalue\n", p).is_err());
        assert!(Manifest::parse_text("a = 1\na = 2\n", p).is_err());
        assert!(back.parse::<u32>("b", p).is_err());
    }

    #[test]
    fn blob_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let mut m = Manifest::new();
        m.set("k", "v");
        // blob containing the marker itself must survive
        let blob = b"\x00\x01---\n\xff".to_vec();
        m.write_with_blob(&path, &blob).unwrap();
        let (m2, b2) = Manifest::read_with_blob(&path, "file").unwrap();
        assert_eq!((m2, b2), (m, blob));
        assert!(matches!(
            Manifest::read_with_blob(&dir.path().join("nope"), "file"),
            Err(Error::NotFound { .. })
        ));
    }
}
