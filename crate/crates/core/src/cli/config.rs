//! Flat `key = value` config files.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored and
//! keys may not repeat. Errors carry the 1-based line number.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil;

/// Parsed settings with the line each came from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    pub path: std::path::PathBuf,
    pub entries: BTreeMap<String, (String, usize)>,
}

impl ConfigFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(line_no, format!("expected key = value, found {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || !k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
                return Err(err(line_no, format!("invalid key {k:?}")));
            }
            if v.is_empty() {
                return Err(err(line_no, format!("{k} has no value")));
            }
            if let Some((_, first)) = entries.insert(k.to_string(), (v.to_string(), line_no)) {
                return Err(err(line_no, format!("{k} already set on line {first}")));
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fsutil::read_string(path)?, path)
    }

    /// Parses the value of `key` if present, reporting failures at its line.
    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|_| Error::Parse {
                path: self.path.clone(),
                line: *line,
                msg: format!("invalid value {v:?} for {key}"),
            }),
        }
    }

    /// Fails on the first key not in `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        match self.entries.iter().find(|(k, _)| !known.contains(&k.as_str())) {
            None => Ok(()),
            Some((k, (_, line))) => Err(Error::Parse {
                path: self.path.clone(),
                line: *line,
                msg: format!("unknown key {k}"),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let c = ConfigFile::parse("# header\n\nstage1.steps = 10  # short\nlr=0.5\n", Path::new("x.cfg")).unwrap();
        assert_eq!(c.get::<usize>("stage1.steps").unwrap(), Some(10));
        assert_eq!(c.get::<f64>("lr").unwrap(), Some(0.5));
        assert_eq!(c.get::<f64>("missing").unwrap(), None);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = ConfigFile::parse("a = 1\n\nnot a setting\n", Path::new("x.cfg")).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        let e = ConfigFile::parse("a = 1\na = 2\n", Path::new("x.cfg")).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        let c = ConfigFile::parse("a = 1\nb = zz\n", Path::new("x.cfg")).unwrap();
        assert!(matches!(c.get::<u32>("b").unwrap_err(), Error::Parse { line: 2, .. }));
        assert!(matches!(c.reject_unknown(&["a"]).unwrap_err(), Error::Parse { line: 2, .. }));
    }
}
