//! Flat `key = value` run configuration.
//!
//! Config files are UTF-8 text: one `key = value` per line, `#` starts a
//! comment, blank lines are ignored. Keys may not repeat. Values read
//! through [`KeyReader`], which consumes recognized keys and rejects
//! whatever is left over, so a typo never passes silently. Every command
//! echoes its fully resolved settings — defaults included — back into its
//! output directory as `resolved.cfg` in the same format.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const RESOLVED_NAME: &str = "resolved.cfg";

/// Parses config text into a key-value map, rejecting repeated keys.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(at) => &raw[..at],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected `key = value`, found {raw:?}", i + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if map.insert(key.to_string(), value.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: key {key:?} appears twice", i + 1)));
        }
    }
    Ok(map)
}

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Renders sorted `key = value` lines, the inverse of [`parse_config`].
pub fn render_config(map: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    for (k, v) in map {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(v);
        out.push('\n');
    }
    out
}

pub fn write_resolved(dir: &Path, map: &BTreeMap<String, String>) -> Result<()> {
    fs::write(dir.join(RESOLVED_NAME), render_config(map))?;
    Ok(())
}

/// Consumes typed values out of a parsed config map. Every `take_*` call
/// removes its key; [`KeyReader::finish`] then rejects unrecognized
/// leftovers by name.
pub struct KeyReader {
    map: BTreeMap<String, String>,
}

impl KeyReader {
    pub fn new(map: BTreeMap<String, String>) -> Self {
        KeyReader { map }
    }

    pub fn take_raw(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    /// Parses `key` as a `T`, falling back to `default` when absent.
    pub fn take<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr + Display,
    {
        match self.map.remove(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::Config(format!("key {key:?}: cannot parse {raw:?}"))),
        }
    }

    /// Booleans accept `true`/`false` only.
    pub fn take_bool(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.map.remove(key) {
            None => Ok(default),
            Some(raw) => match raw.as_str() {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(Error::Config(format!("key {key:?}: expected true or false, found {raw:?}"))),
            },
        }
    }

    /// Errors on the first key nothing consumed.
    pub fn finish(self) -> Result<()> {
        if let Some(key) = self.map.keys().next() {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_blanks_and_padding() {
        let text = "# a comment\n\n count= 12 \nsize =64 # trailing note\nrho = 0.05\n";
        let map = parse_config(text).unwrap();
        assert_eq!(map.len(), 3);
        assert_eq!(map["count"], "12");
        assert_eq!(map["size"], "64");
        assert_eq!(map["rho"], "0.05");
    }

    #[test]
    fn rejects_malformed_lines_and_duplicates() {
        assert!(matches!(parse_config("just words\n"), Err(Error::Config(_))));
        assert!(matches!(parse_config("= 3\n"), Err(Error::Config(_))));
        assert!(matches!(parse_config("a = 1\na = 2\n"), Err(Error::Config(_))));
    }

    #[test]
    fn typed_reads_consume_keys_and_flag_leftovers() {
        let map = parse_config("count = 12\nrho = 0.25\neasy = true\nbogus = 1\n").unwrap();
        let mut r = KeyReader::new(map);
        assert_eq!(r.take("count", 99usize).unwrap(), 12);
        assert_eq!(r.take("missing", 7u64).unwrap(), 7);
        assert!((r.take("rho", 0.0f64).unwrap() - 0.25).abs() < 1e-12);
        assert!(r.take_bool("easy", false).unwrap());
        let err = r.finish();
        assert!(matches!(err, Err(Error::Config(ref m)) if m.contains("bogus")));
    }

    #[test]
    fn bad_values_name_the_key() {
        let mut r = KeyReader::new(parse_config("epochs = soon\n").unwrap());
        let err = r.take("epochs", 1usize);
        assert!(matches!(err, Err(Error::Config(ref m)) if m.contains("epochs")));
        let mut r = KeyReader::new(parse_config("easy = yes\n").unwrap());
        assert!(matches!(r.take_bool("easy", false), Err(Error::Config(_))));
    }

    #[test]
    fn rendering_round_trips() {
        let map = parse_config("b = 2\na = 1\nc = x y\n").unwrap();
        let text = render_config(&map);
        assert_eq!(text, "a = 1\nb = 2\nc = x y\n");
        assert_eq!(parse_config(&text).unwrap(), map);
    }
}
