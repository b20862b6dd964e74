//! Resolved command settings: built-in defaults, overridden by a flat
//! `key = value` config file, overridden by command-line flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lunggan_core::{Error, Result};

/// Where a setting's value came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Default,
    ConfigFile,
    Flag,
}

#[derive(Clone, Debug)]
pub struct Settings {
    values: BTreeMap<String, (String, Origin)>,
}

/// Parses `key = value` lines; `#` starts a comment, `[section]` headers
/// prefix the following keys with `section.`.
pub fn parse_config(text: &str, source: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut section = String::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = format!("{}.", name.trim());
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::config(
                format!("{}:{}", source.display(), n + 1),
                format!("expected `key = value`, got {line:?}"),
            )
        })?;
        out.push((format!("{section}{}", k.trim()), v.trim().to_string()));
    }
    Ok(out)
}

impl Settings {
    /// `defaults` lists every key the command understands; anything else in
    /// the config file or the flags is rejected, naming the key.
    pub fn resolve(
        defaults: &[(&str, &str)],
        config: Option<&Path>,
        flags: &[(String, String)],
    ) -> Result<Self> {
        let mut values: BTreeMap<String, (String, Origin)> = defaults
            .iter()
            .map(|(k, v)| (k.to_string(), (v.to_string(), Origin::Default)))
            .collect();
        let mut apply = |k: String, v: String, origin: Origin| match values.get_mut(&k) {
            Some(slot) => {
                *slot = (v, origin);
                Ok(())
            }
            None => Err(Error::config(k, "unknown setting for this command")),
        };
        if let Some(path) = config {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (k, v) in parse_config(&text, path)? {
                apply(k, v, Origin::ConfigFile)?;
            }
        }
        for (k, v) in flags {
            apply(k.clone(), v.clone(), Origin::Flag)?;
        }
        Ok(Self { values })
    }

    pub fn raw(&self, key: &str) -> &str {
        &self
            .values
            .get(key)
            .unwrap_or_else(|| panic!("setting {key} is not declared"))
            .0
    }

    pub fn origin(&self, key: &str) -> Origin {
        self.values[key].1
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e: T::Err| Error::config(key, format!("cannot parse {raw:?}: {e}")))
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            "true" | "yes" | "1" | "on" => Ok(true),
            "false" | "no" | "0" | "off" => Ok(false),
            other => Err(Error::config(key, format!("expected true or false, got {other:?}"))),
        }
    }

    /// Empty string means unset.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.raw(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key).ok_or_else(|| Error::config(key, "required"))
    }

    /// Comma-separated list; empty means none.
    pub fn list(&self, key: &str) -> Vec<String> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, (v, _))| (k.as_str(), v.as_str()))
    }

    /// The resolved settings in config-file syntax, sorted by key.
    /// Every key as `key = value  # origin`; parses back with [`parse_config`].
    pub fn to_config_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.iter() {
            let origin = match self.origin(k) {
                Origin::Default => "default",
                Origin::ConfigFile => "config",
                Origin::Flag => "flag",
            };
            let _ = writeln!(s, "{k} = {v}  # {origin}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_comments() {
        let text = "seed = 4 # run seed\n[training]\nepochs = 3\n\n# note\nloss=standard\n";
        let kv = parse_config(text, Path::new("c")).unwrap();
        assert_eq!(
            kv,
            vec![
                ("seed".into(), "4".into()),
                ("training.epochs".into(), "3".into()),
                ("training.loss".into(), "standard".into())
            ]
        );
        assert!(parse_config("oops", Path::new("c")).is_err());
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = Settings::resolve(&[("a", "1")], None, &[("b".into(), "2".into())]).unwrap_err();
        assert!(matches!(err, Error::Config { key, .. } if key == "b"));
    }
}
