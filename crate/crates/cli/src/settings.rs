//! Layered `key=value` settings: defaults < config file < `--config` < flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

pub struct Settings {
    values: BTreeMap<String, String>,
}

fn parse_pairs(text: &str, separator: char, origin: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for item in text.split(separator) {
        let item = item.split('#').next().unwrap_or("").trim();
        if item.is_empty() {
            continue;
        }
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{origin}: expected key=value, got `{item}`")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl Settings {
    /// Resolves settings for one subcommand. Every key must appear in
    /// `defaults`; anything else is rejected.
    pub fn resolve(
        defaults: &[(&str, String)],
        config_file: Option<&Path>,
        config: Option<&str>,
        flags: &[(&str, Option<String>)],
    ) -> Result<Settings, CliError> {
        let mut values: BTreeMap<String, String> =
            defaults.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        let mut layer = |pairs: Vec<(String, String)>, origin: &str| -> Result<(), CliError> {
            for (k, v) in pairs {
                match values.get_mut(&k) {
                    Some(slot) => *slot = v,
                    None => return Err(CliError::Usage(format!("{origin}: unknown setting `{k}`"))),
                }
            }
            Ok(())
        };
        if let Some(path) = config_file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
            layer(parse_pairs(&text, '\n', &path.display().to_string())?, "config file")?;
        }
        if let Some(c) = config {
            layer(parse_pairs(c, ',', "--config")?, "--config")?;
        }
        let explicit = flags
            .iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect();
        layer(explicit, "flag")?;
        Ok(Settings { values })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let raw = self
            .values
            .get(key)
            .ok_or_else(|| CliError::Usage(format!("missing setting `{key}`")))?;
        raw.parse()
            .map_err(|e| CliError::Usage(format!("invalid value `{raw}` for `{key}`: {e}")))
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// `Some(value.to_string())` for flags given on the command line.
pub fn flag<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_is_flags_over_config_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.cfg");
        std::fs::write(&file, "a=2\n# comment\nb=2\n").unwrap();
        let defaults = [("a", "1".to_string()), ("b", "1".to_string()), ("c", "1".to_string())];
        let s = Settings::resolve(&defaults, Some(&file), Some("b=3,c=3"), &[("c", Some("4".into()))]).unwrap();
        assert_eq!(s.get::<u32>("a").unwrap(), 2);
        assert_eq!(s.get::<u32>("b").unwrap(), 3);
        assert_eq!(s.get::<u32>("c").unwrap(), 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let defaults = [("a", "1".to_string())];
        assert!(Settings::resolve(&defaults, None, Some("z=1"), &[]).is_err());
        assert!(Settings::resolve(&defaults, None, Some("a"), &[]).is_err());
    }
}
