//! `key = value` text records used by config files and checkpoint headers.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{GtfmnError, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                GtfmnError::Config(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1))
            })?;
            let key = k.trim().to_owned();
            if entries.insert(key.clone(), v.trim().to_owned()).is_some() {
                return Err(GtfmnError::Config(format!("duplicate key `{key}`")));
            }
        }
        Ok(Self { entries })
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_owned(), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.entries
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| GtfmnError::Config(format!("`{key}` = {v:?}: {e}")))
            })
            .transpose()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.get(key)?
            .ok_or_else(|| GtfmnError::Config(format!("missing key `{key}`")))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

pub(crate) fn join_list<T: Display>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

pub(crate) fn parse_list<T: FromStr>(key: &str, text: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|e| GtfmnError::Config(format!("`{key}` item {s:?}: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_skips_comments() {
        let kv = KeyValues::parse("# hi\nscale = 2\n\nname=abc = d\n").unwrap();
        assert_eq!(kv.require::<usize>("scale").unwrap(), 2);
        assert_eq!(kv.get_str("name"), Some("abc = d"));
        assert!(kv.get::<usize>("missing").unwrap().is_none());
    }

    #[test]
    fn rejects_garbage() {
        assert!(KeyValues::parse("novalue").is_err());
        assert!(KeyValues::parse("a=1\na=2").is_err());
        let kv = KeyValues::parse("a = x").unwrap();
        assert!(kv.require::<f64>("a").is_err());
    }

    #[test]
    fn list_round_trip() {
        let v: Vec<usize> = parse_list("k", &join_list(&[3, 5, 7])).unwrap();
        assert_eq!(v, vec![3, 5, 7]);
    }
}
