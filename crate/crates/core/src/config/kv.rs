use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A parsed `key = value` document with optional `[section]` headers.
///
/// Keys before the first header live in the unnamed section `""`. `#`
/// starts a comment. Duplicate keys within a section are rejected.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvDoc {
    sections: Vec<(String, Vec<(String, String)>)>,
}

impl KvDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = KvDoc::default();
        let mut current = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| {
                    Error::Config(format!("line {lineno}: unterminated section header `{line}`"))
                })?;
                current = name.trim().to_string();
                doc.section_mut(&current);
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {lineno}: expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Config(format!("line {lineno}: empty key")));
            }
            let sec = doc.section_mut(&current);
            if sec.iter().any(|(key, _)| key == k) {
                return Err(Error::Config(format!("line {lineno}: duplicate key `{k}`")));
            }
            sec.push((k.to_string(), unquote(v).to_string()));
        }
        Ok(doc)
    }

    fn section_mut(&mut self, name: &str) -> &mut Vec<(String, String)> {
        if let Some(i) = self.sections.iter().position(|(n, _)| n == name) {
            return &mut self.sections[i].1;
        }
        self.sections.push((name.to_string(), Vec::new()));
        &mut self.sections.last_mut().expect("just pushed").1
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl ToString) {
        let sec = self.section_mut(section);
        let value = value.to_string();
        match sec.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => sec.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections
            .iter()
            .find(|(n, _)| n == section)?
            .1
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn parsed<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.get(section, key)
            .map(|v| {
                v.parse::<T>().map_err(|e| {
                    Error::Config(format!("{}: invalid value `{v}`: {e}", display_key(section, key)))
                })
            })
            .transpose()
    }

    pub fn require<T: FromStr>(&self, section: &str, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.parsed(section, key)?
            .ok_or_else(|| Error::Config(format!("missing key {}", display_key(section, key))))
    }

    pub fn sections(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(n, _)| n.as_str())
    }

    pub fn keys<'a>(&'a self, section: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.sections
            .iter()
            .filter(move |(n, _)| n == section)
            .flat_map(|(_, kv)| kv.iter().map(|(k, _)| k.as_str()))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (name, kv) in &self.sections {
            if !name.is_empty() {
                if !s.is_empty() {
                    s.push('\n');
                }
                let _ = writeln!(s, "[{name}]");
            }
            for (k, v) in kv {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        s
    }
}

fn unquote(v: &str) -> &str {
    v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v)
}

fn display_key(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let doc = KvDoc::parse("a = 1\n# note\n[model]\nd_model = 32 # small\nname = \"x y\"\n").unwrap();
        assert_eq!(doc.get("", "a"), Some("1"));
        assert_eq!(doc.require::<usize>("model", "d_model").unwrap(), 32);
        assert_eq!(doc.get("model", "name"), Some("x y"));
        assert_eq!(doc.parsed::<f64>("model", "missing").unwrap(), None);
        assert!(doc.require::<f64>("model", "missing").is_err());
        assert!(doc.require::<usize>("model", "name").is_err());
    }

    #[test]
    fn rejects_garbage() {
        assert!(KvDoc::parse("just words").is_err());
        assert!(KvDoc::parse("[open").is_err());
        assert!(KvDoc::parse("a = 1\na = 2").is_err());
        assert!(KvDoc::parse(" = 2").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut doc = KvDoc::default();
        doc.set("", "seed", 3);
        doc.set("train", "lr", 0.001);
        doc.set("train", "lr", 0.002);
        let back = KvDoc::parse(&doc.to_text()).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.get("train", "lr"), Some("0.002"));
    }
}
