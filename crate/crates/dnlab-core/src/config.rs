//! Structured key=value text documents used for conductivity descriptors and
//! experiment configurations.
//!
//! Grammar: one `key=value` pair per line; blank lines and lines starting with
//! `#` are ignored. List values use brackets: `radii=[0.81,0.9]`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KvDoc {
    pairs: Vec<(String, String)>,
}

impl KvDoc {
    pub fn parse(text: &str) -> Result<KvDoc> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected key=value, got {raw:?}",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            if pairs.iter().any(|(k, _)| *k == key) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {key:?}",
                    lineno + 1
                )));
            }
            pairs.push((key, value.trim().to_string()));
        }
        Ok(KvDoc { pairs })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing required key {key:?}")))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|(k, _)| k.as_str())
    }

    /// Rejects keys that are neither listed in `allowed` nor start with one of
    /// `allowed_prefixes`; catches typos so invalid configs fail whole.
    pub fn check_known(&self, allowed: &[&str], allowed_prefixes: &[&str]) -> Result<()> {
        for key in self.keys() {
            let known =
                allowed.contains(&key) || allowed_prefixes.iter().any(|p| key.starts_with(p));
            if !known {
                return Err(Error::Config(format!("unknown key {key:?}")));
            }
        }
        Ok(())
    }

    /// Sub-document of all keys under `prefix.` with the prefix stripped.
    pub fn scoped(&self, prefix: &str) -> KvDoc {
        let want = format!("{prefix}.");
        KvDoc {
            pairs: self
                .pairs
                .iter()
                .filter_map(|(k, v)| {
                    k.strip_prefix(&want)
                        .map(|rest| (rest.to_string(), v.clone()))
                })
                .collect(),
        }
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key).map(|v| parse_f64(key, v)).transpose()
    }

    pub fn require_f64(&self, key: &str) -> Result<f64> {
        parse_f64(key, self.require(key)?)
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.get(key)
            .map(|v| {
                v.parse::<usize>()
                    .map_err(|_| Error::Config(format!("key {key:?}: cannot parse integer {v:?}")))
            })
            .transpose()
    }

    pub fn require_usize(&self, key: &str) -> Result<usize> {
        self.get_usize(key)?
            .ok_or_else(|| Error::Config(format!("missing required key {key:?}")))
    }

    pub fn get_list_f64(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key)
            .map(|v| {
                parse_list(key, v)?
                    .iter()
                    .map(|item| parse_f64(key, item))
                    .collect::<Result<Vec<f64>>>()
            })
            .transpose()
    }

    pub fn require_list_f64(&self, key: &str) -> Result<Vec<f64>> {
        self.get_list_f64(key)?
            .ok_or_else(|| Error::Config(format!("missing required key {key:?}")))
    }

    pub fn get_list_usize(&self, key: &str) -> Result<Option<Vec<usize>>> {
        self.get(key)
            .map(|v| {
                parse_list(key, v)?
                    .iter()
                    .map(|item| {
                        item.parse::<usize>().map_err(|_| {
                            Error::Config(format!("key {key:?}: cannot parse integer {item:?}"))
                        })
                    })
                    .collect::<Result<Vec<usize>>>()
            })
            .transpose()
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .map_err(|_| Error::Config(format!("key {key:?}: cannot parse number {v:?}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<String>> {
    let inner = v
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| Error::Config(format!("key {key:?}: expected [..] list, got {v:?}")))?;
    let inner = inner.trim();
    if inner.is_empty() {
        return Ok(Vec::new());
    }
    Ok(inner.split(',').map(|s| s.trim().to_string()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_comments_and_lists() {
        let doc = KvDoc::parse(
            "# comment\nkind=radial-layered\nradii=[0.81, 0.9]\nvalues=[1.0,2.0,1.0]\n\nn=4\n",
        )
        .unwrap();
        assert_eq!(doc.get("kind"), Some("radial-layered"));
        assert_eq!(doc.require_list_f64("radii").unwrap(), vec![0.81, 0.9]);
        assert_eq!(doc.require_usize("n").unwrap(), 4);
        assert_eq!(doc.get_list_f64("missing").unwrap(), None);
    }

    #[test]
    fn rejects_malformed_lines_and_duplicates() {
        assert!(KvDoc::parse("novalue").is_err());
        assert!(KvDoc::parse("a=1\na=2").is_err());
        let doc = KvDoc::parse("x=notanumber\nl=[1,zap]").unwrap();
        assert!(doc.require_f64("x").is_err());
        assert!(doc.get_list_f64("l").is_err());
        assert!(doc.require("missing").is_err());
    }

    #[test]
    fn scoped_extracts_prefixed_keys() {
        let doc = KvDoc::parse("kind=pushforward\nbase.kind=constant\nbase.value=2.0").unwrap();
        let base = doc.scoped("base");
        assert_eq!(base.get("kind"), Some("constant"));
        assert_eq!(base.require_f64("value").unwrap(), 2.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let doc = KvDoc::parse("kind=constant\nvalue=1.0\ntypo=3").unwrap();
        assert!(doc.check_known(&["kind", "value"], &[]).is_err());
        assert!(doc.check_known(&["kind", "value", "typo"], &[]).is_ok());
        let doc2 = KvDoc::parse("kind=pushforward\nbase.value=1").unwrap();
        assert!(doc2.check_known(&["kind"], &["base."]).is_ok());
    }

    #[test]
    fn empty_list_parses() {
        let doc = KvDoc::parse("snap=[]").unwrap();
        assert_eq!(doc.require_list_f64("snap").unwrap(), Vec::<f64>::new());
    }
}
