//! Flat `key = value` scenario files. Blank lines and `#` comments are
//! ignored; a repeated key keeps its last value.

use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {msg}")]
pub struct ConfigError {
    pub line: usize,
    pub msg: String,
}

pub fn parse(text: &str) -> Result<BTreeMap<String, (usize, String)>, ConfigError> {
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError {
                line: idx + 1,
                msg: format!("expected key = value, got `{line}`"),
            });
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError {
                line: idx + 1,
                msg: "empty key".into(),
            });
        }
        out.insert(k.to_string(), (idx + 1, v.to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let m = parse("# scenario\nk = 2\n\nfault.node=3 # trailing\nk=3\n").unwrap();
        assert_eq!(m["k"], (5, "3".to_string()));
        assert_eq!(m["fault.node"].1, "3");
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn rejects_bare_words() {
        assert_eq!(parse("k 2").unwrap_err().line, 1);
        assert!(parse("= 4").is_err());
    }
}
