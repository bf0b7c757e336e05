//! `key=value` text files: one pair per line, `#` starts a comment line,
//! blank lines are ignored.

use crate::error::{Error, Result};

/// Parse pairs in file order. Duplicate keys are an error.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1))
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(Error::Config(format!(
                "line {}: duplicate key {k:?}",
                n + 1
            )));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn render<K: AsRef<str>, V: AsRef<str>>(pairs: &[(K, V)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        s.push_str(k.as_ref());
        s.push('=');
        s.push_str(v.as_ref());
        s.push('\n');
    }
    s
}

/// Parse a value, naming the key on failure.
pub fn value<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("invalid value for {key}: {raw:?}")))
}

/// Comma-separated list of values.
pub fn list<T: std::str::FromStr>(key: &str, raw: &str) -> Result<Vec<T>> {
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',').map(|p| value(key, p.trim())).collect()
}

pub fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_with_comments() {
        let pairs = parse("# header\n\na = 1\nb=x=y\n").unwrap();
        assert_eq!(
            pairs,
            [("a".into(), "1".into()), ("b".into(), "x=y".into())]
        );
    }

    #[test]
    fn rejects_garbage_and_duplicates() {
        assert!(parse("novalue\n").is_err());
        assert!(parse("a=1\na=2\n").is_err());
        assert!(parse("=3\n").is_err());
    }

    #[test]
    fn render_round_trip() {
        let pairs = vec![("k".to_string(), "0.5,1".to_string())];
        assert_eq!(parse(&render(&pairs)).unwrap(), pairs);
        assert_eq!(list::<f32>("k", "0.5,1").unwrap(), [0.5, 1.0]);
        assert!(value::<u64>("seed", "-1").is_err());
    }
}
