//! Flat `key = value` config files layered under command-line flags.
//!
//! `--config FILE` may appear anywhere after the subcommand. Each line of
//! the file becomes `--key value` and is inserted directly after the
//! subcommand, so flags given on the command line are parsed later and win.
//! A value of `true` yields a bare switch and `false` omits the key.
//! Blank lines and lines starting with `#` are ignored.

use std::path::Path;

#[derive(Debug, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn parse(text: &str, origin: &Path) -> Result<Vec<String>, ConfigError> {
    let mut args = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError(format!("{}:{}: expected key = value", origin.display(), n + 1)));
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key == "config" {
            return Err(ConfigError(format!("{}:{}: invalid key", origin.display(), n + 1)));
        }
        match value {
            "true" => args.push(format!("--{key}")),
            "false" => {}
            v => {
                args.push(format!("--{key}"));
                args.push(v.to_string());
            }
        }
    }
    Ok(args)
}

/// Expands a `--config` option in `argv` (program name first).
pub fn expand(argv: Vec<String>) -> Result<Vec<String>, ConfigError> {
    let mut path = None;
    let mut rest = Vec::with_capacity(argv.len());
    let mut it = argv.into_iter().enumerate();
    while let Some((i, a)) = it.next() {
        if i >= 2 && a == "--config" {
            let Some((_, p)) = it.next() else {
                return Err(ConfigError("--config needs a file path".into()));
            };
            path = Some(p);
        } else if let Some(p) = a.strip_prefix("--config=").filter(|_| i >= 2) {
            path = Some(p.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else { return Ok(rest) };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let layered = parse(&text, path)?;
    let at = rest.len().min(2);
    rest.splice(at..at, layered);
    Ok(rest)
}
