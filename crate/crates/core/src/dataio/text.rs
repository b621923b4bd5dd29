use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

/// 17 significant digits: enough for an exact `f64` round trip.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn push_reals(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v:.16e}");
    }
}

pub(crate) fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("refusing to write non-finite {what}")));
    }
    Ok(())
}

/// Line cursor that reports 1-based line numbers in errors.
pub(crate) struct LineReader<'a> {
    name: &'a str,
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> LineReader<'a> {
    pub fn new(name: &'a str, text: &'a str) -> Self {
        LineReader {
            name,
            lines: text.lines().collect(),
            pos: 0,
        }
    }

    pub fn error(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            source_name: self.name.to_string(),
            line,
            message: message.into(),
        }
    }

    /// Line number of the most recently returned line.
    pub fn line_no(&self) -> usize {
        self.pos
    }

    pub fn peek(&self) -> Option<&'a str> {
        self.lines.get(self.pos).copied()
    }

    pub fn next_line(&mut self) -> Result<&'a str> {
        match self.lines.get(self.pos) {
            Some(l) => {
                self.pos += 1;
                Ok(l)
            }
            None => Err(self.error(self.pos + 1, "unexpected end of file")),
        }
    }

    /// Next line split on whitespace.
    pub fn tokens(&mut self) -> Result<Vec<&'a str>> {
        Ok(self.next_line()?.split_whitespace().collect())
    }

    pub fn expect_header(&mut self, magic: &str, version: &str) -> Result<Vec<&'a str>> {
        let toks = self.tokens()?;
        if toks.len() < 2 || toks[0] != magic {
            return Err(self.error(self.pos, format!("expected `{magic} {version}` header")));
        }
        if toks[1] != version {
            return Err(self.error(
                self.pos,
                format!("unsupported {magic} version `{}` (expected {version})", toks[1]),
            ));
        }
        Ok(toks[2..].to_vec())
    }

    pub fn parse<T: FromStr>(&self, tok: &str, what: &str) -> Result<T> {
        tok.parse()
            .map_err(|_| self.error(self.pos, format!("invalid {what} `{tok}`")))
    }

    pub fn parse_real(&self, tok: &str) -> Result<f64> {
        let v: f64 = self.parse(tok, "real")?;
        if !v.is_finite() {
            return Err(self.error(self.pos, format!("non-finite value `{tok}`")));
        }
        Ok(v)
    }

    pub fn parse_reals(&self, toks: &[&str], expected: usize) -> Result<Vec<f64>> {
        if toks.len() != expected {
            return Err(self.error(
                self.pos,
                format!("expected {expected} values, found {}", toks.len()),
            ));
        }
        toks.iter().map(|t| self.parse_real(t)).collect()
    }
}
