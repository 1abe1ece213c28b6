//! Plain-text dataset files.
//!
//! Lines starting with `#` form the header (generator descriptor). Labels
//! are written 1-based, tokens 0-based. Continuous items take one line,
//! `label v1 v2 …`; sequence items take two, tokens then labels.

use std::fmt::Write as _;

use super::{ContinuousDataset, Hmm, LabeledSet, MixtureSpec, SequenceDataset};
use crate::error::{Error, Result};

impl MixtureSpec {
    pub fn descriptor(&self) -> Vec<String> {
        vec![format!(
            "mixture classes={} radius={} std={}",
            self.classes, self.radius, self.std
        )]
    }
}

impl Hmm {
    pub fn descriptor(&self) -> Vec<String> {
        let row = |v: &[f64]| v.iter().map(|p| format!("{p:e}")).collect::<Vec<_>>().join(" ");
        let mut out = vec![
            format!(
                "hmm states={} vocab={} max_len={}",
                self.states,
                self.vocab,
                self.max_len()
            ),
            format!("initial {}", row(&self.initial)),
            format!("trans {}", row(&self.trans)),
            format!("emit {}", row(&self.emit)),
            format!("lengths {}", row(&self.lengths)),
        ];
        if let Some(names) = &self.label_names {
            out.push(format!("labels {}", names.join(" ")));
        }
        out
    }
}

fn header(out: &mut String, lines: &[String]) {
    for l in lines {
        let _ = writeln!(out, "# {l}");
    }
}

pub fn write_continuous(data: &ContinuousDataset, descriptor: &[String]) -> String {
    let mut out = String::new();
    header(&mut out, descriptor);
    for (x, y) in data.xs.iter().zip(&data.ys) {
        let _ = write!(out, "{}", y + 1);
        for v in x {
            let _ = write!(out, " {v:e}");
        }
        out.push('\n');
    }
    out
}

pub fn write_sequences(data: &SequenceDataset, descriptor: &[String]) -> String {
    let mut out = String::new();
    header(&mut out, descriptor);
    let join = |v: &[usize], off: usize| v.iter().map(|t| (t + off).to_string()).collect::<Vec<_>>().join(" ");
    for (x, y) in data.xs.iter().zip(&data.ys) {
        let _ = writeln!(out, "{}", join(x, 0));
        let _ = writeln!(out, "{}", join(y, 1));
    }
    out
}

fn split_header(text: &str) -> (Vec<String>, Vec<(usize, &str)>) {
    let mut head = Vec::new();
    let mut body = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(h) = line.strip_prefix('#') {
            head.push(h.trim().to_string());
        } else if !line.trim().is_empty() {
            body.push((i + 1, line));
        }
    }
    (head, body)
}

fn parse_label(tok: &str, line: usize) -> Result<usize> {
    match tok.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v - 1),
        _ => Err(Error::DataFormat {
            line,
            msg: format!("bad label {tok:?}"),
        }),
    }
}

/// Returns the header lines and the items.
pub fn read_continuous(text: &str) -> Result<(Vec<String>, ContinuousDataset)> {
    let (head, body) = split_header(text);
    let mut set = LabeledSet::default();
    let mut dim = None;
    for (line, l) in body {
        let mut toks = l.split_whitespace();
        let y = parse_label(toks.next().unwrap_or(""), line)?;
        let x = toks
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::DataFormat {
                        line,
                        msg: format!("bad value {t:?}"),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        if x.is_empty() || dim.is_some_and(|d| d != x.len()) {
            return Err(Error::DataFormat {
                line,
                msg: "inconsistent point dimension".into(),
            });
        }
        dim = Some(x.len());
        set.xs.push(x);
        set.ys.push(y);
    }
    Ok((head, set))
}

pub fn read_sequences(text: &str) -> Result<(Vec<String>, SequenceDataset)> {
    let (head, body) = split_header(text);
    if body.len() % 2 != 0 {
        return Err(Error::DataFormat {
            line: body.last().map_or(0, |b| b.0),
            msg: "token line without a label line".into(),
        });
    }
    let mut set = LabeledSet::default();
    for pair in body.chunks(2) {
        let (lt, tokens) = pair[0];
        let (ll, labels) = pair[1];
        let x = tokens
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>().map_err(|_| Error::DataFormat {
                    line: lt,
                    msg: format!("bad token {t:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let y = labels
            .split_whitespace()
            .map(|t| parse_label(t, ll))
            .collect::<Result<Vec<_>>>()?;
        if x.len() != y.len() {
            return Err(Error::DataFormat {
                line: ll,
                msg: format!("{} tokens but {} labels", x.len(), y.len()),
            });
        }
        set.xs.push(x);
        set.ys.push(y);
    }
    Ok((head, set))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_hmm, gen_mixture, HmmSpec};

    #[test]
    fn round_trips() {
        let spec = MixtureSpec::default();
        let d = gen_mixture(&spec, 5, 0).unwrap();
        let text = write_continuous(&d, &spec.descriptor());
        let (head, back) = read_continuous(&text).unwrap();
        assert_eq!(back, d);
        assert_eq!(head, spec.descriptor());
        assert!(text.lines().nth(1).unwrap().starts_with("1 "));

        let (hmm, s) = gen_hmm(&HmmSpec::default(), 20, 0).unwrap();
        let (head, back) = read_sequences(&write_sequences(&s, &hmm.descriptor())).unwrap();
        assert_eq!(back, s);
        assert_eq!(head.len(), 6);
    }

    #[test]
    fn malformed_files() {
        assert!(read_continuous("0 1.0 2.0\n").is_err());
        assert!(read_continuous("1 1.0 2.0\n2 1.0\n").is_err());
        assert!(read_sequences("1 2 3\n1 1\n").is_err());
        assert!(read_sequences("1 2 3\n").is_err());
    }
}
