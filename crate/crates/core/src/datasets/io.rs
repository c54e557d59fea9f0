//! Line-oriented feature files.
//!
//! ```text
//! #pda-features v1 d=3 k=5 role=target
//! ?,1.00000000e0,-2.50000000e-1,3.12500000e0 #4
//! ```
//!
//! Source lines start with the class index, target lines with `?`. A target
//! line may end with `#<label>` carrying the evaluation label.

use std::fmt::Write as _;
use std::path::Path;

use super::{Dataset, HiddenLabels, Role, Sample};
use crate::error::{PdaError, Result};

const MAGIC: &str = "#pda-features";
const VERSION: &str = "v1";

pub fn render_feature_file(dataset: &Dataset) -> String {
    let mut out = format!(
        "{MAGIC} {VERSION} d={} k={} role={}\n",
        dataset.dim(),
        dataset.num_classes(),
        dataset.role().as_str()
    );
    let hidden = dataset.hidden_labels().map(HiddenLabels::reveal);
    for (i, sample) in dataset.samples().iter().enumerate() {
        match sample.label {
            Some(l) => write!(out, "{l}").unwrap(),
            None => out.push('?'),
        }
        for x in &sample.features {
            write!(out, ",{x:.8e}").unwrap();
        }
        if let Some(h) = hidden {
            write!(out, " #{}", h[i]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_feature_file(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render_feature_file(dataset))?;
    Ok(())
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_feature_file(&std::fs::read_to_string(path)?)
}

fn parse_err(line: usize, message: impl Into<String>) -> PdaError {
    PdaError::Parse {
        line,
        message: message.into(),
    }
}

struct Header {
    dim: usize,
    classes: usize,
    role: Role,
}

fn parse_header(line: &str) -> Result<Header> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(parse_err(1, format!("expected `{MAGIC}` header")));
    }
    if parts.next() != Some(VERSION) {
        return Err(parse_err(1, "unsupported format version"));
    }
    let (mut dim, mut classes, mut role) = (None, None, None);
    for field in parts {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| parse_err(1, format!("malformed header field `{field}`")))?;
        let number = || {
            value
                .parse::<usize>()
                .map_err(|_| parse_err(1, format!("bad value for `{key}`")))
        };
        match key {
            "d" => dim = Some(number()?),
            "k" => classes = Some(number()?),
            "role" => {
                role = Some(match value {
                    "source" => Role::Source,
                    "target" => Role::Target,
                    other => return Err(parse_err(1, format!("unknown role `{other}`"))),
                })
            }
            other => return Err(parse_err(1, format!("unknown header field `{other}`"))),
        }
    }
    match (dim, classes, role) {
        (Some(dim), Some(classes), Some(role)) if dim > 0 && classes > 0 => {
            Ok(Header { dim, classes, role })
        }
        _ => Err(parse_err(1, "header needs positive d, k and a role")),
    }
}

pub fn parse_feature_file(text: &str) -> Result<Dataset> {
    let mut lines = text.lines();
    let header = parse_header(lines.next().ok_or_else(|| parse_err(1, "empty file"))?)?;

    let mut samples = Vec::new();
    let mut hidden: Vec<Option<usize>> = Vec::new();
    for (offset, raw) in lines.enumerate() {
        let lineno = offset + 2;
        if raw.trim().is_empty() {
            continue;
        }
        let (body, comment) = match raw.split_once('#') {
            Some((body, comment)) => (body.trim(), Some(comment.trim())),
            None => (raw.trim(), None),
        };
        let mut fields = body.split(',');
        let label = match fields.next().map(str::trim) {
            Some("?") => None,
            Some(tok) => {
                let l: usize = tok
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("bad label `{tok}`")))?;
                if l >= header.classes {
                    return Err(parse_err(
                        lineno,
                        format!("label {l} >= k={}", header.classes),
                    ));
                }
                Some(l)
            }
            None => return Err(parse_err(lineno, "missing label")),
        };
        match (header.role, label) {
            (Role::Source, None) => return Err(parse_err(lineno, "unlabeled source sample")),
            (Role::Target, Some(_)) => {
                return Err(parse_err(lineno, "target samples must use `?`"))
            }
            _ => {}
        }
        let features = fields
            .map(|tok| {
                let x: f64 = tok
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("bad feature `{tok}`")))?;
                if x.is_finite() {
                    Ok(x)
                } else {
                    Err(parse_err(lineno, "non-finite feature"))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        if features.len() != header.dim {
            return Err(parse_err(
                lineno,
                format!("{} features, expected d={}", features.len(), header.dim),
            ));
        }
        let hidden_label = match comment {
            None => None,
            Some(_) if header.role == Role::Source => {
                return Err(parse_err(
                    lineno,
                    "hidden labels only belong in target files",
                ))
            }
            Some(c) => {
                let l: usize = c
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("bad hidden label `{c}`")))?;
                if l >= header.classes {
                    return Err(parse_err(
                        lineno,
                        format!("hidden label {l} >= k={}", header.classes),
                    ));
                }
                Some(l)
            }
        };
        if !hidden.is_empty() && hidden[0].is_some() != hidden_label.is_some() {
            return Err(parse_err(
                lineno,
                "hidden labels must be given for all target samples or none",
            ));
        }
        hidden.push(hidden_label);
        samples.push(Sample { features, label });
    }

    match header.role {
        Role::Source => Dataset::source(samples, header.dim, header.classes),
        Role::Target => {
            let hidden = hidden
                .into_iter()
                .collect::<Option<Vec<usize>>>()
                .filter(|h| !h.is_empty())
                .map(HiddenLabels::new);
            let features = samples.into_iter().map(|s| s.features).collect();
            Dataset::target(features, header.dim, header.classes, hidden)
        }
    }
}
