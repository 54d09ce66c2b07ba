//! Plain-text stream files: one row per time step, comma-separated decimal
//! floats, `nan` (any case) for a missing entry, optional `#` header lines.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::StreamSample;
use crate::{Error, Result};

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parses rows of optional floats; `None` marks a `nan` token. All rows must
/// have the same number of fields. `path` is only used in error messages.
pub fn read_rows_from(reader: impl BufRead, path: &Path) -> Result<Vec<Vec<Option<f64>>>> {
    let mut rows = Vec::new();
    let mut width = None;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut row = Vec::new();
        for (k, tok) in trimmed.split(',').enumerate() {
            let tok = tok.trim();
            if tok.eq_ignore_ascii_case("nan") {
                row.push(None);
                continue;
            }
            let v: f64 = tok.parse().map_err(|_| {
                parse_error(path, lineno, format!("field {}: cannot parse {tok:?}", k + 1))
            })?;
            if !v.is_finite() {
                return Err(parse_error(path, lineno, format!("field {}: non-finite value", k + 1)));
            }
            row.push(Some(v));
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(parse_error(
                    path,
                    lineno,
                    format!("expected {w} fields, found {}", row.len()),
                ))
            }
            _ => {}
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Parses stream text; time indices are assigned 1, 2, ... in row order.
pub fn parse_stream(reader: impl BufRead, path: &Path) -> Result<Vec<StreamSample>> {
    read_rows_from(reader, path)?
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let t = i as u64 + 1;
            let mask: Vec<bool> = row.iter().map(Option::is_some).collect();
            let x: Vec<f64> = row.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
            StreamSample::with_mask(t, x, mask)
        })
        .collect()
}

pub fn read_stream(path: impl AsRef<Path>) -> Result<Vec<StreamSample>> {
    let path = path.as_ref();
    let file = fs::File::open(path)?;
    parse_stream(BufReader::new(file), path)
}

/// Fully observed rows (e.g. direction banks or sketch operators).
pub fn read_rows(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let file = fs::File::open(path)?;
    read_rows_from(BufReader::new(file), path)?
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            row.into_iter()
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| parse_error(path, i + 1, "missing entry where a value is required"))
        })
        .collect()
}

fn push_row<'a>(out: &mut String, values: impl Iterator<Item = Option<&'a f64>>) {
    for (k, v) in values.enumerate() {
        if k > 0 {
            out.push(',');
        }
        match v {
            // `{}` on f64 prints the shortest string that round-trips
            Some(v) => write!(out, "{v}").expect("writing to String"),
            None => out.push_str("nan"),
        }
    }
    out.push('\n');
}

pub fn render_stream(samples: &[StreamSample], header: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        for line in h.lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
    }
    for s in samples {
        push_row(
            &mut out,
            s.x.iter()
                .enumerate()
                .map(|(i, v)| s.is_observed(i).then_some(v)),
        );
    }
    out
}

pub fn write_stream(samples: &[StreamSample], path: impl AsRef<Path>, header: Option<&str>) -> Result<()> {
    fs::write(path, render_stream(samples, header))?;
    Ok(())
}

pub fn write_rows(rows: &[Vec<f64>], path: impl AsRef<Path>, header: Option<&str>) -> Result<()> {
    let mut out = String::new();
    if let Some(h) = header {
        for line in h.lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
    }
    for r in rows {
        push_row(&mut out, r.iter().map(Some));
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_stream, ScenarioConfig};
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<Vec<StreamSample>> {
        parse_stream(text.as_bytes(), Path::new("mem.csv"))
    }

    #[test]
    fn nan_token_marks_missing() {
        let s = parse("1.0,2.0,nan\n").unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].x[..2], [1.0, 2.0]);
        assert_eq!(s[0].mask, Some(vec![true, true, false]));
        let s = parse("# header\nNaN,1\n").unwrap();
        assert_eq!(s[0].mask, Some(vec![false, true]));
    }

    #[test]
    fn empty_file_is_empty_stream() {
        assert!(parse("").unwrap().is_empty());
        assert!(parse("# only a header\n").unwrap().is_empty());
    }

    #[test]
    fn wrong_arity_names_the_line() {
        let err = parse("1,2,3\n4,5\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let err = parse("# h\n1,abc\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join(format!("spikewatch-io-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("s.csv");
        let cfg = ScenarioConfig {
            p: 7,
            sigma0_sq: 0.3,
            s: 2,
            rho: 1.5,
            kappa: Some(10),
            horizon: 30,
            missing_fraction: 0.25,
            seed: 77,
        };
        let stream = generate_stream(&cfg).unwrap();
        write_stream(&stream, &path, Some("p=7")).unwrap();
        let back = read_stream(&path).unwrap();
        assert_eq!(back.len(), stream.len());
        for (a, b) in stream.iter().zip(&back) {
            assert_eq!(a.mask, b.mask);
            for i in 0..a.dim() {
                if a.is_observed(i) {
                    assert_eq!(a.x[i].to_bits(), b.x[i].to_bits());
                }
            }
        }
        fs::remove_dir_all(&dir).ok();
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(rows in prop::collection::vec(
            prop::collection::vec(prop::option::weighted(0.8, -1e6f64..1e6), 3), 0..20)) {
            let samples: Vec<StreamSample> = rows.iter().enumerate().map(|(i, r)| {
                let mask = r.iter().map(Option::is_some).collect();
                let x = r.iter().map(|v| v.unwrap_or(0.0)).collect();
                StreamSample::with_mask(i as u64 + 1, x, mask).unwrap()
            }).collect();
            let text = render_stream(&samples, None);
            let back = parse(&text).unwrap();
            prop_assert_eq!(back.len(), samples.len());
            for (a, b) in samples.iter().zip(&back) {
                prop_assert_eq!(&a.mask, &b.mask);
                for i in 0..3 {
                    if a.is_observed(i) {
                        prop_assert_eq!(a.x[i].to_bits(), b.x[i].to_bits());
                    }
                }
            }
        }
    }
}
