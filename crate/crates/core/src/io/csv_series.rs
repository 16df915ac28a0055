use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::domain::Series;
use crate::error::{Error, Result};

/// Header of every input series file.
pub const SERIES_HEADER: [&str; 2] = ["x_m", "value"];

/// Shortest decimal that parses back to the same `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

/// Reads a `x_m,value` file. Rows are sorted by location; duplicate
/// locations and non-finite values are rejected.
pub fn read_series_csv(path: impl AsRef<Path>) -> Result<Series> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    parse_series_csv(&text, &path.display().to_string())
}

/// Parses `x_m,value` text; `source_name` labels errors.
pub fn parse_series_csv(text: &str, source_name: &str) -> Result<Series> {
    let parse_err = |line: usize, message: String| Error::Parse {
        source_name: source_name.to_string(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut pairs: Vec<(f64, f64, usize)> = Vec::new();
    let mut saw_header = false;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if !saw_header {
            saw_header = true;
            if rec.len() != 2 || rec[0] != *SERIES_HEADER[0] || rec[1] != *SERIES_HEADER[1] {
                return Err(parse_err(line, "expected header `x_m,value`".into()));
            }
            continue;
        }
        if rec.len() != 2 {
            return Err(parse_err(line, format!("expected 2 fields, found {}", rec.len())));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            let v: f64 = s
                .parse()
                .map_err(|_| parse_err(line, format!("{what} `{s}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("{what} `{s}` is not finite")));
            }
            Ok(v)
        };
        pairs.push((num(&rec[0], "x_m")?, num(&rec[1], "value")?, line));
    }
    if !saw_header {
        return Err(parse_err(1, "empty file; expected header `x_m,value`".into()));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    if let Some(w) = pairs.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::validation(format!(
            "{source_name}: duplicate location x_m = {} (lines {} and {})",
            w[0].0, w[0].2, w[1].2
        )));
    }
    let (x, values) = pairs.into_iter().map(|(x, v, _)| (x, v)).unzip();
    Series::new(x, values)
}

/// Writes a series with the `x_m,value` header.
pub fn write_series_csv(path: impl AsRef<Path>, series: &Series) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("x_m,value\n");
    for (x, v) in series.pairs() {
        out.push_str(&format_float(x));
        out.push(',');
        out.push_str(&format_float(v));
        out.push('\n');
    }
    File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn basic() {
        let s = parse_series_csv("x_m,value\n0,100\n10,110", "t").unwrap();
        assert_eq!(s.x, vec![0.0, 10.0]);
        assert_eq!(s.values, vec![100.0, 110.0]);
    }

    #[test]
    fn sorts_rows() {
        let s = parse_series_csv("x_m,value\n10,110\n0,100\n5,1\n", "t").unwrap();
        assert_eq!(s.x, vec![0.0, 5.0, 10.0]);
        assert_eq!(s.values, vec![100.0, 1.0, 110.0]);
    }

    #[test]
    fn bad_value_names_line() {
        let e = parse_series_csv("x_m,value\n0,100\n5,abc\n", "t").unwrap_err();
        match e {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn rejects_nan_duplicates_and_headers() {
        assert!(matches!(parse_series_csv("x_m,value\n0,NaN\n", "t"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_series_csv("x_m,value\n0,inf\n", "t"), Err(Error::Parse { .. })));
        assert!(matches!(parse_series_csv("x_m,value\n0,1\n0,2\n", "t"), Err(Error::Validation(_))));
        assert!(matches!(parse_series_csv("x,y\n0,1\n", "t"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_series_csv("x_m,value\n0,1,2\n", "t"), Err(Error::Parse { .. })));
        assert!(parse_series_csv("", "t").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(vals in prop::collection::vec((-1e12f64..1e12, -1e300f64..1e300), 1..40)) {
            let mut xs: Vec<f64> = vals.iter().map(|v| v.0).collect();
            xs.sort_by(f64::total_cmp);
            xs.dedup();
            let ys: Vec<f64> = vals.iter().take(xs.len()).map(|v| v.1 / 3.0).collect();
            let s = Series::new(xs, ys).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("s.csv");
            write_series_csv(&p, &s).unwrap();
            prop_assert_eq!(read_series_csv(&p).unwrap(), s);
        }
    }
}
