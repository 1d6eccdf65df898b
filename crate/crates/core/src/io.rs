//! Pattern CSV files and provenance headers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Point, PointPattern, Window};

/// `# key: value` lines, one per entry; values are single-line JSON.
pub fn provenance_lines<T: Serialize>(entries: &[(&str, &T)]) -> Result<String> {
    let mut out = String::new();
    for (k, v) in entries {
        out.push_str(&format!("# {k}: {}\n", serde_json::to_string(v)?));
    }
    Ok(out)
}

/// CSV text with header `x,y` or `x,y,t`; coordinates in shortest round-trip form.
pub fn pattern_to_csv(pattern: &PointPattern) -> String {
    let st = pattern.is_spatio_temporal();
    let mut out = String::from(if st { "x,y,t\n" } else { "x,y\n" });
    for p in pattern.points() {
        if st {
            out.push_str(&format!("{},{},{}\n", p.x, p.y, p.t));
        } else {
            out.push_str(&format!("{},{}\n", p.x, p.y));
        }
    }
    out
}

pub fn write_pattern_csv(path: &Path, pattern: &PointPattern, header: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(header.as_bytes())?;
    w.write_all(pattern_to_csv(pattern).as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Reads `x,y[,t]` rows, skipping `#` lines. Without a window, the unit square (or cube,
/// when a `t` column is present) is used.
pub fn read_pattern_csv(path: &Path, window: Option<Window>) -> Result<PointPattern> {
    let text = BufReader::new(File::open(path)?);
    let mut body = String::new();
    for line in text.lines() {
        let line = line?;
        if !line.trim_start().starts_with('#') {
            body.push_str(&line);
            body.push('\n');
        }
    }
    parse_pattern_csv(&body, window)
}

pub fn parse_pattern_csv(text: &str, window: Option<Window>) -> Result<PointPattern> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.to_ascii_lowercase()).collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (ix, iy) = match (col("x"), col("y")) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(Error::Parse(format!("pattern CSV needs x and y columns, found {headers:?}"))),
    };
    let it = col("t");
    let window = window.unwrap_or(if it.is_some() {
        Window::unit_cube()
    } else {
        Window::unit_square()
    });
    if it.is_some() != window.is_spatio_temporal() {
        return Err(Error::Parse("time column and window dimension disagree".into()));
    }
    let mut points = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64> {
            rec.get(k)
                .ok_or_else(|| Error::Parse(format!("row {}: missing column", row + 1)))?
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("row {}: {e}", row + 1)))
        };
        let t = match it {
            Some(k) => num(k)?,
            None => 0.0,
        };
        points.push(Point::new(num(ix)?, num(iy)?, t));
    }
    PointPattern::new(points, window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::simulate_homogeneous;

    #[test]
    fn round_trip_is_exact() {
        for w in [Window::unit_square(), Window::unit_cube()] {
            let p = simulate_homogeneous(60.0, &w, 2).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.csv");
            write_pattern_csv(&path, &p, "# seed: 2\n").unwrap();
            assert_eq!(read_pattern_csv(&path, Some(w)).unwrap(), p);
            assert_eq!(read_pattern_csv(&path, None).unwrap(), p);
        }
    }

    #[test]
    fn bad_input_is_a_parse_error() {
        assert!(parse_pattern_csv("a,b\n1,2\n", None).is_err());
        assert!(parse_pattern_csv("x,y\n0.1,oops\n", None).is_err());
        assert!(parse_pattern_csv("x,y\n0.1,2.0\n", None).is_err());
        assert!(parse_pattern_csv("x,y,t\n0.1,0.2,0.3\n", Some(Window::unit_square())).is_err());
    }
}
