use crate::error::{Error, Result};
use crate::numerics::Matrix;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;

/// Pretty JSON with object keys sorted, newline-terminated.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    // `Value` maps are ordered by key, so the round trip sorts everything.
    let v = serde_json::to_value(value).map_err(|e| Error::Format(e.to_string()))?;
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json(value)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Rows are key positions, columns query positions; the header row and
/// first column hold position indices. Values carry 17 significant digits.
pub fn pattern_csv(a: &Matrix) -> String {
    let mut s = String::from("key\\query");
    for j in 0..a.cols() {
        write!(s, ",{j}").expect("string write");
    }
    s.push_str("\r\n");
    for i in 0..a.rows() {
        write!(s, "{i}").expect("string write");
        for j in 0..a.cols() {
            write!(s, ",{:.16e}", a[(i, j)]).expect("string write");
        }
        s.push_str("\r\n");
    }
    s
}

pub fn parse_pattern_csv(text: &str) -> Result<Matrix> {
    let bad = |m: String| Error::Format(format!("pattern csv: {m}"));
    let mut lines = text.lines().filter(|l| !l.is_empty());
    let header = lines.next().ok_or_else(|| bad("empty".into()))?;
    let cols = header.split(',').count() - 1;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let mut cells = line.split(',');
        let idx = cells.next().and_then(|c| c.parse::<usize>().ok());
        if idx != Some(i) {
            return Err(bad(format!("row {i} has index {idx:?}")));
        }
        let row = cells.map(|c| c.parse::<f64>().map_err(|e| bad(format!("{c:?}: {e}")))).collect::<Result<Vec<f64>>>()?;
        if row.len() != cols {
            return Err(bad(format!("row {i} has {} values, header has {cols}", row.len())));
        }
        rows.push(row);
    }
    Matrix::from_rows(&rows)
}

/// Heatmap with one hue: white at 0, dark blue at the matrix maximum.
/// Keys run down, queries across.
pub fn pattern_svg(a: &Matrix, title: &str) -> String {
    const CELL: usize = 16;
    const MARGIN: usize = 28;
    let max = a.data().iter().cloned().fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    let (w, h) = (MARGIN + a.cols() * CELL + 4, MARGIN + a.rows() * CELL + 4);
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#).expect("string write");
    writeln!(s, r#"<title>{}</title>"#, escape(title)).expect("string write");
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).expect("string write");
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            let t = (a[(i, j)] / max).clamp(0.0, 1.0);
            // Linear ramp from white to rgb(8, 48, 107).
            let c = |hi: f64| (255.0 + (hi - 255.0) * t).round() as u8;
            writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="rgb({},{},{})"><title>key {i}, query {j}: {:.6}</title></rect>"#,
                MARGIN + j * CELL,
                MARGIN + i * CELL,
                c(8.0),
                c(48.0),
                c(107.0),
                a[(i, j)]
            )
            .expect("string write");
        }
    }
    writeln!(s, r#"<text x="{MARGIN}" y="12" font-family="sans-serif" font-size="10">queries →</text>"#).expect("string write");
    writeln!(s, r#"<text x="2" y="{MARGIN}" font-family="sans-serif" font-size="10" writing-mode="tb">keys</text>"#).expect("string write");
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn csv_round_trip() {
        let mut r = Rng::seed(1);
        let a = Matrix::from_fn(7, 7, |i, j| if i <= j { r.uniform() / 3.0 } else { 0.0 });
        let text = pattern_csv(&a);
        assert!(text.starts_with("key\\query,0,1,2"));
        let b = parse_pattern_csv(&text).unwrap();
        assert!(a.sub(&b).max_abs() <= 1e-12);
        assert_eq!(a, b);
        assert!(parse_pattern_csv("h,0\n0,x\n").is_err());
    }

    #[test]
    fn json_keys_are_sorted() {
        #[derive(Serialize)]
        struct S {
            zeta: u8,
            alpha: u8,
        }
        let s = to_json(&S { zeta: 1, alpha: 2 }).unwrap();
        assert!(s.find("alpha").unwrap() < s.find("zeta").unwrap());
    }

    #[test]
    fn svg_shades_by_value() {
        let a = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        let s = pattern_svg(&a, "a<b");
        assert!(s.contains("rgb(255,255,255)") && s.contains("rgb(8,48,107)"));
        assert!(s.contains("a&lt;b"));
    }
}
