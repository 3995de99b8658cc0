//! CSV and aligned-text rendering of result tables.

use crate::error::CliResult;

pub(crate) fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

pub(crate) fn opt_fixed(v: Option<f64>) -> String {
    v.map(fixed).unwrap_or_default()
}

pub(crate) fn to_csv(header: &[String], rows: &[Vec<String>]) -> CliResult<Vec<u8>> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    wtr.write_record(header)?;
    for row in rows {
        wtr.write_record(row)?;
    }
    wtr.into_inner().map_err(|e| e.into_error().into())
}

/// Left-aligned first column, right-aligned numbers.
pub(crate) fn to_text(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| {
                if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(
        &widths
            .iter()
            .map(|&w| "-".repeat(w))
            .collect::<Vec<_>>()
            .join("  "),
    );
    out.push('\n');
    for row in rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_columns_line_up() {
        let header = vec!["method".to_string(), "picp".to_string()];
        let rows = vec![
            vec!["cp".to_string(), "0.900000".to_string()],
            vec!["cqr_groupwise".to_string(), "1".to_string()],
        ];
        let text = to_text(&header, &rows);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "method             picp");
        assert_eq!(lines[2], "cp             0.900000");
        assert_eq!(lines[3], "cqr_groupwise         1");
    }
}
