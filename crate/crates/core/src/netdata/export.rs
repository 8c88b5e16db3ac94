use std::io::Write;

use crate::error::Result;

/// Writes a dense matrix as CSV: a header of `corner` plus column labels, then
/// one row per row label.
pub fn write_labelled_matrix<W: Write>(
    writer: W,
    corner: &str,
    row_labels: &[String],
    col_labels: &[String],
    mut cell: impl FnMut(usize, usize) -> String,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = Vec::with_capacity(col_labels.len() + 1);
    header.push(corner.to_string());
    header.extend(col_labels.iter().cloned());
    w.write_record(&header)?;
    for (r, label) in row_labels.iter().enumerate() {
        let mut row = Vec::with_capacity(col_labels.len() + 1);
        row.push(label.clone());
        row.extend((0..col_labels.len()).map(|c| cell(r, c)));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| crate::Error::io("<csv output>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_header_and_rows() {
        let mut buf = Vec::new();
        write_labelled_matrix(&mut buf, "id", &["a".into(), "b".into()], &["x".into()], |r, _| r.to_string()).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "id,x\na,0\nb,1\n");
    }
}
