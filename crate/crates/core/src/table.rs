//! CSV rendering for the tabular exports.

/// Renders `header` and `rows` as RFC 4180 CSV with `\n` line endings.
pub fn to_csv<I, R, S>(header: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    writer.write_record(header).expect("writing to memory");
    for row in rows {
        writer.write_record(row).expect("writing to memory");
    }
    let bytes = writer.into_inner().expect("flushing to memory");
    String::from_utf8(bytes).expect("fields are utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quotes_when_needed() {
        let csv = to_csv(&["a", "b"], vec![vec!["1", "x,y"], vec!["2", "z"]]);
        assert_eq!(csv, "a,b\n1,\"x,y\"\n2,z\n");
    }
}
