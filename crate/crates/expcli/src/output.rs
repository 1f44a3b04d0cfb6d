use std::io::Write;

use crate::error::CliResult;

/// A CSV row with a fixed schema. Every schema starts with the
/// `experiment` and `seed` keys.
pub trait CsvRecord {
    fn header() -> Vec<String>;
    fn fields(&self) -> Vec<String>;
}

pub fn write_records<R: CsvRecord, W: Write>(rows: &[R], out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(R::header())?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}
