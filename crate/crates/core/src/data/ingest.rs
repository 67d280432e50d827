use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use super::{DataError, ModelSpec, PersonPeriodTable};

const ID: &str = "id";
const MONTH: &str = "t";
const EVENT: &str = "d";

struct PendingRow {
    month: u32,
    event: u8,
    line: usize,
    values: Vec<f64>,
}

/// Reads a person-period CSV file (`id`, `t`, `d`, then covariate columns).
///
/// Only the covariates referenced by `spec` are kept; any other column is
/// ignored with a warning. The time step is one period.
pub fn ingest_csv(path: impl AsRef<Path>, spec: &ModelSpec) -> Result<PersonPeriodTable, DataError> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| DataError::Io(format!("{}: {e}", path.as_ref().display())))?;
    ingest_reader(file, spec)
}

pub fn ingest_reader<R: Read>(reader: R, spec: &ModelSpec) -> Result<PersonPeriodTable, DataError> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = csv
        .headers()
        .map_err(|e| DataError::Malformed {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let position = |name: &str| headers.iter().position(|h| h == name);

    let id_col = position(ID).ok_or_else(|| DataError::MissingColumn(ID.into()))?;
    let month_col = position(MONTH).ok_or_else(|| DataError::MissingColumn(MONTH.into()))?;
    let event_col = position(EVENT).ok_or_else(|| DataError::MissingColumn(EVENT.into()))?;

    let wanted = spec.covariate_names();
    let mut cov_cols = Vec::with_capacity(wanted.len());
    for name in &wanted {
        let col = position(name).ok_or_else(|| DataError::MissingColumn(name.clone()))?;
        cov_cols.push(col);
    }
    for h in headers.iter() {
        if h != ID && h != MONTH && h != EVENT && !wanted.iter().any(|w| w == h) {
            log::warn!("ignoring column `{h}` not referenced by the model");
        }
    }

    let mut unit_index: HashMap<String, usize> = HashMap::new();
    let mut unit_ids: Vec<String> = Vec::new();
    let mut pending: Vec<Vec<PendingRow>> = Vec::new();

    for result in csv.records() {
        let record = result.map_err(|e| DataError::Malformed {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| record.get(i).unwrap_or("");

        let month_raw = field(month_col);
        let month: u32 = match month_raw.parse() {
            Ok(m) if m >= 1 => m,
            _ => {
                return Err(DataError::InvalidMonth {
                    line,
                    value: month_raw.into(),
                })
            }
        };
        let event_raw = field(event_col);
        let event = match event_raw {
            "0" => 0u8,
            "1" => 1u8,
            _ => {
                return Err(DataError::InvalidEvent {
                    line,
                    value: event_raw.into(),
                })
            }
        };
        let mut values = Vec::with_capacity(cov_cols.len());
        for (name, &col) in wanted.iter().zip(&cov_cols) {
            let raw = field(col);
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(DataError::NonNumeric {
                        line,
                        column: name.clone(),
                        value: raw.into(),
                    })
                }
            }
        }

        let id = field(id_col).to_string();
        let unit = *unit_index.entry(id.clone()).or_insert_with(|| {
            unit_ids.push(id);
            pending.push(Vec::new());
            pending.len() - 1
        });
        pending[unit].push(PendingRow {
            month,
            event,
            line,
            values,
        });
    }

    let total: usize = pending.iter().map(Vec::len).sum();
    let mut months = Vec::with_capacity(total);
    let mut events = Vec::with_capacity(total);
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(total); wanted.len()];
    let mut unit_start = Vec::with_capacity(unit_ids.len() + 1);
    unit_start.push(0);

    for (unit, mut rows) in pending.into_iter().enumerate() {
        rows.sort_by_key(|r| r.month);
        let last = rows.len() - 1;
        for (k, row) in rows.iter().enumerate() {
            let expected = k as u32 + 1;
            if row.month != expected {
                return Err(DataError::NonConsecutiveMonths {
                    unit: unit_ids[unit].clone(),
                    expected,
                    found: row.month,
                    line: row.line,
                });
            }
            if row.event == 1 && k != last {
                return Err(DataError::EventBeforeEnd {
                    unit: unit_ids[unit].clone(),
                    month: row.month,
                    line: row.line,
                });
            }
            months.push(row.month);
            events.push(row.event);
            for (column, v) in columns.iter_mut().zip(&row.values) {
                column.push(*v);
            }
        }
        unit_start.push(months.len());
    }

    let covariates: BTreeMap<String, Vec<f64>> = wanted.into_iter().zip(columns).collect();
    Ok(PersonPeriodTable {
        unit_ids,
        unit_start,
        months,
        events,
        covariates,
        dt: 1.0,
    })
}

/// Writes the table in the layout read by [`ingest_reader`].
pub fn write_csv<W: Write>(table: &PersonPeriodTable, writer: W) -> Result<(), DataError> {
    let io = |e: csv::Error| DataError::Io(e.to_string());
    let mut out = csv::Writer::from_writer(writer);
    let names: Vec<&str> = table.covariate_names().collect();
    let mut header = vec![ID, MONTH, EVENT];
    header.extend(names.iter().copied());
    out.write_record(&header).map_err(io)?;

    let columns: Vec<&[f64]> = names.iter().map(|n| table.covariate(n).unwrap()).collect();
    let mut fields: Vec<String> = Vec::with_capacity(3 + names.len());
    for unit in 0..table.n_units() {
        for r in table.unit_rows(unit) {
            fields.clear();
            fields.push(table.unit_ids()[unit].clone());
            fields.push(table.months()[r].to_string());
            fields.push(table.events()[r].to_string());
            fields.extend(columns.iter().map(|c| c[r].to_string()));
            out.write_record(&fields).map_err(io)?;
        }
    }
    out.flush().map_err(|e| DataError::Io(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ModelSpec {
        ModelSpec {
            quantum_linear: vec!["z".into()],
            ..ModelSpec::default()
        }
    }

    const FIXTURE: &str = "id,t,d,z,extra\n\
        a,1,0,0.5,9\n\
        a,2,1,0.5,9\n\
        b,1,0,1,9\n\
        b,2,0,1,9\n\
        b,3,0,1,9\n\
        c,1,0,0,9\n\
        c,2,0,0,9\n\
        c,3,0,0,9\n\
        c,4,1,0,9\n";

    #[test]
    fn reads_nine_row_fixture() {
        let table = ingest_reader(FIXTURE.as_bytes(), &spec()).unwrap();
        assert_eq!(table.n_units(), 3);
        assert_eq!(table.n_rows(), 9);
        assert!(table.covariate("extra").is_none());
        assert_eq!(
            table.collapse(),
            vec![
                ("a".to_string(), 2, true),
                ("b".to_string(), 3, false),
                ("c".to_string(), 4, true)
            ]
        );
    }

    #[test]
    fn shuffled_rows_give_the_same_table() {
        let mut lines: Vec<&str> = FIXTURE.lines().collect();
        let header = lines.remove(0);
        lines.reverse();
        lines.swap(0, 5);
        let shuffled = format!("{header}\n{}\n", lines.join("\n"));
        let a = ingest_reader(FIXTURE.as_bytes(), &spec()).unwrap();
        let b = ingest_reader(shuffled.as_bytes(), &spec()).unwrap();
        let mut ca = a.collapse();
        let mut cb = b.collapse();
        ca.sort();
        cb.sort();
        assert_eq!(ca, cb);
    }

    #[test]
    fn missing_month_column_is_named() {
        let err = ingest_reader("id,d,z\na,1,0\n".as_bytes(), &spec()).unwrap_err();
        assert_eq!(err, DataError::MissingColumn("t".into()));
        assert!(err.to_string().contains("`t`"));
    }

    #[test]
    fn missing_covariate_column_is_named() {
        let err = ingest_reader("id,t,d\na,1,0\n".as_bytes(), &spec()).unwrap_err();
        assert_eq!(err, DataError::MissingColumn("z".into()));
    }

    #[test]
    fn event_outside_binary_reports_line() {
        let err = ingest_reader("id,t,d,z\na,1,0,0\na,2,2,0\n".as_bytes(), &spec()).unwrap_err();
        assert_eq!(
            err,
            DataError::InvalidEvent {
                line: 3,
                value: "2".into()
            }
        );
    }

    #[test]
    fn gaps_and_early_events_are_rejected() {
        let gap = ingest_reader("id,t,d,z\na,1,0,0\na,3,0,0\n".as_bytes(), &spec()).unwrap_err();
        assert!(matches!(gap, DataError::NonConsecutiveMonths { expected: 2, found: 3, .. }));
        let early = ingest_reader("id,t,d,z\na,1,1,0\na,2,0,0\n".as_bytes(), &spec()).unwrap_err();
        assert!(matches!(early, DataError::EventBeforeEnd { month: 1, .. }));
        let bad = ingest_reader("id,t,d,z\na,1,0,abc\n".as_bytes(), &spec()).unwrap_err();
        assert!(matches!(bad, DataError::NonNumeric { line: 2, .. }));
        let nan = ingest_reader("id,t,d,z\na,1,0,NaN\n".as_bytes(), &spec()).unwrap_err();
        assert!(matches!(nan, DataError::NonNumeric { .. }));
    }

    #[test]
    fn written_csv_reads_back() {
        let table = ingest_reader(FIXTURE.as_bytes(), &spec()).unwrap();
        let mut buf = Vec::new();
        write_csv(&table, &mut buf).unwrap();
        let back = ingest_reader(buf.as_slice(), &spec()).unwrap();
        assert_eq!(table, back);
    }
}
