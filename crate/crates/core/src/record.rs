//! Records and their canonical sentence serialization.
//!
//! A [`Record`] carries exactly the five canonical fields. Missing values are
//! stored as empty strings so the sentence template and every downstream
//! string similarity stay total.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The canonical record fields, in CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Username,
    Email,
    Domain,
    Servername,
    Status,
}

impl Field {
    pub const COUNT: usize = 5;

    /// All fields in CSV column order.
    pub const ALL: [Field; Field::COUNT] = [
        Field::Username,
        Field::Email,
        Field::Domain,
        Field::Servername,
        Field::Status,
    ];

    pub const fn name(self) -> &'static str {
        match self {
            Field::Username => "username",
            Field::Email => "email",
            Field::Domain => "domain",
            Field::Servername => "servername",
            Field::Status => "status",
        }
    }

    pub fn from_name(name: &str) -> Option<Field> {
        Field::ALL.into_iter().find(|f| f.name() == name)
    }

    pub(crate) const fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which side of the linkage a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    Reference,
    Query,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Record {
    pub id: String,
    pub source: Source,
    values: [String; Field::COUNT],
}

impl Record {
    /// Creates a record with every field empty.
    pub fn new(id: impl Into<String>, source: Source) -> Self {
        Self {
            id: id.into(),
            source,
            values: Default::default(),
        }
    }

    pub fn with_field(mut self, field: Field, value: impl Into<String>) -> Self {
        self.values[field.index()] = value.into();
        self
    }

    pub fn get(&self, field: Field) -> &str {
        &self.values[field.index()]
    }

    pub fn set(&mut self, field: Field, value: impl Into<String>) {
        self.values[field.index()] = value.into();
    }

    pub fn get_mut(&mut self, field: Field) -> &mut String {
        &mut self.values[field.index()]
    }

    /// `(field, value)` pairs in column order.
    pub fn fields(&self) -> impl Iterator<Item = (Field, &str)> {
        Field::ALL.into_iter().map(move |f| (f, self.get(f)))
    }
}

/// Trims surrounding whitespace; status values are also lower-cased.
pub fn normalize_field(field: Field, raw: &str) -> String {
    let trimmed = raw.trim();
    match field {
        Field::Status => trimmed.to_lowercase(),
        _ => trimmed.to_owned(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SerializedSentence {
    pub record_id: String,
    pub text: String,
}

/// Renders a record into the fixed natural-language template fed to the encoder.
pub fn serialize_record(record: &Record) -> SerializedSentence {
    let n = |f| normalize_field(f, record.get(f));
    let text = format!(
        "The username {} with email {} and domain {} on {} has {} status.",
        n(Field::Username),
        n(Field::Email),
        n(Field::Domain),
        n(Field::Servername),
        n(Field::Status),
    );
    SerializedSentence {
        record_id: record.id.clone(),
        text,
    }
}

pub fn serialize_all(records: &[Record]) -> Vec<SerializedSentence> {
    records.iter().map(serialize_record).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordFormat {
    Csv,
    Jsonl,
}

impl RecordFormat {
    /// Guesses the format from a file extension; anything but `.jsonl`/`.json` is CSV.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => RecordFormat::Jsonl,
            _ => RecordFormat::Csv,
        }
    }
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("malformed input at line {line}, column {column}: {message}")]
    MalformedInput {
        line: u64,
        column: u64,
        message: String,
    },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("empty record id at line {0}")]
    EmptyId(u64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const ID_COLUMN: &str = "record_id";

/// Parses records in input order, rejecting duplicate ids.
pub fn parse_records<R: Read>(
    input: R,
    format: RecordFormat,
    source: Source,
) -> Result<Vec<Record>, RecordError> {
    let records = match format {
        RecordFormat::Csv => parse_csv(input, source)?,
        RecordFormat::Jsonl => parse_jsonl(input, source)?,
    };
    let mut seen = HashSet::with_capacity(records.len());
    for r in &records {
        if !seen.insert(r.id.as_str()) {
            return Err(RecordError::DuplicateId(r.id.clone()));
        }
    }
    Ok(records)
}

fn parse_csv<R: Read>(input: R, source: Source) -> Result<Vec<Record>, RecordError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = reader.headers().map_err(csv_error)?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| RecordError::MissingColumn(name.to_owned()))
    };
    let id_col = column(ID_COLUMN)?;
    let mut field_cols = [0usize; Field::COUNT];
    for f in Field::ALL {
        field_cols[f.index()] = column(f.name())?;
    }

    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(0, |p| p.line());
        let cell = |col: usize| {
            row.get(col).ok_or_else(|| RecordError::MalformedInput {
                line,
                column: col as u64 + 1,
                message: "row is shorter than the header".into(),
            })
        };
        let id = cell(id_col)?;
        if id.is_empty() {
            return Err(RecordError::EmptyId(line));
        }
        let mut record = Record::new(id, source);
        for f in Field::ALL {
            record.set(f, cell(field_cols[f.index()])?);
        }
        out.push(record);
    }
    Ok(out)
}

fn csv_error(e: csv::Error) -> RecordError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => RecordError::Io(io),
        csv::ErrorKind::Utf8 { pos, err } => RecordError::MalformedInput {
            line: pos.map_or(line, |p| p.line()),
            column: err.field() as u64 + 1,
            message: "invalid UTF-8".into(),
        },
        csv::ErrorKind::UnequalLengths {
            pos,
            expected_len,
            len,
        } => RecordError::MalformedInput {
            line: pos.map_or(line, |p| p.line()),
            column: len.min(expected_len) + 1,
            message: format!("expected {expected_len} columns, found {len}"),
        },
        other => RecordError::MalformedInput {
            line,
            column: 0,
            message: format!("{other:?}"),
        },
    }
}

fn parse_jsonl<R: Read>(input: R, source: Source) -> Result<Vec<Record>, RecordError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let object: HashMap<String, serde_json::Value> =
            serde_json::from_str(&line).map_err(|e| RecordError::MalformedInput {
                line: line_no,
                column: e.column() as u64,
                message: e.to_string(),
            })?;
        let string_value = |key: &str| -> Result<String, RecordError> {
            match object.get(key) {
                None => Err(RecordError::MissingColumn(key.to_owned())),
                Some(serde_json::Value::String(s)) => Ok(s.clone()),
                Some(other) => Err(RecordError::MalformedInput {
                    line: line_no,
                    column: line.find(&format!("\"{key}\"")).map_or(0, |c| c as u64 + 1),
                    message: format!("value of {key:?} must be a string, got {other}"),
                }),
            }
        };
        let id = string_value(ID_COLUMN)?;
        if id.is_empty() {
            return Err(RecordError::EmptyId(line_no));
        }
        let mut record = Record::new(id, source);
        for f in Field::ALL {
            record.set(f, string_value(f.name())?);
        }
        out.push(record);
    }
    Ok(out)
}

/// Writes records as CSV with the canonical header.
pub fn write_records_csv<W: Write>(out: W, records: &[Record]) -> Result<(), RecordError> {
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec![ID_COLUMN];
    header.extend(Field::ALL.iter().map(|f| f.name()));
    writer.write_record(&header).map_err(csv_error)?;
    for r in records {
        let mut row = vec![r.id.as_str()];
        row.extend(Field::ALL.iter().map(|&f| r.get(f)));
        writer.write_record(&row).map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fig1() -> Record {
        Record::new("u1", Source::Reference)
            .with_field(Field::Status, "Active")
            .with_field(Field::Username, "Maresha")
            .with_field(Field::Email, "sharifi@email.com")
            .with_field(Field::Servername, "server82")
            .with_field(Field::Domain, "example.com")
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_field(Field::Status, "Active"), "active");
        assert_eq!(normalize_field(Field::Email, "a@b.c"), "a@b.c");
        assert_eq!(normalize_field(Field::Username, "  Maresha "), "Maresha");
        // Only status is case-folded.
        assert_eq!(normalize_field(Field::Domain, " Example.COM"), "Example.COM");
    }

    #[test]
    fn serializes_the_reference_sentence() {
        let s = serialize_record(&fig1());
        assert_eq!(
            s.text,
            "The username Maresha with email sharifi@email.com and domain example.com on server82 has active status."
        );
        assert_eq!(s.record_id, "u1");
        assert_eq!(serialize_record(&fig1()), s);
    }

    #[test]
    fn serializes_empty_record() {
        let s = serialize_record(&Record::new("x", Source::Query));
        assert_eq!(s.text, "The username  with email  and domain  on  has  status.");
    }

    #[test]
    fn parses_csv_row() {
        let csv = "record_id,username,email,domain,servername,status\n\
                   u1,Maresha,sharifi@email.com,example.com,server82,Active\n";
        let recs = parse_records(csv.as_bytes(), RecordFormat::Csv, Source::Reference).unwrap();
        assert_eq!(recs, vec![fig1()]);
    }

    #[test]
    fn csv_columns_may_be_reordered_and_quoted() {
        let csv = "status,servername,domain,email,username,record_id,extra\n\
                   Active,server82,example.com,sharifi@email.com,\"Maresha\",u1,ignored\n";
        let recs = parse_records(csv.as_bytes(), RecordFormat::Csv, Source::Reference).unwrap();
        assert_eq!(recs, vec![fig1()]);
    }

    #[test]
    fn header_only_csv_is_empty() {
        let csv = "record_id,username,email,domain,servername,status\n";
        let recs = parse_records(csv.as_bytes(), RecordFormat::Csv, Source::Query).unwrap();
        assert!(recs.is_empty());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let csv = "record_id,username,email,domain,servername,status\n\
                   u1,a,b,c,d,e\nu1,f,g,h,i,j\n";
        let err = parse_records(csv.as_bytes(), RecordFormat::Csv, Source::Query).unwrap_err();
        assert!(matches!(err, RecordError::DuplicateId(id) if id == "u1"));
    }

    #[test]
    fn missing_column_reported() {
        let csv = "record_id,username,email,domain,status\nu1,a,b,c,d\n";
        let err = parse_records(csv.as_bytes(), RecordFormat::Csv, Source::Query).unwrap_err();
        assert!(matches!(err, RecordError::MissingColumn(c) if c == "servername"));
    }

    #[test]
    fn ragged_csv_row_reports_line() {
        let csv = "record_id,username,email,domain,servername,status\nu1,a,b\n";
        let err = parse_records(csv.as_bytes(), RecordFormat::Csv, Source::Query).unwrap_err();
        assert!(matches!(err, RecordError::MalformedInput { line: 2, .. }), "{err}");
    }

    #[test]
    fn parses_jsonl() {
        let jsonl = r#"{"record_id":"u1","username":"Maresha","email":"sharifi@email.com","domain":"example.com","servername":"server82","status":"Active"}

{"record_id":"u2","username":"","email":"","domain":"","servername":"","status":""}
"#;
        let recs = parse_records(jsonl.as_bytes(), RecordFormat::Jsonl, Source::Reference).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0], fig1());
    }

    #[test]
    fn jsonl_errors() {
        let bad = "{\"record_id\":\"u1\",\n";
        assert!(matches!(
            parse_records(bad.as_bytes(), RecordFormat::Jsonl, Source::Query),
            Err(RecordError::MalformedInput { line: 1, .. })
        ));
        let missing = r#"{"record_id":"u1","username":"a","email":"b","domain":"c","status":"d"}"#;
        assert!(matches!(
            parse_records(missing.as_bytes(), RecordFormat::Jsonl, Source::Query),
            Err(RecordError::MissingColumn(c)) if c == "servername"
        ));
        let numeric = r#"{"record_id":"u1","username":"a","email":"b","domain":"c","servername":7,"status":"d"}"#;
        assert!(matches!(
            parse_records(numeric.as_bytes(), RecordFormat::Jsonl, Source::Query),
            Err(RecordError::MalformedInput { line: 1, .. })
        ));
    }

    #[test]
    fn csv_write_then_parse() {
        let mut tricky = fig1();
        tricky.set(Field::Username, "comma, \"quoted\"");
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &[tricky.clone()]).unwrap();
        let back = parse_records(buf.as_slice(), RecordFormat::Csv, Source::Reference).unwrap();
        assert_eq!(back, vec![tricky]);
    }

    const CONNECTORS: [&str; 7] = [
        "The username ",
        " with email ",
        " and domain ",
        " on ",
        " has ",
        " status.",
        "status",
    ];

    fn field_value() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9@. ]{0,12}".prop_filter("no connector phrases", |s| {
            !CONNECTORS.iter().any(|c| s.contains(c.trim()) || s.contains(c))
        })
    }

    fn record_strategy() -> impl Strategy<Value = Record> {
        proptest::array::uniform5(field_value()).prop_map(|vals| {
            let mut r = Record::new("p", Source::Query);
            for (f, v) in Field::ALL.into_iter().zip(vals) {
                r.set(f, v);
            }
            r
        })
    }

    fn normalized_tuple(r: &Record) -> Vec<String> {
        Field::ALL.iter().map(|&f| normalize_field(f, r.get(f))).collect()
    }

    proptest! {
        #[test]
        fn serialization_is_injective(a in record_strategy(), b in record_strategy()) {
            let sa = serialize_record(&a).text;
            let sb = serialize_record(&b).text;
            prop_assert_eq!(sa == sb, normalized_tuple(&a) == normalized_tuple(&b));
        }

        #[test]
        fn parse_then_serialize_is_stable(rs in proptest::collection::vec(record_strategy(), 0..8)) {
            let rs: Vec<Record> = rs.into_iter().enumerate().map(|(i, mut r)| { r.id = format!("id{i}"); r }).collect();
            let mut buf = Vec::new();
            write_records_csv(&mut buf, &rs).unwrap();
            let once = serialize_all(&parse_records(buf.as_slice(), RecordFormat::Csv, Source::Query).unwrap());
            let twice = serialize_all(&parse_records(buf.as_slice(), RecordFormat::Csv, Source::Query).unwrap());
            prop_assert_eq!(once, twice);
        }
    }
}
