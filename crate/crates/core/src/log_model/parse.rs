//! Login stream parsing and canonical serialization.
//!
//! The primary format is JSON Lines with keys `ts, src, dst, user`; a CSV
//! stream with the exact header `ts,src,dst,user` is also accepted. Parsing
//! normalizes (UTC seconds, lowercase ids) so that parse ∘ serialize is the
//! identity on normalized events.

use std::io::BufRead;
use std::path::Path;

use serde::Deserialize;

use super::{parse_timestamp, LoginEvent, MachineId, UserName};
use crate::error::HopperError;
use crate::Result;

#[derive(Deserialize)]
struct RawLogin {
    ts: String,
    src: String,
    dst: String,
    user: String,
}

impl RawLogin {
    fn normalize(self) -> Result<LoginEvent> {
        for (field, value) in [("src", &self.src), ("dst", &self.dst), ("user", &self.user)] {
            if value.trim().is_empty() {
                return Err(HopperError::Validation(format!("empty {field}")));
            }
        }
        Ok(LoginEvent::new(
            parse_timestamp(&self.ts)?,
            MachineId::new(&self.src),
            MachineId::new(&self.dst),
            UserName::new(&self.user),
        ))
    }
}

/// Parse one JSONL login record.
pub fn parse_login_line(line: &str) -> Result<LoginEvent> {
    let raw: RawLogin = serde_json::from_str(line)
        .map_err(|e| HopperError::Validation(format!("bad login record: {e}")))?;
    raw.normalize()
}

/// Canonical one-line JSON form (`{"ts":...,"src":...,"dst":...,"user":...}`).
pub fn serialize_login(event: &LoginEvent) -> String {
    serde_json::to_string(event).expect("login events always serialize")
}

/// What to do with lines that fail to parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorPolicy {
    /// Stop at the first bad line.
    Abort,
    /// Skip bad lines and report them in [`ReadOutcome::skipped`].
    Skip,
}

/// Result of reading a login stream.
#[derive(Debug, Default)]
pub struct ReadOutcome {
    pub events: Vec<LoginEvent>,
    /// (1-based line number, message) for each skipped line.
    pub skipped: Vec<(usize, String)>,
}

const CSV_HEADER: &str = "ts,src,dst,user";

/// Read logins from any buffered reader, auto-detecting JSONL vs CSV.
///
/// CSV mode is selected when the first non-empty line is exactly the header
/// `ts,src,dst,user`.
pub fn read_logins<R: BufRead>(reader: R, policy: ErrorPolicy) -> Result<ReadOutcome> {
    let mut outcome = ReadOutcome::default();
    let mut lines = Vec::new();
    for line in reader.lines() {
        lines.push(line?);
    }
    let first_content = lines.iter().find(|l| !l.trim().is_empty());
    let is_csv = first_content.map(|l| l.trim() == CSV_HEADER).unwrap_or(false);

    let mut saw_header = false;
    for (idx, line) in lines.iter().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if is_csv && !saw_header {
            saw_header = true;
            continue;
        }
        let parsed = if is_csv {
            parse_csv_line(trimmed, line_no)
        } else {
            parse_login_line(trimmed)
        };
        match parsed {
            Ok(event) => outcome.events.push(event),
            Err(e) => match policy {
                ErrorPolicy::Abort => {
                    return Err(HopperError::Parse { line: line_no, msg: e.to_string() })
                }
                ErrorPolicy::Skip => outcome.skipped.push((line_no, e.to_string())),
            },
        }
    }
    Ok(outcome)
}

/// Read logins from a file path. See [`read_logins`].
pub fn read_logins_path(path: &Path, policy: ErrorPolicy) -> Result<ReadOutcome> {
    let file = std::fs::File::open(path)?;
    read_logins(std::io::BufReader::new(file), policy)
}

fn parse_csv_line(line: &str, line_no: usize) -> Result<LoginEvent> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(line.as_bytes());
    let mut record = csv::StringRecord::new();
    let got = reader.read_record(&mut record)?;
    if !got || record.len() != 4 {
        return Err(HopperError::Parse {
            line: line_no,
            msg: format!("expected 4 CSV fields, got {}", record.len()),
        });
    }
    RawLogin {
        ts: record[0].to_string(),
        src: record[1].to_string(),
        dst: record[2].to_string(),
        user: record[3].to_string(),
    }
    .normalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn jsonl_round_trip() {
        let line = r#"{"ts":"2019-03-01T17:00:04Z","src":"desk-7","dst":"srv-2","user":"alice"}"#;
        let event = parse_login_line(line).unwrap();
        assert_eq!(serialize_login(&event), line);
    }

    #[test]
    fn parse_folds_case_and_truncates() {
        let event = parse_login_line(
            r#"{"ts":"2019-03-01T18:00:04.25+01:00","src":"DESK-7","dst":"Srv-2","user":"Alice"}"#,
        )
        .unwrap();
        assert_eq!(
            serialize_login(&event),
            r#"{"ts":"2019-03-01T17:00:04Z","src":"desk-7","dst":"srv-2","user":"alice"}"#
        );
    }

    #[test]
    fn malformed_lines_abort_or_skip_with_line_numbers() {
        let data = "\n{\"ts\":\"2019-03-01T00:00:00Z\",\"src\":\"a\",\"dst\":\"b\",\"user\":\"u\"}\nnot json\n";
        let err = read_logins(data.as_bytes(), ErrorPolicy::Abort).unwrap_err();
        match err {
            HopperError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other}"),
        }
        let outcome = read_logins(data.as_bytes(), ErrorPolicy::Skip).unwrap();
        assert_eq!(outcome.events.len(), 1);
        assert_eq!(outcome.skipped.len(), 1);
        assert_eq!(outcome.skipped[0].0, 3);
    }

    #[test]
    fn csv_with_header_is_accepted() {
        let data = "ts,src,dst,user\n2019-03-01T00:00:00Z,a,b,alice\n2019-03-01T00:00:05Z,b,c,Bob\n";
        let outcome = read_logins(data.as_bytes(), ErrorPolicy::Abort).unwrap();
        assert_eq!(outcome.events.len(), 2);
        assert_eq!(outcome.events[1].user, UserName::new("bob"));
    }

    #[test]
    fn empty_fields_are_rejected() {
        let line = r#"{"ts":"2019-03-01T00:00:00Z","src":"","dst":"b","user":"u"}"#;
        assert!(parse_login_line(line).is_err());
    }

    proptest! {
        // parse(serialize(e)) == e for arbitrary normalized events.
        #[test]
        fn serialization_round_trips(
            secs in 0i64..4_000_000_000i64,
            src in "[a-z][a-z0-9-]{0,12}",
            dst in "[a-z][a-z0-9-]{0,12}",
            user in "[a-z][a-z0-9._]{0,12}",
        ) {
            let event = LoginEvent::new(
                chrono::DateTime::from_timestamp(secs, 0).unwrap(),
                MachineId::new(&src),
                MachineId::new(&dst),
                UserName::new(&user),
            );
            let line = serialize_login(&event);
            prop_assert_eq!(parse_login_line(&line).unwrap(), event);
        }
    }
}
