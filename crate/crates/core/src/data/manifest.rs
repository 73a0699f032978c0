use std::collections::HashSet;
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const MANIFEST_HEADER: [&str; 6] = [
    "image_path",
    "label",
    "spoof_type",
    "video_id",
    "subject_id",
    "frame_index",
];

/// Spoof type tag carried by every live record.
pub const LIVE_TYPE: &str = "live";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Live,
    Spoof,
}

impl Label {
    pub fn is_spoof(self) -> bool {
        self == Label::Spoof
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Live => "live",
            Label::Spoof => "spoof",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "live" => Ok(Label::Live),
            "spoof" => Ok(Label::Spoof),
            other => Err(format!("unknown label `{other}` (expected `live` or `spoof`)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub image_path: PathBuf,
    pub label: Label,
    pub spoof_type: String,
    pub video_id: String,
    pub subject_id: String,
    pub frame_index: Option<u64>,
}

/// Reads a manifest file. Relative image paths are resolved against the
/// manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let file = std::fs::File::open(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest(file, path, base)
}

/// Parses manifest text; `source` is only used in error messages.
pub fn parse_manifest(input: impl Read, source: &Path, base: &Path) -> Result<Vec<SampleRecord>> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: source.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut rows = reader.records();

    match rows.next() {
        None => return Err(parse_err(1, "missing header line".into())),
        Some(row) => {
            let row = row.map_err(|e| parse_err(1, e.to_string()))?;
            let fields: Vec<&str> = row.iter().map(str::trim).collect();
            if fields != MANIFEST_HEADER {
                return Err(parse_err(
                    1,
                    format!("header must be `{}`", MANIFEST_HEADER.join(",")),
                ));
            }
        }
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for row in rows {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() == 1 && row[0].trim().is_empty() {
            continue;
        }
        if row.len() != MANIFEST_HEADER.len() {
            return Err(parse_err(
                line,
                format!("expected {} columns, found {}", MANIFEST_HEADER.len(), row.len()),
            ));
        }
        let field = |i: usize| row[i].trim();
        for (i, name) in MANIFEST_HEADER.iter().enumerate().take(5) {
            if field(i).is_empty() {
                return Err(parse_err(line, format!("empty `{name}`")));
            }
        }
        let label: Label = field(1).parse().map_err(|m| parse_err(line, m))?;
        let spoof_type = field(2).to_string();
        if (label == Label::Live) != (spoof_type == LIVE_TYPE) {
            return Err(parse_err(
                line,
                format!("label `{label}` is inconsistent with spoof type `{spoof_type}`"),
            ));
        }
        let frame_index = match field(5) {
            "" => None,
            s => Some(s.parse::<u64>().map_err(|_| {
                parse_err(line, format!("frame_index `{s}` is not a non-negative integer"))
            })?),
        };
        let video_id = field(3).to_string();
        if !seen.insert((video_id.clone(), frame_index)) {
            return Err(parse_err(
                line,
                format!("duplicate frame {frame_index:?} of video `{video_id}`"),
            ));
        }
        let raw = PathBuf::from(field(0));
        let image_path = if raw.is_absolute() { raw } else { base.join(raw) };
        records.push(SampleRecord {
            image_path,
            label,
            spoof_type,
            video_id,
            subject_id: field(4).to_string(),
            frame_index,
        });
    }
    if records.is_empty() {
        log::warn!("manifest {} has no records", source.display());
    }
    Ok(records)
}

/// Writes `records` atomically. Image paths are written as given.
pub fn write_manifest(path: &Path, records: &[SampleRecord]) -> Result<()> {
    write_atomic(path, |out| {
        let mut w = csv::WriterBuilder::new().from_writer(out);
        w.write_record(MANIFEST_HEADER).map_err(csv_io)?;
        for r in records {
            let frame = r.frame_index.map(|f| f.to_string()).unwrap_or_default();
            w.write_record([
                r.image_path.to_string_lossy().as_ref(),
                &r.label.to_string(),
                &r.spoof_type,
                &r.video_id,
                &r.subject_id,
                &frame,
            ])
            .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    })
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<SampleRecord>> {
        parse_manifest(text.as_bytes(), Path::new("m.csv"), Path::new("root"))
    }

    const HEADER: &str = "image_path,label,spoof_type,video_id,subject_id,frame_index\n";

    #[test]
    fn parses_a_spoof_line() {
        let r = parse(&format!("{HEADER}imgs/a/0001.png,spoof,print,a,S01,1\n")).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].spoof_type, "print");
        assert_eq!(r[0].label, Label::Spoof);
        assert_eq!(r[0].frame_index, Some(1));
        assert_eq!(r[0].image_path, Path::new("root/imgs/a/0001.png"));
    }

    #[test]
    fn unknown_label_reports_its_line() {
        let text = format!("{HEADER}a.png,live,live,v,S,0\nb.png,fake,print,w,S,0\n");
        match parse(&text) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("fake"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse(HEADER).unwrap().is_empty());
    }

    #[test]
    fn rejects_inconsistent_and_duplicate_and_short_rows() {
        for body in [
            "a.png,live,print,v,S,0\n",
            "a.png,spoof,live,v,S,0\n",
            "a.png,live,live,v,S,0\nb.png,live,live,v,S,0\n",
            "a.png,live,live,v,S\n",
            "a.png,live,live,v,S,x\n",
        ] {
            assert!(matches!(parse(&format!("{HEADER}{body}")), Err(Error::Parse { .. })), "{body}");
        }
        assert!(matches!(parse("path,label\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn missing_frame_index_is_allowed() {
        let r = parse(&format!("{HEADER}a.png,live,live,v,S,\n")).unwrap();
        assert_eq!(r[0].frame_index, None);
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let records = vec![
            SampleRecord {
                image_path: "x/1.png".into(),
                label: Label::Live,
                spoof_type: "live".into(),
                video_id: "v1".into(),
                subject_id: "s1".into(),
                frame_index: Some(0),
            },
            SampleRecord {
                image_path: "x/2.png".into(),
                label: Label::Spoof,
                spoof_type: "replay".into(),
                video_id: "v2".into(),
                subject_id: "s2".into(),
                frame_index: None,
            },
        ];
        write_manifest(&path, &records).unwrap();
        let loaded = load_manifest(&path).unwrap();
        let expected: Vec<_> = records
            .into_iter()
            .map(|mut r| {
                r.image_path = dir.path().join(r.image_path);
                r
            })
            .collect();
        assert_eq!(loaded, expected);
    }
}
