use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Class {
    #[serde(rename = "HC")]
    Hc,
    #[serde(rename = "AD")]
    Ad,
}

impl Class {
    /// A CDR of 0 is a healthy control; 0.5, 1 and 2 are AD.
    pub fn from_cdr(cdr: f64) -> Result<Self> {
        if cdr == 0.0 {
            Ok(Class::Hc)
        } else if cdr == 0.5 || cdr == 1.0 || cdr == 2.0 {
            Ok(Class::Ad)
        } else {
            Err(Error::Data(format!("CDR {cdr} is not one of 0, 0.5, 1, 2")))
        }
    }

    /// Binary target: AD is the positive class.
    pub fn label(self) -> f64 {
        match self {
            Class::Hc => 0.0,
            Class::Ad => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Class::Hc => "HC",
            Class::Ad => "AD",
        }
    }

    pub fn other(self) -> Self {
        match self {
            Class::Hc => Class::Ad,
            Class::Ad => Class::Hc,
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Class {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "HC" => Ok(Class::Hc),
            "AD" => Ok(Class::Ad),
            _ => Err(Error::Data(format!("unknown class `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub subject_id: String,
    pub session_id: String,
    pub cdr: f64,
    pub class: Class,
    pub volume_path: Option<PathBuf>,
    pub matrix_path: Option<PathBuf>,
}

#[derive(Debug, Deserialize, Serialize)]
struct Row {
    subject_id: String,
    session_id: String,
    cdr: String,
    volume_path: Option<String>,
    matrix_path: Option<String>,
}

/// Sessions sorted by id, grouped by subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    sessions: Vec<SessionRecord>,
    subjects: BTreeMap<String, Vec<usize>>,
}

impl Cohort {
    pub fn new(mut sessions: Vec<SessionRecord>) -> Result<Self> {
        sessions.sort_by(|a, b| a.session_id.cmp(&b.session_id));
        for w in sessions.windows(2) {
            if w[0].session_id == w[1].session_id {
                return Err(Error::Data(format!("duplicate session_id `{}`", w[0].session_id)));
            }
        }
        let mut subjects: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, s) in sessions.iter().enumerate() {
            if Class::from_cdr(s.cdr)? != s.class {
                return Err(Error::Data(format!("session `{}` class disagrees with CDR", s.session_id)));
            }
            subjects.entry(s.subject_id.clone()).or_default().push(i);
        }
        Ok(Cohort { sessions, subjects })
    }

    pub fn sessions(&self) -> &[SessionRecord] {
        &self.sessions
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn session(&self, id: &str) -> Option<&SessionRecord> {
        self.sessions
            .binary_search_by(|s| s.session_id.as_str().cmp(id))
            .ok()
            .map(|i| &self.sessions[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.sessions.binary_search_by(|s| s.session_id.as_str().cmp(id)).ok()
    }

    /// Subject id → positions of its sessions in [`Cohort::sessions`].
    pub fn subjects(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.subjects
    }

    pub fn subject_sessions(&self, subject: &str) -> Vec<&str> {
        self.subjects
            .get(subject)
            .map(|ix| ix.iter().map(|&i| self.sessions[i].session_id.as_str()).collect())
            .unwrap_or_default()
    }

    /// Subjects whose sessions carry both classes.
    pub fn mixed_subjects(&self) -> BTreeSet<String> {
        self.subjects
            .iter()
            .filter(|(_, ix)| {
                let first = self.sessions[ix[0]].class;
                ix.iter().any(|&i| self.sessions[i].class != first)
            })
            .map(|(s, _)| s.clone())
            .collect()
    }

    /// `(HC, AD)` session counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let ad = self.sessions.iter().filter(|s| s.class == Class::Ad).count();
        (self.sessions.len() - ad, ad)
    }

    /// Cohort restricted to the given session ids.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<Cohort> {
        let mut out = Vec::new();
        for id in ids {
            out.push(
                self.session(id)
                    .ok_or_else(|| Error::Data(format!("unknown session `{id}`")))?
                    .clone(),
            );
        }
        Cohort::new(out)
    }
}

fn parse_cdr(text: &str) -> Result<f64> {
    let v: f64 = text
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("CDR `{text}` is not a number")))?;
    Class::from_cdr(v)?;
    Ok(v)
}

fn resolve(base: &Path, field: Option<String>) -> Option<PathBuf> {
    let f = field?.trim().to_string();
    if f.is_empty() {
        return None;
    }
    let p = PathBuf::from(f);
    Some(if p.is_absolute() { p } else { base.join(p) })
}

/// Reads `subject_id,session_id,cdr,volume_path,matrix_path`. Relative data
/// paths are resolved against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Cohort> {
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv {
        context: format!("opening {}", path.display()),
        source: e,
    })?;
    let headers = reader.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
    let expected = ["subject_id", "session_id", "cdr", "volume_path", "matrix_path"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::format(path, format!("header must be `{}`", expected.join(","))));
    }
    let mut sessions = Vec::new();
    for (line, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::format(path, format!("row {}: {e}", line + 2)))?;
        let bad = |m: String| Error::format(path, format!("row {}: {m}", line + 2));
        if row.subject_id.trim().is_empty() || row.session_id.trim().is_empty() {
            return Err(bad("empty subject or session id".into()));
        }
        let cdr = parse_cdr(&row.cdr).map_err(|e| bad(e.to_string()))?;
        sessions.push(SessionRecord {
            subject_id: row.subject_id.trim().to_string(),
            session_id: row.session_id.trim().to_string(),
            cdr,
            class: Class::from_cdr(cdr)?,
            volume_path: resolve(&base, row.volume_path),
            matrix_path: resolve(&base, row.matrix_path),
        });
    }
    Cohort::new(sessions).map_err(|e| Error::format(path, e.to_string()))
}

/// Writes a manifest; paths under `base` are stored relative to it.
pub fn write_manifest(path: &Path, cohort: &Cohort) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new(""));
    let rel = |p: &Option<PathBuf>| {
        p.as_ref()
            .map(|p| p.strip_prefix(base).unwrap_or(p).to_string_lossy().into_owned())
    };
    let csv_err = |e: csv::Error| Error::Csv {
        context: format!("writing {}", path.display()),
        source: e,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for s in cohort.sessions() {
        w.serialize(Row {
            subject_id: s.subject_id.clone(),
            session_id: s.session_id.clone(),
            cdr: format_cdr(s.cdr),
            volume_path: rel(&s.volume_path),
            matrix_path: rel(&s.matrix_path),
        })
        .map_err(csv_err)?;
    }
    if cohort.is_empty() {
        w.write_record(["subject_id", "session_id", "cdr", "volume_path", "matrix_path"])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn format_cdr(cdr: f64) -> String {
    if cdr.fract() == 0.0 {
        format!("{}", cdr as i64)
    } else {
        format!("{cdr}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(subject: &str, session: &str, cdr: f64) -> SessionRecord {
        SessionRecord {
            subject_id: subject.into(),
            session_id: session.into(),
            cdr,
            class: Class::from_cdr(cdr).unwrap(),
            volume_path: None,
            matrix_path: None,
        }
    }

    #[test]
    fn labelling_rule() {
        assert_eq!(Class::from_cdr(0.0).unwrap(), Class::Hc);
        for cdr in [0.5, 1.0, 2.0] {
            assert_eq!(Class::from_cdr(cdr).unwrap(), Class::Ad);
        }
        assert!(Class::from_cdr(3.0).is_err());
        assert!(Class::from_cdr(0.25).is_err());
    }

    #[test]
    fn mixed_subjects_are_flagged() {
        let c = Cohort::new(vec![rec("s1", "a", 0.0), rec("s1", "b", 1.0), rec("s2", "c", 0.5)]).unwrap();
        assert_eq!(c.mixed_subjects().into_iter().collect::<Vec<_>>(), vec!["s1".to_string()]);
        assert_eq!(c.class_counts(), (1, 2));
        assert_eq!(c.subject_sessions("s1"), vec!["a", "b"]);
    }

    #[test]
    fn duplicate_sessions_are_rejected() {
        assert!(Cohort::new(vec![rec("s1", "a", 0.0), rec("s2", "a", 0.0)]).is_err());
    }

    #[test]
    fn order_independent() {
        let a = Cohort::new(vec![rec("s1", "a", 0.0), rec("s2", "b", 1.0), rec("s1", "c", 0.0)]).unwrap();
        let b = Cohort::new(vec![rec("s1", "c", 0.0), rec("s1", "a", 0.0), rec("s2", "b", 1.0)]).unwrap();
        assert_eq!(a, b);
    }
}
