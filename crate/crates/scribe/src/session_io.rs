//! Reading and writing recording sessions: STK1 EEG plus events and kinematics CSVs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scribe_core::session::{Event, KinSample, PenEvent, RawSession};

use crate::stk;
use crate::Failure;

pub const EEG_FILE: &str = "eeg.stk";
pub const EVENTS_FILE: &str = "events.csv";
pub const KINEMATICS_FILE: &str = "kinematics.csv";

#[derive(Debug, Serialize, Deserialize)]
struct EventRow {
    sample_index: usize,
    kind: String,
    char_class: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct KinRow {
    sample_index: usize,
    x: f64,
    y: f64,
    pressure: f64,
    velocity: f64,
}

/// Locations of the three files that make up a session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionPaths {
    pub eeg: PathBuf,
    pub events: PathBuf,
    pub kinematics: PathBuf,
}

impl SessionPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            eeg: dir.join(EEG_FILE),
            events: dir.join(EVENTS_FILE),
            kinematics: dir.join(KINEMATICS_FILE),
        }
    }

    pub fn all(&self) -> [&Path; 3] {
        [&self.eeg, &self.events, &self.kinematics]
    }
}

pub fn write_events(path: &Path, events: &[Event]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Failure::io(path, e))?;
    for e in events {
        w.serialize(EventRow {
            sample_index: e.sample_index,
            kind: e.kind.as_str().to_string(),
            char_class: e.char_class,
        })
        .map_err(|e| Failure::io(path, e))?;
    }
    w.flush().map_err(|e| Failure::io(path, e))
}

pub fn read_events(path: &Path) -> Result<Vec<Event>, Failure> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Failure::io(path, e))?;
    r.deserialize::<EventRow>()
        .map(|row| {
            let row = row.map_err(|e| Failure::io(path, e))?;
            let kind = PenEvent::parse(&row.kind).ok_or_else(|| Failure::format(path, format!("unknown event kind {:?}", row.kind)))?;
            Ok(Event {
                sample_index: row.sample_index,
                kind,
                char_class: row.char_class,
            })
        })
        .collect()
}

pub fn write_kinematics(path: &Path, kin: &[KinSample]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Failure::io(path, e))?;
    for k in kin {
        w.serialize(KinRow {
            sample_index: k.sample_index,
            x: k.x,
            y: k.y,
            pressure: k.pressure,
            velocity: k.velocity,
        })
        .map_err(|e| Failure::io(path, e))?;
    }
    w.flush().map_err(|e| Failure::io(path, e))
}

pub fn read_kinematics(path: &Path) -> Result<Vec<KinSample>, Failure> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Failure::io(path, e))?;
    r.deserialize::<KinRow>()
        .map(|row| {
            let k = row.map_err(|e| Failure::io(path, e))?;
            Ok(KinSample {
                sample_index: k.sample_index,
                x: k.x,
                y: k.y,
                pressure: k.pressure,
                velocity: k.velocity,
            })
        })
        .collect()
}

pub fn write_session(paths: &SessionPaths, session: &RawSession) -> Result<(), Failure> {
    if let Some(dir) = paths.eeg.parent() {
        fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
    }
    stk::write(&paths.eeg, session.eeg()).map_err(|e| Failure::io(&paths.eeg, e))?;
    write_events(&paths.events, session.events())?;
    write_kinematics(&paths.kinematics, session.kinematics())
}

pub fn read_session(paths: &SessionPaths) -> Result<RawSession, Failure> {
    let eeg = stk::read(&paths.eeg).map_err(|e| Failure::io(&paths.eeg, e))?;
    let events = read_events(&paths.events)?;
    let kin = read_kinematics(&paths.kinematics)?;
    RawSession::new(eeg, events, kin).map_err(|e| Failure::core("session", e))
}
