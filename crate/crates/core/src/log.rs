//! Mission event log, serialized as JSON lines.
//!
//! The first line is a [`LogHeader`]; every following line is one
//! [`LogEvent`] tagged by `kind`. Events carry the time step `k` at which
//! they happened. Wall-clock data never enters the log, so a fixed seed
//! reproduces the file byte for byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Cell;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogHeader {
    pub format: u32,
    pub controller: String,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub robots: usize,
    pub humans: usize,
    pub budget_steps: u32,
    pub replan_period: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterDump {
    pub id: usize,
    pub center: (f64, f64),
    pub score: f64,
    pub state: String,
    /// (min x, min y, max x, max y) of the membership support.
    pub bbox: (i32, i32, i32, i32),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LogEvent {
    Move {
        k: u32,
        robot: usize,
        cell: Cell,
    },
    Cancel {
        k: u32,
        robot: usize,
        cell: Cell,
    },
    Rescue {
        k: u32,
        robot: usize,
        cell: Cell,
    },
    /// A robot re-planned. `version` is the registration number of its new
    /// weight field; `read` lists the (robot, version) fields it saw.
    Replan {
        k: u32,
        robot: usize,
        version: u64,
        read: Vec<(usize, u64)>,
        grade: f64,
        plan_len: usize,
    },
    Clusters {
        k: u32,
        clusters: Vec<ClusterDump>,
    },
    /// Uncertainty layer quantized to bytes, row-major, hex encoded.
    Map {
        k: u32,
        uncertainty: String,
    },
    End {
        k: u32,
        complete: bool,
        rescued: usize,
    },
}

impl LogEvent {
    pub fn step(&self) -> u32 {
        match self {
            LogEvent::Move { k, .. }
            | LogEvent::Cancel { k, .. }
            | LogEvent::Rescue { k, .. }
            | LogEvent::Replan { k, .. }
            | LogEvent::Clusters { k, .. }
            | LogEvent::Map { k, .. }
            | LogEvent::End { k, .. } => *k,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MissionLog {
    pub header: LogHeader,
    pub events: Vec<LogEvent>,
}

impl MissionLog {
    pub fn new(header: LogHeader) -> Self {
        MissionLog {
            header,
            events: Vec::new(),
        }
    }

    pub fn push(&mut self, event: LogEvent) {
        self.events.push(event);
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, e: serde_json::Error| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (i, first) = lines.next().ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "empty log".into(),
        })?;
        let header: LogHeader = serde_json::from_str(first).map_err(|e| parse_err(i + 1, e))?;
        let mut events = Vec::new();
        for (i, line) in lines {
            events.push(serde_json::from_str(line).map_err(|e| parse_err(i + 1, e))?);
        }
        Ok(MissionLog { header, events })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text, path)
    }

    /// Step of the m-th rescue (index m-1), in order.
    pub fn rescue_steps(&self) -> Vec<u32> {
        self.events
            .iter()
            .filter_map(|e| match e {
                LogEvent::Rescue { k, .. } => Some(*k),
                _ => None,
            })
            .collect()
    }

    /// Step at which `m` humans had been rescued, if ever.
    pub fn milestone(&self, m: usize) -> Option<u32> {
        if m == 0 {
            return Some(0);
        }
        self.rescue_steps().get(m - 1).copied()
    }

    pub fn end(&self) -> Option<(u32, bool, usize)> {
        self.events.iter().rev().find_map(|e| match e {
            LogEvent::End { k, complete, rescued } => Some((*k, *complete, *rescued)),
            _ => None,
        })
    }

    pub fn is_complete(&self) -> bool {
        self.end().is_some_and(|(_, c, _)| c)
    }

    /// Latest quantized uncertainty snapshot.
    pub fn final_uncertainty(&self) -> Option<Vec<u8>> {
        self.events.iter().rev().find_map(|e| match e {
            LogEvent::Map { uncertainty, .. } => decode_hex(uncertainty),
            _ => None,
        })
    }

    /// Fraction of cells whose final uncertainty is below `threshold`.
    pub fn explored_fraction(&self, threshold: f64) -> Option<f64> {
        let bytes = self.final_uncertainty()?;
        let n = bytes.len().max(1) as f64;
        Some(bytes.iter().filter(|&&b| f64::from(b) / 255.0 < threshold).count() as f64 / n)
    }

    /// Robot positions replayed from the move events.
    pub fn positions_at_end(&self, start: &[Cell]) -> Vec<Cell> {
        let mut pos = start.to_vec();
        for e in &self.events {
            if let LogEvent::Move { robot, cell, .. } | LogEvent::Rescue { robot, cell, .. } = e {
                if let Some(p) = pos.get_mut(*robot) {
                    *p = *cell;
                }
            }
        }
        pos
    }
}

pub fn encode_hex(bytes: &[u8]) -> String {
    const DIGITS: &[u8; 16] = b"0123456789abcdef";
    let mut s = String::with_capacity(bytes.len() * 2);
    for &b in bytes {
        s.push(DIGITS[(b >> 4) as usize] as char);
        s.push(DIGITS[(b & 15) as usize] as char);
    }
    s
}

pub fn decode_hex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MissionLog {
        let mut log = MissionLog::new(LogHeader {
            format: 1,
            controller: "flmpc".into(),
            seed: 7,
            width: 2,
            height: 2,
            robots: 1,
            humans: 2,
            budget_steps: 10,
            replan_period: 5,
        });
        log.push(LogEvent::Replan {
            k: 0,
            robot: 0,
            version: 1,
            read: vec![],
            grade: 0.25,
            plan_len: 3,
        });
        log.push(LogEvent::Move {
            k: 1,
            robot: 0,
            cell: Cell::new(1, 0),
        });
        log.push(LogEvent::Rescue {
            k: 2,
            robot: 0,
            cell: Cell::new(1, 1),
        });
        log.push(LogEvent::Map {
            k: 2,
            uncertainty: encode_hex(&[0, 255, 10, 200]),
        });
        log.push(LogEvent::End {
            k: 10,
            complete: false,
            rescued: 1,
        });
        log
    }

    #[test]
    fn jsonl_round_trip() {
        let log = sample();
        let text = log.to_jsonl();
        assert_eq!(text.lines().count(), 6);
        assert!(text.lines().nth(2).unwrap().starts_with(r#"{"kind":"move""#));
        let back = MissionLog::from_jsonl(&text, Path::new("x.jsonl")).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.to_jsonl(), text);
    }

    #[test]
    fn queries() {
        let log = sample();
        assert_eq!(log.milestone(1), Some(2));
        assert_eq!(log.milestone(2), None);
        assert!(!log.is_complete());
        assert_eq!(log.final_uncertainty(), Some(vec![0, 255, 10, 200]));
        assert_eq!(log.explored_fraction(0.3), Some(0.5));
        assert_eq!(log.positions_at_end(&[Cell::new(0, 0)]), vec![Cell::new(1, 1)]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let mut text = sample().to_jsonl();
        text.push_str("{\"kind\":\"teleport\"}\n");
        match MissionLog::from_jsonl(&text, Path::new("bad.jsonl")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("{other:?}"),
        }
    }
}
