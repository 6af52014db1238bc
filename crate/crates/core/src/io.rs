//! File formats: JSON documents for models, policies and reports, JSONL for trajectories.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pomdp::{Step, Trajectory};

#[derive(Debug, Serialize, Deserialize)]
struct StepLine {
    t: usize,
    y: usize,
    a: usize,
    r: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    x: Option<usize>,
}

/// Writes one `{"t","y","a","r"[,"x"]}` object per line; `t` is zero-based.
pub fn write_trajectory<W: Write>(traj: &Trajectory, mut out: W) -> Result<()> {
    for (t, step) in traj.steps.iter().enumerate() {
        let line = StepLine {
            t,
            y: step.y,
            a: step.a,
            r: step.r,
            x: traj.hidden_states.as_ref().map(|h| h[t]),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trajectory<R: Read>(input: R) -> Result<Trajectory> {
    let mut steps = Vec::new();
    let mut hidden = Vec::new();
    for (lineno, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: StepLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        if parsed.t != steps.len() {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected t = {}, found {}", steps.len(), parsed.t),
            });
        }
        let has_hidden = parsed.x.is_some();
        if !steps.is_empty() && has_hidden != (hidden.len() == steps.len()) {
            return Err(Error::Parse {
                line: lineno + 1,
                message: "hidden state \"x\" must be present on every line or on none".into(),
            });
        }
        if let Some(x) = parsed.x {
            hidden.push(x);
        }
        steps.push(Step { y: parsed.y, a: parsed.a, r: parsed.r });
    }
    let hidden_states = (!hidden.is_empty()).then_some(hidden);
    Ok(Trajectory { steps, seed: None, hidden_states })
}

pub fn save_trajectory(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    write_trajectory(traj, BufWriter::new(File::create(path)?))
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    read_trajectory(File::open(path)?)
}

pub fn save_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_with_hidden_states() {
        let traj = Trajectory {
            steps: vec![Step { y: 1, a: 0, r: 1 }, Step { y: 0, a: 1, r: 0 }],
            seed: Some(3),
            hidden_states: Some(vec![1, 0]),
        };
        let mut buf = Vec::new();
        write_trajectory(&traj, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), r#"{"t":0,"y":1,"a":0,"r":1,"x":1}"#);
        let back = read_trajectory(buf.as_slice()).unwrap();
        assert_eq!(back.steps, traj.steps);
        assert_eq!(back.hidden_states, traj.hidden_states);
    }

    #[test]
    fn jsonl_without_hidden_states() {
        let text = "{\"t\":0,\"y\":0,\"a\":0,\"r\":0}\n\n{\"t\":1,\"y\":1,\"a\":0,\"r\":1}\n";
        let traj = read_trajectory(text.as_bytes()).unwrap();
        assert_eq!(traj.len(), 2);
        assert!(traj.hidden_states.is_none());
    }

    #[test]
    fn jsonl_errors_carry_line_numbers() {
        let gap = "{\"t\":0,\"y\":0,\"a\":0,\"r\":0}\n{\"t\":2,\"y\":0,\"a\":0,\"r\":0}\n";
        assert!(matches!(read_trajectory(gap.as_bytes()), Err(Error::Parse { line: 2, .. })));
        let mixed = "{\"t\":0,\"y\":0,\"a\":0,\"r\":0,\"x\":1}\n{\"t\":1,\"y\":0,\"a\":0,\"r\":0}\n";
        assert!(matches!(read_trajectory(mixed.as_bytes()), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(read_trajectory("not json".as_bytes()), Err(Error::Parse { line: 1, .. })));
    }
}
