//! File formats: trajectory NDJSON, tree JSON and observation streams.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::filter::Observation;
use crate::filtration::{ClusterTree, TreeJson};
use crate::geometry::{Point, Trajectory};
use crate::obsgen::ObsRecord;

/// Opens `path` for reading, naming it in any error.
pub fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::File { path: path.to_path_buf(), source })
}

/// Creates or truncates `path`, naming it in any error.
pub fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|source| Error::File { path: path.to_path_buf(), source })
}

#[derive(Deserialize)]
struct RawTrajectory {
    id: String,
    points: Vec<Vec<f64>>,
}

fn parse_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse { line, msg: msg.to_string() }
}

/// Reads one `{"id": ..., "points": [[x, y], ...]}` object per line.
/// Blank lines are skipped. All points across the file must share a dimension.
pub fn read_trajectories(reader: impl BufRead) -> Result<Vec<Trajectory>> {
    let mut out: Vec<Trajectory> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawTrajectory = serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e))?;
        let points = raw
            .points
            .into_iter()
            .map(Point::new)
            .collect::<Result<Vec<_>>>()
            .map_err(|e| parse_err(i + 1, e))?;
        let t = Trajectory::new(raw.id, points).map_err(|e| parse_err(i + 1, e))?;
        if let Some(first) = out.first() {
            if first.dim() != t.dim() {
                return Err(parse_err(i + 1, format!("dimension {} differs from {}", t.dim(), first.dim())));
            }
        }
        out.push(t);
    }
    Ok(out)
}

pub fn write_trajectories(mut w: impl Write, ts: &[Trajectory]) -> Result<()> {
    for t in ts {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    read_trajectories(BufReader::new(open(path)?))
}

pub fn save_trajectories(path: &Path, ts: &[Trajectory]) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    write_trajectories(&mut w, ts)?;
    w.flush()?;
    Ok(())
}

pub fn load_tree(path: &Path) -> Result<ClusterTree> {
    let doc: TreeJson = serde_json::from_reader(BufReader::new(open(path)?))?;
    ClusterTree::from_json(doc)
}

pub fn save_tree(path: &Path, tree: &ClusterTree) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    serde_json::to_writer_pretty(&mut w, &tree.to_json())?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes `steps[k]` with `t = k + 1`.
pub fn write_observations(mut w: impl Write, steps: &[Vec<Observation>]) -> Result<()> {
    for (k, obs) in steps.iter().enumerate() {
        for o in obs {
            serde_json::to_writer(&mut w, &ObsRecord::from_observation(k as u64 + 1, o))?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Groups records by `t` into steps `1..=max t`; steps without records are
/// empty. Records must be in non-decreasing `t` order with `t >= 1`.
pub fn read_observations(reader: impl BufRead) -> Result<Vec<Vec<Observation>>> {
    let mut steps: Vec<Vec<Observation>> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ObsRecord = serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e))?;
        let t = rec.t as usize;
        if t == 0 || t < steps.len() {
            return Err(parse_err(i + 1, format!("time {t} is out of order")));
        }
        steps.resize_with(t, Vec::new);
        steps[t - 1].push(rec.to_observation().map_err(|e| parse_err(i + 1, e))?);
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtration::NodeId;

    #[test]
    fn trajectory_round_trip() {
        let ts = vec![
            Trajectory::from_xy("a", &[(0.0, 0.0), (1.0, 0.5)]).unwrap(),
            Trajectory::from_xy("b", &[(2.0, 1.0)]).unwrap(),
        ];
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &ts).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), r#"{"id":"a","points":[[0.0,0.0],[1.0,0.5]]}"#);
        assert_eq!(read_trajectories(&buf[..]).unwrap(), ts);
    }

    #[test]
    fn rejects_bad_trajectories() {
        let ragged = "{\"id\":\"a\",\"points\":[[0,0],[1,1,1]]}\n";
        assert!(read_trajectories(ragged.as_bytes()).is_err());
        let mixed = "{\"id\":\"a\",\"points\":[[0,0]]}\n\n{\"id\":\"b\",\"points\":[[0,0,0]]}\n";
        match read_trajectories(mixed.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(read_trajectories("{\"id\":\"a\",\"points\":[]}".as_bytes()).is_err());
        assert!(read_trajectories("not json".as_bytes()).is_err());
    }

    #[test]
    fn observation_round_trip() {
        let steps = vec![
            vec![Observation::Fine { position: Point::xy(1.0, 2.0) }],
            vec![],
            vec![
                Observation::Fine { position: Point::xy(0.0, 0.0) },
                Observation::Coarse { class: NodeId(4), level: 1.5 },
            ],
        ];
        let mut buf = Vec::new();
        write_observations(&mut buf, &steps).unwrap();
        assert_eq!(read_observations(&buf[..]).unwrap(), steps);
        let backwards = "{\"t\":2,\"kind\":\"fine\",\"position\":[0,0]}\n{\"t\":1,\"kind\":\"fine\",\"position\":[0,0]}\n";
        assert!(read_observations(backwards.as_bytes()).is_err());
    }
}
