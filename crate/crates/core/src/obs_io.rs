//! Observation files.
//!
//! One CSV per set with header `trial,step,time,x0,..,x{d-1},u0,..,u{k-1}`,
//! rows sorted by `(trial, step)`, and a JSON sidecar next to it
//! (`obs.csv` → `obs.meta.json`) holding `d, k, T, n, N, problem_tag, seed`.
//! Floats are written in shortest round-trip form, so save followed by load
//! reproduces every value bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::trajectory::{ObservationSet, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationMeta {
    pub d: usize,
    pub k: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n: usize,
    #[serde(rename = "N")]
    pub trajectories: usize,
    pub problem_tag: String,
    pub seed: Option<u64>,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn header(d: usize, k: usize) -> Vec<String> {
    let mut cols = vec!["trial".to_string(), "step".into(), "time".into()];
    cols.extend((0..d).map(|i| format!("x{i}")));
    cols.extend((0..k).map(|i| format!("u{i}")));
    cols
}

pub fn save_observations(obs: &ObservationSet, path: &Path, seed: Option<u64>) -> Result<()> {
    let (d, k) = (obs.dim_state(), obs.dim_control());
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut write_all = || -> std::io::Result<()> {
        writeln!(w, "{}", header(d, k).join(","))?;
        for (j, tr) in obs.trajectories().iter().enumerate() {
            for i in 0..obs.grid().len() {
                write!(w, "{j},{i},{:?}", obs.grid().time(i))?;
                for v in tr.state(i).iter().chain(tr.control(i)) {
                    write!(w, ",{v:?}")?;
                }
                writeln!(w)?;
            }
        }
        w.flush()
    };
    write_all().map_err(io_err(path))?;

    let meta = ObservationMeta {
        d,
        k,
        horizon: obs.grid().horizon(),
        n: obs.grid().steps(),
        trajectories: obs.len(),
        problem_tag: obs.problem_tag().to_string(),
        seed,
    };
    let side = sidecar_path(path);
    let f = File::create(&side).map_err(io_err(&side))?;
    serde_json::to_writer_pretty(f, &meta)?;
    Ok(())
}

pub fn load_meta(csv: &Path) -> Result<Option<ObservationMeta>> {
    let side = sidecar_path(csv);
    if !side.exists() {
        return Ok(None);
    }
    let f = File::open(&side).map_err(io_err(&side))?;
    Ok(Some(serde_json::from_reader(BufReader::new(f))?))
}

/// Reads a CSV written by [`save_observations`]. The sidecar, when present,
/// must agree with the data.
pub fn load_observations(path: &Path) -> Result<ObservationSet> {
    let meta = load_meta(path)?;
    let file = File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines();

    let head = lines
        .next()
        .ok_or(Error::Parse {
            row: 1,
            message: "empty file".into(),
        })?
        .map_err(io_err(path))?;
    let cols: Vec<&str> = head.trim_end().split(',').collect();
    let d = cols.iter().filter(|c| c.starts_with('x')).count();
    let k = cols.iter().filter(|c| c.starts_with('u')).count();
    let (d, k) = match &meta {
        Some(m) => (m.d, m.k),
        None => (d, k),
    };
    let expected = header(d, k);
    for name in &expected {
        if !cols.contains(&name.as_str()) {
            return Err(Error::Parse {
                row: 1,
                message: format!("missing column `{name}`"),
            });
        }
    }
    if cols.len() != expected.len() || cols.iter().zip(&expected).any(|(a, b)| a != b) {
        return Err(Error::Parse {
            row: 1,
            message: format!("header must be `{}`", expected.join(",")),
        });
    }

    let width = 3 + d + k;
    let mut times: Vec<f64> = Vec::new();
    let mut grid: Option<TimeGrid> = None;
    let mut trajectories = Vec::new();
    let mut states: Vec<f64> = Vec::new();
    let mut controls: Vec<f64> = Vec::new();
    let mut expect_trial = 0usize;
    let mut expect_step = 0usize;
    let mut fields: Vec<f64> = Vec::with_capacity(width);

    let mut finish = |states: &mut Vec<f64>,
                      controls: &mut Vec<f64>,
                      times: &mut Vec<f64>,
                      grid: &mut Option<TimeGrid>,
                      row: usize|
     -> Result<()> {
        let g = match grid {
            Some(g) => {
                if times.len() != g.len() {
                    return Err(Error::Parse {
                        row,
                        message: format!("trial has {} rows, expected {}", times.len(), g.len()),
                    });
                }
                g.clone()
            }
            None => {
                let g = TimeGrid::from_nodes(std::mem::take(times)).map_err(|e| Error::Parse {
                    row,
                    message: e.to_string(),
                })?;
                *grid = Some(g.clone());
                g
            }
        };
        times.clear();
        let tr = Trajectory::new(g, d, k, std::mem::take(states), std::mem::take(controls))
            .map_err(|e| Error::Parse {
                row,
                message: e.to_string(),
            })?;
        trajectories.push(tr);
        Ok(())
    };

    let mut row = 1usize;
    for line in lines {
        row += 1;
        let line = line.map_err(io_err(path))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        fields.clear();
        for (c, tok) in line.split(',').enumerate() {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                row,
                message: format!("column `{}`: cannot parse `{tok}`", expected.get(c).map_or("?", |s| s)),
            })?;
            fields.push(v);
        }
        if fields.len() != width {
            return Err(Error::Parse {
                row,
                message: format!("expected {width} fields, found {}", fields.len()),
            });
        }
        let (trial, step) = (fields[0], fields[1]);
        if trial != trial.trunc() || step != step.trunc() || trial < 0.0 || step < 0.0 {
            return Err(Error::Parse {
                row,
                message: "trial and step must be nonnegative integers".into(),
            });
        }
        let (trial, step) = (trial as usize, step as usize);
        if trial == expect_trial + 1 && step == 0 && expect_step > 0 {
            finish(&mut states, &mut controls, &mut times, &mut grid, row)?;
            expect_trial = trial;
            expect_step = 0;
        }
        if trial != expect_trial || step != expect_step {
            return Err(Error::Parse {
                row,
                message: format!(
                    "rows must be sorted by (trial, step): expected ({expect_trial}, {expect_step}), found ({trial}, {step})"
                ),
            });
        }
        let t = fields[2];
        match &grid {
            Some(g) => {
                if step >= g.len() || g.time(step).to_bits() != t.to_bits() {
                    return Err(Error::Parse {
                        row,
                        message: format!("time {t} does not match the grid of trial 0"),
                    });
                }
                times.push(t);
            }
            None => times.push(t),
        }
        states.extend_from_slice(&fields[3..3 + d]);
        controls.extend_from_slice(&fields[3 + d..]);
        expect_step += 1;
    }
    if expect_step == 0 {
        return Err(Error::Parse {
            row,
            message: "no data rows".into(),
        });
    }
    finish(&mut states, &mut controls, &mut times, &mut grid, row)?;
    let grid = grid.expect("grid set by first trajectory");

    if let Some(m) = &meta {
        let mismatch = |what: &str| Error::Parse {
            row: 0,
            message: format!("sidecar {what} disagrees with the data"),
        };
        if m.n != grid.steps() {
            return Err(mismatch("n"));
        }
        if m.horizon != grid.horizon() {
            return Err(mismatch("T"));
        }
        if m.trajectories != trajectories.len() {
            return Err(mismatch("N"));
        }
    }
    let tag = meta.map(|m| m.problem_tag).unwrap_or_else(|| "unknown".into());
    ObservationSet::new(tag, grid, trajectories)
}
