//! Observed training data, simulated test data, and their CSV form.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write/read cycle reproduces every value bit for bit.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arm::Arm;
use crate::error::{Error, Result};

/// One observed tuple (X, A, Z, W, Y), plus the latent U when simulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: [f64; 2],
    pub a: Arm,
    pub z: f64,
    pub w: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub rows: Vec<Observation>,
}

impl Dataset {
    pub fn new(rows: Vec<Observation>) -> Result<Dataset> {
        let d = Dataset { rows };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn has_latent(&self) -> bool {
        self.rows.first().is_some_and(|r| r.u.is_some())
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset { rows: idx.iter().map(|&i| self.rows[i]).collect() }
    }

    /// Drop the latent confounder, leaving only what an analyst observes.
    pub fn without_latent(&self) -> Dataset {
        Dataset { rows: self.rows.iter().map(|r| Observation { u: None, ..*r }).collect() }
    }

    pub fn covariates(&self) -> Vec<[f64; 2]> {
        self.rows.iter().map(|r| r.x).collect()
    }

    fn validate(&self) -> Result<()> {
        let latent = self.has_latent();
        for (i, r) in self.rows.iter().enumerate() {
            let finite = r.x.iter().chain([&r.z, &r.w, &r.y]).all(|v| v.is_finite())
                && r.u.is_none_or(f64::is_finite);
            if !finite {
                return Err(Error::MalformedRow { line: i + 2, msg: "non-finite value".into() });
            }
            if r.u.is_some() != latent {
                return Err(Error::MalformedRow {
                    line: i + 2,
                    msg: "latent column present on some rows only".into(),
                });
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let latent = self.has_latent();
        let mut header = vec!["x1", "x2", "a", "z", "w", "y"];
        if latent {
            header.push("u");
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.x[0].to_string(),
                r.x[1].to_string(),
                r.a.to_string(),
                r.z.to_string(),
                r.w.to_string(),
                r.y.to_string(),
            ];
            if let Some(u) = r.u {
                rec.push(u.to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let latent = match header.as_slice() {
            [a, b, c, d, e, f] if [a, b, c, d, e, f] == ["x1", "x2", "a", "z", "w", "y"] => false,
            [a, b, c, d, e, f, g] if [a, b, c, d, e, f, g] == ["x1", "x2", "a", "z", "w", "y", "u"] => {
                true
            }
            _ => {
                return Err(Error::MalformedRow {
                    line: 1,
                    msg: format!("expected header x1,x2,a,z,w,y[,u], got {}", header.join(",")),
                })
            }
        };
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let vals = parse_fields(&rec, header.len(), line)?;
            let a = Arm::from_value(vals[2]).ok_or_else(|| Error::MalformedRow {
                line,
                msg: format!("treatment must be -1 or 1, got {}", &rec[2]),
            })?;
            rows.push(Observation {
                x: [vals[0], vals[1]],
                a,
                z: vals[3],
                w: vals[4],
                y: vals[5],
                u: latent.then(|| vals[6]),
            });
        }
        Dataset::new(rows)
    }

    pub fn write_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path)
            .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_path(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let f = std::fs::File::open(path)
            .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Dataset::read_csv(std::io::BufReader::new(f))
    }
}

fn parse_fields(rec: &csv::StringRecord, width: usize, line: usize) -> Result<Vec<f64>> {
    if rec.len() != width {
        return Err(Error::MalformedRow {
            line,
            msg: format!("expected {width} fields, got {}", rec.len()),
        });
    }
    rec.iter()
        .map(|f| {
            let v: f64 = f.trim().parse().map_err(|_| Error::MalformedRow {
                line,
                msg: format!("cannot parse `{f}` as a number"),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::MalformedRow { line, msg: format!("non-finite value `{f}`") })
            }
        })
        .collect()
}

/// A test row carrying both potential outcomes Y(1) and Y(-1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestRow {
    pub x: [f64; 2],
    pub z: f64,
    pub w: f64,
    pub u: f64,
    pub y_pos: f64,
    pub y_neg: f64,
}

impl TestRow {
    #[inline]
    pub fn outcome(&self, a: Arm) -> f64 {
        match a {
            Arm::Pos => self.y_pos,
            Arm::Neg => self.y_neg,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TestSet {
    pub rows: Vec<TestRow>,
}

impl TestSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x1", "x2", "z", "w", "u", "y_pos", "y_neg"])?;
        for r in &self.rows {
            w.write_record([r.x[0], r.x[1], r.z, r.w, r.u, r.y_pos, r.y_neg].map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<TestSet> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if header != ["x1", "x2", "z", "w", "u", "y_pos", "y_neg"] {
            return Err(Error::MalformedRow {
                line: 1,
                msg: format!("expected header x1,x2,z,w,u,y_pos,y_neg, got {}", header.join(",")),
            });
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let v = parse_fields(&rec, 7, line)?;
            rows.push(TestRow { x: [v[0], v[1]], z: v[2], w: v[3], u: v[4], y_pos: v[5], y_neg: v[6] });
        }
        Ok(TestSet { rows })
    }
}
