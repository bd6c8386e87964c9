use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BUNDLED: &str = include_str!("../../data/schedule.csv");

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    s: f64,
    #[serde(rename = "A_GHz")]
    a: f64,
    #[serde(rename = "B_GHz")]
    b: f64,
}

/// Annealing schedule `A(s)`, `B(s)` in GHz, interpolated by monotone
/// piecewise cubics (Fritsch-Carlson).
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    s: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    da: Vec<f64>,
    db: Vec<f64>,
}

fn monotone_tangents(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / (x[k + 1] - x[k])).collect();
    let mut d = vec![0.0; n];
    d[0] = delta[0];
    d[n - 1] = delta[n - 2];
    for k in 1..n - 1 {
        d[k] = if delta[k - 1] * delta[k] <= 0.0 { 0.0 } else { 0.5 * (delta[k - 1] + delta[k]) };
    }
    for k in 0..n - 1 {
        if delta[k] == 0.0 {
            d[k] = 0.0;
            d[k + 1] = 0.0;
            continue;
        }
        let alpha = d[k] / delta[k];
        let beta = d[k + 1] / delta[k];
        if alpha < 0.0 {
            d[k] = 0.0;
        }
        if beta < 0.0 {
            d[k + 1] = 0.0;
        }
        let r = alpha * alpha + beta * beta;
        if r > 9.0 {
            let tau = 3.0 / r.sqrt();
            d[k] = tau * alpha * delta[k];
            d[k + 1] = tau * beta * delta[k];
        }
    }
    d
}

fn hermite(x: &[f64], y: &[f64], d: &[f64], k: usize, t: f64) -> f64 {
    let h = x[k + 1] - x[k];
    let u = (t - x[k]) / h;
    let (u2, u3) = (u * u, u * u * u);
    let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
    let h10 = u3 - 2.0 * u2 + u;
    let h01 = -2.0 * u3 + 3.0 * u2;
    let h11 = u3 - u2;
    h00 * y[k] + h10 * h * d[k] + h01 * y[k + 1] + h11 * h * d[k + 1]
}

impl Schedule {
    /// Builds a schedule from `(s, A, B)` knots.
    ///
    /// `s` must be strictly increasing inside `[0, 1]`, `A` non-increasing and
    /// `B` non-decreasing (flat runs allowed up to rounding), both non-negative.
    pub fn new(points: &[(f64, f64, f64)]) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Validation("schedule needs at least two rows".into()));
        }
        if points.iter().any(|p| !(p.0.is_finite() && p.1.is_finite() && p.2.is_finite())) {
            return Err(Error::Validation("schedule contains non-finite values".into()));
        }
        let s: Vec<f64> = points.iter().map(|p| p.0).collect();
        let a: Vec<f64> = points.iter().map(|p| p.1).collect();
        let b: Vec<f64> = points.iter().map(|p| p.2).collect();
        if s[0] < 0.0 || s[s.len() - 1] > 1.0 {
            return Err(Error::Validation("schedule s values must lie in [0, 1]".into()));
        }
        if let Some(k) = (1..s.len()).find(|&k| s[k] <= s[k - 1]) {
            return Err(Error::Validation(format!("s not strictly increasing at row {k}")));
        }
        if a.iter().chain(&b).any(|&v| v < 0.0) {
            return Err(Error::Validation("A(s) and B(s) must be non-negative".into()));
        }
        let tol_a = 1e-9 * a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol_b = 1e-9 * b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if let Some(k) = (1..a.len()).find(|&k| a[k] > a[k - 1] + tol_a) {
            return Err(Error::Validation(format!("A(s) increases at row {k}")));
        }
        if let Some(k) = (1..b.len()).find(|&k| b[k] < b[k - 1] - tol_b) {
            return Err(Error::Validation(format!("B(s) decreases at row {k}")));
        }
        let da = monotone_tangents(&s, &a);
        let db = monotone_tangents(&s, &b);
        Ok(Schedule { s, a, b, da, db })
    }

    /// Reads CSV with header `s,A_GHz,B_GHz`.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(csv_error)?.clone();
        if headers.iter().collect::<Vec<_>>() != ["s", "A_GHz", "B_GHz"] {
            return Err(Error::Validation(format!(
                "schedule header must be `s,A_GHz,B_GHz`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut points = Vec::new();
        for row in rdr.deserialize::<Row>() {
            let row = row.map_err(csv_error)?;
            points.push((row.s, row.a, row.b));
        }
        Schedule::new(&points)
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        Schedule::from_csv_reader(text.as_bytes())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Schedule::from_csv_reader(std::fs::File::open(path)?)
    }

    /// Synthetic table shipped with the crate: A falls from 6 GHz to 0,
    /// B rises from 0.05 GHz to 12 GHz, A(0.386) = 1.71 and B(0.386) = 2.49.
    pub fn bundled() -> Self {
        Schedule::from_csv_str(BUNDLED).expect("bundled schedule is valid")
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for k in 0..self.s.len() {
            w.serialize(Row { s: self.s[k], a: self.a[k], b: self.b[k] }).map_err(csv_error)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Validation(e.to_string()))
    }

    /// `(s_min, s_max)` covered by the table.
    pub fn range(&self) -> (f64, f64) {
        (self.s[0], self.s[self.s.len() - 1])
    }

    pub fn knots(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..self.s.len()).map(|k| (self.s[k], self.a[k], self.b[k]))
    }

    /// `(A(s), B(s))` in GHz.
    pub fn at(&self, s: f64) -> Result<(f64, f64)> {
        let (lo, hi) = self.range();
        if !(s >= lo && s <= hi) {
            return Err(Error::Validation(format!("s = {s} outside the schedule range [{lo}, {hi}]")));
        }
        let k = self.s.partition_point(|&x| x <= s).clamp(1, self.s.len() - 1) - 1;
        let a = hermite(&self.s, &self.a, &self.da, k, s);
        let b = hermite(&self.s, &self.b, &self.db, k, s);
        Ok((a.max(0.0), b.max(0.0)))
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Validation(format!("schedule CSV: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_fixture_hits_knots_and_is_monotone() {
        let sch = Schedule::bundled();
        let (a, b) = sch.at(0.386).unwrap();
        assert_eq!((a, b), (1.71, 2.49));
        let mut prev = sch.at(0.0).unwrap();
        for k in 1..=1000 {
            let cur = sch.at(k as f64 / 1000.0).unwrap();
            assert!(cur.0 <= prev.0 + 1e-12 && cur.1 >= prev.1 - 1e-12, "at s = {}", k as f64 / 1000.0);
            prev = cur;
        }
        assert_eq!(sch.at(1.0).unwrap().0, 0.0);
        // A and B cross between 0.33 and 0.36.
        let (a, b) = sch.at(0.33).unwrap();
        assert!(a > b);
        let (a, b) = sch.at(0.36).unwrap();
        assert!(a < b);
    }

    #[test]
    fn rejects_malformed_tables() {
        assert!(Schedule::new(&[(0.0, 1.0, 0.0)]).is_err());
        assert!(Schedule::new(&[(0.0, 1.0, 0.0), (0.0, 0.5, 1.0)]).is_err());
        assert!(Schedule::new(&[(0.0, 1.0, 0.0), (0.5, 1.5, 1.0)]).is_err());
        assert!(Schedule::new(&[(0.0, 1.0, 1.0), (0.5, 0.5, 0.5)]).is_err());
        assert!(Schedule::new(&[(0.0, 1.0, 0.0), (1.5, 0.5, 1.0)]).is_err());
        assert!(Schedule::from_csv_str("s,A,B\n0,1,0\n1,0,1\n").is_err());
        assert!(Schedule::from_csv_str("s,A_GHz,B_GHz\n0,1,0\n1,x,1\n").is_err());
        // Flat segments are fine.
        assert!(Schedule::new(&[(0.0, 1.0, 0.0), (0.5, 1.0, 1.0), (1.0, 0.0, 1.0)]).is_ok());
    }

    #[test]
    fn csv_round_trip_and_linear_data() {
        let sch = Schedule::bundled();
        let again = Schedule::from_csv_str(&sch.to_csv_string().unwrap()).unwrap();
        assert_eq!(sch, again);
        let lin = Schedule::new(&[(0.0, 2.0, 0.0), (0.5, 1.0, 1.0), (1.0, 0.0, 2.0)]).unwrap();
        let (a, b) = lin.at(0.3).unwrap();
        assert!((a - 1.4).abs() < 1e-12 && (b - 0.6).abs() < 1e-12);
        assert!(lin.at(1.01).is_err() && lin.at(f64::NAN).is_err());
    }
}
