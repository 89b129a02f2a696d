use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::Grid;
use crate::error::{Error, Result};

/// Sparse bus admittance matrix in row-major form.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    n: usize,
    rows: Vec<BTreeMap<usize, Complex64>>,
    outage: Option<String>,
}

impl AdmittanceMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn outage(&self) -> Option<&str> {
        self.outage.as_deref()
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.rows[i].get(&j).copied().unwrap_or_default()
    }

    /// Non-zero entries of row `i` in column order.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        self.rows[i].iter().map(|(&j, &y)| (j, y))
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(BTreeMap::len).sum()
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, row) in self.rows.iter().enumerate() {
            for (&j, &y) in row {
                m[(i, j)] = y;
            }
        }
        m
    }

    /// `Y · v` for a complex voltage vector.
    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|(&j, &y)| y * v[j]).sum())
            .collect()
    }

    fn add(&mut self, i: usize, j: usize, y: Complex64) {
        *self.rows[i].entry(j).or_default() += y;
    }
}

/// Series admittance of a line.
pub(crate) fn series_admittance(r: f64, x: f64) -> Complex64 {
    Complex64::new(r, x).inv()
}

/// Nominal-pi bus admittance matrix, optionally without one line.
pub fn build_admittance(grid: &Grid, outage: Option<&str>) -> Result<AdmittanceMatrix> {
    let outage_idx = match outage {
        Some(id) => Some(grid.line_index(id).ok_or_else(|| Error::UnknownLine(id.to_string()))?),
        None => None,
    };
    let n = grid.n_bus();
    let mut y = AdmittanceMatrix {
        n,
        rows: vec![BTreeMap::new(); n],
        outage: outage.map(str::to_string),
    };
    let endpoints = grid.line_endpoints();
    for (k, line) in grid.lines.iter().enumerate() {
        if Some(k) == outage_idx {
            continue;
        }
        let (f, t) = endpoints[k];
        let ys = series_admittance(line.r_pu, line.x_pu);
        let half_shunt = Complex64::new(0.0, line.b_pu / 2.0);
        y.add(f, f, ys + half_shunt);
        y.add(t, t, ys + half_shunt);
        y.add(f, t, -ys);
        y.add(t, f, -ys);
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::grid::{Bus, BusKind, Line, OperatingLimits};

    fn bus(id: &str, kind: BusKind) -> Bus {
        Bus {
            id: id.into(),
            kind,
            vm_setpoint: (kind != BusKind::Pq).then_some(1.0),
        }
    }

    fn line(id: &str, f: &str, t: &str, x: f64) -> Line {
        Line {
            id: id.into(),
            from_bus: f.into(),
            to_bus: t.into(),
            r_pu: 0.0,
            x_pu: x,
            b_pu: 0.0,
            i_rated: 1.0,
        }
    }

    fn grid(buses: Vec<Bus>, lines: Vec<Line>) -> Grid {
        Grid {
            base_mva: 100.0,
            base_kv: 110.0,
            buses,
            lines,
            loads: vec![],
            generators: vec![],
            limits: OperatingLimits::default(),
        }
    }

    fn close(a: Complex64, b: Complex64) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn two_bus_single_line() {
        let g = grid(
            vec![bus("a", BusKind::Slack), bus("b", BusKind::Pq)],
            vec![line("l", "a", "b", 0.1)],
        );
        let y = build_admittance(&g, None).unwrap();
        assert!(close(y.get(0, 0), Complex64::new(0.0, -10.0)));
        assert!(close(y.get(0, 1), Complex64::new(0.0, 10.0)));
        assert!(close(y.get(1, 0), Complex64::new(0.0, 10.0)));
        assert!(close(y.get(1, 1), Complex64::new(0.0, -10.0)));
    }

    #[test]
    fn triangle_hand_sums() {
        let g = grid(
            vec![bus("a", BusKind::Slack), bus("b", BusKind::Pq), bus("c", BusKind::Pq)],
            vec![
                line("ab", "a", "b", 0.1),
                line("bc", "b", "c", 0.1),
                line("ca", "c", "a", 0.1),
            ],
        );
        let y = build_admittance(&g, None).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { -20.0 } else { 10.0 };
                assert!(close(y.get(i, j), Complex64::new(0.0, expected)), "({i},{j})");
            }
        }
    }

    #[test]
    fn outage_of_bridge_still_builds() {
        let g = grid(
            vec![bus("a", BusKind::Slack), bus("b", BusKind::Pq)],
            vec![line("l", "a", "b", 0.1)],
        );
        let y = build_admittance(&g, Some("l")).unwrap();
        assert_eq!(y.nnz(), 0);
        assert_eq!(y.outage(), Some("l"));
    }

    #[test]
    fn unknown_outage_rejected() {
        let g = fixtures::demo3();
        assert!(matches!(build_admittance(&g, Some("nope")), Err(Error::UnknownLine(_))));
    }

    #[test]
    fn symmetric_and_row_sums_equal_shunts() {
        let g = fixtures::demo9();
        let y = build_admittance(&g, None).unwrap();
        let endpoints = g.line_endpoints();
        for i in 0..y.dim() {
            for j in 0..y.dim() {
                assert!(close(y.get(i, j), y.get(j, i)));
            }
            let row_sum: Complex64 = y.row(i).map(|(_, v)| v).sum();
            let shunt: f64 = g
                .lines
                .iter()
                .zip(&endpoints)
                .filter(|(_, &(f, t))| f == i || t == i)
                .map(|(l, _)| l.b_pu / 2.0)
                .sum();
            assert!((row_sum - Complex64::new(0.0, shunt)).norm() < 1e-9, "row {i}");
        }
    }

    #[test]
    fn outage_changes_only_four_entries() {
        let g = fixtures::demo9();
        let base = build_admittance(&g, None).unwrap().to_dense();
        let endpoints = g.line_endpoints();
        for (k, l) in g.lines.iter().enumerate() {
            let out = build_admittance(&g, Some(&l.id)).unwrap().to_dense();
            let (f, t) = endpoints[k];
            let allowed = [(f, f), (t, t), (f, t), (t, f)];
            for i in 0..base.nrows() {
                for j in 0..base.ncols() {
                    let changed = (base[(i, j)] - out[(i, j)]).norm() > 1e-12;
                    assert_eq!(changed, allowed.contains(&(i, j)), "line {} entry ({i},{j})", l.id);
                }
            }
        }
    }
}
