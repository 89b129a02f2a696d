//! Newton-Raphson AC power flow in polar coordinates and the security
//! classification of solved states.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_admittance, AdmittanceMatrix, BusKind, Grid, OperatingLimits};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PfOptions {
    /// Max absolute active/reactive mismatch in p.u.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for PfOptions {
    fn default() -> Self {
        PfOptions {
            tolerance: 1e-8,
            max_iter: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonConvergence {
    MaxIterations,
    SingularJacobian,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
    /// Percent of rated current, larger of the two line ends.
    pub line_loading: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch: f64,
    pub failure: Option<NonConvergence>,
}

/// Bus roles and voltage setpoints, indexed like the admittance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BusSpec {
    pub kinds: Vec<BusKind>,
    /// Used for slack and PV buses only.
    pub vm_setpoint: Vec<f64>,
}

impl BusSpec {
    pub fn from_grid(grid: &Grid) -> Self {
        BusSpec {
            kinds: grid.buses.iter().map(|b| b.kind).collect(),
            vm_setpoint: grid.buses.iter().map(|b| b.vm_setpoint.unwrap_or(1.0)).collect(),
        }
    }
}

/// Raw Newton-Raphson result before line quantities are attached.
#[derive(Debug, Clone)]
pub struct NrOutcome {
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch: f64,
    pub failure: Option<NonConvergence>,
}

fn check_connected(y: &AdmittanceMatrix) -> Result<()> {
    let n = y.dim();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for (v, val) in y.row(u) {
            if v != u && val.norm() > 0.0 && !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    match seen.iter().position(|s| !s) {
        None => Ok(()),
        Some(i) => Err(Error::PowerFlow(format!(
            "bus {i} is not connected to the slack in the active topology"
        ))),
    }
}

fn mismatch(
    y: &AdmittanceMatrix,
    v: &[Complex64],
    s_spec: &[Complex64],
    pvpq: &[usize],
    pq: &[usize],
) -> (Vec<f64>, Vec<Complex64>) {
    let ibus = y.mul_vec(v);
    let mut f = Vec::with_capacity(pvpq.len() + pq.len());
    let s_calc: Vec<Complex64> = v.iter().zip(&ibus).map(|(vi, ii)| vi * ii.conj()).collect();
    for &i in pvpq {
        f.push(s_calc[i].re - s_spec[i].re);
    }
    for &i in pq {
        f.push(s_calc[i].im - s_spec[i].im);
    }
    (f, ibus)
}

fn inf_norm(f: &[f64]) -> f64 {
    f.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn jacobian(y: &AdmittanceMatrix, v: &[Complex64], ibus: &[Complex64], pvpq: &[usize], pq: &[usize]) -> DMatrix<f64> {
    let n = v.len();
    let j = Complex64::i();
    let vn: Vec<Complex64> = v.iter().map(|x| x / x.norm()).collect();

    // dS/dVa = j diag(V) conj(diag(I) - Y diag(V))
    // dS/dVm = diag(V) conj(Y diag(Vn)) + conj(diag(I)) diag(Vn)
    let mut ds_dva = DMatrix::<Complex64>::zeros(n, n);
    let mut ds_dvm = DMatrix::<Complex64>::zeros(n, n);
    for r in 0..n {
        for (c, yrc) in y.row(r) {
            ds_dva[(r, c)] = -j * v[r] * (yrc * v[c]).conj();
            ds_dvm[(r, c)] = v[r] * (yrc * vn[c]).conj();
        }
        ds_dva[(r, r)] += j * v[r] * ibus[r].conj();
        ds_dvm[(r, r)] += ibus[r].conj() * vn[r];
    }

    let (npvpq, npq) = (pvpq.len(), pq.len());
    let mut jac = DMatrix::<f64>::zeros(npvpq + npq, npvpq + npq);
    for (a, &r) in pvpq.iter().enumerate() {
        for (b, &c) in pvpq.iter().enumerate() {
            jac[(a, b)] = ds_dva[(r, c)].re;
        }
        for (b, &c) in pq.iter().enumerate() {
            jac[(a, npvpq + b)] = ds_dvm[(r, c)].re;
        }
    }
    for (a, &r) in pq.iter().enumerate() {
        for (b, &c) in pvpq.iter().enumerate() {
            jac[(npvpq + a, b)] = ds_dva[(r, c)].im;
        }
        for (b, &c) in pq.iter().enumerate() {
            jac[(npvpq + a, npvpq + b)] = ds_dvm[(r, c)].im;
        }
    }
    jac
}

/// Newton-Raphson from a flat start. `injections` are net specified bus
/// powers (generation positive, p.u.); reactive entries of slack/PV buses
/// and the active entry of the slack are ignored.
pub fn solve_power_flow(
    y: &AdmittanceMatrix,
    injections: &[Complex64],
    buses: &BusSpec,
    opts: &PfOptions,
) -> Result<NrOutcome> {
    let n = y.dim();
    if injections.len() != n || buses.kinds.len() != n || buses.vm_setpoint.len() != n {
        return Err(Error::PowerFlow("dimension mismatch between inputs".into()));
    }
    if buses.kinds.iter().filter(|k| **k == BusKind::Slack).count() != 1 {
        return Err(Error::PowerFlow("exactly one slack bus required".into()));
    }
    check_connected(y)?;

    let pvpq: Vec<usize> = (0..n).filter(|&i| buses.kinds[i] != BusKind::Slack).collect();
    let pq: Vec<usize> = (0..n).filter(|&i| buses.kinds[i] == BusKind::Pq).collect();

    let mut vm: Vec<f64> = (0..n)
        .map(|i| match buses.kinds[i] {
            BusKind::Pq => 1.0,
            _ => buses.vm_setpoint[i],
        })
        .collect();
    let mut va = vec![0.0; n];
    let polar = |vm: &[f64], va: &[f64]| -> Vec<Complex64> {
        vm.iter().zip(va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect()
    };

    let mut v = polar(&vm, &va);
    let (mut f, mut ibus) = mismatch(y, &v, injections, &pvpq, &pq);
    let mut norm = inf_norm(&f);
    let mut iterations = 0;
    let mut failure = None;

    while norm > opts.tolerance {
        if iterations == opts.max_iter {
            failure = Some(NonConvergence::MaxIterations);
            break;
        }
        let jac = jacobian(y, &v, &ibus, &pvpq, &pq);
        let rhs = DVector::from_iterator(f.len(), f.iter().map(|x| -x));
        let dx = match jac.lu().solve(&rhs) {
            Some(dx) if dx.iter().all(|x| x.is_finite()) => dx,
            _ => {
                failure = Some(NonConvergence::SingularJacobian);
                break;
            }
        };
        for (a, &i) in pvpq.iter().enumerate() {
            va[i] += dx[a];
        }
        for (b, &i) in pq.iter().enumerate() {
            vm[i] += dx[pvpq.len() + b];
        }
        iterations += 1;
        if vm.iter().any(|m| !m.is_finite() || *m <= 0.0 || *m > 10.0) {
            failure = Some(NonConvergence::Diverged);
            break;
        }
        v = polar(&vm, &va);
        (f, ibus) = mismatch(y, &v, injections, &pvpq, &pq);
        norm = inf_norm(&f);
    }

    Ok(NrOutcome {
        converged: failure.is_none(),
        vm,
        va,
        iterations,
        max_mismatch: norm,
        failure,
    })
}

#[derive(Debug, Clone)]
struct LineModel {
    from: usize,
    to: usize,
    series: Complex64,
    half_shunt: Complex64,
    /// Rated current expressed in p.u. of the base current.
    rated_pu: f64,
}

/// Grid prepared for repeated solves under one topology.
#[derive(Debug, Clone)]
pub struct Network {
    admittance: AdmittanceMatrix,
    buses: BusSpec,
    lines: Vec<LineModel>,
    outage: Option<usize>,
}

impl Network {
    pub fn new(grid: &Grid, outage: Option<&str>) -> Result<Self> {
        let admittance = build_admittance(grid, outage)?;
        let outage = outage.and_then(|id| grid.line_index(id));
        let base_ka = grid.base_current_ka();
        let lines = grid
            .lines
            .iter()
            .zip(grid.line_endpoints())
            .map(|(l, (from, to))| LineModel {
                from,
                to,
                series: Complex64::new(l.r_pu, l.x_pu).inv(),
                half_shunt: Complex64::new(0.0, l.b_pu / 2.0),
                rated_pu: l.i_rated / base_ka,
            })
            .collect();
        Ok(Network {
            admittance,
            buses: BusSpec::from_grid(grid),
            lines,
            outage,
        })
    }

    pub fn admittance(&self) -> &AdmittanceMatrix {
        &self.admittance
    }

    pub fn solve(&self, injections: &[Complex64], opts: &PfOptions) -> Result<PowerFlowSolution> {
        let nr = solve_power_flow(&self.admittance, injections, &self.buses, opts)?;
        let line_loading = if nr.converged {
            self.line_loadings(&nr.vm, &nr.va)
        } else {
            vec![f64::NAN; self.lines.len()]
        };
        Ok(PowerFlowSolution {
            vm: nr.vm,
            va: nr.va,
            line_loading,
            converged: nr.converged,
            iterations: nr.iterations,
            max_mismatch: nr.max_mismatch,
            failure: nr.failure,
        })
    }

    /// Loading in percent of rated current; zero for the outaged line.
    pub fn line_loadings(&self, vm: &[f64], va: &[f64]) -> Vec<f64> {
        self.lines
            .iter()
            .enumerate()
            .map(|(k, l)| {
                if Some(k) == self.outage {
                    return 0.0;
                }
                let vf = Complex64::from_polar(vm[l.from], va[l.from]);
                let vt = Complex64::from_polar(vm[l.to], va[l.to]);
                let i_from = l.series * (vf - vt) + l.half_shunt * vf;
                let i_to = l.series * (vt - vf) + l.half_shunt * vt;
                100.0 * i_from.norm().max(i_to.norm()) / l.rated_pu
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    VoltageMagnitude,
    LineLoading,
}

/// A limit violation. `element` indexes `grid.buses` for voltages and
/// `grid.lines` for loadings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub element: usize,
    pub quantity: Quantity,
    pub value: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityLabel {
    /// +1 critical, -1 uncritical.
    pub value: i8,
    pub violated_elements: Vec<Violation>,
}

pub const CRITICAL: i8 = 1;
pub const UNCRITICAL: i8 = -1;

/// Lists every violation of the voltage band and the loading limit.
pub fn violations(vm: &[f64], loading: &[f64], limits: &OperatingLimits) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, &v) in vm.iter().enumerate() {
        if v < limits.vm_min {
            out.push(Violation {
                element: i,
                quantity: Quantity::VoltageMagnitude,
                value: v,
                limit: limits.vm_min,
            });
        } else if v > limits.vm_max {
            out.push(Violation {
                element: i,
                quantity: Quantity::VoltageMagnitude,
                value: v,
                limit: limits.vm_max,
            });
        }
    }
    for (k, &l) in loading.iter().enumerate() {
        if l > limits.i_limit_pct {
            out.push(Violation {
                element: k,
                quantity: Quantity::LineLoading,
                value: l,
                limit: limits.i_limit_pct,
            });
        }
    }
    out
}

/// Label value for raw state vectors.
pub fn state_label(vm: &[f64], loading: &[f64], limits: &OperatingLimits) -> i8 {
    let critical =
        vm.iter().any(|&v| v < limits.vm_min || v > limits.vm_max) || loading.iter().any(|&l| l > limits.i_limit_pct);
    if critical {
        CRITICAL
    } else {
        UNCRITICAL
    }
}

pub fn classify_state(solution: &PowerFlowSolution, limits: &OperatingLimits) -> Result<SecurityLabel> {
    if !solution.converged {
        return Err(Error::PowerFlow("cannot classify a non-converged solution".into()));
    }
    let violated_elements = violations(&solution.vm, &solution.line_loading, limits);
    Ok(SecurityLabel {
        value: if violated_elements.is_empty() {
            UNCRITICAL
        } else {
            CRITICAL
        },
        violated_elements,
    })
}
