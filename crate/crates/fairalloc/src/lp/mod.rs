//! Generic linear programs and a deterministic simplex solver.
//!
//! The representation is dense-ish and small-scale by design: objectives and
//! constraints over named variables, default bounds `[0, +inf)`, and an
//! absolute-value linearization that introduces one slack variable per
//! penalty term. The solver (see [`solve_lp`]) is a two-phase tableau
//! simplex with Bland's rule, so identical instances always produce
//! identical solutions.

mod simplex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a declared LP variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VarId(pub usize);

/// Constraint sense.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

/// One linear constraint `coeffs . v  (<= | = | >=)  rhs`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<(VarId, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// An absolute-value penalty term `weight * |coeffs . v|` destined for the
/// objective (subtracted, i.e. a penalty).
#[derive(Debug, Clone)]
pub struct AbsPenalty {
    /// Label used for the slack variable name and error reporting.
    pub label: String,
    /// Nonnegative weight multiplying the absolute value.
    pub weight: f64,
    pub coeffs: Vec<(VarId, f64)>,
}

/// A linear program: maximize `objective . v` subject to constraints and
/// per-variable bounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LpInstance {
    names: Vec<String>,
    objective: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    constraints: Vec<Constraint>,
}

impl Default for LpInstance {
    fn default() -> Self {
        Self::new()
    }
}

impl LpInstance {
    pub fn new() -> Self {
        LpInstance {
            names: Vec::new(),
            objective: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            constraints: Vec::new(),
        }
    }

    /// Declares a variable with bounds `[0, +inf)`.
    pub fn add_var(&mut self, name: impl Into<String>, obj_coeff: f64) -> VarId {
        self.add_var_bounded(name, obj_coeff, 0.0, f64::INFINITY)
    }

    /// Declares a variable with explicit bounds. `lower` may be `-inf` and
    /// `upper` may be `+inf`.
    pub fn add_var_bounded(
        &mut self,
        name: impl Into<String>,
        obj_coeff: f64,
        lower: f64,
        upper: f64,
    ) -> VarId {
        let id = VarId(self.names.len());
        self.names.push(name.into());
        self.objective.push(obj_coeff);
        self.lower.push(lower);
        self.upper.push(upper);
        id
    }

    pub fn set_objective(&mut self, var: VarId, coeff: f64) {
        self.objective[var.0] = coeff;
    }

    pub fn add_constraint(
        &mut self,
        coeffs: Vec<(VarId, f64)>,
        relation: Relation,
        rhs: f64,
    ) -> Result<()> {
        for &(v, _) in &coeffs {
            if v.0 >= self.names.len() {
                return Err(Error::UnknownVariable(v.0));
            }
        }
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
        Ok(())
    }

    /// Rewrites `max alpha.v - sum_g weight_g |beta_g . v|` into linear form
    /// by adding one slack variable `w_g >= 0` per term with constraints
    /// `-w_g <= beta_g . v <= w_g` and objective contribution `-weight_g w_g`.
    ///
    /// At any optimum the slacks satisfy `w_g* = |beta_g . v*|`, so the
    /// linearized program has the same optimal value and the same optimal
    /// `v*` as the original. Negative weights make that argument unsound and
    /// are rejected.
    pub fn linearize_abs(&mut self, terms: &[AbsPenalty]) -> Result<Vec<VarId>> {
        for term in terms {
            if term.weight < 0.0 || !term.weight.is_finite() {
                return Err(Error::InvalidParityWeight {
                    group: term.label.clone(),
                    value: term.weight,
                });
            }
        }
        let mut slacks = Vec::with_capacity(terms.len());
        for term in terms {
            let w = self.add_var(format!("w_{}", term.label), -term.weight);
            // beta.v - w <= 0
            let mut le = term.coeffs.clone();
            le.push((w, -1.0));
            self.add_constraint(le, Relation::Le, 0.0)?;
            // beta.v + w >= 0
            let mut ge = term.coeffs.clone();
            ge.push((w, 1.0));
            self.add_constraint(ge, Relation::Ge, 0.0)?;
            slacks.push(w);
        }
        Ok(slacks)
    }

    pub fn n_vars(&self) -> usize {
        self.names.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn var_name(&self, var: VarId) -> &str {
        &self.names[var.0]
    }

    pub fn objective_coeff(&self, var: VarId) -> f64 {
        self.objective[var.0]
    }

    pub(crate) fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub(crate) fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lower, &self.upper)
    }

    pub(crate) fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// Text dump in the conventional LP interchange format, for cross-checks
    /// against external solvers.
    pub fn to_lp_format(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        out.push_str("Maximize\n obj:");
        let mut first = true;
        for (j, &c) in self.objective.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            write_term(&mut out, c, &self.names[j], first);
            first = false;
        }
        if first {
            out.push_str(" 0 ");
            out.push_str(self.names.first().map(String::as_str).unwrap_or("x"));
        }
        out.push_str("\nSubject To\n");
        for (i, con) in self.constraints.iter().enumerate() {
            let _ = write!(out, " c{}:", i);
            let mut first = true;
            for &(v, c) in &con.coeffs {
                if c == 0.0 {
                    continue;
                }
                write_term(&mut out, c, &self.names[v.0], first);
                first = false;
            }
            if first {
                let _ = write!(out, " 0 {}", self.names[0]);
            }
            let rel = match con.relation {
                Relation::Le => "<=",
                Relation::Eq => "=",
                Relation::Ge => ">=",
            };
            let _ = writeln!(out, " {} {}", rel, con.rhs);
        }
        out.push_str("Bounds\n");
        for j in 0..self.names.len() {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if lo == 0.0 && hi == f64::INFINITY {
                continue; // default
            }
            if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
                let _ = writeln!(out, " {} free", self.names[j]);
            } else if hi == f64::INFINITY {
                let _ = writeln!(out, " {} >= {}", self.names[j], lo);
            } else if lo == f64::NEG_INFINITY {
                let _ = writeln!(out, " {} <= {}", self.names[j], hi);
            } else {
                let _ = writeln!(out, " {} <= {} <= {}", lo, self.names[j], hi);
            }
        }
        out.push_str("End\n");
        out
    }
}

fn write_term(out: &mut String, coeff: f64, name: &str, first: bool) {
    use std::fmt::Write;
    if first {
        if coeff < 0.0 {
            let _ = write!(out, " -{} {}", -coeff, name);
        } else {
            let _ = write!(out, " {} {}", coeff, name);
        }
    } else if coeff < 0.0 {
        let _ = write!(out, " - {} {}", -coeff, name);
    } else {
        let _ = write!(out, " + {} {}", coeff, name);
    }
}

/// Solver outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// A solution to an [`LpInstance`]. `values` is indexed by [`VarId`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub objective_value: f64,
    pub values: Vec<f64>,
}

impl LpSolution {
    pub fn value(&self, var: VarId) -> f64 {
        self.values[var.0]
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// Solves the LP with a two-phase dense simplex using Bland's rule.
///
/// Deterministic: identical instances yield identical solutions. Returns
/// `Infeasible`/`Unbounded` statuses instead of failing.
pub fn solve_lp(lp: &LpInstance) -> LpSolution {
    simplex::solve(lp)
}
