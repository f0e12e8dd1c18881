//! Small dense two-phase simplex used for branch-and-bound relaxations.
//!
//! Minimizes c'x subject to sparse <=/>= rows and x >= 0. Sized for the
//! dispatch relaxations (a few hundred rows); not a general-purpose LP
//! library. Dantzig pricing with a Bland fallback against cycling.

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    /// Iteration cap hit; treat the result as unusable.
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub objective: f64,
    pub x: Vec<f64>,
    pub iterations: u64,
}

pub struct LpProblem {
    num_vars: usize,
    objective: Vec<f64>,
    rows: Vec<(Vec<(usize, f64)>, Sense, f64)>,
}

impl LpProblem {
    pub fn new(num_vars: usize) -> Self {
        Self { num_vars, objective: vec![0.0; num_vars], rows: Vec::new() }
    }

    pub fn set_objective(&mut self, var: usize, coeff: f64) {
        self.objective[var] = coeff;
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        debug_assert!(coeffs.iter().all(|&(v, _)| v < self.num_vars));
        self.rows.push((coeffs, sense, rhs));
    }

    pub fn solve(&self) -> LpSolution {
        let n = self.num_vars;
        let m = self.rows.len();

        // Normalize: rhs >= 0 (flip sense), then Ge rows with rhs == 0 can
        // be flipped to Le so only strictly positive Ge rows need an
        // artificial variable.
        let mut norm: Vec<(Vec<(usize, f64)>, Sense, f64)> = Vec::with_capacity(m);
        for (coeffs, sense, rhs) in &self.rows {
            let (mut coeffs, mut sense, mut rhs) = (coeffs.clone(), *sense, *rhs);
            if rhs < 0.0 {
                for c in &mut coeffs {
                    c.1 = -c.1;
                }
                rhs = -rhs;
                sense = match sense {
                    Sense::Le => Sense::Ge,
                    Sense::Ge => Sense::Le,
                };
            }
            if sense == Sense::Ge && rhs == 0.0 {
                for c in &mut coeffs {
                    c.1 = -c.1;
                }
                sense = Sense::Le;
            }
            norm.push((coeffs, sense, rhs));
        }

        let num_art = norm.iter().filter(|(_, s, _)| *s == Sense::Ge).count();
        let width = n + m + num_art + 1; // structural | slack/surplus | artificial | rhs
        let rhs_col = width - 1;
        let mut tab: Vec<Vec<f64>> = vec![vec![0.0; width]; m];
        let mut basis: Vec<usize> = vec![0; m];
        let mut next_art = n + m;
        for (i, (coeffs, sense, rhs)) in norm.iter().enumerate() {
            for &(v, a) in coeffs {
                tab[i][v] += a;
            }
            tab[i][rhs_col] = *rhs;
            match sense {
                Sense::Le => {
                    tab[i][n + i] = 1.0;
                    basis[i] = n + i;
                }
                Sense::Ge => {
                    tab[i][n + i] = -1.0;
                    tab[i][next_art] = 1.0;
                    basis[i] = next_art;
                    next_art += 1;
                }
            }
        }

        let mut iterations = 0u64;
        let max_iter = 200 * (m + n + 8) as u64;
        let art_start = n + m;

        for phase in [1u8, 2u8] {
            if phase == 1 && num_art == 0 {
                continue;
            }
            // Reduced-cost row for the phase objective.
            let mut z = vec![0.0f64; width];
            if phase == 1 {
                for col in art_start..width - 1 {
                    z[col] = 1.0;
                }
            } else {
                z[..n].copy_from_slice(&self.objective);
            }
            for (i, &b) in basis.iter().enumerate() {
                let cb = z[b];
                if cb != 0.0 {
                    for col in 0..width {
                        z[col] -= cb * tab[i][col];
                    }
                }
            }

            let mut degenerate_streak = 0u32;
            loop {
                iterations += 1;
                if iterations > max_iter {
                    return LpSolution {
                        status: LpStatus::MaxIter,
                        objective: 0.0,
                        x: vec![0.0; n],
                        iterations,
                    };
                }
                // Entering column: artificials may not re-enter; in phase 2
                // they are ignored entirely.
                let allowed = if phase == 1 { width - 1 } else { art_start };
                let use_bland = degenerate_streak > 40;
                let mut entering: Option<usize> = None;
                let mut best = -EPS;
                for col in 0..allowed {
                    if basis.contains(&col) {
                        continue;
                    }
                    let rc = z[col];
                    if use_bland {
                        if rc < -EPS {
                            entering = Some(col);
                            break;
                        }
                    } else if rc < best {
                        best = rc;
                        entering = Some(col);
                    }
                }
                let Some(col) = entering else { break };

                // Ratio test; deterministic tie-break on the smallest basis
                // variable index (also anti-cycling with Bland).
                let mut leave: Option<usize> = None;
                let mut best_ratio = f64::INFINITY;
                for i in 0..m {
                    let a = tab[i][col];
                    if a > EPS {
                        let ratio = tab[i][rhs_col] / a;
                        let better = ratio < best_ratio - EPS
                            || (ratio < best_ratio + EPS
                                && leave.is_some_and(|l| basis[i] < basis[l]));
                        if better {
                            best_ratio = ratio;
                            leave = Some(i);
                        }
                    }
                }
                let Some(row) = leave else {
                    // Unbounded phase objective; our callers' objectives are
                    // bounded below, so surface as MaxIter-style failure.
                    return LpSolution {
                        status: LpStatus::MaxIter,
                        objective: 0.0,
                        x: vec![0.0; n],
                        iterations,
                    };
                };
                if best_ratio < EPS {
                    degenerate_streak += 1;
                } else {
                    degenerate_streak = 0;
                }

                // Pivot.
                let piv = tab[row][col];
                for v in tab[row].iter_mut() {
                    *v /= piv;
                }
                for i in 0..m {
                    if i != row {
                        let f = tab[i][col];
                        if f != 0.0 {
                            for k in 0..width {
                                tab[i][k] -= f * tab[row][k];
                            }
                        }
                    }
                }
                let f = z[col];
                if f != 0.0 {
                    for k in 0..width {
                        z[k] -= f * tab[row][k];
                    }
                }
                basis[row] = col;
            }

            if phase == 1 {
                // Phase-1 optimum -z[rhs] is the infeasibility measure.
                if -z[rhs_col] > 1e-7 {
                    return LpSolution {
                        status: LpStatus::Infeasible,
                        objective: 0.0,
                        x: vec![0.0; n],
                        iterations,
                    };
                }
                // Drive leftover artificials out of the basis; they sit at
                // zero but would silently relax their rows if allowed to
                // grow again in phase 2. Rows with no real pivot left are
                // redundant and get cleared.
                for i in 0..m {
                    if basis[i] < art_start {
                        continue;
                    }
                    let col = (0..art_start)
                        .find(|&c| !basis.contains(&c) && tab[i][c].abs() > EPS);
                    match col {
                        Some(col) => {
                            let piv = tab[i][col];
                            for v in tab[i].iter_mut() {
                                *v /= piv;
                            }
                            for r in 0..m {
                                if r != i {
                                    let f = tab[r][col];
                                    if f != 0.0 {
                                        for k in 0..width {
                                            tab[r][k] -= f * tab[i][k];
                                        }
                                    }
                                }
                            }
                            basis[i] = col;
                        }
                        None => {
                            for v in tab[i].iter_mut() {
                                *v = 0.0;
                            }
                        }
                    }
                }
            }
        }

        let mut x = vec![0.0f64; n];
        for (i, &b) in basis.iter().enumerate() {
            if b < n {
                x[b] = tab[i][rhs_col];
            }
        }
        let objective = self.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        LpSolution { status: LpStatus::Optimal, objective, x, iterations }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_simple_cover() {
        // min x0 + 2 x1  s.t. x0 + x1 >= 3, x0 <= 2  ->  x = (2, 1), obj 4.
        let mut lp = LpProblem::new(2);
        lp.set_objective(0, 1.0);
        lp.set_objective(1, 2.0);
        lp.add_row(vec![(0, 1.0), (1, 1.0)], Sense::Ge, 3.0);
        lp.add_row(vec![(0, 1.0)], Sense::Le, 2.0);
        let s = lp.solve();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 4.0).abs() < 1e-9);
        assert!((s.x[0] - 2.0).abs() < 1e-9 && (s.x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn detects_infeasible() {
        // x0 <= 1 and x0 >= 2.
        let mut lp = LpProblem::new(1);
        lp.set_objective(0, 1.0);
        lp.add_row(vec![(0, 1.0)], Sense::Le, 1.0);
        lp.add_row(vec![(0, 1.0)], Sense::Ge, 2.0);
        assert_eq!(lp.solve().status, LpStatus::Infeasible);
    }

    #[test]
    fn minimax_shape() {
        // Two groups, one bucket of demand 6, unit costs 1 and 2, one
        // replica each: min t s.t. t >= q0, t >= 2 q1, q0 + q1 >= 6.
        // Optimum splits 4/2 with t = 4.
        let mut lp = LpProblem::new(3); // q0, q1, t
        lp.set_objective(2, 1.0);
        lp.add_row(vec![(2, 1.0), (0, -1.0)], Sense::Ge, 0.0);
        lp.add_row(vec![(2, 1.0), (1, -2.0)], Sense::Ge, 0.0);
        lp.add_row(vec![(0, 1.0), (1, 1.0)], Sense::Ge, 6.0);
        let s = lp.solve();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 4.0).abs() < 1e-9, "obj={}", s.objective);
    }

    #[test]
    fn handles_degenerate_zero_rhs() {
        let mut lp = LpProblem::new(2);
        lp.set_objective(0, 1.0);
        lp.add_row(vec![(0, 1.0), (1, -1.0)], Sense::Ge, 0.0);
        lp.add_row(vec![(1, 1.0)], Sense::Ge, 5.0);
        let s = lp.solve();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 5.0).abs() < 1e-9);
    }
}
