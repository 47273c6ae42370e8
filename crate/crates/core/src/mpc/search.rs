//! Schedule search shared by both setups.
//!
//! Leaves are compared with a tie rule: a plan replaces the incumbent if its
//! value is lower by more than the tolerance, or if it is within the
//! tolerance and its schedule is lexicographically smaller. Without an
//! out-of-order incumbent, both search modes visit leaves in lexicographic
//! order, so they return the same plan.

use super::{SchedulePlan, ScheduleSearch};
use crate::error::Result;

pub(crate) trait ScheduleProblem {
    /// Number of choices per step.
    fn arity(&self) -> usize;
    fn horizon(&self) -> usize;
    /// Cheap screen of a partial schedule (bucket levels).
    fn prefix_feasible(&self, prefix: &[usize]) -> bool;
    /// Lower bound on the value of every completion of `prefix`.
    fn lower_bound(&self, prefix: &[usize]) -> Result<f64>;
    fn evaluate(&self, schedule: &[usize]) -> Result<SchedulePlan>;
}

pub(crate) struct SearchResult {
    pub best: Option<SchedulePlan>,
    pub nodes: usize,
}

pub(crate) fn better(cand: &SchedulePlan, best: &SchedulePlan, tol: f64) -> bool {
    if !cand.feasible {
        return false;
    }
    if !best.feasible {
        return true;
    }
    cand.value < best.value - tol || ((cand.value - best.value).abs() <= tol && cand.schedule < best.schedule)
}

struct Search<'a, P: ScheduleProblem> {
    problem: &'a P,
    mode: ScheduleSearch,
    tol: f64,
    hint: Option<&'a [usize]>,
    best: Option<SchedulePlan>,
    nodes: usize,
}

impl<P: ScheduleProblem> Search<'_, P> {
    fn offer(&mut self, plan: SchedulePlan) {
        let replace = match &self.best {
            None => plan.feasible,
            Some(b) => better(&plan, b, self.tol),
        };
        if replace {
            self.best = Some(plan);
        }
    }

    fn children(&self, depth: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.problem.arity()).collect();
        if let Some(h) = self.hint.and_then(|h| h.get(depth)) {
            if let Some(pos) = order.iter().position(|c| c == h) {
                let first = order.remove(pos);
                order.insert(0, first);
            }
        }
        order
    }

    fn descend(&mut self, prefix: &mut Vec<usize>) -> Result<()> {
        self.nodes += 1;
        if prefix.len() == self.problem.horizon() {
            let plan = self.problem.evaluate(prefix)?;
            self.offer(plan);
            return Ok(());
        }
        if self.mode == ScheduleSearch::BranchAndBound && !prefix.is_empty() {
            if let Some(b) = &self.best {
                if self.problem.lower_bound(prefix)? > b.value + self.tol {
                    return Ok(());
                }
            }
        }
        for c in self.children(prefix.len()) {
            prefix.push(c);
            if self.problem.prefix_feasible(prefix) {
                self.descend(prefix)?;
            }
            prefix.pop();
        }
        Ok(())
    }
}

pub(crate) fn search<P: ScheduleProblem>(
    problem: &P,
    mode: ScheduleSearch,
    tol: f64,
    incumbent: Option<&[usize]>,
) -> Result<SearchResult> {
    let mut s = Search {
        problem,
        mode,
        tol,
        hint: if mode == ScheduleSearch::BranchAndBound { incumbent } else { None },
        best: None,
        nodes: 0,
    };
    if let Some(inc) = incumbent {
        if inc.len() == problem.horizon() && (1..=inc.len()).all(|t| problem.prefix_feasible(&inc[..t])) {
            s.nodes += 1;
            let plan = problem.evaluate(inc)?;
            s.offer(plan);
        }
    }
    let mut prefix = Vec::with_capacity(problem.horizon());
    s.descend(&mut prefix)?;
    Ok(SearchResult { best: s.best, nodes: s.nodes })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Value = Σ (s_i − target_i)², every schedule feasible.
    struct Toy {
        target: Vec<f64>,
    }

    impl ScheduleProblem for Toy {
        fn arity(&self) -> usize {
            3
        }
        fn horizon(&self) -> usize {
            self.target.len()
        }
        fn prefix_feasible(&self, _: &[usize]) -> bool {
            true
        }
        fn lower_bound(&self, prefix: &[usize]) -> Result<f64> {
            Ok(prefix.iter().zip(&self.target).map(|(s, t)| (*s as f64 - t).powi(2)).sum())
        }
        fn evaluate(&self, s: &[usize]) -> Result<SchedulePlan> {
            let mut p = SchedulePlan::infeasible(s.to_vec());
            p.value = self.lower_bound(s)?;
            p.feasible = true;
            Ok(p)
        }
    }

    #[test]
    fn modes_agree_and_prune() {
        let toy = Toy { target: vec![1.2, 0.1, 2.0, 1.5] };
        let e = search(&toy, ScheduleSearch::Enumerate, 1e-9, None).unwrap();
        let b = search(&toy, ScheduleSearch::BranchAndBound, 1e-9, None).unwrap();
        assert_eq!(e.best.as_ref().unwrap().schedule, vec![1, 0, 2, 1]);
        assert_eq!(e.best, b.best);
        assert!(b.nodes < e.nodes);
    }

    #[test]
    fn ties_go_to_smallest_schedule() {
        let toy = Toy { target: vec![0.5, 0.5] };
        for mode in [ScheduleSearch::Enumerate, ScheduleSearch::BranchAndBound] {
            let r = search(&toy, mode, 1e-9, Some(&[1, 1])).unwrap();
            assert_eq!(r.best.unwrap().schedule, vec![0, 0]);
        }
    }
}
