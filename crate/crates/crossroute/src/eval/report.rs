//! Evaluation metrics and their tabular rendering.

use super::InstanceResult;
use crate::vrp::Problem;

/// Metrics of one evaluation run. Objectives are reported in the problem's
/// natural sign: tour length for TSP/PCTSP/CVRP, collected prize for OP
/// (internally costs store the negated prize so lower is always better).
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub problem: Problem,
    pub decode_mode: String,
    /// Best internal cost per instance (minimization convention).
    pub per_instance_cost: Vec<f64>,
    /// Mean objective in the problem's reporting sign.
    pub mean_objective: f64,
    /// Mean percentage gap to the references, positive when worse; the best
    /// method has the smallest gap for minimization and maximization alike.
    pub mean_gap_percent: Option<f64>,
    pub wall_time_seconds: f64,
    pub total_params: usize,
    pub trainable_params: usize,
}

/// Percentage gap of one instance: `(cost - ref) / |ref|` for minimization,
/// `(ref - value) / ref` for OP utilities.
pub fn gap_percent(problem: Problem, cost: f64, reference_cost: f64) -> f64 {
    match problem {
        Problem::Op => {
            let value = -cost;
            let reference = -reference_cost;
            (reference - value) / reference * 100.0
        }
        _ => (cost - reference_cost) / reference_cost.abs() * 100.0,
    }
}

impl EvalReport {
    pub fn new(
        problem: Problem,
        decode_mode: String,
        results: Vec<InstanceResult>,
        references: Option<&[f64]>,
        wall_time_seconds: f64,
        total_params: usize,
        trainable_params: usize,
    ) -> EvalReport {
        let per_instance_cost: Vec<f64> = results.iter().map(|r| r.cost).collect();
        let n = per_instance_cost.len() as f64;
        let mean_cost = per_instance_cost.iter().sum::<f64>() / n;
        let mean_objective = match problem {
            Problem::Op => -mean_cost,
            _ => mean_cost,
        };
        let mean_gap_percent = references.map(|refs| {
            per_instance_cost
                .iter()
                .zip(refs)
                .map(|(&c, &r)| gap_percent(problem, c, r))
                .sum::<f64>()
                / n
        });
        EvalReport {
            problem,
            decode_mode,
            per_instance_cost,
            mean_objective,
            mean_gap_percent,
            wall_time_seconds,
            total_params,
            trainable_params,
        }
    }
}

/// One-row table mirroring the usual benchmark columns:
/// objective, gap, time, trained parameter count.
pub fn render_report_table(report: &EvalReport) -> String {
    let gap = report
        .mean_gap_percent
        .map(|g| format!("{g:.2}%"))
        .unwrap_or_else(|| "--".into());
    format!(
        "{:<8} {:<14} | Obj. {:>10.4} | Gap {:>8} | Time {:>8.2}s | #Par. {} ({} total)\n",
        report.problem.name(),
        report.decode_mode,
        report.mean_objective,
        gap,
        report.wall_time_seconds,
        report.trainable_params,
        report.total_params,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_formula_sanity() {
        // cost 1.05 vs reference 1.00 -> 5.00%
        assert!((gap_percent(Problem::Tsp, 1.05, 1.0) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn op_gap_uses_utility_convention() {
        // reference utility 10 (cost -10), achieved utility 9 (cost -9):
        // the weaker method has the positive gap.
        let g = gap_percent(Problem::Op, -9.0, -10.0);
        assert!((g - 10.0).abs() < 1e-12);
        assert_eq!(gap_percent(Problem::Op, -10.0, -10.0), 0.0);
    }

    #[test]
    fn table_row_contains_columns() {
        let report = EvalReport::new(
            Problem::Tsp,
            "greedy".into(),
            vec![InstanceResult { cost: 4.0, nodes: vec![] }],
            Some(&[4.0]),
            1.5,
            100,
            50,
        );
        let row = render_report_table(&report);
        assert!(row.contains("Obj."));
        assert!(row.contains("0.00%"));
        assert!(row.contains("#Par. 50"));
    }
}
