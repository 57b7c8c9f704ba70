//! Displacement-error metrics over predicted trajectories and the
//! aggregated per-class evaluation report.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Prediction, TrajectoryHypothesis};
use crate::scene::{AgentClass, AgentId, Point2};

/// Mean L2 distance over future steps.
pub fn ade(pred: &[Point2], gt: &[Point2]) -> Result<f64> {
    check_lengths("ade", pred, gt)?;
    let total: f64 = pred.iter().zip(gt).map(|(p, q)| p.distance(*q)).sum();
    Ok(total / pred.len() as f64)
}

/// L2 distance at the final step only.
pub fn fde(pred: &[Point2], gt: &[Point2]) -> Result<f64> {
    check_lengths("fde", pred, gt)?;
    Ok(pred[pred.len() - 1].distance(gt[gt.len() - 1]))
}

fn check_lengths(op: &'static str, pred: &[Point2], gt: &[Point2]) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::shape(
            op,
            format!("lengths {} vs {} (both nonzero) required", pred.len(), gt.len()),
        ));
    }
    Ok(())
}

/// The `n` most probable hypotheses, probability descending. Equal
/// probabilities keep their class-major emission order, so ranking is
/// deterministic.
pub fn top_n(prediction: &Prediction, n: usize) -> Result<Vec<&TrajectoryHypothesis>> {
    if n == 0 || n > prediction.hypotheses.len() {
        return Err(Error::InvalidValue(format!(
            "top-n {} outside 1..={} hypotheses",
            n,
            prediction.hypotheses.len()
        )));
    }
    let mut ranked: Vec<&TrajectoryHypothesis> = prediction.hypotheses.iter().collect();
    ranked.sort_by(|a, b| b.probability.partial_cmp(&a.probability).expect("finite probabilities"));
    ranked.truncate(n);
    Ok(ranked)
}

/// Smallest [`ade`] among the `n` most probable hypotheses.
pub fn min_ade_n(prediction: &Prediction, gt: &[Point2], n: usize) -> Result<f64> {
    best_over_top_n(prediction, gt, n, ade)
}

/// Smallest [`fde`] among the `n` most probable hypotheses.
pub fn min_fde_n(prediction: &Prediction, gt: &[Point2], n: usize) -> Result<f64> {
    best_over_top_n(prediction, gt, n, fde)
}

fn best_over_top_n(
    prediction: &Prediction,
    gt: &[Point2],
    n: usize,
    metric: fn(&[Point2], &[Point2]) -> Result<f64>,
) -> Result<f64> {
    let mut best = f64::INFINITY;
    for hyp in top_n(prediction, n)? {
        best = best.min(metric(&hyp.points, gt)?);
    }
    Ok(best)
}

/// All four displacement metrics for one evaluated agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentEval {
    pub agent: AgentId,
    pub class: AgentClass,
    pub ade: f64,
    pub fde: f64,
    pub min_ade: f64,
    pub min_fde: f64,
}

/// Computes every metric for one prediction against its ground truth.
/// `n` is clamped nowhere: callers decide how to handle small hypothesis
/// sets.
pub fn evaluate_prediction(
    prediction: &Prediction,
    class: AgentClass,
    gt: &[Point2],
    n: usize,
) -> Result<AgentEval> {
    let top = top_n(prediction, 1)?[0];
    Ok(AgentEval {
        agent: prediction.agent,
        class,
        ade: ade(&top.points, gt)?,
        fde: fde(&top.points, gt)?,
        min_ade: min_ade_n(prediction, gt, n)?,
        min_fde: min_fde_n(prediction, gt, n)?,
    })
}

/// Compensated accumulator so aggregate means do not depend on input
/// order beyond rounding of the compensation itself.
#[derive(Debug, Clone, Copy, Default)]
struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }
}

/// One aggregated report row: a class, the overall pool, or a baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub label: String,
    pub count: usize,
    pub ade: f64,
    pub fde: f64,
    pub min_ade: f64,
    pub min_fde: f64,
}

/// Mean metrics per class plus an overall row, with the `n` used for the
/// min metrics echoed in the headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub rows: Vec<EvalRow>,
}

#[derive(Default)]
struct RowAccumulator {
    count: usize,
    ade: KahanSum,
    fde: KahanSum,
    min_ade: KahanSum,
    min_fde: KahanSum,
}

impl RowAccumulator {
    fn add(&mut self, eval: &AgentEval) {
        self.count += 1;
        self.ade.add(eval.ade);
        self.fde.add(eval.fde);
        self.min_ade.add(eval.min_ade);
        self.min_fde.add(eval.min_fde);
    }

    fn row(&self, label: &str) -> EvalRow {
        let n = self.count.max(1) as f64;
        EvalRow {
            label: label.to_string(),
            count: self.count,
            ade: self.ade.sum / n,
            fde: self.fde.sum / n,
            min_ade: self.min_ade.sum / n,
            min_fde: self.min_fde.sum / n,
        }
    }
}

impl EvalReport {
    /// Aggregates per-agent metrics into one row per class present plus
    /// an overall row.
    pub fn from_evals(evals: &[AgentEval], n: usize) -> Result<EvalReport> {
        if evals.is_empty() {
            return Err(Error::InsufficientData("no evaluated agents".into()));
        }
        let mut overall = RowAccumulator::default();
        let mut rows = Vec::new();
        for class in AgentClass::all() {
            let mut acc = RowAccumulator::default();
            for eval in evals.iter().filter(|e| e.class == class) {
                acc.add(eval);
                overall.add(eval);
            }
            if acc.count > 0 {
                rows.push(acc.row(class.name()));
            }
        }
        rows.push(overall.row("overall"));
        Ok(EvalReport { n, rows })
    }

    /// Appends a row, e.g. for a baseline evaluated on the same agents.
    pub fn push_row(&mut self, row: EvalRow) {
        self.rows.push(row);
    }

    pub fn row(&self, label: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn csv_header(&self) -> String {
        format!("label,count,ade,fde,min_ade_{0},min_fde_{0}", self.n)
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6}\n",
                row.label, row.count, row.ade, row.fde, row.min_ade, row.min_fde
            ));
        }
        out
    }

    /// Fixed-width table for terminal output.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<12} {:>6} {:>9} {:>9} {:>11} {:>11}\n",
            "label",
            "count",
            "ade",
            "fde",
            format!("min_ade_{}", self.n),
            format!("min_fde_{}", self.n),
        );
        for row in &self.rows {
            out.push_str(&format!(
                "{:<12} {:>6} {:>9.4} {:>9.4} {:>11.4} {:>11.4}\n",
                row.label, row.count, row.ade, row.fde, row.min_ade, row.min_fde
            ));
        }
        out
    }
}

/// Builds a baseline row from per-agent single-trajectory errors. With
/// one hypothesis the min metrics coincide with ade/fde.
pub fn baseline_row(label: &str, errors: &[(f64, f64)]) -> Result<EvalRow> {
    if errors.is_empty() {
        return Err(Error::InsufficientData(format!("no {label} baseline results")));
    }
    let mut ade_acc = KahanSum::default();
    let mut fde_acc = KahanSum::default();
    for &(a, f) in errors {
        ade_acc.add(a);
        fde_acc.add(f);
    }
    let n = errors.len() as f64;
    Ok(EvalRow {
        label: label.to_string(),
        count: errors.len(),
        ade: ade_acc.sum / n,
        fde: fde_acc.sum / n,
        min_ade: ade_acc.sum / n,
        min_fde: fde_acc.sum / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(coords: &[(f64, f64)]) -> Vec<Point2> {
        coords.iter().map(|&(x, y)| Point2::new(x, y)).collect()
    }

    fn hypothesis(class: AgentClass, anchor: usize, p: f64, points: Vec<Point2>) -> TrajectoryHypothesis {
        TrajectoryHypothesis { class, anchor, probability: p, points }
    }

    fn prediction_of(hypotheses: Vec<TrajectoryHypothesis>) -> Prediction {
        Prediction { agent: 1, class_probs: vec![], anchor_probs: vec![], hypotheses }
    }

    #[test]
    fn ade_examples_are_exact() {
        let gt = pts(&[(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(ade(&gt, &gt).unwrap(), 0.0);

        let shifted = pts(&[(1.0, 0.0), (2.0, 1.0)]);
        assert_eq!(ade(&shifted, &gt).unwrap(), 1.0);

        let two_step = pts(&[(3.0, 4.0), (1.0, 1.0)]);
        assert_eq!(ade(&two_step, &gt).unwrap(), 2.5);
    }

    #[test]
    fn fde_looks_only_at_the_final_step() {
        let gt = pts(&[(0.0, 0.0), (0.0, 0.0)]);
        assert_eq!(fde(&gt, &gt).unwrap(), 0.0);

        let final_off = pts(&[(100.0, -7.0), (3.0, 4.0)]);
        assert_eq!(fde(&final_off, &gt).unwrap(), 5.0);

        let also_final_off = pts(&[(0.0, 0.0), (3.0, 4.0)]);
        assert_eq!(fde(&final_off, &gt).unwrap(), fde(&also_final_off, &gt).unwrap());
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let a = pts(&[(0.0, 0.0)]);
        let b = pts(&[(0.0, 0.0), (1.0, 0.0)]);
        assert!(ade(&a, &b).is_err());
        assert!(fde(&b, &a).is_err());
        assert!(ade(&[], &[]).is_err());
    }

    fn three_way_prediction() -> (Prediction, Vec<Point2>) {
        let gt = pts(&[(1.0, 0.0), (2.0, 0.0)]);
        let exact = pts(&[(1.0, 0.0), (2.0, 0.0)]);
        let near = pts(&[(1.0, 1.0), (2.0, 1.0)]);
        let far = pts(&[(5.0, 5.0), (6.0, 5.0)]);
        let prediction = prediction_of(vec![
            hypothesis(AgentClass::Vehicle, 0, 0.5, far),
            hypothesis(AgentClass::Vehicle, 1, 0.3, near),
            hypothesis(AgentClass::Vehicle, 2, 0.2, exact),
        ]);
        (prediction, gt)
    }

    #[test]
    fn min_metrics_shrink_as_n_grows() {
        let (prediction, gt) = three_way_prediction();
        let ade1 = min_ade_n(&prediction, &gt, 1).unwrap();
        let ade2 = min_ade_n(&prediction, &gt, 2).unwrap();
        let ade3 = min_ade_n(&prediction, &gt, 3).unwrap();
        assert!(ade1 >= ade2 && ade2 >= ade3);
        assert_eq!(ade3, 0.0);
        assert_eq!(ade2, 1.0);

        let top = top_n(&prediction, 1).unwrap()[0];
        assert_eq!(ade1, ade(&top.points, &gt).unwrap());

        let fde1 = min_fde_n(&prediction, &gt, 1).unwrap();
        let fde3 = min_fde_n(&prediction, &gt, 3).unwrap();
        assert!(fde1 >= fde3);
        assert_eq!(fde3, 0.0);
    }

    #[test]
    fn ranking_ties_keep_emission_order() {
        let a = pts(&[(0.0, 0.0)]);
        let b = pts(&[(1.0, 0.0)]);
        let c = pts(&[(2.0, 0.0)]);
        let prediction = prediction_of(vec![
            hypothesis(AgentClass::Vehicle, 0, 0.25, a),
            hypothesis(AgentClass::Vehicle, 1, 0.5, b),
            hypothesis(AgentClass::Pedestrian, 0, 0.25, c),
        ]);
        let ranked = top_n(&prediction, 2).unwrap();
        assert_eq!(ranked[0].probability, 0.5);
        // The two tied 0.25 entries keep vehicle-before-pedestrian order,
        // so rank 2 is the vehicle anchor 0.
        assert_eq!(ranked[1].anchor, 0);
        assert_eq!(ranked[1].class, AgentClass::Vehicle);
    }

    #[test]
    fn top_n_bounds_are_enforced() {
        let (prediction, _) = three_way_prediction();
        assert!(top_n(&prediction, 0).is_err());
        assert!(top_n(&prediction, 4).is_err());
        assert_eq!(top_n(&prediction, 3).unwrap().len(), 3);
    }

    #[test]
    fn report_rows_are_means_of_per_agent_metrics() {
        let evals = vec![
            AgentEval { agent: 1, class: AgentClass::Vehicle, ade: 1.0, fde: 2.0, min_ade: 0.5, min_fde: 1.0 },
            AgentEval { agent: 2, class: AgentClass::Vehicle, ade: 3.0, fde: 4.0, min_ade: 1.5, min_fde: 2.0 },
            AgentEval { agent: 3, class: AgentClass::Pedestrian, ade: 5.0, fde: 6.0, min_ade: 2.5, min_fde: 3.0 },
        ];
        let report = EvalReport::from_evals(&evals, 5).unwrap();

        let vehicle = report.row("vehicle").unwrap();
        assert_eq!(vehicle.count, 2);
        assert_eq!(vehicle.ade, 2.0);
        assert_eq!(vehicle.fde, 3.0);
        assert_eq!(vehicle.min_ade, 1.0);

        let pedestrian = report.row("pedestrian").unwrap();
        assert_eq!(pedestrian.count, 1);
        assert_eq!(pedestrian.ade, 5.0);

        assert!(report.row("cyclist").is_none());

        let overall = report.row("overall").unwrap();
        assert_eq!(overall.count, 3);
        assert_eq!(overall.ade, 3.0);
        assert_eq!(overall.fde, 4.0);

        assert!(EvalReport::from_evals(&[], 5).is_err());
    }

    #[test]
    fn csv_and_table_carry_the_n_in_headers() {
        let evals = vec![AgentEval {
            agent: 1,
            class: AgentClass::Cyclist,
            ade: 1.0,
            fde: 2.0,
            min_ade: 0.5,
            min_fde: 1.5,
        }];
        let report = EvalReport::from_evals(&evals, 5).unwrap();
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "label,count,ade,fde,min_ade_5,min_fde_5");
        assert!(lines.next().unwrap().starts_with("cyclist,1,"));
        assert!(csv.lines().any(|l| l.starts_with("overall,1,")));

        let table = report.to_table();
        assert!(table.contains("min_ade_5"));
        assert!(table.contains("cyclist"));
    }

    #[test]
    fn baseline_rows_duplicate_single_trajectory_errors_into_min_columns() {
        let row = baseline_row("linear", &[(1.0, 2.0), (3.0, 4.0)]).unwrap();
        assert_eq!(row.count, 2);
        assert_eq!(row.ade, 2.0);
        assert_eq!(row.fde, 3.0);
        assert_eq!(row.min_ade, row.ade);
        assert_eq!(row.min_fde, row.fde);
        assert!(baseline_row("linear", &[]).is_err());
    }

    fn rigid(p: Point2, angle: f64, shift: Point2) -> Point2 {
        let (s, c) = angle.sin_cos();
        Point2::new(c * p.x - s * p.y + shift.x, s * p.x + c * p.y + shift.y)
    }

    proptest! {
        #[test]
        fn metrics_are_rigid_transform_invariant(
            coords in proptest::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 2..8),
            errs in proptest::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 8),
            angle in -3.2..3.2f64,
            tx in -100.0..100.0f64,
            ty in -100.0..100.0f64,
        ) {
            let gt: Vec<Point2> = coords.iter().map(|&(x, y)| Point2::new(x, y)).collect();
            let pred: Vec<Point2> = gt
                .iter()
                .zip(&errs)
                .map(|(p, &(dx, dy))| Point2::new(p.x + dx, p.y + dy))
                .collect();
            let shift = Point2::new(tx, ty);
            let gt_m: Vec<Point2> = gt.iter().map(|&p| rigid(p, angle, shift)).collect();
            let pred_m: Vec<Point2> = pred.iter().map(|&p| rigid(p, angle, shift)).collect();

            let ade_err = (ade(&pred, &gt).unwrap() - ade(&pred_m, &gt_m).unwrap()).abs();
            let fde_err = (fde(&pred, &gt).unwrap() - fde(&pred_m, &gt_m).unwrap()).abs();
            prop_assert!(ade_err < 1e-9, "ade drifted by {ade_err}");
            prop_assert!(fde_err < 1e-9, "fde drifted by {fde_err}");
        }

        #[test]
        fn min_metrics_are_monotone_for_random_rankings(
            probs in proptest::collection::vec(0.01..1.0f64, 2..6),
        ) {
            let total: f64 = probs.iter().sum();
            let gt = vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0)];
            let hypotheses: Vec<TrajectoryHypothesis> = probs
                .iter()
                .enumerate()
                .map(|(i, &p)| TrajectoryHypothesis {
                    class: AgentClass::Vehicle,
                    anchor: i,
                    probability: p / total,
                    points: vec![Point2::new(i as f64, 0.0), Point2::new(i as f64 + 1.0, 0.0)],
                })
                .collect();
            let prediction = Prediction {
                agent: 7,
                class_probs: vec![],
                anchor_probs: vec![],
                hypotheses,
            };
            let mut last = f64::INFINITY;
            for n in 1..=probs.len() {
                let current = min_ade_n(&prediction, &gt, n).unwrap();
                prop_assert!(current <= last + 1e-15);
                last = current;
            }
        }
    }
}
