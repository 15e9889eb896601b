//! Plain-text result tables shaped like the per-task success grids.

use super::{AblateReport, EvalReport, MultiModalReport};

fn pct(v: f32) -> String {
    format!("{:.0}%", v * 100.0)
}

/// Per-task success table: one row per tier plus the task averages.
pub fn eval_table(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "model: {}   prompt: {}   trials/tier: {}\n",
        report.model, report.prompt_policy, report.trials_per_tier
    ));
    let width = 22usize;
    out.push_str(&format!("{:<8}", "tier"));
    for t in &report.tasks {
        out.push_str(&format!("{:>width$}", t.label, width = width.max(t.label.len() + 2)));
    }
    out.push('\n');
    let n_tiers = report.tasks.first().map_or(0, |t| t.tier_scores.len());
    for tier in 0..n_tiers {
        out.push_str(&format!("{:<8}", tier + 1));
        for t in &report.tasks {
            let row = &t.tier_scores[tier];
            let avg = if row.is_empty() { 0.0 } else { row.iter().sum::<f32>() / row.len() as f32 };
            out.push_str(&format!("{:>width$}", pct(avg), width = width.max(t.label.len() + 2)));
        }
        out.push('\n');
    }
    out.push_str(&format!("{:<8}", "avg"));
    for t in &report.tasks {
        out.push_str(&format!("{:>width$}", pct(t.average), width = width.max(t.label.len() + 2)));
    }
    out.push('\n');
    for (prim, stat) in &report.primitives {
        out.push_str(&format!(
            "{prim}: average success {} (± {})\n",
            pct(stat.mean),
            pct(stat.std)
        ));
    }
    out
}

/// 3x3 route tally like the multi-modal prompting table.
pub fn multimodal_table(report: &MultiModalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<16}{:>8}{:>8}{:>8}\n", "", "left", "middle", "right"));
    for (name, tally) in &report.tallies {
        out.push_str(&format!(
            "{:<16}{:>5}/{}{:>5}/{}{:>5}/{}\n",
            name,
            tally[0],
            report.rollouts_per_condition,
            tally[1],
            report.rollouts_per_condition,
            tally[2],
            report.rollouts_per_condition,
        ));
    }
    out
}

/// Side-by-side prompt-type / prompt-count sweep for two checkpoints.
pub fn ablate_table(report: &AblateReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<14}{:<24}{:>10}{:>12}\n", "model", "prompt policy", "overall", "ambiguous"));
    for run in &report.runs {
        out.push_str(&format!(
            "{:<14}{:<24}{:>10}{:>12}\n",
            run.model,
            run.prompt_policy,
            pct(run.overall_average()),
            pct(run.ambiguous_average()),
        ));
    }
    out.push_str(&format!(
        "ambiguous-scene average: default {} vs +prompt-loss {}\n",
        pct(report.ambiguous_default),
        pct(report.ambiguous_prompt_loss)
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{PrimitiveStat, TaskReport};
    use std::collections::BTreeMap;

    #[test]
    fn table_contains_cells_and_averages() {
        let report = EvalReport {
            model: "test".into(),
            checkpoint_hash: "abc".into(),
            seed: 1,
            trials_per_tier: 2,
            prompt_policy: "random-of-3".into(),
            tasks: vec![TaskReport {
                label: "poke:yellow_sphere".into(),
                tier_scores: vec![vec![1.0, 0.0]; 5],
                average: 0.5,
            }],
            primitives: BTreeMap::from([(
                "poke".to_string(),
                PrimitiveStat { mean: 0.5, std: 0.0 },
            )]),
        };
        let t = eval_table(&report);
        assert!(t.contains("poke:yellow_sphere"));
        assert!(t.contains("50%"));
        assert!(t.contains("poke: average success 50%"));
    }
}
