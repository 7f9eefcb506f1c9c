//! Protocol suites: baseline comparison, single-component ablation,
//! robustness grid, and component-interaction pairs. All variants of a
//! suite share the master seed so per-repetition comparisons are paired.

use std::collections::BTreeSet;
use std::path::Path;

use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::experiment::{ConfigChoice, Experiment};
use crate::meta;
use crate::pipeline::{run_hpmkd, Component, PipelineConfig, RunEnv};
use crate::report::RunReport;
use crate::stats::{bonferroni_threshold, paired_t_test, PairedTTest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Baselines,
    Ablation,
    Robustness,
    Interactions,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baselines" => Ok(Suite::Baselines),
            "ablation" => Ok(Suite::Ablation),
            "robustness" => Ok(Suite::Robustness),
            "interactions" => Ok(Suite::Interactions),
            other => Err(Error::UnknownSuite(other.to_string())),
        }
    }
}

impl std::fmt::Display for Suite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Suite::Baselines => "baselines",
            Suite::Ablation => "ablation",
            Suite::Robustness => "robustness",
            Suite::Interactions => "interactions",
        })
    }
}

#[derive(Debug)]
pub struct SuiteRow {
    pub label: String,
    pub report: RunReport,
}

#[derive(Debug)]
pub struct Comparison {
    pub label: String,
    pub test: PairedTTest,
    pub significant: bool,
}

#[derive(Debug)]
pub struct SuiteReport {
    pub suite: Suite,
    pub rows: Vec<SuiteRow>,
    /// Paired t-tests against the first (reference) row, Bonferroni
    /// corrected at alpha = 0.05.
    pub comparisons: Vec<Comparison>,
    pub notes: Vec<String>,
}

fn ablate(components: &[Component]) -> BTreeSet<Component> {
    components.iter().copied().collect()
}

fn fixed_config(t0: f64, alpha: f64) -> ConfigChoice {
    ConfigChoice::Manual(DistillConfig {
        t0,
        alpha,
        lr: meta::default_config().lr,
        epochs: meta::default_config().epochs,
    })
}

/// Baseline variants: the full pipeline, direct student training,
/// fixed-temperature distillation, and a manually specified
/// one-intermediate chain.
fn baseline_variants(base: &Experiment) -> Vec<(String, Experiment)> {
    let mut rows = Vec::new();
    rows.push(("hpmkd".to_string(), base.clone()));

    // Direct training: alpha = 1 makes the loss pure cross-entropy, so the
    // teacher term vanishes; the distillation components are disabled.
    let mut direct = base.clone();
    direct.ablation = ablate(&[
        Component::ProgChain,
        Component::MultiTeach,
        Component::MetaTemp,
        Component::AdaptConf,
    ]);
    direct.config = fixed_config(1.0, 1.0);
    rows.push(("direct".to_string(), direct));

    // Classical distillation: fixed T = 4, alpha = 0.5, single teacher,
    // no chain, no schedule.
    let mut traditional = base.clone();
    traditional.ablation = ablate(&[
        Component::ProgChain,
        Component::MultiTeach,
        Component::MetaTemp,
        Component::AdaptConf,
    ]);
    traditional.config = fixed_config(4.0, 0.5);
    rows.push(("traditional-kd".to_string(), traditional));

    // Assistant-style: one hand-picked intermediate at half the teacher
    // widths, single teacher, fixed temperature.
    let mut assisted = base.clone();
    assisted.ablation = ablate(&[
        Component::MultiTeach,
        Component::MetaTemp,
        Component::AdaptConf,
    ]);
    assisted.config = fixed_config(4.0, 0.5);
    let mid: Vec<usize> = base
        .teacher_hidden
        .iter()
        .map(|&h| (h / 2).max(1))
        .collect();
    assisted.manual_chain = Some(vec![mid]);
    rows.push(("manual-chain".to_string(), assisted));

    rows
}

fn ablation_variants(base: &Experiment) -> Vec<(String, Experiment)> {
    let mut rows = vec![("full".to_string(), base.clone())];
    for c in Component::ALL {
        let mut v = base.clone();
        v.ablation = ablate(&[c]);
        rows.push((format!("w/o {}", c.name()), v));
    }
    rows
}

/// The three interaction pairs tested alongside their single removals.
pub const INTERACTION_PAIRS: [(Component, Component); 3] = [
    (Component::ProgChain, Component::MetaTemp),
    (Component::MultiTeach, Component::Memory),
    (Component::AdaptConf, Component::MetaTemp),
];

fn interaction_variants(base: &Experiment) -> Vec<(String, Experiment)> {
    let mut rows = vec![("full".to_string(), base.clone())];
    let mut singles: BTreeSet<Component> = BTreeSet::new();
    for (a, b) in INTERACTION_PAIRS {
        singles.insert(a);
        singles.insert(b);
    }
    for c in singles {
        let mut v = base.clone();
        v.ablation = ablate(&[c]);
        rows.push((format!("w/o {}", c.name()), v));
    }
    for (a, b) in INTERACTION_PAIRS {
        let mut v = base.clone();
        v.ablation = ablate(&[a, b]);
        rows.push((format!("w/o {}+{}", a.name(), b.name()), v));
    }
    rows
}

pub const NOISE_LEVELS: [f64; 4] = [0.0, 0.1, 0.2, 0.3];
pub const IMBALANCE_RATIOS: [f64; 4] = [1.0, 10.0, 50.0, 100.0];

fn robustness_variants(base: &Experiment) -> Vec<(String, Experiment)> {
    let mut rows = Vec::new();
    for &noise in &NOISE_LEVELS {
        for &imb in &IMBALANCE_RATIOS {
            let mut v = base.clone();
            v.noise_rate = noise;
            v.imbalance_ratio = imb;
            rows.push((format!("noise{noise:.1}_imb{imb:.0}"), v));
        }
    }
    rows
}

/// Runs every variant of the suite with a shared master seed and collects
/// paired comparisons against the first row.
pub fn run_suite(suite: Suite, base: &Experiment, env: &RunEnv) -> Result<SuiteReport> {
    let variants = match suite {
        Suite::Baselines => baseline_variants(base),
        Suite::Ablation => ablation_variants(base),
        Suite::Robustness => robustness_variants(base),
        Suite::Interactions => interaction_variants(base),
    };

    let mut rows = Vec::with_capacity(variants.len());
    for (label, exp) in variants {
        let pcfg = PipelineConfig {
            workers: exp.workers,
            master_seed: exp.master_seed,
            ablation: exp.ablation.clone(),
        };
        let mut report = run_hpmkd(&exp, &pcfg, env)?;
        report.experiment_name = format!("{}/{label}", base.name);
        rows.push(SuiteRow { label, report });
    }

    // Paired t-tests vs the reference row where pairing is meaningful
    // (shared seeds, same repetition count).
    let mut comparisons = Vec::new();
    if matches!(suite, Suite::Baselines | Suite::Ablation | Suite::Interactions)
        && rows.len() > 1
    {
        let reference = rows[0].report.student_accuracies();
        let threshold = bonferroni_threshold(0.05, rows.len() - 1);
        for row in &rows[1..] {
            let other = row.report.student_accuracies();
            if reference.len() == other.len() && reference.len() >= 2 {
                let test = paired_t_test(&reference, &other)?;
                comparisons.push(Comparison {
                    label: row.label.clone(),
                    significant: test.p_value < threshold,
                    test,
                });
            }
        }
    }

    let mut notes = Vec::new();
    if suite == Suite::Interactions {
        notes.extend(interaction_notes(&rows));
    }

    Ok(SuiteReport {
        suite,
        rows,
        comparisons,
        notes,
    })
}

/// Observed pair deltas against the additive expectation from singles.
fn interaction_notes(rows: &[SuiteRow]) -> Vec<String> {
    let mean_of = |label: &str| -> Option<f64> {
        rows.iter()
            .find(|r| r.label == label)
            .map(|r| r.report.aggregate_accuracy().mean)
    };
    let Some(full) = mean_of("full") else {
        return Vec::new();
    };
    let mut notes = Vec::new();
    for (a, b) in INTERACTION_PAIRS {
        let single_a = mean_of(&format!("w/o {}", a.name()));
        let single_b = mean_of(&format!("w/o {}", b.name()));
        let pair = mean_of(&format!("w/o {}+{}", a.name(), b.name()));
        if let (Some(sa), Some(sb), Some(p)) = (single_a, single_b, pair) {
            let delta_a = (sa - full) * 100.0;
            let delta_b = (sb - full) * 100.0;
            let observed = (p - full) * 100.0;
            let expected = delta_a + delta_b;
            notes.push(format!(
                "{}+{}: observed {observed:+.2} pp, additive expectation {expected:+.2} pp",
                a.name(),
                b.name()
            ));
        }
    }
    notes
}

impl SuiteReport {
    /// One row per variant, delta columns against the reference row.
    pub fn table_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("suite: {}\n", self.suite));
        let reference_mean = self
            .rows
            .first()
            .map(|r| r.report.aggregate_accuracy().mean);
        out.push_str(&format!(
            "{:<24} {:>16} {:>10} {:>12} {:>10} {:>10}\n",
            "variant", "acc (mean±std)", "delta(pp)", "retention%", "time(s)", "CR"
        ));
        for row in &self.rows {
            let acc = row.report.aggregate_accuracy();
            let delta = reference_mean
                .map(|m| (acc.mean - m) * 100.0)
                .unwrap_or(0.0);
            out.push_str(&format!(
                "{:<24} {:>7.4}±{:<7.4} {:>+9.2} {:>12.2} {:>10.2} {:>9.2}x\n",
                row.label,
                acc.mean,
                acc.std,
                delta,
                row.report.aggregate_retention().mean,
                row.report.aggregate_time().mean,
                row.report.meta.compression_ratio
            ));
        }
        if !self.comparisons.is_empty() {
            let threshold = bonferroni_threshold(0.05, self.comparisons.len());
            out.push_str(&format!(
                "\npaired t-tests vs {} (two-sided, Bonferroni threshold {:.4}):\n",
                self.rows[0].label, threshold
            ));
            for c in &self.comparisons {
                out.push_str(&format!(
                    "  vs {:<20} mean_diff={:+.4} t={:+.3} df={} p={:.4}{}\n",
                    c.label,
                    c.test.mean_diff,
                    c.test.t,
                    c.test.df,
                    c.test.p_value,
                    if c.significant { "  *" } else { "" }
                ));
            }
        }
        for n in &self.notes {
            out.push_str(&format!("note: {n}\n"));
        }
        out
    }

    /// Writes the suite table plus one bundle directory per variant.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::Storage {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let table = dir.join("suite.txt");
        std::fs::write(&table, self.table_text()).map_err(|e| Error::Storage {
            path: table,
            source: e,
        })?;
        for row in &self.rows {
            let safe: String = row
                .label
                .chars()
                .map(|c| if c.is_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
                .collect();
            row.report.write_bundle(dir.join(safe))?;
        }
        Ok(())
    }

    pub fn any_failures(&self) -> bool {
        self.rows.iter().any(|r| !r.report.failures.is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_parse() {
        assert_eq!("baselines".parse::<Suite>().unwrap(), Suite::Baselines);
        assert_eq!("ablation".parse::<Suite>().unwrap(), Suite::Ablation);
        assert_eq!("robustness".parse::<Suite>().unwrap(), Suite::Robustness);
        assert_eq!(
            "interactions".parse::<Suite>().unwrap(),
            Suite::Interactions
        );
        assert!(matches!(
            "bogus".parse::<Suite>(),
            Err(Error::UnknownSuite(_))
        ));
    }

    #[test]
    fn variant_sets_have_expected_shape() {
        let base = Experiment::synth_default("t");
        assert_eq!(baseline_variants(&base).len(), 4);
        assert_eq!(ablation_variants(&base).len(), 7);
        assert_eq!(robustness_variants(&base).len(), 16);
        // full + 5 distinct singles + 3 pairs.
        assert_eq!(interaction_variants(&base).len(), 9);
    }

    #[test]
    fn variants_share_master_seed() {
        let base = Experiment::synth_default("t");
        for (_, v) in baseline_variants(&base) {
            assert_eq!(v.master_seed, base.master_seed);
            assert_eq!(v.repetitions, base.repetitions);
        }
    }

    #[test]
    fn direct_variant_is_pure_ce() {
        let base = Experiment::synth_default("t");
        let variants = baseline_variants(&base);
        let (_, direct) = variants.iter().find(|(l, _)| l == "direct").unwrap();
        match &direct.config {
            ConfigChoice::Manual(c) => assert_eq!(c.alpha, 1.0),
            _ => panic!("direct must pin alpha"),
        }
    }
}
