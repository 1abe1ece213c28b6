//! Reference tagging accuracies (percent) and improvements used to validate the improvement metric.

use crate::report::relative_error_reduction;

pub const PROPORTIONS: [f64; 3] = [0.02, 0.1, 1.0];
pub const RATIOS: [f64; 3] = [50.0, 250.0, 500.0];

pub struct ReferenceTask {
    pub name: &'static str,
    /// Supervised baseline per proportion.
    pub sup: [f64; 3],
    /// `[proportion][ratio]`.
    pub pre: [[f64; 3]; 3],
    pub joint: [[f64; 3]; 3],
    /// Printed relative improvements, `[proportion][ratio]`.
    pub joint_over_sup: [[f64; 3]; 3],
    pub joint_over_pre: [[f64; 3]; 3],
}

pub const TASKS: [ReferenceTask; 3] = [
    ReferenceTask {
        name: "POS",
        sup: [95.57, 96.81, 97.41],
        pre: [[95.72, 95.96, 96.08], [96.87, 96.88, 96.92], [97.40, 97.45, 97.46]],
        joint: [[95.92, 96.13, 96.24], [96.99, 97.00, 97.08], [97.49, 97.54, 97.57]],
        joint_over_sup: [[7.9, 12.6, 15.1], [5.6, 6.0, 8.5], [3.1, 5.0, 6.2]],
        joint_over_pre: [[4.7, 4.2, 4.1], [3.8, 3.8, 5.2], [3.5, 3.5, 4.3]],
    },
    ReferenceTask {
        name: "chunking",
        sup: [78.73, 90.06, 94.77],
        pre: [[81.62, 82.10, 83.10], [91.60, 91.09, 91.93], [95.05, 95.12, 95.19]],
        joint: [[82.24, 82.26, 83.05], [91.85, 91.93, 92.23], [95.31, 95.48, 95.50]],
        joint_over_sup: [[16.5, 16.6, 20.3], [18.0, 18.3, 21.8], [10.3, 13.6, 14.0]],
        joint_over_pre: [[3.4, 0.9, -0.3], [3.0, 9.4, 3.7], [5.3, 7.4, 6.4]],
    },
    ReferenceTask {
        name: "NER",
        sup: [78.91, 86.93, 90.74],
        pre: [[76.74, 78.49, 79.47], [86.37, 86.86, 87.57], [91.24, 91.19, 91.30]],
        joint: [[77.61, 78.51, 79.17], [87.05, 86.77, 87.06], [91.34, 91.51, 91.52]],
        joint_over_sup: [[-2.7, 1.5, 4.5], [0.9, -1.2, 1.0], [6.5, 8.3, 8.4]],
        joint_over_pre: [[3.7, 0.1, -1.5], [5.0, -0.7, -4.1], [1.1, 3.6, 2.5]],
    },
];

#[derive(Clone, Debug, PartialEq)]
pub struct EntryCheck {
    pub task: &'static str,
    pub proportion: f64,
    pub ratio: f64,
    pub computed: f64,
    pub printed: f64,
    /// Entries whose inputs are mutually consistent; the NER 2% baseline
    /// does not reproduce its printed improvements and is excluded.
    pub pinned: bool,
}

impl EntryCheck {
    pub fn within(&self, tol: f64) -> bool {
        (self.computed - self.printed).abs() <= tol
    }
}

/// Joint-over-supervised improvements recomputed from the accuracy table.
pub fn joint_over_sup() -> Vec<EntryCheck> {
    let mut out = Vec::new();
    for t in &TASKS {
        for (i, &p) in PROPORTIONS.iter().enumerate() {
            for (j, &r) in RATIOS.iter().enumerate() {
                out.push(EntryCheck {
                    task: t.name,
                    proportion: p,
                    ratio: r,
                    computed: relative_error_reduction(t.sup[i], t.joint[i][j]),
                    printed: t.joint_over_sup[i][j],
                    pinned: !(t.name == "NER" && i == 0),
                });
            }
        }
    }
    out
}

/// Joint-over-pre-training improvements recomputed the same way.
pub fn joint_over_pre() -> Vec<EntryCheck> {
    let mut out = Vec::new();
    for t in &TASKS {
        for (i, &p) in PROPORTIONS.iter().enumerate() {
            for (j, &r) in RATIOS.iter().enumerate() {
                out.push(EntryCheck {
                    task: t.name,
                    proportion: p,
                    ratio: r,
                    computed: relative_error_reduction(t.pre[i][j], t.joint[i][j]),
                    printed: t.joint_over_pre[i][j],
                    pinned: false,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinned_entry_count() {
        let all = joint_over_sup();
        assert_eq!(all.len(), 27);
        assert_eq!(all.iter().filter(|e| e.pinned).count(), 24);
    }

    #[test]
    fn pos_entries_reproduce() {
        for e in joint_over_sup().iter().filter(|e| e.task == "POS") {
            assert!(e.within(0.1), "{e:?}");
        }
    }
}
