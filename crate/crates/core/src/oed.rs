//! Orthogonal experiment design: the L16(4^5) array, factor tables, plan
//! generation, and range analysis of plan responses.
//!
//! Sixteen runs cover five factors at four levels each. Every level of
//! every factor appears in exactly 4 rows, and for every pair of columns
//! each of the 16 ordered level pairs appears exactly once — the balance
//! that lets per-factor level means be compared directly instead of
//! running the 4^5 = 1024 full factorial.

use serde::Deserialize;
use thiserror::Error;

use crate::models::ActivationKind;

pub const PLAN_ROWS: usize = 16;
pub const FACTORS: usize = 5;
pub const LEVELS: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum OedError {
    #[error("malformed array: {0}")]
    MalformedArray(String),
    #[error("incomplete plan: {0}")]
    IncompletePlan(String),
    #[error("invalid factor table: {0}")]
    InvalidFactorTable(String),
    #[error("group `{0}` has no usable records")]
    EmptyGroup(String),
}

/// A 16x5 array of level indices in 0..4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrthogonalArray {
    rows: Vec<[u8; FACTORS]>,
}

impl OrthogonalArray {
    /// Wrap rows after shape validation (16 rows, 5 columns, levels 0..4).
    /// Orthogonality itself is checked separately by
    /// [`verify_orthogonality`].
    pub fn from_rows(rows: Vec<Vec<u8>>) -> Result<Self, OedError> {
        if rows.len() != PLAN_ROWS {
            return Err(OedError::MalformedArray(format!(
                "expected {PLAN_ROWS} rows, got {}",
                rows.len()
            )));
        }
        let mut out = Vec::with_capacity(PLAN_ROWS);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != FACTORS {
                return Err(OedError::MalformedArray(format!(
                    "row {i} has {} columns, expected {FACTORS}",
                    row.len()
                )));
            }
            let mut fixed = [0u8; FACTORS];
            for (j, &level) in row.iter().enumerate() {
                if level as usize >= LEVELS {
                    return Err(OedError::MalformedArray(format!(
                        "row {i} column {j} holds level {level}, expected 0..{LEVELS}"
                    )));
                }
                fixed[j] = level;
            }
            out.push(fixed);
        }
        Ok(OrthogonalArray { rows: out })
    }

    pub fn rows(&self) -> &[[u8; FACTORS]] {
        &self.rows
    }
}

/// GF(4) multiplication over {0, 1, a, a+1} encoded as 0..4 with
/// a^2 = a + 1; addition is XOR.
const GF4_MUL: [[u8; 4]; 4] = [
    [0, 0, 0, 0],
    [0, 1, 2, 3],
    [0, 2, 3, 1],
    [0, 3, 1, 2],
];

/// The canonical L16(4^5) array, built from two orthogonal Latin squares
/// of order 4 over GF(4): row (i, j), taken in row-major order for
/// i, j in 0..4, has columns
/// `[i, j, i + j, i + a*j, i + a^2*j]` in GF(4) arithmetic.
/// The construction is fixed, so output is reproducible byte for byte.
pub fn l16_4_5() -> OrthogonalArray {
    let mut rows = Vec::with_capacity(PLAN_ROWS);
    for i in 0..4u8 {
        for j in 0..4u8 {
            rows.push([
                i,
                j,
                i ^ j,
                i ^ GF4_MUL[2][j as usize],
                i ^ GF4_MUL[3][j as usize],
            ]);
        }
    }
    OrthogonalArray { rows }
}

/// Outcome of an orthogonality check: pass, or the first violated
/// condition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OrthogonalityReport {
    Pass,
    /// A column whose level histogram is not (4, 4, 4, 4).
    UnbalancedColumn { column: usize, histogram: [usize; LEVELS] },
    /// A column pair where some ordered level pair does not appear exactly
    /// once.
    UnbalancedPair {
        columns: (usize, usize),
        levels: (u8, u8),
        count: usize,
    },
}

impl OrthogonalityReport {
    pub fn passed(&self) -> bool {
        matches!(self, OrthogonalityReport::Pass)
    }
}

/// Exhaustively check both orthogonal-array invariants: per-column level
/// balance and pairwise full coverage.
pub fn verify_orthogonality(array: &OrthogonalArray) -> OrthogonalityReport {
    for col in 0..FACTORS {
        let mut histogram = [0usize; LEVELS];
        for row in &array.rows {
            histogram[row[col] as usize] += 1;
        }
        if histogram.iter().any(|&c| c != PLAN_ROWS / LEVELS) {
            return OrthogonalityReport::UnbalancedColumn { column: col, histogram };
        }
    }
    for a in 0..FACTORS {
        for b in (a + 1)..FACTORS {
            let mut counts = [[0usize; LEVELS]; LEVELS];
            for row in &array.rows {
                counts[row[a] as usize][row[b] as usize] += 1;
            }
            for la in 0..LEVELS {
                for lb in 0..LEVELS {
                    if counts[la][lb] != 1 {
                        return OrthogonalityReport::UnbalancedPair {
                            columns: (a, b),
                            levels: (la as u8, lb as u8),
                            count: counts[la][lb],
                        };
                    }
                }
            }
        }
    }
    OrthogonalityReport::Pass
}

/// The five experiment factors, in array-column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Factor {
    WindowLength,
    Hop,
    HiddenNodes,
    Epochs,
    Activation,
}

impl Factor {
    pub const ALL: [Factor; FACTORS] = [
        Factor::WindowLength,
        Factor::Hop,
        Factor::HiddenNodes,
        Factor::Epochs,
        Factor::Activation,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            Factor::WindowLength => "L",
            Factor::Hop => "H",
            Factor::HiddenNodes => "N",
            Factor::Epochs => "E",
            Factor::Activation => "F",
        }
    }
}

/// Four levels for each of the five factors.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorTable {
    pub window_length: [usize; LEVELS],
    pub hop: [usize; LEVELS],
    pub hidden_nodes: [usize; LEVELS],
    pub epochs: [usize; LEVELS],
    #[serde(deserialize_with = "deserialize_activations")]
    pub activation: [ActivationKind; LEVELS],
}

fn deserialize_activations<'de, D>(de: D) -> Result<[ActivationKind; LEVELS], D::Error>
where
    D: serde::Deserializer<'de>,
{
    use serde::de::Error;
    let tokens: [String; LEVELS] = Deserialize::deserialize(de)?;
    let mut out = [ActivationKind::Linear; LEVELS];
    for (i, token) in tokens.iter().enumerate() {
        out[i] = ActivationKind::parse(token)
            .ok_or_else(|| D::Error::custom(format!("unknown activation `{token}`")))?;
    }
    Ok(out)
}

impl Default for FactorTable {
    /// The reference levels: L in {5,10,15,20}, H in {0..3}, N in
    /// {5,10,15,20}, E in {10,50,200,1000}, F over the four activations.
    fn default() -> Self {
        FactorTable {
            window_length: [5, 10, 15, 20],
            hop: [0, 1, 2, 3],
            hidden_nodes: [5, 10, 15, 20],
            epochs: [10, 50, 200, 1000],
            activation: [
                ActivationKind::Linear,
                ActivationKind::Sigmoid,
                ActivationKind::Tanh,
                ActivationKind::ReLU,
            ],
        }
    }
}

impl FactorTable {
    /// Validate level distinctness within every factor.
    pub fn validate(&self) -> Result<(), OedError> {
        fn distinct<T: PartialEq + std::fmt::Debug>(name: &str, xs: &[T]) -> Result<(), OedError> {
            for i in 0..xs.len() {
                for j in (i + 1)..xs.len() {
                    if xs[i] == xs[j] {
                        return Err(OedError::InvalidFactorTable(format!(
                            "factor {name} repeats level {:?}",
                            xs[i]
                        )));
                    }
                }
            }
            Ok(())
        }
        distinct("L", &self.window_length)?;
        distinct("H", &self.hop)?;
        distinct("N", &self.hidden_nodes)?;
        distinct("E", &self.epochs)?;
        distinct("F", &self.activation)?;
        if self.window_length.iter().any(|&l| l == 0) {
            return Err(OedError::InvalidFactorTable(
                "window lengths must be at least 1".into(),
            ));
        }
        if self.hidden_nodes.iter().any(|&n| n == 0) {
            return Err(OedError::InvalidFactorTable(
                "hidden node counts must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Parse a TOML factor table:
    ///
    /// ```toml
    /// window_length = [5, 10, 15, 20]
    /// hop = [0, 1, 2, 3]
    /// hidden_nodes = [5, 10, 15, 20]
    /// epochs = [10, 50, 200, 1000]
    /// activation = ["linear", "sigmoid", "tanh", "relu"]
    /// ```
    pub fn from_toml(text: &str) -> Result<Self, OedError> {
        let table: FactorTable = toml::from_str(text)
            .map_err(|e| OedError::InvalidFactorTable(e.to_string()))?;
        table.validate()?;
        Ok(table)
    }
}

/// One plan row: concrete values for every factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorAssignment {
    pub window_length: usize,
    pub hop: usize,
    pub hidden_nodes: usize,
    pub epochs: usize,
    pub activation: ActivationKind,
    pub plan_row: usize,
}

/// Map a row of level indices through the factor table.
pub fn assignment_from_levels(
    factors: &FactorTable,
    levels: [u8; FACTORS],
    plan_row: usize,
) -> FactorAssignment {
    FactorAssignment {
        window_length: factors.window_length[levels[0] as usize],
        hop: factors.hop[levels[1] as usize],
        hidden_nodes: factors.hidden_nodes[levels[2] as usize],
        epochs: factors.epochs[levels[3] as usize],
        activation: factors.activation[levels[4] as usize],
        plan_row,
    }
}

/// The 16-row experiment plan: each row of [`l16_4_5`] mapped through the
/// factor level lists.
pub fn generate_plan(factors: &FactorTable) -> Result<Vec<FactorAssignment>, OedError> {
    factors.validate()?;
    Ok(l16_4_5()
        .rows()
        .iter()
        .enumerate()
        .map(|(r, &levels)| assignment_from_levels(factors, levels, r))
        .collect())
}

/// Recover the level indices of an assignment from the canonical array.
pub fn levels_of(assignment: &FactorAssignment) -> Option<[u8; FACTORS]> {
    l16_4_5().rows().get(assignment.plan_row).copied()
}

/// Per-factor summary from range analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorEffect {
    pub factor: Factor,
    /// Mean response at each level, by level index; the label is the
    /// level's display value from the plan.
    pub level_means: [f64; LEVELS],
    pub level_labels: [String; LEVELS],
    /// max(level mean) - min(level mean).
    pub range: f64,
    /// Level index with the minimal mean (ties go to the lowest index).
    pub best_level: usize,
}

/// Output of [`range_analysis`].
#[derive(Debug, Clone, PartialEq)]
pub struct RangeAnalysis {
    /// One effect per factor, in factor order.
    pub effects: Vec<FactorEffect>,
    /// Factors ranked by descending range.
    pub ranking: Vec<Factor>,
    /// The recommended assignment: per factor, the level with the minimal
    /// mean response. The combination need not be one of the plan rows, so
    /// it carries no plan-row index.
    pub recommended: RecommendedLevels,
}

/// The per-factor winning levels from a range analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct RecommendedLevels {
    pub window_length: usize,
    pub hop: usize,
    pub hidden_nodes: usize,
    pub epochs: usize,
    pub activation: ActivationKind,
}

/// Range analysis of one response per plan row. The response is loss-like:
/// lower is better. Requires exactly one response for each of the 16 rows.
pub fn range_analysis(
    results: &[(FactorAssignment, f64)],
) -> Result<RangeAnalysis, OedError> {
    if results.len() != PLAN_ROWS {
        return Err(OedError::IncompletePlan(format!(
            "expected {PLAN_ROWS} responses, got {}",
            results.len()
        )));
    }
    let mut seen = [false; PLAN_ROWS];
    for (assignment, response) in results {
        if assignment.plan_row >= PLAN_ROWS {
            return Err(OedError::IncompletePlan(format!(
                "plan row {} out of range",
                assignment.plan_row
            )));
        }
        if seen[assignment.plan_row] {
            return Err(OedError::IncompletePlan(format!(
                "plan row {} appears more than once",
                assignment.plan_row
            )));
        }
        seen[assignment.plan_row] = true;
        if !response.is_finite() {
            return Err(OedError::IncompletePlan(format!(
                "response for plan row {} is not finite",
                assignment.plan_row
            )));
        }
    }

    let array = l16_4_5();
    let mut effects = Vec::with_capacity(FACTORS);
    for (col, factor) in Factor::ALL.into_iter().enumerate() {
        let mut sums = [0.0f64; LEVELS];
        let mut labels: [Option<String>; LEVELS] = Default::default();
        for (assignment, response) in results {
            let level = array.rows()[assignment.plan_row][col] as usize;
            sums[level] += response;
            labels[level].get_or_insert_with(|| match factor {
                Factor::WindowLength => assignment.window_length.to_string(),
                Factor::Hop => assignment.hop.to_string(),
                Factor::HiddenNodes => assignment.hidden_nodes.to_string(),
                Factor::Epochs => assignment.epochs.to_string(),
                Factor::Activation => assignment.activation.token().to_string(),
            });
        }
        let per_level = (PLAN_ROWS / LEVELS) as f64;
        let level_means = sums.map(|s| s / per_level);
        let mut best_level = 0;
        for (i, &m) in level_means.iter().enumerate() {
            if m < level_means[best_level] {
                best_level = i;
            }
        }
        let max = level_means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = level_means.iter().cloned().fold(f64::INFINITY, f64::min);
        effects.push(FactorEffect {
            factor,
            level_means,
            level_labels: labels.map(|l| l.unwrap_or_default()),
            range: max - min,
            best_level,
        });
    }

    let mut ranking: Vec<usize> = (0..FACTORS).collect();
    ranking.sort_by(|&a, &b| {
        effects[b]
            .range
            .partial_cmp(&effects[a].range)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let ranking: Vec<Factor> = ranking.into_iter().map(|i| Factor::ALL[i]).collect();

    // reconstruct the level values behind the winning indices
    let table_of = |col: usize, level: usize| -> &str {
        effects[col].level_labels[level].as_str()
    };
    let recommended = RecommendedLevels {
        window_length: table_of(0, effects[0].best_level).parse().unwrap_or(0),
        hop: table_of(1, effects[1].best_level).parse().unwrap_or(0),
        hidden_nodes: table_of(2, effects[2].best_level).parse().unwrap_or(0),
        epochs: table_of(3, effects[3].best_level).parse().unwrap_or(0),
        activation: ActivationKind::parse(table_of(4, effects[4].best_level))
            .unwrap_or(ActivationKind::Linear),
    };
    Ok(RangeAnalysis {
        effects,
        ranking,
        recommended,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn array_shape_and_reduction() {
        let array = l16_4_5();
        assert_eq!(array.rows().len(), 16);
        assert!(array.rows().iter().all(|r| r.len() == 5));
        // 16 plan rows replace the full factorial
        assert_eq!(LEVELS.pow(FACTORS as u32), 1024);
    }

    #[test]
    fn array_is_orthogonal() {
        // brute-force both invariants over the emitted array
        assert_eq!(verify_orthogonality(&l16_4_5()), OrthogonalityReport::Pass);
    }

    #[test]
    fn first_row_is_all_zero() {
        assert_eq!(l16_4_5().rows()[0], [0, 0, 0, 0, 0]);
    }

    #[test]
    fn mutated_array_fails_with_named_pair() {
        let mut rows: Vec<Vec<u8>> = l16_4_5().rows().iter().map(|r| r.to_vec()).collect();
        // swap two cells within one column: balance survives, pairing breaks
        let tmp = rows[0][2];
        rows[0][2] = rows[1][2];
        rows[1][2] = tmp;
        let array = OrthogonalArray::from_rows(rows).unwrap();
        match verify_orthogonality(&array) {
            OrthogonalityReport::UnbalancedPair { columns, .. } => {
                assert!(columns.0 == 2 || columns.1 == 2);
            }
            other => panic!("expected pair violation, got {other:?}"),
        }
    }

    #[test]
    fn malformed_arrays_rejected() {
        assert!(matches!(
            OrthogonalArray::from_rows(vec![vec![0, 1]; 16]),
            Err(OedError::MalformedArray(_))
        ));
        assert!(matches!(
            OrthogonalArray::from_rows(vec![vec![0, 1, 2, 3, 4]; 16]),
            Err(OedError::MalformedArray(_))
        ));
        assert!(matches!(
            OrthogonalArray::from_rows(vec![vec![0, 0, 0, 0, 0]; 12]),
            Err(OedError::MalformedArray(_))
        ));
    }

    #[test]
    fn plan_maps_levels_through_table() {
        let table = FactorTable::default();
        let plan = generate_plan(&table).unwrap();
        assert_eq!(plan.len(), 16);
        // row 0 of the canonical array is all level-0
        assert_eq!(plan[0].window_length, 5);
        assert_eq!(plan[0].hop, 0);
        assert_eq!(plan[0].hidden_nodes, 5);
        assert_eq!(plan[0].epochs, 10);
        assert_eq!(plan[0].activation, ActivationKind::Linear);
        // all-fourth-level indices map to the last column of the table
        let top = assignment_from_levels(&table, [3, 3, 3, 3, 3], 99);
        assert_eq!(top.window_length, 20);
        assert_eq!(top.hop, 3);
        assert_eq!(top.hidden_nodes, 20);
        assert_eq!(top.epochs, 1000);
        assert_eq!(top.activation, ActivationKind::ReLU);
    }

    #[test]
    fn plan_balances_every_level() {
        let plan = generate_plan(&FactorTable::default()).unwrap();
        for level in [5usize, 10, 15, 20] {
            assert_eq!(
                plan.iter().filter(|a| a.window_length == level).count(),
                4
            );
            assert_eq!(plan.iter().filter(|a| a.hidden_nodes == level).count(), 4);
        }
        for level in [10usize, 50, 200, 1000] {
            assert_eq!(plan.iter().filter(|a| a.epochs == level).count(), 4);
        }
    }

    #[test]
    fn plan_is_bijective_with_array_rows() {
        let table = FactorTable::default();
        let plan = generate_plan(&table).unwrap();
        let array = l16_4_5();
        for assignment in &plan {
            let levels = levels_of(assignment).unwrap();
            assert_eq!(levels, array.rows()[assignment.plan_row]);
            // mapping back through the table recovers the assignment
            let rebuilt = assignment_from_levels(&table, levels, assignment.plan_row);
            assert_eq!(&rebuilt, assignment);
        }
    }

    #[test]
    fn factor_table_validation() {
        let mut table = FactorTable::default();
        table.epochs = [10, 10, 200, 1000];
        assert!(matches!(
            table.validate(),
            Err(OedError::InvalidFactorTable(_))
        ));
        let toml_text = r#"
            window_length = [5, 10, 15, 20]
            hop = [0, 1, 2, 3]
            hidden_nodes = [5, 10, 15, 20]
            epochs = [10, 25, 40, 50]
            activation = ["linear", "sigmoid", "tanh", "relu"]
        "#;
        let parsed = FactorTable::from_toml(toml_text).unwrap();
        assert_eq!(parsed.epochs, [10, 25, 40, 50]);
        assert!(FactorTable::from_toml("window_length = [1, 2, 3]").is_err());
    }

    fn plan_with_responses(f: impl Fn(&FactorAssignment) -> f64) -> Vec<(FactorAssignment, f64)> {
        generate_plan(&FactorTable::default())
            .unwrap()
            .into_iter()
            .map(|a| {
                let r = f(&a);
                (a, r)
            })
            .collect()
    }

    #[test]
    fn range_analysis_flags_dominant_factor() {
        // tanh rows respond 0.125, everything else 0.875; dyadic values sum
        // exactly, so the cross-factor ties are exact ties
        let results = plan_with_responses(|a| {
            if a.activation == ActivationKind::Tanh {
                0.125
            } else {
                0.875
            }
        });
        let analysis = range_analysis(&results).unwrap();
        assert_eq!(analysis.recommended.activation, ActivationKind::Tanh);
        assert_eq!(analysis.ranking[0], Factor::Activation);
        let f_effect = &analysis.effects[4];
        assert_eq!(f_effect.range, 0.75);
        assert_eq!(f_effect.level_means[2], 0.125);
        // column balance: every other factor sees one tanh row per level,
        // so its level means tie exactly and the lowest index wins
        for effect in &analysis.effects[..4] {
            assert_eq!(effect.range, 0.0);
            assert_eq!(effect.best_level, 0);
        }
    }

    #[test]
    fn range_analysis_tie_rule() {
        let results = plan_with_responses(|_| 0.5);
        let analysis = range_analysis(&results).unwrap();
        for effect in &analysis.effects {
            assert_eq!(effect.best_level, 0);
            assert_eq!(effect.range, 0.0);
        }
        assert_eq!(analysis.recommended.window_length, 5);
        assert_eq!(analysis.recommended.hop, 0);
        assert_eq!(analysis.recommended.hidden_nodes, 5);
        assert_eq!(analysis.recommended.epochs, 10);
        assert_eq!(analysis.recommended.activation, ActivationKind::Linear);
    }

    #[test]
    fn range_analysis_response_equals_window_length() {
        let results = plan_with_responses(|a| a.window_length as f64);
        let analysis = range_analysis(&results).unwrap();
        // L's level means are the levels themselves
        let l_effect = &analysis.effects[0];
        assert_eq!(l_effect.level_means, [5.0, 10.0, 15.0, 20.0]);
        assert!((l_effect.range - 15.0).abs() < 1e-12);
        assert_eq!(analysis.recommended.window_length, 5);
        assert_eq!(analysis.ranking[0], Factor::WindowLength);
        // every other factor's level means are all 12.5 by column balance
        for effect in &analysis.effects[1..] {
            for mean in effect.level_means {
                assert!((mean - 12.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn range_analysis_shift_and_scale_behaviour() {
        // dyadic responses keep every sum exact, so the invariance is exact
        let results = plan_with_responses(|a| a.window_length as f64 + a.hop as f64 * 0.25);
        let base = range_analysis(&results).unwrap();

        let shifted: Vec<_> = results.iter().map(|(a, r)| (*a, r + 100.0)).collect();
        let shifted = range_analysis(&shifted).unwrap();
        assert_eq!(shifted.ranking, base.ranking);
        assert_eq!(shifted.recommended, base.recommended);
        for (e1, e2) in base.effects.iter().zip(&shifted.effects) {
            assert!((e1.range - e2.range).abs() < 1e-9);
        }

        let scaled: Vec<_> = results.iter().map(|(a, r)| (*a, r * 4.0)).collect();
        let scaled = range_analysis(&scaled).unwrap();
        assert_eq!(scaled.recommended, base.recommended);
        for (e1, e2) in base.effects.iter().zip(&scaled.effects) {
            assert!((e2.range - 4.0 * e1.range).abs() < 1e-9);
        }
    }

    #[test]
    fn range_analysis_requires_complete_plan() {
        let mut results = plan_with_responses(|_| 1.0);
        results.pop();
        assert!(matches!(
            range_analysis(&results),
            Err(OedError::IncompletePlan(_))
        ));
        let mut results = plan_with_responses(|_| 1.0);
        results[1].0.plan_row = 0;
        assert!(matches!(
            range_analysis(&results),
            Err(OedError::IncompletePlan(_))
        ));
    }
}
