use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{fleiss_kappa, holm_adjust, wilcoxon_signed_rank, AgreementTable, Group, Quartet, TestResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub rater_id: String,
    pub quartet_id: String,
    /// 1-based slot the rater believes is real.
    pub chosen_slot: u8,
    /// Likert realism score (1–4) for each slot in display order.
    pub ratings: [u8; 4],
    pub timestamp: String,
}

impl ResponseRecord {
    /// Names of fields that violate their ranges.
    pub fn invalid_fields(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if self.rater_id.trim().is_empty() {
            bad.push("rater_id".into());
        }
        if self.quartet_id.trim().is_empty() {
            bad.push("quartet_id".into());
        }
        if !(1..=4).contains(&self.chosen_slot) {
            bad.push("chosen_slot".into());
        }
        for (i, r) in self.ratings.iter().enumerate() {
            if !(1..=4).contains(r) {
                bad.push(format!("ratings[{i}]"));
            }
        }
        bad
    }
}

fn index(quartets: &[Quartet]) -> HashMap<&str, &Quartet> {
    quartets.iter().map(|q| (q.quartet_id.as_str(), q)).collect()
}

fn lookup<'a>(by_id: &HashMap<&str, &'a Quartet>, r: &ResponseRecord) -> Result<&'a Quartet> {
    let bad = r.invalid_fields();
    if !bad.is_empty() {
        return Err(Error::Validation(bad));
    }
    by_id
        .get(r.quartet_id.as_str())
        .copied()
        .ok_or_else(|| Error::NotFound(format!("quartet {}", r.quartet_id)))
}

/// Share of responses whose chosen slot holds the real image.
pub fn identification_accuracy(responses: &[ResponseRecord], quartets: &[Quartet]) -> Result<f64> {
    if responses.is_empty() {
        return Err(Error::invalid("no responses"));
    }
    let by_id = index(quartets);
    let mut correct = 0usize;
    for r in responses {
        if lookup(&by_id, r)?.hidden_truth == r.chosen_slot {
            correct += 1;
        }
    }
    Ok(correct as f64 / responses.len() as f64)
}

/// Items are quartets, categories the chosen slot.
pub fn identification_table(responses: &[ResponseRecord], quartets: &[Quartet]) -> Result<AgreementTable> {
    let by_id = index(quartets);
    let mut rows: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for r in responses {
        lookup(&by_id, r)?;
        rows.entry(r.quartet_id.as_str()).or_insert_with(|| vec![0; 4])[r.chosen_slot as usize - 1] += 1;
    }
    AgreementTable::new(rows.into_values().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterMeans {
    pub rater_id: String,
    /// Mean rating per group, ordered real, ckpt_a, ckpt_b, ckpt_c.
    pub means: [f64; 4],
    pub quartets: usize,
}

/// Per-rater mean Likert rating for each image group, sorted by rater id.
pub fn rater_group_means(responses: &[ResponseRecord], quartets: &[Quartet]) -> Result<Vec<RaterMeans>> {
    let by_id = index(quartets);
    let mut sums: BTreeMap<&str, ([f64; 4], usize)> = BTreeMap::new();
    for r in responses {
        let q = lookup(&by_id, r)?;
        let entry = sums.entry(r.rater_id.as_str()).or_insert(([0.0; 4], 0));
        for (slot, &rating) in r.ratings.iter().enumerate() {
            entry.0[q.group_of_slot[slot].index()] += rating as f64;
        }
        entry.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(id, (s, n))| RaterMeans {
            rater_id: id.to_string(),
            means: s.map(|v| v / n as f64),
            quartets: n,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTest {
    pub group: Group,
    pub test: TestResult,
    pub p_holm: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingCount {
    pub group: Group,
    pub rating: u8,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub n_responses: usize,
    pub n_raters: usize,
    pub n_quartets: usize,
    pub accuracy: f64,
    /// `None` when agreement is undefined (fewer than two raters, or every
    /// choice in a single slot); see `kappa_note`.
    pub kappa: Option<f64>,
    pub kappa_note: Option<String>,
    pub rater_means: Vec<RaterMeans>,
    /// Grand mean over raters of each group's per-rater mean.
    pub group_means: [f64; 4],
    /// Real versus each synthetic group, paired over raters.
    pub tests: Vec<GroupTest>,
    pub rating_distribution: Vec<RatingCount>,
}

impl StudyReport {
    /// CSV `group,rating,count` covering every group and rating 1–4.
    pub fn ratings_csv(&self) -> String {
        let mut out = String::from("group,rating,count\n");
        for c in &self.rating_distribution {
            out.push_str(&format!("{},{},{}\n", c.group.name(), c.rating, c.count));
        }
        out
    }
}

/// Full analysis of a complete response set: every rater answers every
/// quartet exactly once.
pub fn analyze_study(responses: &[ResponseRecord], quartets: &[Quartet]) -> Result<StudyReport> {
    if quartets.is_empty() || responses.is_empty() {
        return Err(Error::invalid("analysis needs quartets and responses"));
    }
    let by_id = index(quartets);
    let mut answered: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    let mut distribution = [[0usize; 4]; 4];
    for r in responses {
        let q = lookup(&by_id, r)?;
        if !answered.entry(r.rater_id.as_str()).or_default().insert(r.quartet_id.as_str()) {
            return Err(Error::Conflict(format!("{} answered {} twice", r.rater_id, r.quartet_id)));
        }
        for (slot, &rating) in r.ratings.iter().enumerate() {
            distribution[q.group_of_slot[slot].index()][rating as usize - 1] += 1;
        }
    }
    let incomplete: Vec<&str> = answered
        .iter()
        .filter(|(_, qs)| qs.len() != quartets.len())
        .map(|(r, _)| *r)
        .collect();
    if !incomplete.is_empty() {
        return Err(Error::invalid(format!(
            "raters {} did not answer all {} quartets",
            incomplete.join(", "),
            quartets.len()
        )));
    }

    let (kappa, kappa_note) = if answered.len() < 2 {
        (None, Some("fewer than two raters".to_string()))
    } else {
        match fleiss_kappa(&identification_table(responses, quartets)?) {
            Ok(k) => (Some(k), None),
            Err(Error::Undefined(msg)) => (None, Some(msg)),
            Err(e) => return Err(e),
        }
    };

    let rater_means = rater_group_means(responses, quartets)?;
    let column = |g: Group| rater_means.iter().map(|m| m.means[g.index()]).collect::<Vec<f64>>();
    let real = column(Group::Real);
    let raw: Vec<TestResult> = Group::SYNTHETIC
        .iter()
        .map(|&g| wilcoxon_signed_rank(&real, &column(g)))
        .collect::<Result<_>>()?;
    let adjusted = holm_adjust(&raw.iter().map(|t| t.p_two_sided).collect::<Vec<_>>())?;
    let tests = Group::SYNTHETIC
        .iter()
        .zip(raw)
        .zip(adjusted)
        .map(|((&group, test), p_holm)| GroupTest { group, test, p_holm })
        .collect();

    let group_means = Group::ALL.map(|g| {
        let c = column(g);
        c.iter().sum::<f64>() / c.len() as f64
    });
    let rating_distribution = Group::ALL
        .iter()
        .flat_map(|&g| {
            (1..=4u8).map(move |rating| RatingCount {
                group: g,
                rating,
                count: distribution[g.index()][rating as usize - 1],
            })
        })
        .collect();

    Ok(StudyReport {
        n_responses: responses.len(),
        n_raters: answered.len(),
        n_quartets: quartets.len(),
        accuracy: identification_accuracy(responses, quartets)?,
        kappa,
        kappa_note,
        rater_means,
        group_means,
        tests,
        rating_distribution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::turing::build_quartets;

    fn quartets(n: usize) -> Vec<Quartet> {
        let pools: Vec<Vec<String>> = ["r", "a", "b", "c"]
            .iter()
            .map(|p| (0..n).map(|i| format!("{p}{i}")).collect())
            .collect();
        build_quartets(&pools[0], [&pools[1], &pools[2], &pools[3]], n, 3).unwrap()
    }

    fn respond(rater: &str, q: &Quartet, chosen: u8, ratings: [u8; 4]) -> ResponseRecord {
        ResponseRecord {
            rater_id: rater.into(),
            quartet_id: q.quartet_id.clone(),
            chosen_slot: chosen,
            ratings,
            timestamp: "2026-01-01T00:00:00Z".into(),
        }
    }

    #[test]
    fn accuracy_counts() {
        let qs = quartets(400);
        let responses: Vec<_> = qs
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let chosen = if i < 116 { q.hidden_truth } else { q.hidden_truth % 4 + 1 };
                respond("r1", q, chosen, [1; 4])
            })
            .collect();
        assert!((identification_accuracy(&responses, &qs).unwrap() - 0.29).abs() < 1e-15);
        let mut bad = responses[0].clone();
        bad.quartet_id = "zzz".into();
        assert!(matches!(identification_accuracy(&[bad], &qs), Err(Error::NotFound(_))));
    }

    #[test]
    fn group_means() {
        let qs = quartets(2);
        let real_slot = |q: &Quartet| q.hidden_truth as usize - 1;
        let mut rs = Vec::new();
        for (q, real_rating) in qs.iter().zip([3u8, 4]) {
            let mut ratings = [2; 4];
            ratings[real_slot(q)] = real_rating;
            rs.push(respond("x", q, 1, ratings));
        }
        let m = rater_group_means(&rs, &qs).unwrap();
        assert_eq!(m[0].means, [3.5, 2.0, 2.0, 2.0]);
        let all4: Vec<_> = qs.iter().map(|q| respond("y", q, 1, [4; 4])).collect();
        assert_eq!(rater_group_means(&all4, &qs).unwrap()[0].means, [4.0; 4]);
    }

    #[test]
    fn perfect_raters() {
        let qs = quartets(10);
        let rs: Vec<_> = ["a", "b", "c"]
            .iter()
            .flat_map(|r| qs.iter().map(move |q| respond(r, q, q.hidden_truth, [3; 4])))
            .collect();
        let report = analyze_study(&rs, &qs).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert!((report.kappa.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(report.tests.len(), 3);
        assert!(report.tests.iter().all(|t| t.test.zero_only_flag && t.p_holm == 1.0));
        let csv = report.ratings_csv();
        assert_eq!(csv.lines().count(), 17);
        assert!(csv.contains("real,3,30\n"));
    }

    #[test]
    fn single_rater_has_no_kappa() {
        let qs = quartets(3);
        let rs: Vec<_> = qs.iter().map(|q| respond("solo", q, 2, [2, 3, 4, 1])).collect();
        let report = analyze_study(&rs, &qs).unwrap();
        assert!(report.kappa.is_none() && report.kappa_note.is_some());
    }

    #[test]
    fn incomplete_or_duplicate_sets_rejected() {
        let qs = quartets(3);
        let mut rs: Vec<_> = qs.iter().map(|q| respond("a", q, 1, [1; 4])).collect();
        rs.pop();
        assert!(analyze_study(&rs, &qs).is_err());
        rs.push(rs[0].clone());
        assert!(matches!(analyze_study(&rs, &qs), Err(Error::Conflict(_))));
        let mut bad = respond("a", &qs[0], 5, [1, 1, 0, 1]);
        assert_eq!(bad.invalid_fields(), vec!["chosen_slot", "ratings[2]"]);
        bad.chosen_slot = 1;
        assert!(matches!(identification_accuracy(&[bad], &qs), Err(Error::Validation(_))));
    }
}
