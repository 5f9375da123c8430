//! Engagement, diversity and cue-word metrics over simulated dialogues.
//! Only generated turns are counted; n-grams never cross utterances.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::EmbeddingTable;
use crate::error::{Error, Result};
use crate::nn::ops::cosine;
use crate::reward::greedy_match;
use crate::simulator::ConversationLog;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    /// Ratio per session, averaged over sessions.
    Intra,
    /// One ratio over n-grams pooled from every session.
    Inter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistScores {
    pub intra: [f64; 3],
    pub inter: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistinctCounts {
    pub unigram: f64,
    pub bigram: f64,
    pub trigram: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sessions: usize,
    pub avg_turns: f64,
    pub dist: DistScores,
    pub distinct_counts: DistinctCounts,
    pub total_distinct_words: usize,
    pub cue_compactness: Option<f64>,
    pub compactness_skipped: usize,
    pub cue_reply_correlation: f64,
    pub cue_appearance_rate: f64,
}

fn ngrams(tokens: &[String], n: usize) -> impl Iterator<Item = &[String]> {
    tokens.windows(n)
}

/// (distinct, total) n-grams of one session.
fn session_ngrams(log: &ConversationLog, n: usize) -> (HashSet<&[String]>, usize) {
    let mut set = HashSet::new();
    let mut total = 0;
    for t in &log.turns {
        for g in ngrams(&t.tokens, n) {
            set.insert(g);
            total += 1;
        }
    }
    (set, total)
}

fn ratio(distinct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        distinct as f64 / total as f64
    }
}

pub fn avg_turns(logs: &[ConversationLog]) -> Result<f64> {
    if logs.is_empty() {
        return Err(Error::Argument("average turns of an empty log set".into()));
    }
    Ok(logs.iter().map(|l| l.turn_count()).sum::<usize>() as f64 / logs.len() as f64)
}

pub fn dist_n(logs: &[ConversationLog], n: usize, scope: Scope) -> f64 {
    if logs.is_empty() || n == 0 {
        return 0.0;
    }
    match scope {
        Scope::Intra => {
            logs.iter()
                .map(|l| {
                    let (set, total) = session_ngrams(l, n);
                    ratio(set.len(), total)
                })
                .sum::<f64>()
                / logs.len() as f64
        }
        Scope::Inter => {
            let mut set = HashSet::new();
            let mut total = 0;
            for l in logs {
                let (s, t) = session_ngrams(l, n);
                set.extend(s);
                total += t;
            }
            ratio(set.len(), total)
        }
    }
}

/// Per-session distinct n-gram counts averaged over sessions, plus the
/// number of distinct words over all sessions.
pub fn distinct_counts(logs: &[ConversationLog]) -> Result<(DistinctCounts, usize)> {
    if logs.is_empty() {
        return Err(Error::Argument("distinct counts of an empty log set".into()));
    }
    let avg = |n: usize| logs.iter().map(|l| session_ngrams(l, n).0.len()).sum::<usize>() as f64 / logs.len() as f64;
    let words: HashSet<&String> = logs.iter().flat_map(|l| l.turns.iter().flat_map(|t| &t.tokens)).collect();
    Ok((
        DistinctCounts {
            unigram: avg(1),
            bigram: avg(2),
            trigram: avg(3),
        },
        words.len(),
    ))
}

/// Mean pairwise cosine of each log's cue words, averaged over logs.
/// Returns the score (None if every log was skipped) and the number of
/// logs skipped for having fewer than two cue words.
pub fn cue_compactness(logs: &[ConversationLog], table: &EmbeddingTable) -> (Option<f64>, usize) {
    let mut skipped = 0;
    let mut scores = Vec::new();
    for l in logs {
        let cues: Vec<&str> = l.turns.iter().map(|t| t.cue.as_str()).collect();
        if cues.len() < 2 {
            skipped += 1;
            continue;
        }
        let mut sum = 0.0;
        let mut pairs = 0;
        for i in 0..cues.len() {
            for j in i + 1..cues.len() {
                sum += cosine(table.lookup(cues[i]), table.lookup(cues[j]));
                pairs += 1;
            }
        }
        scores.push(sum / pairs as f64);
    }
    let score = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
    (score, skipped)
}

/// Mean over turns of the greedy match between the cue word and the
/// utterance (an empty utterance scores 0).
pub fn cue_reply_correlation(logs: &[ConversationLog], table: &EmbeddingTable) -> f64 {
    let scores: Vec<f64> = logs
        .iter()
        .flat_map(|l| &l.turns)
        .map(|t| greedy_match(&t.cue, &t.tokens, table).unwrap_or(0.0))
        .collect();
    if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

/// Fraction of turns whose cue word appears verbatim in the utterance.
pub fn cue_appearance_rate(logs: &[ConversationLog]) -> f64 {
    let turns: Vec<_> = logs.iter().flat_map(|l| &l.turns).collect();
    if turns.is_empty() {
        return 0.0;
    }
    turns.iter().filter(|t| t.tokens.contains(&t.cue)).count() as f64 / turns.len() as f64
}

pub fn evaluate(logs: &[ConversationLog], table: &EmbeddingTable) -> Result<MetricsReport> {
    let (distinct, words) = distinct_counts(logs)?;
    let (compactness, skipped) = cue_compactness(logs, table);
    Ok(MetricsReport {
        sessions: logs.len(),
        avg_turns: avg_turns(logs)?,
        dist: DistScores {
            intra: [1, 2, 3].map(|n| dist_n(logs, n, Scope::Intra)),
            inter: [1, 2, 3].map(|n| dist_n(logs, n, Scope::Inter)),
        },
        distinct_counts: distinct,
        total_distinct_words: words,
        cue_compactness: compactness,
        compactness_skipped: skipped,
        cue_reply_correlation: cue_reply_correlation(logs, table),
        cue_appearance_rate: cue_appearance_rate(logs),
    })
}

/// Markdown rendering with one row per system.
pub fn markdown_table(rows: &[(String, MetricsReport)]) -> String {
    let mut out = String::new();
    out.push_str("Inter-session Dist-n pools n-grams over all sessions before taking the ratio; intra-session Dist-n averages per-session ratios.\n\n");
    out.push_str("| System | Turns | Dist-1 | Dist-2 | Dist-3 | Dist-1 (inter) | Dist-2 (inter) | Dist-3 (inter) | #U | #B | #T | # Words |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|---|---|---|\n");
    for (name, r) in rows {
        out.push_str(&format!(
            "| {name} | {:.2} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {:.2} | {:.2} | {:.2} | {} |\n",
            r.avg_turns,
            r.dist.intra[0],
            r.dist.intra[1],
            r.dist.intra[2],
            r.dist.inter[0],
            r.dist.inter[1],
            r.dist.inter[2],
            r.distinct_counts.unigram,
            r.distinct_counts.bigram,
            r.distinct_counts.trigram,
            r.total_distinct_words,
        ));
    }
    out.push_str("\n| System | Sessions | Cue compactness | Cue-reply correlation | Cue appearance rate |\n|---|---|---|---|---|\n");
    for (name, r) in rows {
        let compact = r.cue_compactness.map_or("n/a".to_string(), |c| format!("{c:.3}"));
        out.push_str(&format!(
            "| {name} | {} | {compact} | {:.3} | {:.3} |\n",
            r.sessions, r.cue_reply_correlation, r.cue_appearance_rate
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{LoggedTurn, Termination};
    use proptest::prelude::*;

    fn log(turns: &[(&str, &str)]) -> ConversationLog {
        ConversationLog {
            seed: vec![vec!["seed".into()]],
            seed_cues: vec![],
            turns: turns
                .iter()
                .map(|(cue, text)| LoggedTurn {
                    agent: "A".into(),
                    cue: cue.to_string(),
                    tokens: text.split_whitespace().map(str::to_string).collect(),
                    r1: 0.0,
                    r2: 0.0,
                    r: 0.0,
                })
                .collect(),
            reason: Termination::MaxTurns,
        }
    }

    #[test]
    fn avg_turns_cases() {
        let a = log(&[("x", "a"), ("x", "b")]);
        let b = log(&[("x", "a"), ("x", "b"), ("x", "c"), ("x", "d")]);
        assert_eq!(avg_turns(&[a, b]).unwrap(), 3.0);
        let ten: Vec<(&str, &str)> = vec![("x", "a"); 10];
        assert_eq!(avg_turns(&[log(&ten)]).unwrap(), 10.0);
        assert!(avg_turns(&[]).is_err());
    }

    #[test]
    fn dist_hand_counts() {
        let l = [log(&[("x", "a b"), ("x", "a c")])];
        assert_eq!(dist_n(&l, 1, Scope::Intra), 0.75);
        assert_eq!(dist_n(&l, 2, Scope::Intra), 1.0);
        assert_eq!(dist_n(&l, 3, Scope::Intra), 0.0);
    }

    #[test]
    fn distinct_count_cases() {
        let one = log(&[("x", "a b"), ("x", "a c")]);
        let (c, w) = distinct_counts(std::slice::from_ref(&one)).unwrap();
        assert_eq!((c.unigram, c.bigram, w), (3.0, 2.0, 3));
        let (c2, w2) = distinct_counts(&[one.clone(), one]).unwrap();
        assert_eq!((c2, w2), (c, w));
    }

    #[test]
    fn duplicating_logs_halves_inter_ratio() {
        let logs = vec![log(&[("x", "a b c"), ("x", "b c d")]), log(&[("x", "e f"), ("x", "a")])];
        let doubled: Vec<_> = logs.iter().chain(&logs).cloned().collect();
        for n in 1..=3 {
            let single = dist_n(&logs, n, Scope::Inter);
            assert!((dist_n(&doubled, n, Scope::Inter) - single / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn cue_metrics_cases() {
        let mut t = EmbeddingTable::new(2);
        t.insert("go", vec![1.0, 0.0]).unwrap();
        t.insert("home", vec![0.0, 1.0]).unwrap();
        let same = log(&[("go", "go now"), ("go", "we go"), ("go", "go")]);
        assert_eq!(cue_compactness(std::slice::from_ref(&same), &t), (Some(1.0), 0));
        assert_eq!(cue_reply_correlation(std::slice::from_ref(&same), &t), 1.0);
        assert_eq!(cue_appearance_rate(std::slice::from_ref(&same)), 1.0);
        let never = log(&[("go", "home"), ("home", "stay")]);
        assert_eq!(cue_appearance_rate(std::slice::from_ref(&never)), 0.0);
        let single = log(&[("go", "home")]);
        assert_eq!(cue_reply_correlation(std::slice::from_ref(&single), &t), 0.0);
        assert_eq!(cue_compactness(&[single], &t), (None, 1));
    }

    proptest! {
        #[test]
        fn metrics_permutation_invariant_and_bounded(
            raw in proptest::collection::vec(proptest::collection::vec(proptest::collection::vec(0u8..4, 0..5), 1..6), 1..5),
        ) {
            let logs: Vec<ConversationLog> = raw
                .iter()
                .map(|turns| ConversationLog {
                    seed: vec![],
                    seed_cues: vec![],
                    turns: turns
                        .iter()
                        .map(|t| LoggedTurn {
                            agent: "A".into(),
                            cue: "w0".into(),
                            tokens: t.iter().map(|x| format!("w{x}")).collect(),
                            r1: 0.0,
                            r2: 0.0,
                            r: 0.0,
                        })
                        .collect(),
                    reason: Termination::MaxTurns,
                })
                .collect();
            let mut t = EmbeddingTable::new(2);
            for i in 0..4 {
                t.insert(format!("w{i}"), vec![(i as f64).cos(), (i as f64).sin()]).unwrap();
            }
            let a = evaluate(&logs, &t).unwrap();
            let rev: Vec<_> = logs.iter().rev().cloned().collect();
            let b = evaluate(&rev, &t).unwrap();
            prop_assert_eq!(a.dist.inter, b.dist.inter);
            prop_assert_eq!(a.total_distinct_words, b.total_distinct_words);
            prop_assert!((a.avg_turns - b.avg_turns).abs() < 1e-12);
            prop_assert!((a.dist.intra[0] - b.dist.intra[0]).abs() < 1e-12);
            for v in a.dist.intra.iter().chain(&a.dist.inter).chain([&a.cue_appearance_rate]) {
                prop_assert!((0.0..=1.0).contains(v));
            }
        }
    }
}
