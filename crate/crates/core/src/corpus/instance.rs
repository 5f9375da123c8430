use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::cue::{extract_cue_word, CueVocab, EPT_CUE};
use super::vocab::BOS_TOKEN;
use super::Session;

pub const MAX_QUERY_LEN: usize = 44;
pub const MAX_REPLY_LEN: usize = 22;
pub const MAX_PER_REPLY: usize = 10;

/// One (query, cue history, reply) training example.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrainingInstance {
    /// Previous two utterances, concatenated and truncated.
    pub query: Vec<String>,
    /// Number of leading query tokens that come from the older utterance.
    #[serde(default)]
    pub query_split: usize,
    /// Cue words of every earlier utterance of the session, oldest first.
    pub history_cues: Vec<String>,
    pub gold_cue: String,
    pub reply: Vec<String>,
}

impl TrainingInstance {
    /// The two source utterances, with a `<bos>` placeholder dropped.
    pub fn context_utterances(&self) -> (Vec<String>, Vec<String>) {
        let split = self.query_split.min(self.query.len());
        let first = &self.query[..split];
        let first = if first == [BOS_TOKEN] { Vec::new() } else { first.to_vec() };
        (first, self.query[split..].to_vec())
    }
}

fn truncated(tokens: &[String], cap: usize) -> Vec<String> {
    tokens[..tokens.len().min(cap)].to_vec()
}

/// Builds the query and split point from the two preceding utterances.
pub fn make_query(older: Option<&[String]>, newer: &[String]) -> (Vec<String>, usize) {
    let mut query: Vec<String> = match older {
        Some(u) => u.to_vec(),
        None => vec![BOS_TOKEN.to_string()],
    };
    let split = query.len().min(MAX_QUERY_LEN);
    query.extend_from_slice(newer);
    query.truncate(MAX_QUERY_LEN);
    (query, split)
}

/// One instance per reply position of the session.
pub fn make_instances(session: &Session, cues: &CueVocab) -> Vec<TrainingInstance> {
    let utts = &session.utterances;
    let cue_of: Vec<&str> = utts.iter().map(|u| cues.word(extract_cue_word(u, cues))).collect();
    (1..utts.len())
        .map(|j| {
            let older = (j >= 2).then(|| utts[j - 2].tokens());
            let (query, query_split) = make_query(older, &utts[j - 1]);
            let reply = truncated(&utts[j], MAX_REPLY_LEN);
            TrainingInstance {
                query,
                query_split,
                history_cues: cue_of[..j].iter().map(|s| s.to_string()).collect(),
                gold_cue: cues.word(extract_cue_word(&reply, cues)).to_string(),
                reply,
            }
        })
        .collect()
}

#[derive(Debug, Default, PartialEq)]
pub struct InstanceReport {
    pub instances: Vec<TrainingInstance>,
    pub duplicates: usize,
    pub over_reply_cap: usize,
    pub over_ept_cap: usize,
}

/// Removes duplicate (query, reply) pairs, keeps at most
/// [`MAX_PER_REPLY`] instances per distinct reply (those with the longest
/// queries, longest first), then keeps at most `ept_cap` instances whose
/// gold cue is `<ept>`.
pub fn filter_instances(instances: Vec<TrainingInstance>, ept_cap: usize) -> InstanceReport {
    let mut report = InstanceReport::default();

    let mut seen = HashSet::new();
    let mut unique = Vec::with_capacity(instances.len());
    for inst in instances {
        if seen.insert((inst.query.clone(), inst.reply.clone())) {
            unique.push(inst);
        } else {
            report.duplicates += 1;
        }
    }

    let mut groups: HashMap<&[String], Vec<usize>> = HashMap::new();
    for (i, inst) in unique.iter().enumerate() {
        groups.entry(&inst.reply).or_default().push(i);
    }
    let mut slot_owner: Vec<Option<usize>> = (0..unique.len()).map(Some).collect();
    for members in groups.values() {
        if members.len() <= MAX_PER_REPLY {
            continue;
        }
        let mut by_len = members.clone();
        by_len.sort_by_key(|&i| (std::cmp::Reverse(unique[i].query.len()), i));
        by_len.truncate(MAX_PER_REPLY);
        // The first MAX_PER_REPLY slots of the group receive the survivors,
        // longest query first.
        for (k, &slot) in members.iter().enumerate() {
            slot_owner[slot] = by_len.get(k).copied();
        }
        report.over_reply_cap += members.len() - MAX_PER_REPLY;
    }

    let mut ept_kept = 0;
    let ept = super::vocab::EPT_TOKEN;
    for owner in slot_owner.into_iter().flatten() {
        let inst = &unique[owner];
        if inst.gold_cue == ept {
            if ept_kept == ept_cap {
                report.over_ept_cap += 1;
                continue;
            }
            ept_kept += 1;
        }
        report.instances.push(inst.clone());
    }
    report
}

pub fn write_instances(path: &Path, instances: &[TrainingInstance]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for inst in instances {
        serde_json::to_writer(&mut w, inst)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_instances(path: &Path) -> Result<Vec<TrainingInstance>> {
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: TrainingInstance = serde_json::from_str(&line)
            .map_err(|e| Error::format(path.display().to_string(), format!("line {}: {e}", n + 1)))?;
        out.push(inst);
    }
    Ok(out)
}

/// Cue index of the instance's gold label (`<ept>` if unknown).
pub fn gold_index(inst: &TrainingInstance, cues: &CueVocab) -> usize {
    cues.id(&inst.gold_cue).unwrap_or(EPT_CUE)
}
