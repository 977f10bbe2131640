//! Intrinsic evaluation (average log-likelihood, perplexity) and extrinsic
//! hypothesis scoring for n-best rescoring.
//!
//! N-best input lines look like `id ||| target tokens ||| j-i pairs` with
//! 0-based alignment pairs; a parallel source file is indexed by id.
//! Scoring appends ` ||| name=value` pairs, values printed with six
//! decimals.

use std::collections::BTreeMap;

use crate::align::{fertility_label, orientation_label, AffiliationMap};
use crate::corpus::{window, AlignedSentencePair, Side, BOS_ID, EOS_ID};
use crate::error::{Error, Result};
use crate::extract::{Shard, TaskKind, TaskSpec};
use crate::mtl::{avg_loglik_examples, Model};
use crate::net::{forward, GroupWiring, Scalar, TaskWiring};

/// Per-task held-out likelihoods plus their group sum.
#[derive(Debug, Clone)]
pub struct LikelihoodReport {
    /// (task name, average log-likelihood, example count)
    pub per_task: Vec<(String, f64, u64)>,
    pub group_sum: f64,
}

impl LikelihoodReport {
    pub fn new(per_task: Vec<(String, f64, u64)>) -> LikelihoodReport {
        let group_sum = per_task.iter().map(|(_, ll, _)| ll).sum();
        LikelihoodReport {
            per_task,
            group_sum,
        }
    }
}

fn find_task<'a>(
    model: &Model,
    wiring: &'a GroupWiring,
    task_name: &str,
) -> Result<(&'a TaskWiring, TaskSpec)> {
    let spec = model
        .group
        .tasks
        .iter()
        .find(|t| t.name() == task_name)
        .copied()
        .ok_or_else(|| {
            Error::FeatureMismatch(format!("model has no head for task {task_name}"))
        })?;
    let task = wiring
        .task(task_name)
        .expect("wiring mirrors the group task list");
    Ok((task, spec))
}

/// Average log-likelihood of a shard under one model head: exact softmax,
/// natural log, per example.
pub fn avg_loglik(model: &Model, wiring: &GroupWiring, task_name: &str, shard: &Shard) -> Result<(f64, u64)> {
    let (task, spec) = find_task(model, wiring, task_name)?;
    if shard.spec != spec {
        return Err(Error::FeatureMismatch(format!(
            "shard task {} does not match model task {}",
            shard.spec.name(),
            task_name
        )));
    }
    if shard.examples.is_empty() {
        return Err(Error::EmptyShard(format!(
            "average log-likelihood over zero examples is undefined for {task_name}"
        )));
    }
    Ok((
        avg_loglik_examples(&model.params, task, &shard.examples),
        shard.examples.len() as u64,
    ))
}

/// exp(-avg_loglik)
pub fn perplexity(model: &Model, wiring: &GroupWiring, task_name: &str, shard: &Shard) -> Result<f64> {
    let (ll, _) = avg_loglik(model, wiring, task_name, shard)?;
    Ok((-ll).exp())
}

/// Likelihood report over every (task, shard) pair given; shards are
/// matched to tasks by their stored spec.
pub fn likelihood_report(model: &Model, shards: &[Shard]) -> Result<LikelihoodReport> {
    let wiring = model.wiring();
    let mut per_task = Vec::new();
    for task in &model.group.tasks {
        let shard = shards.iter().find(|s| s.spec == *task).ok_or_else(|| {
            Error::Config(format!("no shard supplied for task {}", task.name()))
        })?;
        let (ll, n) = avg_loglik(model, &wiring, &task.name(), shard)?;
        per_task.push((task.name(), ll, n));
    }
    Ok(LikelihoodReport::new(per_task))
}

/// How label scores are normalized at query time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    /// Full softmax: log P = z[label] - logZ.
    Exact,
    /// Trust the trained self-normalization and use the raw logit.
    SelfNormalized,
}

/// One feature's contribution to a hypothesis.
#[derive(Debug, Clone)]
pub struct FeatureScore {
    pub name: String,
    pub total: f64,
    pub per_position: Vec<f64>,
    /// Sum of log-partition values over the scored positions; the exact
    /// and self-normalized totals differ by exactly this.
    pub sum_log_z: f64,
}

/// All feature scores for one hypothesis.
#[derive(Debug, Clone)]
pub struct HypothesisScore {
    pub features: Vec<FeatureScore>,
    /// Hierarchical source-enumerating combined score, present when the
    /// fertility, orientation, and a symmetric set of translation-context
    /// heads are all available.
    pub combined: Option<FeatureScore>,
    /// Weighted sum over features (and combined), when weights are given.
    pub weighted_total: Option<f64>,
    pub src_len: usize,
    pub hyp_len: usize,
}

struct ScoredHead<'a> {
    model: &'a Model,
    wiring: &'a GroupWiring,
    task_index: usize,
    spec: TaskSpec,
}

impl<'a> ScoredHead<'a> {
    fn task(&self) -> &TaskWiring {
        &self.wiring.tasks[self.task_index]
    }

    /// (score under `mode`, logZ) for one example.
    fn score(&self, context: &[u32], label: u32, mode: ScoreMode) -> (f64, f64) {
        let trace = forward(&self.model.params, self.task(), context, label, 0.0f32);
        let log_z = trace.log_z.to_f64();
        let value = match mode {
            ScoreMode::Exact => trace.log_prob.to_f64(),
            ScoreMode::SelfNormalized => trace.logits[label as usize].to_f64(),
        };
        (value, log_z)
    }
}

/// Scoring context holding every loaded model plus per-head lookup.
pub struct Scorer<'a> {
    models: Vec<(&'a Model, GroupWiring)>,
}

impl<'a> Scorer<'a> {
    /// Assemble a scorer over several models. All models must agree on
    /// vocabularies, and no head name may appear twice.
    pub fn new(models: &[&'a Model]) -> Result<Scorer<'a>> {
        if models.is_empty() {
            return Err(Error::Config("no models supplied".into()));
        }
        let first = models[0];
        for m in &models[1..] {
            if m.src_vocab.digest() != first.src_vocab.digest()
                || m.tgt_vocab.digest() != first.tgt_vocab.digest()
            {
                return Err(Error::DigestMismatch(
                    "models were trained against different vocabularies".into(),
                ));
            }
        }
        let mut seen = BTreeMap::new();
        for m in models {
            for task in &m.group.tasks {
                if seen.insert(task.name(), ()).is_some() {
                    return Err(Error::FeatureMismatch(format!(
                        "task {} appears in more than one model",
                        task.name()
                    )));
                }
            }
        }
        Ok(Scorer {
            models: models.iter().map(|m| (*m, m.wiring())).collect(),
        })
    }

    fn src_vocab(&self) -> &crate::corpus::Vocabulary {
        &self.models[0].0.src_vocab
    }

    fn tgt_vocab(&self) -> &crate::corpus::Vocabulary {
        &self.models[0].0.tgt_vocab
    }

    /// Heads in declaration order: models in load order, tasks in model
    /// order.
    fn heads(&self) -> Vec<ScoredHead<'_>> {
        let mut out = Vec::new();
        for (model, wiring) in &self.models {
            for (idx, spec) in model.group.tasks.iter().enumerate() {
                out.push(ScoredHead {
                    model,
                    wiring,
                    task_index: idx,
                    spec: *spec,
                });
            }
        }
        out
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.heads().iter().map(|h| h.spec.name()).collect()
    }

    fn head(&self, name: &str) -> Option<ScoredHead<'_>> {
        self.heads().into_iter().find(|h| h.spec.name() == name)
    }

    /// Score one hypothesis against its source under every available
    /// feature. `links` are 1-based (source, target) pairs.
    pub fn score_hypothesis(
        &self,
        src_tokens: &[&str],
        hyp_tokens: &[&str],
        links: &[(u32, u32)],
        weights: Option<&BTreeMap<String, f64>>,
        mode: ScoreMode,
    ) -> Result<HypothesisScore> {
        if links.is_empty() {
            return Err(Error::MissingAlignment(
                "hypothesis carries no alignment links; affiliation is undefined".into(),
            ));
        }
        let src: Vec<u32> = src_tokens.iter().map(|t| self.src_vocab().id(t)).collect();
        let tgt: Vec<u32> = hyp_tokens.iter().map(|t| self.tgt_vocab().id(t)).collect();
        let pair = AlignedSentencePair::new(src, tgt, links.iter().copied()).map_err(|e| {
            Error::MissingAlignment(format!("alignment does not fit the sentence pair: {e}"))
        })?;
        let affil = AffiliationMap::from_pair(&pair).expect("links checked non-empty");

        let mut features = Vec::new();
        for head in self.heads() {
            features.push(score_feature(&head, &pair, mode));
        }
        let combined = self.score_combined(&pair, &affil, mode)?;

        let weighted_total = weights.map(|w| {
            let mut total = 0.0;
            for f in &features {
                total += w.get(&f.name).copied().unwrap_or(1.0) * f.total;
            }
            if let Some(c) = &combined {
                total += w.get(&c.name).copied().unwrap_or(1.0) * c.total;
            }
            total
        });

        Ok(HypothesisScore {
            features,
            combined,
            weighted_total,
            src_len: pair.src.len(),
            hyp_len: pair.tgt.len(),
        })
    }

    /// The hierarchical source-enumerating combined score: per source
    /// position, an unaligned word contributes fertility-zero plus the
    /// single orientation term; an aligned word contributes
    /// fertility-one, the translation-context product, and the pair
    /// orientation term.
    fn score_combined(
        &self,
        pair: &AlignedSentencePair,
        affil: &AffiliationMap,
        mode: ScoreMode,
    ) -> Result<Option<FeatureScore>> {
        let fert = match self.head("fert") {
            Some(h) => h,
            None => return Ok(None),
        };
        let ori = match self.head("ori") {
            Some(h) => h,
            None => return Ok(None),
        };
        let offsets: Vec<i32> = self
            .heads()
            .iter()
            .filter_map(|h| match h.spec.kind {
                TaskKind::Tcm { offset } => Some(offset),
                _ => None,
            })
            .collect();
        if offsets.is_empty() {
            return Ok(None);
        }
        let d = offsets.iter().map(|o| o.abs()).max().unwrap();
        for want in -d..=d {
            if !offsets.contains(&want) {
                return Err(Error::FeatureMismatch(format!(
                    "combined score needs translation-context heads for every offset in \
                     [-{d}, {d}]; offset {want} is missing"
                )));
            }
        }
        let tcm_heads: Vec<(i32, ScoredHead<'_>)> = (-d..=d)
            .map(|o| (o, self.head(&TaskSpec::tcm(o, 0).name()).expect("checked")))
            .collect();

        let m = fert.spec.m;
        let tgt_len = pair.tgt_len() as i64;
        let mut per_position = Vec::with_capacity(pair.src.len());
        let mut sum_log_z = 0.0;
        for j in 1..=pair.src_len() {
            let ctx = window(&pair.src, j as i64, m as usize, Side::Source)
                .expect("j inside sentence")
                .ids;
            let mut term = 0.0;
            match affil.b_of(j) {
                None => {
                    let (f, lz) = fert.score(&ctx, 0, mode);
                    term += f;
                    sum_log_z += lz;
                    let (o, lz) = ori.score(&ctx, orientation_label(pair, j).id(), mode);
                    term += o;
                    sum_log_z += lz;
                }
                Some(b) => {
                    let (f, lz) = fert.score(&ctx, fertility_label(pair, j), mode);
                    term += f;
                    sum_log_z += lz;
                    for (offset, head) in &tcm_heads {
                        let pos = b as i64 + *offset as i64;
                        let label = if pos < 1 {
                            BOS_ID
                        } else if pos > tgt_len {
                            EOS_ID
                        } else {
                            pair.tgt[(pos - 1) as usize]
                        };
                        let (v, lz) = head.score(&ctx, label, mode);
                        term += v;
                        sum_log_z += lz;
                    }
                    let (o, lz) = ori.score(&ctx, orientation_label(pair, j).id(), mode);
                    term += o;
                    sum_log_z += lz;
                }
            }
            per_position.push(term);
        }
        Ok(Some(FeatureScore {
            name: "srcen".into(),
            total: per_position.iter().sum(),
            per_position,
            sum_log_z,
        }))
    }
}

/// Standalone per-feature totals, each following its own extraction
/// semantics (TCM at offset 0 predicts `<null>` on unaligned words; other
/// offsets skip them).
fn score_feature(head: &ScoredHead<'_>, pair: &AlignedSentencePair, mode: ScoreMode) -> FeatureScore {
    let examples =
        crate::extract::extract_task(pair, &head.spec, crate::extract::NullMode::PredictNull);
    let mut per_position = Vec::with_capacity(examples.len());
    let mut sum_log_z = 0.0;
    for ex in &examples {
        let (v, lz) = head.score(&ex.context, ex.label, mode);
        per_position.push(v);
        sum_log_z += lz;
    }
    FeatureScore {
        name: head.spec.name(),
        total: per_position.iter().sum(),
        per_position,
        sum_log_z,
    }
}

/// One parsed n-best entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NBestEntry {
    pub id: u64,
    pub hyp_tokens: Vec<String>,
    /// 1-based links, converted from the file's 0-based pairs.
    pub links: Vec<(u32, u32)>,
    pub raw: String,
}

/// Parse `id ||| target tokens ||| j-i pairs`.
pub fn parse_nbest_line(line: &str, lineno: usize) -> Result<NBestEntry> {
    let fields: Vec<&str> = line.split(" ||| ").collect();
    if fields.len() < 3 {
        return Err(Error::Parse {
            line: lineno,
            detail: "expected `id ||| target tokens ||| j-i pairs`".into(),
        });
    }
    let id: u64 = fields[0].trim().parse().map_err(|_| Error::Parse {
        line: lineno,
        detail: format!("bad sentence id {:?}", fields[0]),
    })?;
    let hyp_tokens: Vec<String> = fields[1].split_whitespace().map(str::to_string).collect();
    let mut links = Vec::new();
    for tok in fields[2].split_whitespace() {
        let (j, i) = tok.split_once('-').ok_or_else(|| Error::Parse {
            line: lineno,
            detail: format!("bad alignment token {tok:?}"),
        })?;
        let j: u32 = j.parse().map_err(|_| Error::Parse {
            line: lineno,
            detail: format!("bad alignment token {tok:?}"),
        })?;
        let i: u32 = i.parse().map_err(|_| Error::Parse {
            line: lineno,
            detail: format!("bad alignment token {tok:?}"),
        })?;
        links.push((j + 1, i + 1));
    }
    Ok(NBestEntry {
        id,
        hyp_tokens,
        links,
        raw: line.to_string(),
    })
}

/// Render the output line: the input line plus ` ||| name=value` pairs.
pub fn format_scored_line(entry: &NBestEntry, score: &HypothesisScore) -> String {
    let mut out = entry.raw.clone();
    for f in &score.features {
        out.push_str(&format!(" ||| {}={:.6}", f.name, f.total));
    }
    if let Some(c) = &score.combined {
        out.push_str(&format!(" ||| {}={:.6}", c.name, c.total));
    }
    if let Some(total) = score.weighted_total {
        out.push_str(&format!(" ||| total={:.6}", total));
    }
    out
}
