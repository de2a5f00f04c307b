//! Turns raw probe results into the typed results file: condition
//! aggregates, per-token relative probabilities, and one effect record per
//! (occupation, model, knowledge kind, k).

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{
    effect_between, geometric_mean, relative_probability, Absence, ConditionResult, EffectRecord,
    GenderMass, RatioOutcome,
};
use crate::par::Execution;
use crate::prompt::{ProbePrompt, PromptId, PromptKind};
use crate::scoring::RawResult;
use crate::verbalizer::Lexicon;

pub const RESULTS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeProbability {
    pub prompt_id: PromptId,
    pub base_prompt_id: PromptId,
    pub model_id: String,
    pub k: usize,
    pub knowledge_kind: PromptKind,
    pub token: String,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeAbsent {
    pub prompt_id: PromptId,
    pub model_id: String,
    pub k: usize,
    pub token: String,
    pub reason: Absence,
}

/// Geometric mean of one prompt's per-token ratios (summary extension).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioSummary {
    pub prompt_id: PromptId,
    pub model_id: String,
    pub k: usize,
    pub tokens: usize,
    pub geometric_mean: f64,
    pub extension: bool,
}

/// A (prompt, model, k) slice that could not be aggregated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub prompt_id: PromptId,
    pub model_id: String,
    pub k: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ResultRecord {
    Condition(ConditionResult),
    RelativeProbability(RelativeProbability),
    RelativeAbsent(RelativeAbsent),
    RatioSummary(RatioSummary),
    Effect(EffectRecord),
    Gap(Gap),
}

/// One line of the results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultLine {
    pub schema: u32,
    pub lexicon: String,
    #[serde(flatten)]
    pub record: ResultRecord,
}

#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    pub ks: Vec<usize>,
    pub epsilon: f64,
    pub execution: Execution,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Analysis {
    pub records: Vec<ResultRecord>,
}

impl Analysis {
    pub fn conditions(&self) -> impl Iterator<Item = &ConditionResult> {
        self.records.iter().filter_map(|r| match r {
            ResultRecord::Condition(c) => Some(c),
            _ => None,
        })
    }

    pub fn effects(&self) -> impl Iterator<Item = &EffectRecord> {
        self.records.iter().filter_map(|r| match r {
            ResultRecord::Effect(e) => Some(e),
            _ => None,
        })
    }

    pub fn to_jsonl(&self, lexicon_hash: &str) -> Result<String> {
        let mut out = String::new();
        for record in &self.records {
            let line = ResultLine {
                schema: RESULTS_SCHEMA_VERSION,
                lexicon: lexicon_hash.to_string(),
                record: record.clone(),
            };
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ResultLine = serde_json::from_str(line).map_err(|e| Error::Parse {
                source_name: "results".into(),
                line: idx + 1,
                message: e.to_string(),
            })?;
            if parsed.schema != RESULTS_SCHEMA_VERSION {
                return Err(Error::Parse {
                    source_name: "results".into(),
                    line: idx + 1,
                    message: format!("unsupported results schema {}", parsed.schema),
                });
            }
            records.push(parsed.record);
        }
        Ok(Analysis { records })
    }
}

pub fn analyze(
    dataset: &[ProbePrompt],
    raw: &[RawResult],
    lexicon: &Lexicon,
    options: &AnalysisOptions,
) -> Result<Analysis> {
    if options.ks.is_empty() || options.ks.contains(&0) {
        return Err(Error::Usage("ks must be nonempty and every k at least 1".into()));
    }
    let prompts: HashMap<&PromptId, &ProbePrompt> = dataset.iter().map(|p| (&p.id, p)).collect();
    let mut by_key: HashMap<(&PromptId, &str), &RawResult> = HashMap::new();
    for r in raw {
        if !prompts.contains_key(&r.prompt_id) {
            return Err(Error::Validation(format!(
                "raw result references unknown prompt {}",
                r.prompt_id
            )));
        }
        by_key.insert((&r.prompt_id, r.model_id.as_str()), r);
    }

    let mut ks = options.ks.clone();
    ks.sort_unstable();
    ks.dedup();
    let mut models: Vec<&str> = raw.iter().map(|r| r.model_id.as_str()).collect();
    models.sort_unstable();
    models.dedup();

    // Per (raw result, k): condition record or gap, plus ratio records.
    let units: Vec<(&RawResult, usize)> = raw
        .iter()
        .flat_map(|r| ks.iter().map(move |&k| (r, k)))
        .collect();
    let per_unit = options.execution.map(&units, |&(r, k)| {
        let prompt = prompts[&r.prompt_id];
        condition_and_ratios(prompt, r, k, lexicon, &by_key)
    });
    let mut records = Vec::new();
    let mut conditions: HashMap<(&str, &str, usize), ConditionResult> = HashMap::new();
    for (unit, recs) in units.iter().zip(per_unit) {
        for rec in recs? {
            if let ResultRecord::Condition(c) = &rec {
                conditions.insert((unit.0.prompt_id.as_str(), unit.0.model_id.as_str(), unit.1), c.clone());
            }
            records.push(rec);
        }
    }

    // Effects: one per (occupation, model, knowledge kind, k).
    let mut grouped: BTreeMap<(&str, &str, usize, PromptKind), Vec<&ProbePrompt>> = BTreeMap::new();
    for p in dataset.iter().filter(|p| p.kind != PromptKind::Base) {
        for &model in &models {
            for &k in &ks {
                grouped
                    .entry((model, p.occupation.name(), k, p.kind))
                    .or_default()
                    .push(p);
            }
        }
    }
    for ((model, occupation, k, kind), members) in grouped {
        let base_id = members[0].base_id();
        let base = conditions.get(&(base_id.as_str(), model, k));
        let samples: Vec<&ConditionResult> = members
            .iter()
            .filter_map(|p| conditions.get(&(p.id.as_str(), model, k)))
            .collect();
        records.push(ResultRecord::Effect(pooled_effect(
            occupation,
            model,
            k,
            kind,
            base,
            &samples,
            options.epsilon,
        )));
    }

    records.sort_by(|a, b| sort_key(a).cmp(&sort_key(b)));
    Ok(Analysis { records })
}

fn sort_key(r: &ResultRecord) -> (u8, &str, usize, &str, &str) {
    match r {
        ResultRecord::Condition(c) => (0, &c.model_id, c.k, c.prompt_id.as_str(), ""),
        ResultRecord::Gap(g) => (1, &g.model_id, g.k, g.prompt_id.as_str(), ""),
        ResultRecord::RelativeProbability(x) => (2, &x.model_id, x.k, x.prompt_id.as_str(), &x.token),
        ResultRecord::RelativeAbsent(x) => (3, &x.model_id, x.k, x.prompt_id.as_str(), &x.token),
        ResultRecord::RatioSummary(x) => (4, &x.model_id, x.k, x.prompt_id.as_str(), ""),
        ResultRecord::Effect(e) => (5, &e.model_id, e.k, &e.occupation, e.knowledge_kind.as_str()),
    }
}

fn condition_and_ratios(
    prompt: &ProbePrompt,
    r: &RawResult,
    k: usize,
    lexicon: &Lexicon,
    by_key: &HashMap<(&PromptId, &str), &RawResult>,
) -> Result<Vec<ResultRecord>> {
    let gap = |reason: String| {
        ResultRecord::Gap(Gap {
            prompt_id: r.prompt_id.clone(),
            model_id: r.model_id.clone(),
            k,
            reason,
        })
    };
    if k > r.scores.len() {
        return Ok(vec![gap(format!("only {} scores returned", r.scores.len()))]);
    }
    let condition = ConditionResult::from_scores(prompt, &r.model_id, &r.scores, lexicon, k)?;
    let mut out = vec![ResultRecord::Condition(condition)];
    if prompt.kind == PromptKind::Base {
        return Ok(out);
    }
    let base_id = prompt.base_id();
    let Some(base) = by_key.get(&(&base_id, r.model_id.as_str())) else {
        out.push(gap("base prompt has no result".into()));
        return Ok(out);
    };
    let base_top = &base.scores[..k.min(base.scores.len())];
    let knowledge_top = &r.scores[..k];
    let mut ratios = Vec::new();
    for s in knowledge_top {
        match relative_probability(&s.token, base_top, knowledge_top)? {
            RatioOutcome::Ratio(ratio) => {
                ratios.push(ratio);
                out.push(ResultRecord::RelativeProbability(RelativeProbability {
                    prompt_id: r.prompt_id.clone(),
                    base_prompt_id: base_id.clone(),
                    model_id: r.model_id.clone(),
                    k,
                    knowledge_kind: prompt.kind,
                    token: s.token.clone(),
                    ratio,
                }));
            }
            RatioOutcome::Absent(reason) => out.push(ResultRecord::RelativeAbsent(RelativeAbsent {
                prompt_id: r.prompt_id.clone(),
                model_id: r.model_id.clone(),
                k,
                token: s.token.clone(),
                reason,
            })),
        }
    }
    if let Some(gm) = geometric_mean(&ratios) {
        out.push(ResultRecord::RatioSummary(RatioSummary {
            prompt_id: r.prompt_id.clone(),
            model_id: r.model_id.clone(),
            k,
            tokens: ratios.len(),
            geometric_mean: gm,
            extension: true,
        }));
    }
    Ok(out)
}

/// Effect of a knowledge kind on one occupation, pooling its sample prompts
/// by mean mass. Non-gendered conditions are left out of the pool.
fn pooled_effect(
    occupation: &str,
    model: &str,
    k: usize,
    kind: PromptKind,
    base: Option<&ConditionResult>,
    samples: &[&ConditionResult],
    epsilon: f64,
) -> EffectRecord {
    let gendered: Vec<GenderMass> = samples
        .iter()
        .filter(|c| !c.non_gendered)
        .map(|c| c.mass())
        .collect();
    let pooled = GenderMass::mean(&gendered);
    let excluded = match (base, pooled) {
        (None, _) => Some("base-missing"),
        (Some(b), _) if b.non_gendered => Some("non-gendered-base"),
        (_, None) if samples.is_empty() => Some("knowledge-missing"),
        (_, None) => Some("non-gendered-knowledge"),
        _ => None,
    };
    let base_mass = base.map(ConditionResult::mass);
    let zero = GenderMass {
        p_female: 0.0,
        p_male: 0.0,
        p_other: 0.0,
    };
    let b = base_mass.unwrap_or(zero);
    let kn = pooled.unwrap_or(zero);
    EffectRecord {
        occupation: occupation.to_string(),
        knowledge_kind: kind,
        model_id: model.to_string(),
        k,
        effect: excluded.is_none().then(|| effect_between(&b, &kn, epsilon)),
        base_margin: b.margin(),
        knowledge_margin: kn.margin(),
        base_preferred: b.preferred(),
        knowledge_preferred: kn.preferred(),
        samples: gendered.len(),
        excluded: excluded.map(str::to_string),
    }
}
