//! Gender aggregates over top-k scores, relative probabilities between
//! knowledge and base conditions, and knowledge-effect classification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::{ProbePrompt, PromptId, PromptKind};
use crate::registry::{Dominance, Occupation};
use crate::scoring::TokenScore;
use crate::verbalizer::{Lexicon, TokenClass};

/// Default tolerance (probability mass) under which a margin change is ignored.
pub const DEFAULT_EPSILON: f64 = 1e-3;

/// Smallest base probability accepted as a ratio denominator.
pub const DENOMINATOR_FLOOR: f64 = f64::MIN_POSITIVE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preference {
    Female,
    Male,
    None,
}

/// Probability mass per gender class over the first `k` scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenderMass {
    pub p_female: f64,
    pub p_male: f64,
    pub p_other: f64,
}

impl GenderMass {
    pub fn margin(&self) -> f64 {
        (self.p_female - self.p_male).abs()
    }

    pub fn preferred(&self) -> Preference {
        if self.p_female > self.p_male {
            Preference::Female
        } else if self.p_male > self.p_female {
            Preference::Male
        } else {
            Preference::None
        }
    }

    /// No lexicon token among the top-k.
    pub fn is_non_gendered(&self) -> bool {
        self.p_female == 0.0 && self.p_male == 0.0
    }

    /// Female share of the gendered mass, p_f / (p_f + p_m).
    pub fn female_share(&self) -> Option<f64> {
        let gendered = self.p_female + self.p_male;
        (gendered > 0.0).then(|| self.p_female / gendered)
    }

    /// Component-wise arithmetic mean.
    pub fn mean<'a, I: IntoIterator<Item = &'a GenderMass>>(items: I) -> Option<GenderMass> {
        let mut n = 0usize;
        let mut acc = GenderMass {
            p_female: 0.0,
            p_male: 0.0,
            p_other: 0.0,
        };
        for m in items {
            n += 1;
            acc.p_female += m.p_female;
            acc.p_male += m.p_male;
            acc.p_other += m.p_other;
        }
        (n > 0).then(|| GenderMass {
            p_female: acc.p_female / n as f64,
            p_male: acc.p_male / n as f64,
            p_other: acc.p_other / n as f64,
        })
    }
}

pub fn aggregate(scores: &[TokenScore], lexicon: &Lexicon, k: usize) -> Result<GenderMass> {
    if k > scores.len() {
        return Err(Error::Usage(format!(
            "cannot aggregate top-{k} over {} scores",
            scores.len()
        )));
    }
    let mut mass = GenderMass {
        p_female: 0.0,
        p_male: 0.0,
        p_other: 0.0,
    };
    for s in &scores[..k] {
        match lexicon.classify(&s.token) {
            TokenClass::Female => mass.p_female += s.probability,
            TokenClass::Male => mass.p_male += s.probability,
            TokenClass::Unmapped => mass.p_other += s.probability,
        }
    }
    Ok(mass)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub prompt_id: PromptId,
    pub base_prompt_id: PromptId,
    pub model_id: String,
    pub occupation: String,
    pub kind: PromptKind,
    pub k: usize,
    pub p_female: f64,
    pub p_male: f64,
    pub p_other: f64,
    pub margin: f64,
    pub preferred: Preference,
    /// p_female / (p_female + p_male); absent when non-gendered.
    pub female_share: Option<f64>,
    pub non_gendered: bool,
}

impl ConditionResult {
    pub fn from_scores(
        prompt: &ProbePrompt,
        model_id: &str,
        scores: &[TokenScore],
        lexicon: &Lexicon,
        k: usize,
    ) -> Result<Self> {
        let mass = aggregate(scores, lexicon, k)?;
        Ok(ConditionResult::from_mass(prompt, model_id, k, mass))
    }

    pub fn from_mass(prompt: &ProbePrompt, model_id: &str, k: usize, mass: GenderMass) -> Self {
        ConditionResult {
            prompt_id: prompt.id.clone(),
            base_prompt_id: prompt.base_id(),
            model_id: model_id.to_string(),
            occupation: prompt.occupation.name().to_string(),
            kind: prompt.kind,
            k,
            p_female: mass.p_female,
            p_male: mass.p_male,
            p_other: mass.p_other,
            margin: mass.margin(),
            preferred: mass.preferred(),
            female_share: mass.female_share(),
            non_gendered: mass.is_non_gendered(),
        }
    }

    pub fn mass(&self) -> GenderMass {
        GenderMass {
            p_female: self.p_female,
            p_male: self.p_male,
            p_other: self.p_other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Absence {
    AbsentFromBase,
    AbsentFromKnowledge,
    AbsentFromBoth,
}

impl Absence {
    pub fn as_str(self) -> &'static str {
        match self {
            Absence::AbsentFromBase => "absent-from-base",
            Absence::AbsentFromKnowledge => "absent-from-knowledge",
            Absence::AbsentFromBoth => "absent-from-both",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RatioOutcome {
    Ratio(f64),
    Absent(Absence),
}

/// p(token | knowledge prompt) / p(token | base prompt), defined only when
/// the token appears in both lists.
pub fn relative_probability(
    token: &str,
    base: &[TokenScore],
    knowledge: &[TokenScore],
) -> Result<RatioOutcome> {
    let find = |list: &[TokenScore]| list.iter().find(|s| s.token == token).map(|s| s.probability);
    match (find(base), find(knowledge)) {
        (Some(p_base), Some(p_knowledge)) => {
            if p_base.is_nan() || p_base < DENOMINATOR_FLOOR {
                return Err(Error::Validation(format!(
                    "degenerate denominator: p({token:?} | base) = {p_base}"
                )));
            }
            Ok(RatioOutcome::Ratio(p_knowledge / p_base))
        }
        (None, Some(_)) => Ok(RatioOutcome::Absent(Absence::AbsentFromBase)),
        (Some(_), None) => Ok(RatioOutcome::Absent(Absence::AbsentFromKnowledge)),
        (None, None) => Ok(RatioOutcome::Absent(Absence::AbsentFromBoth)),
    }
}

/// Geometric mean of ratios. Not part of the per-token metric; offered as a
/// one-number summary.
pub fn geometric_mean(ratios: &[f64]) -> Option<f64> {
    if ratios.is_empty() || ratios.iter().any(|&r| r.is_nan() || r <= 0.0) {
        return None;
    }
    let log_sum: f64 = ratios.iter().map(|r| r.ln()).sum();
    Some((log_sum / ratios.len() as f64).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effect {
    Enhanced,
    Mitigated,
    Overturned,
    Unchanged,
}

impl Effect {
    pub const ALL: [Effect; 4] = [
        Effect::Enhanced,
        Effect::Mitigated,
        Effect::Overturned,
        Effect::Unchanged,
    ];
}

/// Effect of moving from `base` to `knowledge`.
///
/// A flip between Female and Male is `Overturned` regardless of size.
/// Otherwise a margin change within `epsilon` is `Unchanged`, a larger
/// increase `Enhanced`, a larger decrease `Mitigated`. A tie on either side
/// (preferred == None) is not a flip; it is judged by the margin.
pub fn effect_between(base: &GenderMass, knowledge: &GenderMass, epsilon: f64) -> Effect {
    let (b, k) = (base.preferred(), knowledge.preferred());
    if b != Preference::None && k != Preference::None && b != k {
        return Effect::Overturned;
    }
    let delta = knowledge.margin() - base.margin();
    if delta.abs() <= epsilon {
        Effect::Unchanged
    } else if delta > 0.0 {
        Effect::Enhanced
    } else {
        Effect::Mitigated
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRecord {
    pub occupation: String,
    pub knowledge_kind: PromptKind,
    pub model_id: String,
    pub k: usize,
    /// Absent when the pair was excluded (see `excluded`).
    pub effect: Option<Effect>,
    pub base_margin: f64,
    pub knowledge_margin: f64,
    pub base_preferred: Preference,
    pub knowledge_preferred: Preference,
    /// Knowledge prompts pooled into this record.
    pub samples: usize,
    pub excluded: Option<String>,
}

/// Classify one (base, knowledge) pair of condition results.
pub fn classify_effect(
    base: &ConditionResult,
    knowledge: &ConditionResult,
    epsilon: f64,
) -> Result<EffectRecord> {
    if base.kind != PromptKind::Base
        || knowledge.kind == PromptKind::Base
        || knowledge.base_prompt_id != base.prompt_id
        || base.model_id != knowledge.model_id
        || base.k != knowledge.k
    {
        return Err(Error::Usage(format!(
            "prompt {} ({}, {}, k={}) is not linked to base {} ({}, k={})",
            knowledge.prompt_id,
            knowledge.kind,
            knowledge.model_id,
            knowledge.k,
            base.prompt_id,
            base.model_id,
            base.k
        )));
    }
    let (b, kn) = (base.mass(), knowledge.mass());
    Ok(EffectRecord {
        occupation: base.occupation.clone(),
        knowledge_kind: knowledge.kind,
        model_id: base.model_id.clone(),
        k: base.k,
        effect: Some(effect_between(&b, &kn, epsilon)),
        base_margin: b.margin(),
        knowledge_margin: kn.margin(),
        base_preferred: b.preferred(),
        knowledge_preferred: kn.preferred(),
        samples: 1,
        excluded: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Pro,
    Anti,
    Neutral,
}

pub fn stereotype_direction(preferred: Preference, occupation: &Occupation) -> Direction {
    match (preferred, occupation.dominance()) {
        (Preference::None, _) => Direction::Neutral,
        (Preference::Female, Dominance::FemaleDominated)
        | (Preference::Male, Dominance::MaleDominated) => Direction::Pro,
        _ => Direction::Anti,
    }
}
