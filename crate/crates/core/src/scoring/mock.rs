use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    validate_scores, ModelInfo, ScoreMode, ScoreRequest, ScoreResponse, ScoringBackend, TokenScore,
    MASS_TOLERANCE,
};
use crate::error::{Error, Result};
use crate::prompt::{KindRole, ModelFamily, PromptKind};
use crate::registry::{Dominance, Registry};

/// Lookup-table model: ranked scores per (occupation, kind), padded from a
/// default distribution when a request asks for more than the table holds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr", into = "SpecRepr")]
pub struct MockModelSpec {
    table: BTreeMap<(String, PromptKind), Vec<TokenScore>>,
    default_distribution: Vec<TokenScore>,
}

#[derive(Serialize, Deserialize)]
struct EntryRepr {
    occupation: String,
    kind: PromptKind,
    scores: Vec<TokenScore>,
}

#[derive(Serialize, Deserialize)]
struct SpecRepr {
    #[serde(default)]
    table: Vec<EntryRepr>,
    #[serde(default)]
    default: Vec<TokenScore>,
}

impl TryFrom<SpecRepr> for MockModelSpec {
    type Error = Error;

    fn try_from(repr: SpecRepr) -> Result<Self> {
        let mut spec = MockModelSpec::new(repr.default)?;
        for e in repr.table {
            spec.insert(e.occupation, e.kind, e.scores)?;
        }
        Ok(spec)
    }
}

impl From<MockModelSpec> for SpecRepr {
    fn from(spec: MockModelSpec) -> Self {
        SpecRepr {
            table: spec
                .table
                .into_iter()
                .map(|((occupation, kind), scores)| EntryRepr {
                    occupation,
                    kind,
                    scores,
                })
                .collect(),
            default: spec.default_distribution,
        }
    }
}

fn check_distribution(what: &str, scores: &[TokenScore]) -> Result<()> {
    validate_scores(scores).map_err(|m| Error::Config(format!("mock {what}: {m}")))?;
    let mass: f64 = scores.iter().map(|s| s.probability).sum();
    if mass > 1.0 + MASS_TOLERANCE {
        return Err(Error::Config(format!("mock {what}: mass {mass} exceeds 1")));
    }
    Ok(())
}

impl MockModelSpec {
    pub fn new(default_distribution: Vec<TokenScore>) -> Result<Self> {
        check_distribution("default distribution", &default_distribution)?;
        Ok(MockModelSpec {
            table: BTreeMap::new(),
            default_distribution,
        })
    }

    pub fn insert(
        &mut self,
        occupation: impl Into<String>,
        kind: PromptKind,
        scores: Vec<TokenScore>,
    ) -> Result<()> {
        let occupation = occupation.into();
        check_distribution(&format!("entry ({occupation}, {kind})"), &scores)?;
        self.table.insert((occupation, kind), scores);
        Ok(())
    }

    /// Table entry followed by default-distribution padding, cut to `top_k`.
    ///
    /// Padded entries skip tokens already listed and are clamped so the list
    /// stays non-increasing with total mass at most one.
    pub fn respond(&self, key: Option<(&str, PromptKind)>, top_k: usize) -> Vec<TokenScore> {
        let listed = key
            .and_then(|(occ, kind)| self.table.get(&(occ.to_string(), kind)))
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        let mut out: Vec<TokenScore> = listed.iter().take(top_k).cloned().collect();
        let mut seen: HashSet<String> = out.iter().map(|s| s.token.clone()).collect();
        let mut mass: f64 = out.iter().map(|s| s.probability).sum();
        for fallback in &self.default_distribution {
            if out.len() >= top_k {
                break;
            }
            if seen.contains(&fallback.token) {
                continue;
            }
            let ceiling = out.last().map_or(1.0, |s| s.probability);
            let p = fallback.probability.min(ceiling).min(1.0 - mass);
            if p <= 0.0 {
                break;
            }
            mass += p;
            seen.insert(fallback.token.clone());
            out.push(TokenScore::new(fallback.token.clone(), p));
        }
        out
    }

    /// A stereotyped toy model over the registry: the female share of the
    /// gendered mass leans with the occupation's female percentage, and each
    /// knowledge kind shifts that lean by a fixed amount plus a small
    /// model-dependent offset.
    pub fn synthetic(registry: &Registry, model_id: &str) -> Self {
        let mut spec = MockModelSpec::new(vec![
            TokenScore::new("person", 0.02),
            TokenScore::new("worker", 0.01),
            TokenScore::new("individual", 0.005),
        ])
        .expect("static default distribution is valid");
        for occ in registry {
            let lean = (occ.female_pct() - 50.0) / 50.0;
            let toward = match occ.dominance() {
                Dominance::FemaleDominated => 1.0,
                Dominance::MaleDominated => -1.0,
            };
            for kind in PromptKind::ALL {
                let shift = match (kind, kind.role()) {
                    (PromptKind::TargetCounterSynSim | PromptKind::TargetCounterSemSim, _) => -0.9,
                    (_, KindRole::Mitigating) if kind.uses_counter_background() => -0.35,
                    (_, KindRole::Mitigating) => -0.2,
                    (_, KindRole::Enhancing) => 0.4,
                    (_, KindRole::Control) => 0.0,
                };
                let jitter = unit_hash(&[model_id, occ.name(), kind.as_str()]) * 0.2 - 0.1;
                let share = logistic(3.0 * (lean + toward * shift + jitter));
                spec.insert(occ.name(), kind, synthetic_scores(share))
                    .expect("synthetic distribution is valid");
            }
        }
        spec
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Deterministic value in [0, 1) from the given parts.
fn unit_hash(parts: &[&str]) -> f64 {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p.as_bytes());
        hasher.update([0u8]);
    }
    let digest = hasher.finalize();
    let bits = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"));
    (bits >> 11) as f64 / (1u64 << 53) as f64
}

fn synthetic_scores(female_share: f64) -> Vec<TokenScore> {
    const GENDERED: f64 = 0.6;
    let f = GENDERED * female_share;
    let m = GENDERED * (1.0 - female_share);
    let mut scores = vec![
        TokenScore::new("she", f * 0.6),
        TokenScore::new("woman", f * 0.25),
        TokenScore::new("mother", f * 0.15),
        TokenScore::new("he", m * 0.6),
        TokenScore::new("man", m * 0.25),
        TokenScore::new("father", m * 0.15),
        TokenScore::new("person", 0.12),
        TokenScore::new("it", 0.08),
        TokenScore::new("they", 0.06),
        TokenScore::new("someone", 0.04),
        TokenScore::new("worker", 0.03),
    ];
    scores.retain(|s| s.probability > 0.0);
    scores.sort_by(|a, b| {
        b.probability
            .total_cmp(&a.probability)
            .then_with(|| a.token.cmp(&b.token))
    });
    scores
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MockModel {
    id: String,
    family: ModelFamily,
    #[serde(flatten)]
    spec: MockModelSpec,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
struct MockFile {
    models: Vec<MockModel>,
}

/// In-process backend answering from [`MockModelSpec`] tables. Stateless.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    models: BTreeMap<String, (ModelFamily, MockModelSpec)>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_model(mut self, id: impl Into<String>, family: ModelFamily, spec: MockModelSpec) -> Self {
        self.models.insert(id.into(), (family, spec));
        self
    }

    /// Synthetic models for the given ids; families come from the id prefix.
    pub fn synthetic(registry: &Registry, model_ids: &[String]) -> Result<Self> {
        let mut backend = MockBackend::new();
        for id in model_ids {
            let family = ModelFamily::for_model_id(id).ok_or_else(|| {
                Error::Config(format!(
                    "cannot infer a model family for mock model {id:?}; use a bert-/albert-/roberta-/gpt2- id or a mock spec file"
                ))
            })?;
            backend = backend.with_model(id.clone(), family, MockModelSpec::synthetic(registry, id));
        }
        Ok(backend)
    }

    /// Load models from a JSON file: `{"models":[{"id","family","table","default"}]}`.
    pub fn from_json(json: &str) -> Result<Self> {
        let file: MockFile = serde_json::from_str(json)?;
        let mut backend = MockBackend::new();
        for m in file.models {
            if backend.models.contains_key(&m.id) {
                return Err(Error::Config(format!("duplicate mock model {:?}", m.id)));
            }
            backend = backend.with_model(m.id, m.family, m.spec);
        }
        Ok(backend)
    }

    pub fn to_json(&self) -> String {
        let file = MockFile {
            models: self
                .models
                .iter()
                .map(|(id, (family, spec))| MockModel {
                    id: id.clone(),
                    family: *family,
                    spec: spec.clone(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("mock spec serializes")
    }
}

impl ScoringBackend for MockBackend {
    fn identity(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        format!("mock:{}", hex::encode(&digest[..8]))
    }

    fn models(&self) -> Result<Vec<ModelInfo>> {
        Ok(self
            .models
            .iter()
            .map(|(id, (family, _))| ModelInfo {
                id: id.clone(),
                mode: ScoreMode::for_family(*family).as_str().to_string(),
                mask_token: family.mask_sentinel().map(str::to_string),
            })
            .collect())
    }

    fn score_raw(&self, request: &ScoreRequest) -> Result<String> {
        let (family, spec) = self
            .models
            .get(&request.model_id)
            .ok_or_else(|| Error::Config(format!("unknown model {:?}", request.model_id)))?;
        if ScoreMode::for_family(*family) != request.mode {
            return Err(Error::protocol(
                format!(
                    "model {:?} does not serve {} requests",
                    request.model_id,
                    request.mode.as_str()
                ),
                "",
            ));
        }
        let key = request
            .probe_key
            .as_ref()
            .map(|k| (k.occupation.as_str(), k.kind));
        let response = ScoreResponse {
            scores: spec.respond(key, request.top_k),
        };
        Ok(serde_json::to_string(&response)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::PromptId;
    use crate::scoring::{score, ProbeKey, RetryPolicy};

    fn nurse_spec() -> MockModelSpec {
        let mut spec = MockModelSpec::new(vec![
            TokenScore::new("someone", 0.04),
            TokenScore::new("worker", 0.02),
        ])
        .unwrap();
        spec.insert(
            "nurse",
            PromptKind::Base,
            vec![
                TokenScore::new("she", 0.4),
                TokenScore::new("he", 0.1),
                TokenScore::new("person", 0.05),
            ],
        )
        .unwrap();
        spec
    }

    fn nurse_request(k: usize) -> ScoreRequest {
        let mut req = ScoreRequest::new(
            "bert-base",
            ScoreMode::MaskedFill,
            "[CLS] The [MASK] works as a nurse.",
            k,
        );
        req.probe_key = Some(ProbeKey {
            prompt_id: PromptId::compute("nurse", PromptKind::Base, 0, None),
            occupation: "nurse".into(),
            kind: PromptKind::Base,
        });
        req
    }

    fn backend() -> MockBackend {
        MockBackend::new().with_model("bert-base", ModelFamily::MaskedWithClsSep, nurse_spec())
    }

    #[test]
    fn lookup_returns_table_entry() {
        let got = score(&nurse_request(3), &backend(), &RetryPolicy::none(), &()).unwrap();
        assert_eq!(
            got,
            vec![
                TokenScore::new("she", 0.4),
                TokenScore::new("he", 0.1),
                TokenScore::new("person", 0.05)
            ]
        );
    }

    #[test]
    fn pads_from_default_distribution() {
        let got = score(&nurse_request(5), &backend(), &RetryPolicy::none(), &()).unwrap();
        assert_eq!(got.len(), 5);
        assert_eq!(got[3], TokenScore::new("someone", 0.04));
        assert_eq!(got[4], TokenScore::new("worker", 0.02));
        // vocabulary exhausted: 3 listed + 2 fallback
        let got = score(&nurse_request(9), &backend(), &RetryPolicy::none(), &()).unwrap();
        assert_eq!(got.len(), 5);
    }

    #[test]
    fn padding_respects_order_and_mass() {
        let mut spec = MockModelSpec::new(vec![
            TokenScore::new("she", 0.5),
            TokenScore::new("x", 0.3),
            TokenScore::new("y", 0.2),
        ])
        .unwrap();
        spec.insert("a", PromptKind::Base, vec![TokenScore::new("she", 0.7), TokenScore::new("he", 0.25)])
            .unwrap();
        let got = spec.respond(Some(("a", PromptKind::Base)), 5);
        assert!(validate_scores(&got).is_ok(), "{got:?}");
        let tokens: Vec<_> = got.iter().map(|s| s.token.as_str()).collect();
        assert_eq!(tokens, ["she", "he", "x"]);
        assert!((got[2].probability - 0.05).abs() < 1e-12);
    }

    #[test]
    fn unknown_key_uses_default_only() {
        let got = nurse_spec().respond(Some(("pilot", PromptKind::Base)), 3);
        assert_eq!(got.len(), 2);
        assert_eq!(nurse_spec().respond(None, 1), vec![TokenScore::new("someone", 0.04)]);
    }

    #[test]
    fn unknown_model_is_config_error() {
        let mut req = nurse_request(3);
        req.model_id = "nope".into();
        let err = score(&req, &backend(), &RetryPolicy::none(), &()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn overfull_distribution_rejected() {
        assert!(MockModelSpec::new(vec![TokenScore::new("a", 0.6), TokenScore::new("b", 0.5)]).is_err());
    }

    #[test]
    fn spec_file_round_trip() {
        let b = backend();
        let again = MockBackend::from_json(&b.to_json()).unwrap();
        assert_eq!(again.to_json(), b.to_json());
        assert_eq!(again.identity(), b.identity());
        let models = again.models().unwrap();
        assert_eq!(models[0].mask_token.as_deref(), Some("[MASK]"));
        assert_eq!(models[0].family(), Some(ModelFamily::MaskedWithClsSep));
    }

    #[test]
    fn synthetic_model_is_valid_and_stereotyped_at_base() {
        let reg = Registry::canonical();
        let spec = MockModelSpec::synthetic(&reg, "bert-base");
        for occ in &reg {
            for kind in PromptKind::ALL {
                let s = spec.respond(Some((occ.name(), kind)), 10);
                assert_eq!(s.len(), 10);
                assert!(validate_scores(&s).is_ok());
            }
        }
        let top = |name: &str| spec.respond(Some((name, PromptKind::Base)), 1)[0].token.clone();
        assert_eq!(top("secretary"), "she");
        assert_eq!(top("carpenter"), "he");
    }
}
