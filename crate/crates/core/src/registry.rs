//! Occupation registry: the 58 professions with their reported female
//! share, and the dominance class derived from it.

use std::collections::HashSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The shipped occupation table (`name<TAB>female_pct`).
pub const CANONICAL_TABLE: &str = include_str!("../data/occupations.tsv");

pub const CANONICAL_SIZE: usize = 58;
pub const CANONICAL_PER_CLASS: usize = 29;

/// Share above which an occupation counts as female-dominated. Strict.
pub const DOMINANCE_THRESHOLD: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dominance {
    FemaleDominated,
    MaleDominated,
}

impl Dominance {
    pub fn from_female_pct(female_pct: f64) -> Self {
        if female_pct > DOMINANCE_THRESHOLD {
            Dominance::FemaleDominated
        } else {
            Dominance::MaleDominated
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Dominance::FemaleDominated => Dominance::MaleDominated,
            Dominance::MaleDominated => Dominance::FemaleDominated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Occupation {
    name: String,
    female_pct: f64,
    dominance: Dominance,
}

impl Occupation {
    pub fn new(name: impl Into<String>, female_pct: f64) -> Result<Self> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(Error::Validation("occupation name is empty".into()));
        }
        if name != name.to_lowercase() || name != name.trim() {
            return Err(Error::Validation(format!(
                "occupation name {name:?} must be lowercase without surrounding whitespace"
            )));
        }
        if !female_pct.is_finite() || !(0.0..=100.0).contains(&female_pct) {
            return Err(Error::Validation(format!(
                "occupation {name:?}: female_pct {female_pct} outside [0, 100]"
            )));
        }
        Ok(Occupation {
            dominance: Dominance::from_female_pct(female_pct),
            name,
            female_pct,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn female_pct(&self) -> f64 {
        self.female_pct
    }

    pub fn dominance(&self) -> Dominance {
        self.dominance
    }
}

impl fmt::Display for Occupation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Deserialize)]
struct OccupationRepr {
    name: String,
    female_pct: f64,
    dominance: Dominance,
}

impl<'de> Deserialize<'de> for Occupation {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = OccupationRepr::deserialize(deserializer)?;
        let occ = Occupation::new(repr.name, repr.female_pct).map_err(serde::de::Error::custom)?;
        if occ.dominance != repr.dominance {
            return Err(serde::de::Error::custom(format!(
                "occupation {:?}: stored dominance {:?} disagrees with female_pct {}",
                occ.name, repr.dominance, occ.female_pct
            )));
        }
        Ok(occ)
    }
}

/// Whether the 58 / 29 / 29 shape of the shipped table is enforced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strictness {
    Canonical,
    Custom,
}

/// An ordered, duplicate-free set of occupations. Immutable after load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Occupation>", into = "Vec<Occupation>")]
pub struct Registry {
    occupations: Vec<Occupation>,
}

impl TryFrom<Vec<Occupation>> for Registry {
    type Error = Error;

    fn try_from(occupations: Vec<Occupation>) -> Result<Self> {
        Registry::from_occupations(occupations, Strictness::Custom)
    }
}

impl From<Registry> for Vec<Occupation> {
    fn from(registry: Registry) -> Self {
        registry.occupations
    }
}

impl Registry {
    /// The shipped table, validated strictly.
    pub fn canonical() -> Self {
        Registry::parse(CANONICAL_TABLE, "occupations.tsv", Strictness::Canonical)
            .expect("shipped occupation table is valid")
    }

    pub fn from_occupations(occupations: Vec<Occupation>, strictness: Strictness) -> Result<Self> {
        let mut seen = HashSet::new();
        for occ in &occupations {
            if !seen.insert(occ.name.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate occupation {:?}",
                    occ.name
                )));
            }
        }
        let registry = Registry { occupations };
        if strictness == Strictness::Canonical {
            registry.check_canonical_shape()?;
        }
        Ok(registry)
    }

    /// Parse `name<TAB>female_pct` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str, source_name: &str, strictness: Strictness) -> Result<Self> {
        let mut occupations = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                source_name: source_name.to_string(),
                line: idx + 1,
                message,
            };
            let mut fields = line.split('\t');
            let (Some(name), Some(pct), None) = (fields.next(), fields.next(), fields.next())
            else {
                return Err(parse_err(format!(
                    "expected `name<TAB>female_pct`, got {line:?}"
                )));
            };
            let pct: f64 = pct
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("bad percentage {pct:?}: {e}")))?;
            let occ = Occupation::new(name.trim(), pct).map_err(|e| parse_err(e.to_string()))?;
            occupations.push(occ);
        }
        Registry::from_occupations(occupations, strictness)
    }

    fn check_canonical_shape(&self) -> Result<()> {
        let female = self.of_dominance(Dominance::FemaleDominated).count();
        let male = self.len() - female;
        if self.len() != CANONICAL_SIZE
            || female != CANONICAL_PER_CLASS
            || male != CANONICAL_PER_CLASS
        {
            return Err(Error::Validation(format!(
                "canonical registry must hold {CANONICAL_SIZE} occupations split \
                 {CANONICAL_PER_CLASS}/{CANONICAL_PER_CLASS}; found {} ({female} female, {male} male)",
                self.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.occupations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupations.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Occupation> {
        self.occupations.iter()
    }

    pub fn occupations(&self) -> &[Occupation] {
        &self.occupations
    }

    pub fn get(&self, name: &str) -> Option<&Occupation> {
        self.occupations.iter().find(|o| o.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.occupations.iter().position(|o| o.name == name)
    }

    pub fn of_dominance(&self, dominance: Dominance) -> impl Iterator<Item = &Occupation> {
        self.occupations
            .iter()
            .filter(move |o| o.dominance == dominance)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

impl<'a> IntoIterator for &'a Registry {
    type Item = &'a Occupation;
    type IntoIter = std::slice::Iter<'a, Occupation>;

    fn into_iter(self) -> Self::IntoIter {
        self.occupations.iter()
    }
}

/// Draw a background occupation of the opposite dominance class.
///
/// The pool is the registry's opposite-dominance occupations in registry
/// order, minus `base` itself; one uniform index is drawn from `rng`.
pub fn sample_counter_background<'r, R: Rng + ?Sized>(
    base: &Occupation,
    registry: &'r Registry,
    rng: &mut R,
) -> Result<&'r Occupation> {
    let wanted = base.dominance.opposite();
    let pool: Vec<&Occupation> = registry
        .of_dominance(wanted)
        .filter(|o| o.name != base.name)
        .collect();
    if pool.is_empty() {
        return Err(Error::Config(format!(
            "no {wanted:?} occupation available as counter-background for {:?}",
            base.name
        )));
    }
    Ok(pool[rng.random_range(0..pool.len())])
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn canonical_table_shape() {
        let reg = Registry::canonical();
        assert_eq!(reg.len(), 58);
        assert_eq!(reg.of_dominance(Dominance::FemaleDominated).count(), 29);
        assert_eq!(reg.of_dominance(Dominance::MaleDominated).count(), 29);
        for occ in &reg {
            assert_eq!(occ.dominance(), Dominance::from_female_pct(occ.female_pct()));
        }
    }

    #[test]
    fn table_spot_values() {
        let reg = Registry::canonical();
        let check = |name: &str, pct: f64, dom: Dominance| {
            let occ = reg.get(name).unwrap();
            assert_eq!(occ.female_pct(), pct);
            assert_eq!(occ.dominance(), dom);
        };
        check("nurse", 88.5, Dominance::FemaleDominated);
        check("driver", 25.1, Dominance::MaleDominated);
        check("attendant", 52.3, Dominance::FemaleDominated);
        check("construction worker", 4.9, Dominance::MaleDominated);
    }

    #[test]
    fn fifty_percent_is_male_dominated() {
        let occ = Occupation::new("x", 50.0).unwrap();
        assert_eq!(occ.dominance(), Dominance::MaleDominated);
        let occ = Occupation::new("y", 50.0000001).unwrap();
        assert_eq!(occ.dominance(), Dominance::FemaleDominated);
    }

    #[test]
    fn malformed_row_names_line() {
        let err = Registry::parse("# c\nnurse\t88.5\ndriver 25.1\n", "t.tsv", Strictness::Custom)
            .unwrap_err();
        match err {
            Error::Parse { line, source_name, .. } => {
                assert_eq!(line, 3);
                assert_eq!(source_name, "t.tsv");
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = Registry::parse("nurse\tlots\n", "t.tsv", Strictness::Custom).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = Registry::parse("nurse\t188\n", "t.tsv", Strictness::Custom).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = Registry::parse("Nurse\t88\n", "t.tsv", Strictness::Custom).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn duplicate_name_rejected() {
        let err = Registry::parse("nurse\t88.5\nnurse\t80\n", "t", Strictness::Custom).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn custom_registry_may_skip_shape_check() {
        let text = "nurse\t88.5\ndriver\t25.1\n";
        assert!(Registry::parse(text, "t", Strictness::Custom).is_ok());
        let err = Registry::parse(text, "t", Strictness::Canonical).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn json_round_trip_and_tamper_detection() {
        let reg = Registry::canonical();
        let json = reg.to_json().unwrap();
        assert_eq!(Registry::from_json(&json).unwrap(), reg);

        let tampered = r#"[{"name":"nurse","female_pct":88.5,"dominance":"MaleDominated"}]"#;
        assert!(Registry::from_json(tampered).is_err());
        let dup = r#"[{"name":"a","female_pct":1.0,"dominance":"MaleDominated"},
                      {"name":"a","female_pct":2.0,"dominance":"MaleDominated"}]"#;
        assert!(Registry::from_json(dup).is_err());
    }

    #[test]
    fn counter_background_is_opposite_and_never_base() {
        let reg = Registry::canonical();
        for seed in 0..40u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for base in &reg {
                let got = sample_counter_background(base, &reg, &mut rng).unwrap();
                assert_ne!(got.name(), base.name());
                assert_eq!(got.dominance(), base.dominance().opposite());
            }
        }
    }

    /// Frozen draws: ChaCha8 seeded with 42, pool in registry order.
    #[test]
    fn seeded_draws_are_frozen() {
        let reg = Registry::canonical();
        let nurse = reg.get("nurse").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        assert_eq!(sample_counter_background(nurse, &reg, &mut rng).unwrap().name(), "laborer");
        assert_eq!(sample_counter_background(nurse, &reg, &mut rng).unwrap().name(), "composer");
        let driver = reg.get("driver").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        assert_eq!(sample_counter_background(driver, &reg, &mut rng).unwrap().name(), "designers");
    }

    #[test]
    fn empty_pool_is_config_error() {
        let reg = Registry::parse("nurse\t88.5\nclerk\t68\n", "t", Strictness::Custom).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = sample_counter_background(reg.get("nurse").unwrap(), &reg, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
