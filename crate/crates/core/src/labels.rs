//! Closed label sets for entities and relations.
//!
//! Both label sets carry a distinguished null outcome (`None` at the
//! distribution index 0); the typed variants occupy indices `1..`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::ValidationError;

/// Scientific entity types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityType {
    Task,
    Method,
    Metric,
    Material,
    OtherScientificTerm,
    Generic,
}

impl EntityType {
    pub const ALL: [EntityType; 6] = [
        EntityType::Task,
        EntityType::Method,
        EntityType::Metric,
        EntityType::Material,
        EntityType::OtherScientificTerm,
        EntityType::Generic,
    ];

    /// Size of the label space including the null type.
    pub const NUM_LABELS: usize = Self::ALL.len() + 1;

    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::Task => "Task",
            EntityType::Method => "Method",
            EntityType::Metric => "Metric",
            EntityType::Material => "Material",
            EntityType::OtherScientificTerm => "Other-ScientificTerm",
            EntityType::Generic => "Generic",
        }
    }

    /// Column of this label in a distribution whose column 0 is the null type.
    pub fn label_index(self) -> usize {
        Self::ALL.iter().position(|&t| t == self).unwrap() + 1
    }

    /// Inverse of [`label_index`](Self::label_index); index 0 is the null type.
    pub fn from_label_index(index: usize) -> Option<EntityType> {
        index.checked_sub(1).and_then(|i| Self::ALL.get(i).copied())
    }
}

/// Scientific relation types. `Compare` and `Conjunction` are symmetric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelationType {
    Compare,
    PartOf,
    Conjunction,
    EvaluateFor,
    FeatureOf,
    UsedFor,
    HyponymOf,
}

impl RelationType {
    pub const ALL: [RelationType; 7] = [
        RelationType::Compare,
        RelationType::PartOf,
        RelationType::Conjunction,
        RelationType::EvaluateFor,
        RelationType::FeatureOf,
        RelationType::UsedFor,
        RelationType::HyponymOf,
    ];

    pub const NUM_LABELS: usize = Self::ALL.len() + 1;

    pub fn as_str(self) -> &'static str {
        match self {
            RelationType::Compare => "Compare",
            RelationType::PartOf => "Part-of",
            RelationType::Conjunction => "Conjunction",
            RelationType::EvaluateFor => "Evaluate-for",
            RelationType::FeatureOf => "Feature-of",
            RelationType::UsedFor => "Used-for",
            RelationType::HyponymOf => "Hyponym-Of",
        }
    }

    pub fn is_symmetric(self) -> bool {
        matches!(self, RelationType::Compare | RelationType::Conjunction)
    }

    pub fn label_index(self) -> usize {
        Self::ALL.iter().position(|&t| t == self).unwrap() + 1
    }

    pub fn from_label_index(index: usize) -> Option<RelationType> {
        index.checked_sub(1).and_then(|i| Self::ALL.get(i).copied())
    }
}

/// Lower-case and drop separators so that `USED-FOR`, `Used-for` and
/// `used_for` all compare equal.
fn fold_label(s: &str) -> String {
    s.chars()
        .filter(|c| !matches!(c, '-' | '_' | ' '))
        .flat_map(char::to_lowercase)
        .collect()
}

impl FromStr for EntityType {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let folded = fold_label(s);
        let label = match folded.as_str() {
            "task" => EntityType::Task,
            "method" => EntityType::Method,
            "metric" | "evaluationmetric" => EntityType::Metric,
            "material" => EntityType::Material,
            "otherscientificterm" => EntityType::OtherScientificTerm,
            "generic" => EntityType::Generic,
            _ => return Err(ValidationError::UnknownLabel(s.to_string())),
        };
        Ok(label)
    }
}

impl FromStr for RelationType {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let folded = fold_label(s);
        let label = match folded.as_str() {
            "compare" => RelationType::Compare,
            "partof" => RelationType::PartOf,
            "conjunction" => RelationType::Conjunction,
            "evaluatefor" => RelationType::EvaluateFor,
            "featureof" => RelationType::FeatureOf,
            "usedfor" => RelationType::UsedFor,
            "hyponymof" => RelationType::HyponymOf,
            _ => return Err(ValidationError::UnknownLabel(s.to_string())),
        };
        Ok(label)
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for RelationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

macro_rules! string_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(EntityType);
string_serde!(RelationType);
