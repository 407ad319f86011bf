use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};

/// Three-way diagnosis label. Ordering (COVID, CAP, Normal) is the order used
/// for counts, sensitivities and confusion-matrix rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Class {
    #[serde(rename = "COVID")]
    Covid,
    #[serde(rename = "CAP")]
    Cap,
    #[serde(rename = "Normal")]
    Normal,
}

impl Class {
    pub const ALL: [Class; 3] = [Class::Covid, Class::Cap, Class::Normal];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Class::Covid => 0,
            Class::Cap => 1,
            Class::Normal => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Class> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Class::Covid => "COVID",
            Class::Cap => "CAP",
            Class::Normal => "Normal",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown class label {0:?}")]
pub struct UnknownClass(pub String);

impl FromStr for Class {
    type Err = UnknownClass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "covid" | "covid-19" | "covid19" => Ok(Class::Covid),
            "cap" => Ok(Class::Cap),
            "normal" => Ok(Class::Normal),
            _ => Err(UnknownClass(s.to_string())),
        }
    }
}

impl<'de> Deserialize<'de> for Class {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_case_insensitively() {
        assert_eq!("covid".parse::<Class>().unwrap(), Class::Covid);
        assert_eq!(" CAP ".parse::<Class>().unwrap(), Class::Cap);
        assert_eq!("NORMAL".parse::<Class>().unwrap(), Class::Normal);
        assert!("flu".parse::<Class>().is_err());
    }

    #[test]
    fn index_round_trips() {
        for c in Class::ALL {
            assert_eq!(Class::from_index(c.index()), Some(c));
        }
    }
}
