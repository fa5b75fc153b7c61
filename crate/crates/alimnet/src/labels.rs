//! Class labels: the seven Dastgah modal systems and the two instruments.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// The seven Dastgahs of Iranian classical music, in canonical order.
/// Class indices everywhere in the crate refer to this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dastgah {
    Shour,
    Homayoun,
    Mahour,
    Segah,
    Chahargah,
    Rastpanjgah,
    Nava,
}

impl Dastgah {
    pub const ALL: [Dastgah; 7] = [
        Dastgah::Shour,
        Dastgah::Homayoun,
        Dastgah::Mahour,
        Dastgah::Segah,
        Dastgah::Chahargah,
        Dastgah::Rastpanjgah,
        Dastgah::Nava,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Dastgah::Shour => "Shour",
            Dastgah::Homayoun => "Homayoun",
            Dastgah::Mahour => "Mahour",
            Dastgah::Segah => "Segah",
            Dastgah::Chahargah => "Chahargah",
            Dastgah::Rastpanjgah => "Rastpanjgah",
            Dastgah::Nava => "Nava",
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&d| d == self).unwrap()
    }

    pub fn from_index(index: usize) -> Result<Dastgah> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("dastgah index {index} out of range 0..7")))
    }

    /// Case-insensitive lookup by name.
    pub fn parse(s: &str) -> Result<Dastgah> {
        Self::ALL
            .iter()
            .find(|d| d.name().eq_ignore_ascii_case(s))
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("unknown dastgah name: {s:?}")))
    }
}

/// Foreground instrument of a clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instrument {
    Violin,
    Ney,
}

impl Instrument {
    pub const ALL: [Instrument; 2] = [Instrument::Violin, Instrument::Ney];

    pub fn name(self) -> &'static str {
        match self {
            Instrument::Violin => "violin",
            Instrument::Ney => "ney",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Instrument::Violin => 0,
            Instrument::Ney => 1,
        }
    }

    pub fn from_index(index: usize) -> Result<Instrument> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("instrument index {index} out of range 0..2")))
    }

    pub fn parse(s: &str) -> Result<Instrument> {
        Self::ALL
            .iter()
            .find(|i| i.name().eq_ignore_ascii_case(s))
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("unknown instrument name: {s:?}")))
    }
}
