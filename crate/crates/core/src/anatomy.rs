//! The fixed cardiac anatomy taxonomy used to partition guideline knowledge.
//!
//! There are exactly fourteen groups. Each carries a canonical name and a
//! list of lowercase keywords; a piece of text mentions a group when any
//! keyword is a case-insensitive substring of it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AnatomyGroup {
    LeftVentricle,
    RightVentricle,
    LeftAtrium,
    RightAtrium,
    MitralValve,
    AorticValve,
    TricuspidValve,
    PulmonicValve,
    Pericardium,
    Aorta,
    PulmonaryArtery,
    InteratrialSeptum,
    InterventricularSeptum,
    InferiorVenaCava,
}

impl AnatomyGroup {
    pub const ALL: [AnatomyGroup; 14] = [
        AnatomyGroup::LeftVentricle,
        AnatomyGroup::RightVentricle,
        AnatomyGroup::LeftAtrium,
        AnatomyGroup::RightAtrium,
        AnatomyGroup::MitralValve,
        AnatomyGroup::AorticValve,
        AnatomyGroup::TricuspidValve,
        AnatomyGroup::PulmonicValve,
        AnatomyGroup::Pericardium,
        AnatomyGroup::Aorta,
        AnatomyGroup::PulmonaryArtery,
        AnatomyGroup::InteratrialSeptum,
        AnatomyGroup::InterventricularSeptum,
        AnatomyGroup::InferiorVenaCava,
    ];

    pub fn canonical_name(self) -> &'static str {
        match self {
            AnatomyGroup::LeftVentricle => "left ventricle",
            AnatomyGroup::RightVentricle => "right ventricle",
            AnatomyGroup::LeftAtrium => "left atrium",
            AnatomyGroup::RightAtrium => "right atrium",
            AnatomyGroup::MitralValve => "mitral valve",
            AnatomyGroup::AorticValve => "aortic valve",
            AnatomyGroup::TricuspidValve => "tricuspid valve",
            AnatomyGroup::PulmonicValve => "pulmonic valve",
            AnatomyGroup::Pericardium => "pericardium",
            AnatomyGroup::Aorta => "aorta",
            AnatomyGroup::PulmonaryArtery => "pulmonary artery",
            AnatomyGroup::InteratrialSeptum => "interatrial septum",
            AnatomyGroup::InterventricularSeptum => "interventricular septum",
            AnatomyGroup::InferiorVenaCava => "inferior vena cava",
        }
    }

    /// Lowercase match strings. Short abbreviations are avoided because
    /// matching is by substring ("lv" occurs inside "valve").
    pub fn keywords(self) -> &'static [&'static str] {
        match self {
            AnatomyGroup::LeftVentricle => &[
                "left ventricle",
                "left ventricular",
                "lvef",
                "ejection fraction",
            ],
            AnatomyGroup::RightVentricle => &["right ventricle", "right ventricular", "tapse"],
            AnatomyGroup::LeftAtrium => &["left atrium", "left atrial"],
            AnatomyGroup::RightAtrium => &["right atrium", "right atrial"],
            AnatomyGroup::MitralValve => &["mitral"],
            AnatomyGroup::AorticValve => &["aortic valve", "aortic stenosis", "aortic regurgitation"],
            AnatomyGroup::TricuspidValve => &["tricuspid"],
            AnatomyGroup::PulmonicValve => &["pulmonic", "pulmonary valve"],
            AnatomyGroup::Pericardium => &["pericardi"],
            AnatomyGroup::Aorta => &["aorta", "aortic root", "ascending aortic"],
            AnatomyGroup::PulmonaryArtery => &["pulmonary artery", "pulmonary arterial"],
            AnatomyGroup::InteratrialSeptum => &["interatrial", "atrial septal"],
            AnatomyGroup::InterventricularSeptum => &["interventricular", "ventricular septal"],
            AnatomyGroup::InferiorVenaCava => &["inferior vena cava", "vena cava"],
        }
    }

    /// Number of keyword occurrences of this group in `text` (case-insensitive).
    pub fn keyword_hits(self, text: &str) -> usize {
        let lower = text.to_lowercase();
        self.keywords()
            .iter()
            .map(|kw| lower.matches(kw).count())
            .sum()
    }

    pub fn mentioned_in(self, text: &str) -> bool {
        let lower = text.to_lowercase();
        self.keywords().iter().any(|kw| lower.contains(kw))
    }

    /// All groups mentioned in `text`, in taxonomy order.
    pub fn tag_text(text: &str) -> Vec<AnatomyGroup> {
        let lower = text.to_lowercase();
        AnatomyGroup::ALL
            .into_iter()
            .filter(|g| g.keywords().iter().any(|kw| lower.contains(kw)))
            .collect()
    }

    /// Retrieval query text for the group: canonical name followed by keywords.
    pub fn query_text(self) -> String {
        let mut q = self.canonical_name().to_string();
        for kw in self.keywords() {
            q.push(' ');
            q.push_str(kw);
        }
        q
    }
}

impl fmt::Display for AnatomyGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.canonical_name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown anatomy group {0:?}")]
pub struct UnknownAnatomy(pub String);

impl FromStr for AnatomyGroup {
    type Err = UnknownAnatomy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_lowercase().replace(['_', '-'], " ");
        AnatomyGroup::ALL
            .into_iter()
            .find(|g| g.canonical_name() == norm)
            .ok_or_else(|| UnknownAnatomy(s.to_string()))
    }
}

impl Serialize for AnatomyGroup {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.canonical_name())
    }
}

impl<'de> Deserialize<'de> for AnatomyGroup {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn fourteen_unique_groups_with_keywords() {
        let names: BTreeSet<_> = AnatomyGroup::ALL.iter().map(|g| g.canonical_name()).collect();
        assert_eq!(names.len(), 14);
        for g in AnatomyGroup::ALL {
            assert!(!g.keywords().is_empty(), "{g} has no keywords");
            for kw in g.keywords() {
                assert_eq!(*kw, kw.to_lowercase());
            }
        }
    }

    #[test]
    fn parse_round_trip() {
        for g in AnatomyGroup::ALL {
            assert_eq!(g.canonical_name().parse::<AnatomyGroup>().unwrap(), g);
        }
        assert_eq!("Left_Ventricle".parse::<AnatomyGroup>().unwrap(), AnatomyGroup::LeftVentricle);
        assert!("spleen".parse::<AnatomyGroup>().is_err());
    }

    #[test]
    fn lv_ef_phrase_is_tagged_left_ventricle() {
        let tags = AnatomyGroup::tag_text("Left ventricular ejection fraction is reduced.");
        assert!(tags.contains(&AnatomyGroup::LeftVentricle));
    }

    #[test]
    fn valve_does_not_imply_ventricle() {
        let tags = AnatomyGroup::tag_text("The mitral valve leaflets are thickened.");
        assert_eq!(tags, vec![AnatomyGroup::MitralValve]);
    }
}
