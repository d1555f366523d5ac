//! The instrumentation plan: every planned insertion with its anchor,
//! mechanism, and originating policy tuples, carried from analysis through
//! instrumentation to validation.

use serde::{Deserialize, Serialize};

use crate::asm::{parse_instr, Instr, Loc, Mechanism, Reg};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Position {
    Before,
    After,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedInsertion {
    pub id: usize,
    /// Location of the anchor instruction in the pre-hardening program.
    pub anchor: Loc,
    pub position: Position,
    /// Order among insertions sharing an anchor and position.
    pub seq: usize,
    /// The instruction, in assembly text form.
    #[serde(with = "instr_text")]
    pub instr: Instr,
    pub mechanism: Mechanism,
    /// Policy tuple ids this insertion traces back to.
    pub sources: Vec<String>,
}

mod instr_text {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(i: &Instr, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&i.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Instr, D::Error> {
        let text: String = serde::Deserialize::deserialize(d)?;
        parse_instr(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrumentationPlan {
    pub insertions: Vec<PlannedInsertion>,
    /// `(sign insertion id, auth insertion id)` pairs whose modifiers must
    /// agree.
    pub pairings: Vec<(usize, usize)>,
    /// Scratch register claimed per call-site check, keyed by site loc text.
    pub scratch_assignments: Vec<(String, Reg)>,
}

impl InstrumentationPlan {
    pub fn push(
        &mut self,
        anchor: Loc,
        position: Position,
        seq: usize,
        instr: Instr,
        mechanism: Mechanism,
        sources: Vec<String>,
    ) -> usize {
        let id = self.insertions.len();
        self.insertions.push(PlannedInsertion {
            id,
            anchor,
            position,
            seq,
            instr,
            mechanism,
            sources,
        });
        id
    }

    pub fn count_by_mechanism(&self, m: Mechanism) -> usize {
        self.insertions
            .iter()
            .filter(|i| i.mechanism == m)
            .count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<InstrumentationPlan, serde_json::Error> {
        serde_json::from_str(text)
    }
}
