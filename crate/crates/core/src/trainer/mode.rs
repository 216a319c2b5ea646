use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::Messages;
use crate::protocol::OrderSequence;

/// Who decides when, and what reaches whom.
///
/// | mode | order | hidden states shared | upper actions shared |
/// |---|---|---|---|
/// | `SeqComm` | negotiated every step | yes | yes |
/// | `Fixed` | constant | yes | yes |
/// | `Random` | resampled every step | yes | yes |
/// | `Simultaneous` | none | yes | no |
/// | `NoComm` | none | no | no |
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum OrderingMode {
    SeqComm,
    Fixed(OrderSequence),
    Random,
    Simultaneous,
    NoComm,
}

impl OrderingMode {
    pub fn messages(&self) -> Messages {
        match self {
            Self::SeqComm | Self::Fixed(_) | Self::Random => Messages::Full,
            Self::Simultaneous => Messages::HiddenOnly,
            Self::NoComm => Messages::Isolated,
        }
    }

    pub fn needs_world_model(&self) -> bool {
        matches!(self, Self::SeqComm)
    }

    pub fn validate_for(&self, n_agents: usize) -> Result<()> {
        match self {
            Self::Fixed(o) if o.len() != n_agents => Err(invalid(format!(
                "fixed order {o} covers {} agents, environment has {n_agents}",
                o.len()
            ))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for OrderingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SeqComm => f.write_str("seqcomm"),
            Self::Fixed(o) => {
                let parts: Vec<String> = o.agents().iter().map(usize::to_string).collect();
                write!(f, "fixed:{}", parts.join(","))
            }
            Self::Random => f.write_str("random"),
            Self::Simultaneous => f.write_str("simultaneous"),
            Self::NoComm => f.write_str("nocomm"),
        }
    }
}

impl FromStr for OrderingMode {
    type Err = Error;

    /// `seqcomm`, `fixed:2,0,1`, `random`, `simultaneous` or `nocomm`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "seqcomm" => return Ok(Self::SeqComm),
            "random" => return Ok(Self::Random),
            "simultaneous" => return Ok(Self::Simultaneous),
            "nocomm" => return Ok(Self::NoComm),
            _ => {}
        }
        let Some(rest) = s.strip_prefix("fixed:") else {
            return Err(invalid(format!(
                "unknown ordering mode `{s}` (expected seqcomm, fixed:<ids>, random, simultaneous or nocomm)"
            )));
        };
        let agents = rest
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|_| invalid(format!("bad agent id `{p}` in `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::Fixed(OrderSequence::new(agents)?))
    }
}

impl TryFrom<String> for OrderingMode {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<OrderingMode> for String {
    fn from(m: OrderingMode) -> Self {
        m.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_prints() {
        for s in ["seqcomm", "fixed:2,0,1", "random", "simultaneous", "nocomm"] {
            assert_eq!(s.parse::<OrderingMode>().unwrap().to_string(), s);
        }
        assert!("fixed:0,0".parse::<OrderingMode>().is_err());
        assert!("sideways".parse::<OrderingMode>().is_err());
        let m: OrderingMode = serde_json::from_str("\"fixed:1,0\"").unwrap();
        assert_eq!(m.messages(), Messages::Full);
        assert!(m.validate_for(3).is_err());
    }
}
