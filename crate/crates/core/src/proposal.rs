//! Class-agnostic action proposals and the proposal file format.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Cuboid;
use crate::jsonl;

/// Which stage produced a proposal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Clustering,
    Jittering,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Clustering => "clustering",
            Provenance::Jittering => "jittering",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub id: String,
    pub video_id: String,
    /// Set for jittered proposals; the clustering proposal they came from.
    pub parent_id: Option<String>,
    pub provenance: Provenance,
    pub cuboid: Cuboid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalRecord {
    pub proposal_id: String,
    pub video_id: String,
    pub parent_id: Option<String>,
    pub provenance: Provenance,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub f_start: i64,
    pub f_end: i64,
}

impl From<&Proposal> for ProposalRecord {
    fn from(p: &Proposal) -> Self {
        ProposalRecord {
            proposal_id: p.id.clone(),
            video_id: p.video_id.clone(),
            parent_id: p.parent_id.clone(),
            provenance: p.provenance,
            x_min: p.cuboid.x_min(),
            y_min: p.cuboid.y_min(),
            x_max: p.cuboid.x_max(),
            y_max: p.cuboid.y_max(),
            f_start: p.cuboid.f_start(),
            f_end: p.cuboid.f_end(),
        }
    }
}

impl TryFrom<ProposalRecord> for Proposal {
    type Error = Error;

    fn try_from(r: ProposalRecord) -> Result<Self> {
        let cuboid = Cuboid::new(r.x_min, r.y_min, r.x_max, r.y_max, r.f_start, r.f_end)
            .map_err(|e| Error::validation(format!("proposal {}: {e}", r.proposal_id)))?;
        Ok(Proposal {
            id: r.proposal_id,
            video_id: r.video_id,
            parent_id: r.parent_id,
            provenance: r.provenance,
            cuboid,
        })
    }
}

pub fn write_proposals<'a, I>(path: &Path, proposals: I) -> Result<()>
where
    I: IntoIterator<Item = &'a Proposal>,
{
    let records: Vec<ProposalRecord> = proposals.into_iter().map(ProposalRecord::from).collect();
    jsonl::write_records(path, &records)
}

/// Loads proposals grouped by video, keeping file order within a video.
/// Proposal ids must be unique across the file.
pub fn load_proposals(path: &Path) -> Result<BTreeMap<String, Vec<Proposal>>> {
    let mut seen = BTreeSet::new();
    let mut out: BTreeMap<String, Vec<Proposal>> = BTreeMap::new();
    for (line, record) in jsonl::read_records::<ProposalRecord>(path)? {
        let p = Proposal::try_from(record)
            .map_err(|e| Error::validation(format!("{}:{line}: {e}", path.display())))?;
        if !seen.insert(p.id.clone()) {
            return Err(Error::validation(format!(
                "{}:{line}: duplicate proposal_id {:?}",
                path.display(),
                p.id
            )));
        }
        out.entry(p.video_id.clone()).or_default().push(p);
    }
    Ok(out)
}
