//! Proposal lists as CSV: `image_id,rank,x0,y0,x1,y1,score`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::io::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRow {
    pub image_id: String,
    pub rank: usize,
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub score: f64,
}

impl ProposalRow {
    pub fn bbox(&self) -> Result<BBox> {
        BBox::new(self.x0, self.y0, self.x1, self.y1)
    }
}

/// Writes rows sorted by image id, then rank.
pub fn write_proposals_csv(path: &Path, rows: &[ProposalRow]) -> Result<()> {
    let mut sorted: Vec<&ProposalRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id).then(a.rank.cmp(&b.rank)));
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in sorted {
        w.serialize(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_proposals_csv(path: &Path) -> Result<Vec<ProposalRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    })?;
    let mut rows = Vec::new();
    for (line, rec) in r.deserialize::<ProposalRow>().enumerate() {
        let row = rec.map_err(|e| Error::format(path, format!("row {}: {e}", line + 1)))?;
        row.bbox()
            .map_err(|e| Error::format(path, format!("row {}: {e}", line + 1)))?;
        if !row.score.is_finite() {
            return Err(Error::format(path, format!("row {}: non-finite score", line + 1)));
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_sorted_and_reads_back() {
        let row = |id: &str, rank: usize| ProposalRow {
            image_id: id.into(),
            rank,
            x0: 1.0,
            y0: 2.0,
            x1: 3.5,
            y1: 4.0,
            score: 0.125,
        };
        let rows = vec![row("b", 0), row("a", 1), row("a", 0)];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        write_proposals_csv(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("image_id,rank,x0,y0,x1,y1,score\na,0,1.0,2.0,3.5,4.0,0.125\na,1,"));
        let back = read_proposals_csv(&p).unwrap();
        assert_eq!(back[2], rows[0]);

        std::fs::write(&p, "image_id,rank,x0,y0,x1,y1,score\na,0,5,0,1,1,0.3\n").unwrap();
        assert!(read_proposals_csv(&p).is_err());
    }
}
