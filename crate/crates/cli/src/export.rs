//! Plot-ready probability tables from a policy file.

use std::io::Write;

use metaaug::policy::PolicyFile;
use metaaug::{Error, Result};
use serde::{Deserialize, Serialize};

/// One magnitude bin with its probability under each class table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub slot: usize,
    pub slot_name: String,
    pub bin: usize,
    pub descriptor: String,
    /// Foreground table, or the shared table of a tied policy.
    pub fg: f64,
    /// Background table, or the shared table of a tied policy.
    pub bg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeaRow {
    pub op_id: usize,
    pub name: String,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyExport {
    pub iteration: u64,
    pub tied: Option<bool>,
    pub tra: Vec<BinRow>,
    pub tea: Vec<TeaRow>,
}

impl PolicyExport {
    pub fn from_file(file: &PolicyFile) -> Result<Self> {
        file.check_version()?;
        let mut tra = Vec::new();
        if let Some(rec) = &file.tra {
            let table = |name: &str| rec.tables.iter().find(|t| t.class == name);
            let (fg, bg) = if rec.tied {
                let shared = table("shared").ok_or_else(|| Error::Config("tied policy without a shared table".into()))?;
                (shared, shared)
            } else {
                (
                    table("FG").ok_or_else(|| Error::Config("policy has no FG table".into()))?,
                    table("BG").ok_or_else(|| Error::Config("policy has no BG table".into()))?,
                )
            };
            for (s, (fs, bs)) in fg.slots.iter().zip(&bg.slots).enumerate() {
                for (b, (fb, bb)) in fs.bins.iter().zip(&bs.bins).enumerate() {
                    tra.push(BinRow {
                        slot: s,
                        slot_name: fs.name.clone(),
                        bin: b,
                        descriptor: fb.descriptor.clone(),
                        fg: fb.probability,
                        bg: bb.probability,
                    });
                }
            }
        }
        let tea = file
            .tea
            .iter()
            .flat_map(|t| &t.ops)
            .map(|o| TeaRow {
                op_id: o.op.op_id,
                name: o.op.name.clone(),
                probability: o.probability,
            })
            .collect();
        Ok(PolicyExport {
            iteration: file.iteration,
            tied: file.tra.as_ref().map(|t| t.tied),
            tra,
            tea,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Two tables in one CSV: training-time bins, then test-time ops, both
    /// rows tagged by a leading `policy` column.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["policy", "slot", "slot_name", "bin", "descriptor", "fg", "bg"])?;
        for r in &self.tra {
            w.write_record([
                "tra".to_string(),
                r.slot.to_string(),
                r.slot_name.clone(),
                r.bin.to_string(),
                r.descriptor.clone(),
                format!("{:e}", r.fg),
                format!("{:e}", r.bg),
            ])?;
        }
        for r in &self.tea {
            w.write_record([
                "tea".to_string(),
                r.op_id.to_string(),
                r.name.clone(),
                String::new(),
                String::new(),
                format!("{:e}", r.probability),
                String::new(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv output>", e))
    }

    /// Parses CSV written by [`write_csv`](Self::write_csv); the iteration is not stored there.
    pub fn read_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut out = PolicyExport {
            iteration: 0,
            tied: None,
            tra: Vec::new(),
            tea: Vec::new(),
        };
        let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Config(format!("bad number {s:?}"))) };
        let idx = |s: &str| -> Result<usize> { s.parse().map_err(|_| Error::Config(format!("bad index {s:?}"))) };
        for rec in r.records() {
            let rec = rec?;
            match &rec[0] {
                "tra" => out.tra.push(BinRow {
                    slot: idx(&rec[1])?,
                    slot_name: rec[2].to_string(),
                    bin: idx(&rec[3])?,
                    descriptor: rec[4].to_string(),
                    fg: num(&rec[5])?,
                    bg: num(&rec[6])?,
                }),
                "tea" => out.tea.push(TeaRow {
                    op_id: idx(&rec[1])?,
                    name: rec[2].to_string(),
                    probability: num(&rec[5])?,
                }),
                other => return Err(Error::Config(format!("unknown policy row kind {other:?}"))),
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use metaaug::policy::{ClassPolicy, TeaPolicy};
    use metaaug::transforms::{default_tea_registry, default_tra_registry};

    fn sample_file(tied: bool) -> PolicyFile {
        let slots = default_tra_registry();
        let mut policy = ClassPolicy::uniform(&slots, tied);
        policy.tables.last_mut().unwrap()[1][2] = 1.25;
        let ops = default_tea_registry();
        let mut tea = TeaPolicy::uniform(ops.len());
        tea.logits[3] = -0.7;
        PolicyFile::new(40, Some((&slots, &policy)), Some((&ops, &tea)))
    }

    #[test]
    fn uniform_policy_exports_uniform_slots() {
        let slots = default_tra_registry();
        let file = PolicyFile::new(0, Some((&slots, &ClassPolicy::uniform(&slots, false))), None);
        let e = PolicyExport::from_file(&file).unwrap();
        for r in &e.tra {
            let k = slots[r.slot].bins.len() as f64;
            assert!((r.fg - 1.0 / k).abs() < 1e-12 && (r.bg - 1.0 / k).abs() < 1e-12);
        }
    }

    #[test]
    fn json_and_csv_round_trip() {
        for tied in [false, true] {
            let e = PolicyExport::from_file(&sample_file(tied)).unwrap();
            assert_eq!(PolicyExport::from_json(&e.to_json().unwrap()).unwrap(), e);
            let mut buf = Vec::new();
            e.write_csv(&mut buf).unwrap();
            let back = PolicyExport::read_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
            assert_eq!(back.tra.len(), e.tra.len());
            for (a, b) in back.tra.iter().zip(&e.tra) {
                assert!((a.fg - b.fg).abs() < 1e-9 && (a.bg - b.bg).abs() < 1e-9);
                assert_eq!((a.slot, a.bin, &a.descriptor), (b.slot, b.bin, &b.descriptor));
            }
            for (a, b) in back.tea.iter().zip(&e.tea) {
                assert!((a.probability - b.probability).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fg_and_bg_sit_side_by_side() {
        let e = PolicyExport::from_file(&sample_file(false)).unwrap();
        let row = e.tra.iter().find(|r| r.slot == 1 && r.bin == 2).unwrap();
        assert!(row.bg > row.fg);
    }
}
