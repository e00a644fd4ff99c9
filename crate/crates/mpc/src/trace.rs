//! Protocol trace: one event per value that leaves a party.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::frame::Tag;
use crate::share::PartyId;

/// Environment variable that enables JSON-lines traces when it contains `trace`.
pub const TRACE_ENV: &str = "SECUREKL_LOG";

pub fn trace_enabled() -> bool {
    std::env::var(TRACE_ENV)
        .map(|v| v.to_ascii_lowercase().contains("trace"))
        .unwrap_or(false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// Both parties revealed their shares of a value.
    Open,
    /// A party sent a masked share of its private input.
    Input,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub party: PartyId,
    pub session: u32,
    pub kind: EventKind,
    pub tag: Tag,
    pub tensor: u32,
    pub elements: usize,
    /// Decoded value, recorded only for scalar `loss` and `final` opens.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new() -> Trace {
        Trace::default()
    }

    pub fn record(&mut self, mut ev: TraceEvent) {
        ev.seq = self.events.len() as u64;
        self.events.push(ev);
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn opens(&self) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(|e| e.kind == EventKind::Open)
    }

    pub fn count_opens(&self, tag: Tag) -> usize {
        self.opens().filter(|e| e.tag == tag).count()
    }

    pub fn audit(&self) -> TraceAudit {
        let opened_elements = |tag| {
            self.opens()
                .filter(|e| e.tag == tag)
                .map(|e| e.elements)
                .sum()
        };
        TraceAudit {
            final_opens: self.count_opens(Tag::Final),
            final_elements: opened_elements(Tag::Final),
            data_opens: self.count_opens(Tag::Data),
            loss_opens: self.count_opens(Tag::Loss),
            mask_opens: self.count_opens(Tag::Mask),
            mask_elements: opened_elements(Tag::Mask),
            untagged_opens: self.count_opens(Tag::None),
            inputs: self
                .events
                .iter()
                .filter(|e| e.kind == EventKind::Input)
                .count(),
        }
    }

    pub fn write_jsonl<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut *w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Summary counts used to check the leakage contract of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceAudit {
    pub final_opens: usize,
    pub final_elements: usize,
    pub data_opens: usize,
    pub loss_opens: usize,
    pub mask_opens: usize,
    pub mask_elements: usize,
    pub untagged_opens: usize,
    pub inputs: usize,
}

impl TraceAudit {
    /// A score run may open masks, at most its epoch losses, and one final scalar.
    pub fn check(&self, strict: bool) -> Result<(), String> {
        if self.final_opens != 1 || self.final_elements != 1 {
            return Err(format!(
                "expected exactly one final scalar, saw {} opens of {} elements",
                self.final_opens, self.final_elements
            ));
        }
        if self.data_opens != 0 {
            return Err(format!("{} raw data opens", self.data_opens));
        }
        if self.untagged_opens != 0 {
            return Err(format!("{} untagged opens", self.untagged_opens));
        }
        if strict && self.loss_opens != 0 {
            return Err(format!("{} loss opens in strict mode", self.loss_opens));
        }
        Ok(())
    }
}
