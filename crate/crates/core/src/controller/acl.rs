//! First-match access control list consulted before any path computation.

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AclVerdict {
    Allow,
    Deny,
}

/// `None` fields match anything.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AclEntry {
    pub src: Option<Ipv4Addr>,
    pub dst: Option<Ipv4Addr>,
    pub nw_proto: Option<u8>,
    pub verdict: AclVerdict,
}

impl AclEntry {
    fn matches(&self, src: Ipv4Addr, dst: Ipv4Addr, nw_proto: u8) -> bool {
        self.src.is_none_or(|a| a == src)
            && self.dst.is_none_or(|a| a == dst)
            && self.nw_proto.is_none_or(|p| p == nw_proto)
    }
}

/// Ordered entries; the first match decides, no match allows.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Acl {
    entries: Vec<AclEntry>,
}

impl Acl {
    pub fn new(entries: Vec<AclEntry>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &[AclEntry] {
        &self.entries
    }

    pub fn check(&self, src: Ipv4Addr, dst: Ipv4Addr, nw_proto: u8) -> AclVerdict {
        self.entries
            .iter()
            .find(|e| e.matches(src, dst, nw_proto))
            .map_or(AclVerdict::Allow, |e| e.verdict)
    }
}
