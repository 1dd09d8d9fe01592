use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    /// Handles ragged edges and transposes in-kernel, no preprocessing.
    Direct,
    /// Pads/transposes operands to tile multiples, then runs an edge-free kernel.
    Indirect,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 2] = [KernelFamily::Direct, KernelFamily::Indirect];

    pub fn as_str(self) -> &'static str {
        match self {
            KernelFamily::Direct => "direct",
            KernelFamily::Indirect => "indirect",
        }
    }

    /// Position in per-family count arrays.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "direct" => Ok(KernelFamily::Direct),
            "indirect" => Ok(KernelFamily::Indirect),
            other => Err(Error::Format(format!("unknown kernel family {other:?}"))),
        }
    }
}

/// A kernel family plus its full tuning-parameter assignment.
///
/// Field order defines the canonical ordering (derived `Ord`) and the
/// canonical identifier `family-mwg-nwg-kwg-mwi-nwi-kwi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KernelConfig {
    pub family: KernelFamily,
    /// Block tile rows.
    pub mwg: usize,
    /// Block tile columns.
    pub nwg: usize,
    /// Block tile depth.
    pub kwg: usize,
    /// Register tile rows.
    pub mwi: usize,
    /// Register tile columns.
    pub nwi: usize,
    /// K-loop unroll (always 1 for Direct).
    pub kwi: usize,
}

impl KernelConfig {
    pub const fn from_parts(
        family: KernelFamily,
        mwg: usize,
        nwg: usize,
        kwg: usize,
        mwi: usize,
        nwi: usize,
        kwi: usize,
    ) -> Self {
        Self {
            family,
            mwg,
            nwg,
            kwg,
            mwi,
            nwi,
            kwi,
        }
    }

    pub fn direct(mwg: usize, nwg: usize, kwg: usize, mwi: usize, nwi: usize) -> Self {
        Self::from_parts(KernelFamily::Direct, mwg, nwg, kwg, mwi, nwi, 1)
    }

    pub fn indirect(mwg: usize, nwg: usize, kwg: usize, mwi: usize, nwi: usize, kwi: usize) -> Self {
        Self::from_parts(KernelFamily::Indirect, mwg, nwg, kwg, mwi, nwi, kwi)
    }

    /// Stable textual class identity.
    pub fn canonical_id(&self) -> String {
        self.to_string()
    }

    /// Reasons this config violates `caps`; empty when legal.
    pub fn violations(&self, caps: &DeviceCaps) -> Vec<String> {
        let mut out = Vec::new();
        let params = [self.mwg, self.nwg, self.kwg, self.mwi, self.nwi, self.kwi];
        if params.contains(&0) {
            out.push("all parameters must be positive".to_string());
            return out;
        }
        if !self.mwg.is_multiple_of(self.mwi) {
            out.push(format!("mwg {} not divisible by mwi {}", self.mwg, self.mwi));
        }
        if !self.nwg.is_multiple_of(self.nwi) {
            out.push(format!("nwg {} not divisible by nwi {}", self.nwg, self.nwi));
        }
        if !self.kwg.is_multiple_of(self.kwi) {
            out.push(format!("kwg {} not divisible by kwi {}", self.kwg, self.kwi));
        }
        if self.family == KernelFamily::Direct && self.kwi != 1 {
            out.push(format!("direct kernels take kwi = 1, got {}", self.kwi));
        }
        let reg_cap = match self.family {
            KernelFamily::Direct => caps.register_tile_cap_direct,
            KernelFamily::Indirect => caps.register_tile_cap_indirect,
        };
        if self.mwi * self.nwi > reg_cap {
            out.push(format!(
                "register tile {}x{} exceeds cap {reg_cap}",
                self.mwi, self.nwi
            ));
        }
        let tile_bytes = (self.mwg + self.nwg) * self.kwg * caps.element_size;
        if tile_bytes > caps.tile_memory_cap {
            out.push(format!(
                "tile memory {tile_bytes} B exceeds cap {} B",
                caps.tile_memory_cap
            ));
        }
        out
    }
}

impl fmt::Display for KernelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}-{}-{}-{}-{}-{}-{}",
            self.family, self.mwg, self.nwg, self.kwg, self.mwi, self.nwi, self.kwi
        )
    }
}

impl FromStr for KernelConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split('-').collect();
        if parts.len() != 7 {
            return Err(Error::Format(format!("malformed config identifier {s:?}")));
        }
        let family = parts[0].parse()?;
        let mut nums = [0usize; 6];
        for (slot, part) in nums.iter_mut().zip(&parts[1..]) {
            *slot = part
                .parse()
                .map_err(|_| Error::Format(format!("malformed config identifier {s:?}")))?;
        }
        let [mwg, nwg, kwg, mwi, nwi, kwi] = nums;
        Ok(Self::from_parts(family, mwg, nwg, kwg, mwi, nwi, kwi))
    }
}

/// Resource limits that decide which configurations are legal on a device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceCaps {
    pub tile_memory_cap: usize,
    pub register_tile_cap_direct: usize,
    pub register_tile_cap_indirect: usize,
    pub element_size: usize,
}

impl Default for DeviceCaps {
    fn default() -> Self {
        Self {
            tile_memory_cap: 32768,
            register_tile_cap_direct: 8,
            register_tile_cap_indirect: 32,
            element_size: 4,
        }
    }
}

impl DeviceCaps {
    pub fn validate(&self) -> Result<()> {
        if self.tile_memory_cap == 0
            || self.register_tile_cap_direct == 0
            || self.register_tile_cap_indirect == 0
            || self.element_size == 0
        {
            return Err(Error::Validation("device caps must all be positive".into()));
        }
        Ok(())
    }
}

pub fn is_legal(config: &KernelConfig, caps: &DeviceCaps) -> bool {
    config.violations(caps).is_empty()
}

pub(crate) fn check_legal(config: &KernelConfig, caps: &DeviceCaps) -> Result<()> {
    let violations = config.violations(caps);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::Config {
            config: *config,
            reason: violations.join("; "),
        })
    }
}

struct Domains {
    mwg: &'static [usize],
    nwg: &'static [usize],
    kwg: &'static [usize],
    mwi: &'static [usize],
    nwi: &'static [usize],
    kwi: &'static [usize],
}

const DIRECT_DOMAINS: Domains = Domains {
    mwg: &[8, 16, 32],
    nwg: &[8, 16, 32],
    kwg: &[8, 16],
    mwi: &[1, 2, 4],
    nwi: &[1, 2, 4],
    kwi: &[1],
};

const INDIRECT_DOMAINS: Domains = Domains {
    mwg: &[16, 32, 64],
    nwg: &[16, 32, 64],
    kwg: &[8, 16, 32],
    mwi: &[2, 4, 8],
    nwi: &[2, 4, 8],
    kwi: &[1, 2],
};

/// All legal configurations of `family`, in canonical order.
pub fn enumerate_search_space(family: KernelFamily, caps: &DeviceCaps) -> Vec<KernelConfig> {
    let d = match family {
        KernelFamily::Direct => &DIRECT_DOMAINS,
        KernelFamily::Indirect => &INDIRECT_DOMAINS,
    };
    let mut out = Vec::new();
    for &mwg in d.mwg {
        for &nwg in d.nwg {
            for &kwg in d.kwg {
                for &mwi in d.mwi {
                    for &nwi in d.nwi {
                        for &kwi in d.kwi {
                            let c = KernelConfig::from_parts(family, mwg, nwg, kwg, mwi, nwi, kwi);
                            if is_legal(&c, caps) {
                                out.push(c);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Both families' legal spaces, Direct first.
pub fn full_search_space(caps: &DeviceCaps) -> Vec<KernelConfig> {
    KernelFamily::ALL
        .iter()
        .flat_map(|&f| enumerate_search_space(f, caps))
        .collect()
}
