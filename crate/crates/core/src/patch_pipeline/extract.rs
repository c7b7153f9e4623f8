use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Patch;
use crate::slide_store::SlidePyramid;

/// Side length of every model input patch.
pub const PATCH_SIZE: u32 = 299;
/// Offset from the patch center to its first column/row at base resolution.
const PATCH_LEAD: i64 = (PATCH_SIZE as i64 - 1) / 2;

/// Scan magnification; 20X and 10X are 2x and 4x downsampled views of the 40X base.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Magnification {
    #[serde(rename = "40x")]
    X40,
    #[serde(rename = "20x")]
    X20,
    #[serde(rename = "10x")]
    X10,
}

impl Magnification {
    pub const ALL: [Magnification; 3] = [Magnification::X40, Magnification::X20, Magnification::X10];

    pub fn factor(self) -> u32 {
        match self {
            Magnification::X40 => 1,
            Magnification::X20 => 2,
            Magnification::X10 => 4,
        }
    }
}

impl fmt::Display for Magnification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Magnification::X40 => "40x",
            Magnification::X20 => "20x",
            Magnification::X10 => "10x",
        })
    }
}

impl FromStr for Magnification {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "40x" => Ok(Magnification::X40),
            "20x" => Ok(Magnification::X20),
            "10x" => Ok(Magnification::X10),
            other => Err(Error::Argument(format!("unknown magnification '{other}'"))),
        }
    }
}

/// Parses a comma separated list such as `40x,20x`.
pub fn parse_magnifications(s: &str) -> Result<Vec<Magnification>> {
    let mut mags = s
        .split(',')
        .map(|m| m.trim().parse())
        .collect::<Result<Vec<Magnification>>>()?;
    mags.sort();
    mags.dedup();
    if mags.is_empty() {
        return Err(Error::Argument("no magnification given".into()));
    }
    Ok(mags)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub slide_id: String,
    /// Base-pixel center shared by every magnification.
    pub center: (i64, i64),
    pub magnifications: Vec<Magnification>,
}

/// Aligned patches of one location, one per magnification.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGroup {
    pub slide_id: String,
    pub center: (i64, i64),
    pub members: Vec<(Magnification, Patch)>,
}

impl PatchGroup {
    pub fn get(&self, mag: Magnification) -> Option<&Patch> {
        self.members.iter().find(|(m, _)| *m == mag).map(|(_, p)| p)
    }

    /// Applies `f` to every member, keeping the shared metadata.
    pub fn try_map(&self, mut f: impl FnMut(&Patch) -> Result<Patch>) -> Result<PatchGroup> {
        Ok(PatchGroup {
            slide_id: self.slide_id.clone(),
            center: self.center,
            members: self
                .members
                .iter()
                .map(|(m, p)| Ok((*m, f(p)?)))
                .collect::<Result<_>>()?,
        })
    }

    pub fn map(&self, mut f: impl FnMut(&Patch) -> Patch) -> PatchGroup {
        self.try_map(|p| Ok(f(p))).expect("infallible map")
    }
}

/// Reads a 299x299 patch per magnification. The member at factor `f` covers
/// `299 f` base pixels per side starting at `center - 149 f`.
pub fn extract_patch_group(slide: &SlidePyramid, spec: &PatchSpec) -> Result<PatchGroup> {
    let (cx, cy) = spec.center;
    if cx < 0 || cy < 0 || cx >= slide.width() as i64 || cy >= slide.height() as i64 {
        return Err(Error::Argument(format!(
            "patch center ({cx}, {cy}) is outside the {}x{} slide",
            slide.width(),
            slide.height()
        )));
    }
    let members = spec
        .magnifications
        .iter()
        .map(|&mag| {
            let f = mag.factor() as i64;
            let side = PATCH_SIZE as i64 * f;
            let patch = slide.read_region(mag.factor(), cx - PATCH_LEAD * f, cy - PATCH_LEAD * f, side, side)?;
            Ok((mag, patch))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PatchGroup {
        slide_id: spec.slide_id.clone(),
        center: spec.center,
        members,
    })
}
