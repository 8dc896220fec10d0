//! Three-group training patch tuples for an external trainer.
//!
//! Each tuple holds one patch containing an agreed mitosis, one containing
//! a hard-negative candidate, and one drawn uniformly. Every draw uses its
//! own random stream keyed by `(seed, tuple index, group)`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::{agreed_mitoses, hard_negative_candidates, window_count, AnnotationSet};
use crate::error::{Error, Result};
use crate::geometry::WindowSize;
use crate::rng;
use crate::Point;

const REJECTION_LIMIT: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    /// Contains at least one agreed mitosis.
    Mitosis = 1,
    /// Contains at least one hard-negative candidate.
    HardNegative = 2,
    Random = 3,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Mitosis, Group::HardNegative, Group::Random];

    pub fn number(self) -> u8 {
        self as u8
    }
}

/// How a patch that must contain a pool point is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Pick a pool point uniformly, then an origin uniformly among those
    /// whose patch contains it.
    #[default]
    Anchor,
    /// Draw origins uniformly until the patch contains a pool point.
    Rejection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchDraw {
    pub group: Group,
    pub x: u32,
    pub y: u32,
    /// The group's pool was empty and the patch was drawn uniformly.
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchTuple {
    pub index: u64,
    pub patch_size_px: u32,
    pub seed: u64,
    pub draws: [PatchDraw; 3],
}

struct Region {
    x0: u32,
    y0: u32,
    width: u32,
    height: u32,
    patch: u32,
}

impl Region {
    fn uniform(&self, rng: &mut impl Rng) -> Point {
        (
            self.x0 + rng.gen_range(0..=self.width - self.patch),
            self.y0 + rng.gen_range(0..=self.height - self.patch),
        )
    }

    /// Uniform origin whose patch contains `p` and stays in the region.
    fn around(&self, p: Point, rng: &mut impl Rng) -> Point {
        let axis = |c: u32, start: u32, len: u32, rng: &mut dyn rand::RngCore| {
            let lo = (c + 1).saturating_sub(self.patch).max(start);
            let hi = c.min(start + len - self.patch);
            rng.gen_range(lo..=hi)
        };
        (axis(p.0, self.x0, self.width, rng), axis(p.1, self.y0, self.height, rng))
    }
}

pub fn sample_tuples(
    set: &AnnotationSet,
    patch_size: u32,
    count: u64,
    seed: u64,
    mode: SamplingMode,
) -> Result<Vec<PatchTuple>> {
    if patch_size == 0 {
        return Err(Error::domain("patch size must be >= 1"));
    }
    if set.width_px < patch_size || set.height_px < patch_size {
        return Err(Error::domain(format!(
            "slide region {}x{} is smaller than a {patch_size}px patch",
            set.width_px, set.height_px
        )));
    }
    let region = Region {
        x0: 0,
        y0: set.y_offset,
        width: set.width_px,
        height: set.height_px,
        patch: patch_size,
    };
    let pools = [agreed_mitoses(set), hard_negative_candidates(set)];
    let window = WindowSize::new(patch_size, patch_size)?;

    let draw = |index: u64, group: Group| -> Result<PatchDraw> {
        let mut rng = rng::stream(seed, rng::stream_id(group.number(), index));
        let pool: &[Point] = match group {
            Group::Mitosis => &pools[0],
            Group::HardNegative => &pools[1],
            Group::Random => &[],
        };
        if pool.is_empty() {
            let (x, y) = region.uniform(&mut rng);
            return Ok(PatchDraw {
                group,
                x,
                y,
                degraded: group != Group::Random,
            });
        }
        let (x, y) = match mode {
            SamplingMode::Anchor => {
                let p = pool[rng.gen_range(0..pool.len())];
                region.around(p, &mut rng)
            }
            SamplingMode::Rejection => {
                let mut attempts = 0;
                loop {
                    let o = region.uniform(&mut rng);
                    if window_count(pool, o, window) > 0 {
                        break o;
                    }
                    attempts += 1;
                    if attempts >= REJECTION_LIMIT {
                        return Err(Error::SamplingExhausted {
                            attempts,
                            detail: format!("no {group:?} patch found for tuple {index}"),
                        });
                    }
                }
            }
        };
        Ok(PatchDraw {
            group,
            x,
            y,
            degraded: false,
        })
    };

    (0..count)
        .into_par_iter()
        .map(|index| {
            Ok(PatchTuple {
                index,
                patch_size_px: patch_size,
                seed,
                draws: [
                    draw(index, Group::Mitosis)?,
                    draw(index, Group::HardNegative)?,
                    draw(index, Group::Random)?,
                ],
            })
        })
        .collect()
}

/// CSV with header `index,group,x,y,degraded`, three rows per tuple.
pub fn tuples_to_csv(tuples: &[PatchTuple]) -> String {
    let mut out = String::from("index,group,x,y,degraded\n");
    for t in tuples {
        for d in &t.draws {
            out.push_str(&format!("{},{},{},{},{}\n", t.index, d.group.number(), d.x, d.y, d.degraded as u8));
        }
    }
    out
}
