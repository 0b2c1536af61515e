//! Fixed-camera scenes: a stationary background population plus stochastic
//! foreground objects, with temporally clustered hard periods.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rng::{poisson_from_uniform, stream_rng, Purpose};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::types::BoundingBox;

/// Objects at or above this difficulty are detected with `recall_hard`.
pub const HARD_CUTOFF: f64 = 0.5;

const CELL_MARGIN: f64 = 12.0;
const HARD_MIN_SIDE: f64 = 64.0;
const HARD_MAX_SIDE: f64 = 92.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainParams {
    pub num_frames: usize,
    pub class_count: usize,
    /// Long-run fraction of frames in the hard regime.
    pub hard_fraction: f64,
    /// Expected length in frames of one regime period.
    pub mean_regime_length: f64,
    pub width: f64,
    pub height: f64,
    pub grid_cols: usize,
    pub grid_rows: usize,
    /// Objects present in every frame.
    pub static_objects: usize,
    pub easy_mean_objects: f64,
    pub hard_mean_objects: f64,
    /// Probability that a foreground object in a hard frame is hard.
    pub hard_object_share: f64,
}

impl Default for DomainParams {
    fn default() -> Self {
        Self {
            num_frames: 7200,
            class_count: 4,
            hard_fraction: 0.25,
            mean_regime_length: 40.0,
            width: 1280.0,
            height: 720.0,
            grid_cols: 8,
            grid_rows: 4,
            static_objects: 2,
            easy_mean_objects: 1.5,
            hard_mean_objects: 4.0,
            hard_object_share: 0.7,
        }
    }
}

impl DomainParams {
    fn cell_size(&self) -> (f64, f64) {
        (self.width / self.grid_cols as f64, self.height / self.grid_rows as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.num_frames < 1 {
            problems.push("num_frames must be >= 1".to_string());
        }
        if self.class_count < 1 {
            problems.push("class_count must be >= 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.hard_fraction) {
            problems.push(format!("hard_fraction {} outside [0, 1]", self.hard_fraction));
        }
        if !(0.0..=1.0).contains(&self.hard_object_share) {
            problems.push(format!("hard_object_share {} outside [0, 1]", self.hard_object_share));
        }
        if self.mean_regime_length.is_nan() || self.mean_regime_length < 1.0 {
            problems.push("mean_regime_length must be >= 1".to_string());
        }
        if !(self.easy_mean_objects >= 0.0 && self.hard_mean_objects >= 0.0) {
            problems.push("object means must be >= 0".to_string());
        }
        if self.grid_cols == 0 || self.grid_rows == 0 {
            problems.push("grid must have at least one cell".to_string());
        } else {
            let (cw, ch) = self.cell_size();
            if cw - 2.0 * CELL_MARGIN < HARD_MAX_SIDE || ch - 2.0 * CELL_MARGIN < HARD_MAX_SIDE {
                problems.push(format!("grid cells {cw}x{ch} too small for objects"));
            }
            if self.static_objects > self.grid_cols * self.grid_rows {
                problems.push("more static objects than grid cells".to_string());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::usage(format!("invalid domain parameters: {}", problems.join("; "))))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub bbox: BoundingBox,
    pub class_id: usize,
    pub difficulty: f64,
}

impl SceneObject {
    pub fn is_hard(&self) -> bool {
        self.difficulty >= HARD_CUTOFF
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFrame {
    pub frame_index: u64,
    pub image_ref: String,
    pub hard_regime: bool,
    pub objects: Vec<SceneObject>,
}

impl SceneFrame {
    pub fn summed_difficulty(&self) -> f64 {
        self.objects.iter().map(|o| o.difficulty).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDomain {
    pub seed: u64,
    pub params: DomainParams,
    pub frames: Vec<SceneFrame>,
}

impl SyntheticDomain {
    pub fn class_table(&self) -> Vec<String> {
        (0..self.params.class_count).map(|c| format!("class_{c}")).collect()
    }

    pub fn frame(&self, frame_index: u64) -> Option<&SceneFrame> {
        self.frames
            .binary_search_by_key(&frame_index, |f| f.frame_index)
            .ok()
            .map(|i| &self.frames[i])
    }

    pub fn object_count(&self) -> usize {
        self.frames.iter().map(|f| f.objects.len()).sum()
    }

    /// Splits into the first `k` frames and the rest.
    pub fn split_at(&self, k: usize) -> (SyntheticDomain, SyntheticDomain) {
        let k = k.min(self.frames.len());
        let part = |frames: &[SceneFrame]| SyntheticDomain {
            seed: self.seed,
            params: DomainParams { num_frames: frames.len(), ..self.params.clone() },
            frames: frames.to_vec(),
        };
        (part(&self.frames[..k]), part(&self.frames[k..]))
    }

    /// Frames whose summed object difficulty is in the top quartile
    /// (ties on ascending frame index), in ascending frame order.
    pub fn hard_frames(&self) -> Vec<u64> {
        let mut ranked: Vec<(f64, u64)> = self.frames.iter().map(|f| (f.summed_difficulty(), f.frame_index)).collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut out: Vec<u64> = ranked.into_iter().take(self.frames.len().div_ceil(4)).map(|(_, i)| i).collect();
        out.sort_unstable();
        out
    }
}

fn regimes(seed: u64, params: &DomainParams) -> Vec<bool> {
    let hf = params.hard_fraction;
    if hf <= 0.0 {
        return vec![false; params.num_frames];
    }
    if hf >= 1.0 {
        return vec![true; params.num_frames];
    }
    // Two-state chain with stationary hard probability `hf` and mean hard
    // period length `mean_regime_length`.
    let leave_hard = (1.0 / params.mean_regime_length).min(1.0);
    let enter_hard = (leave_hard * hf / (1.0 - hf)).min(1.0);
    let mut rng = stream_rng(seed, Purpose::Regime, 0);
    let mut hard = rng.random::<f64>() < hf;
    (0..params.num_frames)
        .map(|_| {
            let current = hard;
            let u: f64 = rng.random();
            hard = if hard { u >= leave_hard } else { u < enter_hard };
            current
        })
        .collect()
}

fn place_in_cell<R: Rng>(rng: &mut R, params: &DomainParams, cell: usize, hard: bool) -> BoundingBox {
    let (cw, ch) = params.cell_size();
    let (col, row) = ((cell % params.grid_cols) as f64, (cell / params.grid_cols) as f64);
    let max_w = cw - 2.0 * CELL_MARGIN;
    let max_h = ch - 2.0 * CELL_MARGIN;
    let (w, h) = if hard {
        (rng.random_range(HARD_MIN_SIDE..=HARD_MAX_SIDE), rng.random_range(HARD_MIN_SIDE..=HARD_MAX_SIDE))
    } else {
        (rng.random_range(72.0f64.min(max_w)..=max_w), rng.random_range(80.0f64.min(max_h)..=max_h))
    };
    let x = col * cw + CELL_MARGIN + rng.random::<f64>() * (max_w - w);
    let y = row * ch + CELL_MARGIN + rng.random::<f64>() * (max_h - h);
    BoundingBox::new(x, y, w, h)
}

pub fn generate_domain(seed: u64, params: &DomainParams) -> Result<SyntheticDomain> {
    generate_domain_with(seed, params, Execution::default())
}

pub fn generate_domain_with(seed: u64, params: &DomainParams, exec: Execution) -> Result<SyntheticDomain> {
    params.validate()?;
    let cells = params.grid_cols * params.grid_rows;

    let mut bg = stream_rng(seed, Purpose::Background, 0);
    let mut free: Vec<usize> = (0..cells).collect();
    let background: Vec<(usize, SceneObject)> = (0..params.static_objects)
        .map(|_| {
            let cell = free.swap_remove(bg.random_range(0..free.len()));
            let bbox = place_in_cell(&mut bg, params, cell, false);
            let object = SceneObject {
                bbox,
                class_id: bg.random_range(0..params.class_count),
                difficulty: bg.random_range(0.0..0.3),
            };
            (cell, object)
        })
        .collect();
    free.sort_unstable();

    let regime = regimes(seed, params);
    let frames = exec.map_range(0..params.num_frames, |i| {
        let hard_regime = regime[i];
        let mut rng = stream_rng(seed, Purpose::Scene, i as u64);
        let mean = if hard_regime { params.hard_mean_objects } else { params.easy_mean_objects };
        let count = poisson_from_uniform(mean, rng.random()).min(free.len());
        let mut available = free.clone();
        let mut objects: Vec<SceneObject> = background.iter().map(|&(_, o)| o).collect();
        for _ in 0..count {
            let cell = available.swap_remove(rng.random_range(0..available.len()));
            let hard = hard_regime && rng.random::<f64>() < params.hard_object_share;
            let bbox = place_in_cell(&mut rng, params, cell, hard);
            let difficulty = if hard { rng.random_range(0.55..=1.0) } else { rng.random_range(0.0..0.45) };
            objects.push(SceneObject { bbox, class_id: rng.random_range(0..params.class_count), difficulty });
        }
        SceneFrame {
            frame_index: i as u64,
            image_ref: format!("synthetic/{seed}/{i:06}.jpg"),
            hard_regime,
            objects,
        }
    });
    Ok(SyntheticDomain { seed, params: params.clone(), frames })
}
