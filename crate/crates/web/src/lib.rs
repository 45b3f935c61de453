//! Browser demos built on `msloc`.
//!
//! Three operations are exported to JavaScript: heading registration of a
//! rotated texture, intensity/altitude map matching with the adaptive cue
//! weight, and integer ambiguity fixing with and without an INS prior.
//! Everything is seeded so a page reload reproduces the same numbers.

use msloc::gnss::{ins_aided_solution, rtk_solution, Ambiguities, GnssEpoch, InsPrior, RtkConfig, RtkSolution};
use msloc::lidar_loc::{
    estimate_heading, measurement_likelihood, CueWeighting, EstimateParams, HeadingParams, HistogramPosterior,
    LikelihoodParams, Raster,
};
use msloc::map::{cell_center, LidarMap, MapAccumulator, OnlineCell, OnlineGrid, Pose6};
use msloc::sim::{gaussian_field, stream, GnssSimulator, GnssSpec, MultipathSpec};
use msloc::sins::earth::{enu_to_ecef_rotation, geodetic_to_ecef};
use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use wasm_bindgen::prelude::*;

const RES: f64 = 0.125;

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn text(e: msloc::Error) -> String {
    e.to_string()
}

#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct HeadingDemo {
    size: usize,
    template: Vec<f64>,
    image: Vec<f64>,
    truth_deg: f64,
    estimate_deg: f64,
    iterations: usize,
}

#[wasm_bindgen]
impl HeadingDemo {
    /// Side of the square rasters, pixels.
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.size
    }

    /// Sparse rotated template, NaN where empty, row-major.
    #[wasm_bindgen(getter)]
    pub fn template(&self) -> Vec<f64> {
        self.template.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn image(&self) -> Vec<f64> {
        self.image.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn truth_deg(&self) -> f64 {
        self.truth_deg
    }

    #[wasm_bindgen(getter)]
    pub fn estimate_deg(&self) -> f64 {
        self.estimate_deg
    }

    #[wasm_bindgen(getter)]
    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

fn bilinear(size: usize, v: &[f64], x: f64, y: f64) -> Option<f64> {
    let (fx, fy) = (x - 0.5, y - 0.5);
    let (x0, y0) = (fx.floor(), fy.floor());
    if x0 < 0.0 || y0 < 0.0 || x0 as usize + 1 >= size || y0 as usize + 1 >= size {
        return None;
    }
    let (i, j) = (x0 as usize, y0 as usize);
    let (ax, ay) = (fx - x0, fy - y0);
    let at = |i: usize, j: usize| v[j * size + i];
    Some(
        (1.0 - ax) * (1.0 - ay) * at(i, j)
            + ax * (1.0 - ay) * at(i + 1, j)
            + (1.0 - ax) * ay * at(i, j + 1)
            + ax * ay * at(i + 1, j + 1),
    )
}

/// Rotate a random texture by `rotation_deg`, keep a `coverage` fraction of
/// its pixels with intensity noise `noise`, and register it back.
pub fn heading(seed: u32, rotation_deg: f64, coverage: f64, noise: f64) -> Result<HeadingDemo, String> {
    let size = 129;
    let mut rng = stream(seed as u64, 1);
    let field = gaussian_field(size, size, 2.5, &mut rng);
    let image: Vec<f64> = field.iter().map(|f| 40.0 + 12.0 * *f as f64).collect();
    let pivot = (size as f64 / 2.0, size as f64 / 2.0);
    let theta = rotation_deg.to_radians();
    let (s, c) = theta.sin_cos();
    let mut template = vec![f64::NAN; size * size];
    for y in 0..size {
        for x in 0..size {
            if rng.random::<f64>() >= coverage {
                continue;
            }
            let (dx, dy) = (x as f64 + 0.5 - pivot.0, y as f64 + 0.5 - pivot.1);
            let (wx, wy) = (c * dx - s * dy + pivot.0, s * dx + c * dy + pivot.1);
            if let Some(v) = bilinear(size, &image, wx, wy) {
                template[y * size + x] = v + noise * gauss(&mut rng);
            }
        }
    }
    let raster = |values: &[f64]| Raster {
        i0: 0,
        j0: 0,
        size,
        resolution: RES,
        pivot,
        values: values.iter().map(|v| if v.is_nan() { 0.0 } else { *v }).collect(),
        mask: values.iter().map(|v| !v.is_nan()).collect(),
    };
    let est = estimate_heading(&raster(&template), &raster(&image), 0.0, &HeadingParams::default()).map_err(text)?;
    Ok(HeadingDemo {
        size,
        template,
        image,
        truth_deg: rotation_deg,
        estimate_deg: -est.heading.to_degrees(),
        iterations: est.iterations,
    })
}

#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct MatchDemo {
    half_width: usize,
    posterior: Vec<f64>,
    intensity: Vec<f64>,
    altitude: Vec<f64>,
    gamma: f64,
    offset: (f64, f64),
    truth: (f64, f64),
}

#[wasm_bindgen]
impl MatchDemo {
    /// Search window is `2 * half_width + 1` cells on a side.
    #[wasm_bindgen(getter)]
    pub fn half_width(&self) -> usize {
        self.half_width
    }

    #[wasm_bindgen(getter)]
    pub fn posterior(&self) -> Vec<f64> {
        self.posterior.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn intensity(&self) -> Vec<f64> {
        self.intensity.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn altitude(&self) -> Vec<f64> {
        self.altitude.clone()
    }

    /// Weight of the intensity cue.
    #[wasm_bindgen(getter)]
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    #[wasm_bindgen(getter)]
    pub fn offset_x(&self) -> f64 {
        self.offset.0
    }

    #[wasm_bindgen(getter)]
    pub fn offset_y(&self) -> f64 {
        self.offset.1
    }

    #[wasm_bindgen(getter)]
    pub fn truth_x(&self) -> f64 {
        self.truth.0
    }

    #[wasm_bindgen(getter)]
    pub fn truth_y(&self) -> f64 {
        self.truth.1
    }
}

fn textured_map(rng: &mut ChaCha8Rng, n: i64) -> (LidarMap, Vec<f32>, Vec<f32>) {
    let paint = gaussian_field(n as usize, n as usize, 2.0, rng);
    let ground = gaussian_field(n as usize, n as usize, 5.0, rng);
    let mut acc = MapAccumulator::new(RES, 128).expect("valid grid");
    for j in 0..n {
        for i in 0..n {
            let k = (j * n + i) as usize;
            let (x, y) = cell_center(RES, i, j);
            for _ in 0..3 {
                acc.add_sample(
                    x,
                    y,
                    60.0 + 20.0 * paint[k] as f64 + 4.0 * gauss(rng),
                    0.05 * ground[k] as f64 + 0.03 * gauss(rng),
                );
            }
        }
    }
    (acc.finalize().expect("samples added"), paint, ground)
}

/// Match an online patch displaced by `(shift_x, shift_y)` cells whose
/// paint is decorrelated from the map by `change` (0 to 1). `mode` is
/// "adaptive", "intensity" or a fixed intensity weight such as "0.5".
pub fn matching(seed: u32, shift_x: i32, shift_y: i32, change: f64, mode: &str) -> Result<MatchDemo, String> {
    let weighting = match mode {
        "adaptive" => CueWeighting::Adaptive,
        "intensity" => CueWeighting::IntensityOnly,
        w => CueWeighting::Fixed(w.parse().map_err(|_| format!("unknown mode {w:?}"))?),
    };
    let w = 12usize;
    if shift_x.unsigned_abs() as usize > w || shift_y.unsigned_abs() as usize > w {
        return Err(format!("shift must stay within {w} cells"));
    }
    let n = 96i64;
    let mut rng = stream(seed as u64, 2);
    let (map, paint, ground) = textured_map(&mut rng, n);
    let repaint = gaussian_field(n as usize, n as usize, 2.0, &mut rng);
    let keep = 1.0 - change.clamp(0.0, 1.0);
    let fresh = (1.0 - keep * keep).sqrt();
    let mut online = MapAccumulator::new(RES, 128).expect("valid grid");
    for j in 32..64 {
        for i in 32..64 {
            if rng.random::<f64>() > 0.5 {
                continue;
            }
            let k = ((j + shift_y as i64) * n + i + shift_x as i64) as usize;
            let r = 60.0 + 20.0 * (keep * paint[k] as f64 + fresh * repaint[k] as f64);
            let (x, y) = cell_center(RES, i, j);
            for _ in 0..2 {
                online.add_sample(
                    x,
                    y,
                    r + 4.0 * gauss(&mut rng),
                    0.05 * ground[k] as f64 + 0.03 * gauss(&mut rng),
                );
            }
        }
    }
    let online = online.finalize().map_err(text)?;
    let cells: Vec<OnlineCell> = (32..64)
        .flat_map(|j| (32..64).map(move |i| (i, j)))
        .filter_map(|(i, j)| {
            online
                .cell(i, j)
                .filter(|c| !c.is_empty())
                .map(|c| OnlineCell { i, j, stats: *c })
        })
        .collect();
    let grid = OnlineGrid {
        resolution: RES,
        anchor: Pose6::default(),
        cells,
    };
    let params = LikelihoodParams {
        weighting,
        ..LikelihoodParams::default()
    };
    let lik = measurement_likelihood(&grid, &map, w, &params).map_err(text)?;
    let mut post = HistogramPosterior::uniform((0.0, 0.0), w, RES).map_err(text)?;
    post.update(&lik.combined, 100.0).map_err(text)?;
    let est = post.estimate(&EstimateParams::default());
    Ok(MatchDemo {
        half_width: w,
        posterior: post.probs.clone(),
        intensity: lik.p_r.clone(),
        altitude: lik.p_a.clone(),
        gamma: lik.gamma,
        offset: (est.offset.x, est.offset.y),
        truth: (shift_x as f64 * RES, shift_y as f64 * RES),
    })
}

#[wasm_bindgen]
#[derive(Debug, Clone, Copy)]
pub struct AmbiguityDemo {
    epochs: usize,
    unaided: usize,
    aided: usize,
}

#[wasm_bindgen]
impl AmbiguityDemo {
    #[wasm_bindgen(getter)]
    pub fn epochs(&self) -> usize {
        self.epochs
    }

    /// Epochs fixed to the true integers from the code solution alone.
    #[wasm_bindgen(getter)]
    pub fn unaided(&self) -> usize {
        self.unaided
    }

    #[wasm_bindgen(getter)]
    pub fn aided(&self) -> usize {
        self.aided
    }
}

fn correct(epoch: &GnssEpoch, amb: &[i64], sol: &RtkSolution) -> bool {
    let of = |id: u32| amb[epoch.sats.iter().position(|s| s.id == id).expect("observed")];
    match &sol.ambiguities {
        Ambiguities::Fixed(z) if sol.fixed => sol
            .others
            .iter()
            .zip(z)
            .all(|(&id, z)| of(id) - of(sol.reference) == *z),
        _ => false,
    }
}

/// Count correct ambiguity fixes over `epochs` epochs with multipath scaled
/// by `multipath`, unaided and with an INS position prior of std
/// `ins_sigma` metres.
pub fn ambiguity(seed: u32, epochs: usize, multipath: f64, ins_sigma: f64) -> Result<AmbiguityDemo, String> {
    if !(multipath >= 1.0 && ins_sigma > 0.0) {
        return Err("multipath must be at least 1 and ins_sigma positive".into());
    }
    let origin = Vector3::new(116.3f64.to_radians(), 39.9f64.to_radians(), 50.0);
    let spec = GnssSpec {
        multipath: vec![MultipathSpec {
            start: 0.0,
            end: f64::INFINITY,
            range_factor: multipath,
            phase_factor: multipath.sqrt(),
        }],
        ..GnssSpec::default()
    };
    let mut sim = GnssSimulator::new(spec, &origin, stream(seed as u64, 3));
    let mut rng = stream(seed as u64, 4);
    let r = enu_to_ecef_rotation(origin.x, origin.y);
    let base = geodetic_to_ecef(&origin);
    let cfg = RtkConfig::default();
    let cov = Matrix3::identity() * (ins_sigma * ins_sigma);
    let mut out = AmbiguityDemo {
        epochs: 0,
        unaided: 0,
        aided: 0,
    };
    for k in 0..epochs {
        let t = k as f64 * 0.2;
        let truth = base + r * Vector3::new(5.0 * t, 20.0, 0.0);
        let Some((epoch, amb)) = sim.observe(t, &truth) else {
            continue;
        };
        out.epochs += 1;
        let guess = truth + r * Vector3::from_fn(|_, _| gauss(&mut rng));
        if let Ok(sol) = rtk_solution(&epoch, &guess, None, &cfg) {
            out.unaided += correct(&epoch, &amb, &sol) as usize;
        }
        let ins = truth + r * Vector3::from_fn(|_, _| ins_sigma * gauss(&mut rng));
        if let Ok(sol) = ins_aided_solution(&epoch, &InsPrior::from_enu(ins, &cov), &cfg) {
            out.aided += correct(&epoch, &amb, &sol) as usize;
        }
    }
    Ok(out)
}

#[wasm_bindgen(js_name = headingDemo)]
pub fn heading_demo(seed: u32, rotation_deg: f64, coverage: f64, noise: f64) -> Result<HeadingDemo, JsError> {
    heading(seed, rotation_deg, coverage, noise).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = matchDemo)]
pub fn match_demo(seed: u32, shift_x: i32, shift_y: i32, change: f64, mode: &str) -> Result<MatchDemo, JsError> {
    matching(seed, shift_x, shift_y, change, mode).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = ambiguityDemo)]
pub fn ambiguity_demo(seed: u32, epochs: usize, multipath: f64, ins_sigma: f64) -> Result<AmbiguityDemo, JsError> {
    ambiguity(seed, epochs, multipath, ins_sigma).map_err(|e| JsError::new(&e))
}
