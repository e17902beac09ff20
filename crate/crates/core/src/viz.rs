//! False-colour renderings of flow and twist fields.
//!
//! Flow uses the Middlebury colour wheel for hue, with saturation growing
//! from mid-grey at zero motion to the full wheel colour at `max_flow`.
//! Twist maps send each component to one RGB channel around 128.

use std::f64::consts::PI;

use crate::fieldops::{twist_field, FlowField3, Se3Field};
use crate::grid::Grid;

pub type Rgb = [u8; 3];

const MID_GREY: f64 = 128.0;
/// Automatic scales below this are round-off; the image stays grey.
const MIN_AUTO_SCALE: f64 = 1e-6;

fn color_wheel() -> Vec<[f64; 3]> {
    const RY: usize = 15;
    const YG: usize = 6;
    const GC: usize = 4;
    const CB: usize = 11;
    const BM: usize = 13;
    const MR: usize = 6;
    let mut wheel = Vec::with_capacity(RY + YG + GC + CB + BM + MR);
    let ramp = |i: usize, n: usize| 255.0 * i as f64 / n as f64;
    for i in 0..RY {
        wheel.push([255.0, ramp(i, RY), 0.0]);
    }
    for i in 0..YG {
        wheel.push([255.0 - ramp(i, YG), 255.0, 0.0]);
    }
    for i in 0..GC {
        wheel.push([0.0, 255.0, ramp(i, GC)]);
    }
    for i in 0..CB {
        wheel.push([0.0, 255.0 - ramp(i, CB), 255.0]);
    }
    for i in 0..BM {
        wheel.push([ramp(i, BM), 0.0, 255.0]);
    }
    for i in 0..MR {
        wheel.push([255.0, 0.0, 255.0 - ramp(i, MR)]);
    }
    wheel
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Colour for flow `(u, v)` already divided by the normalising magnitude.
fn flow_color(wheel: &[[f64; 3]], u: f64, v: f64) -> Rgb {
    let rad = (u * u + v * v).sqrt();
    if rad == 0.0 {
        return [MID_GREY as u8; 3];
    }
    let n = wheel.len();
    let a = (-v).atan2(-u) / PI;
    let fk = (a + 1.0) / 2.0 * (n - 1) as f64;
    let k0 = fk.floor() as usize % n;
    let k1 = (k0 + 1) % n;
    let f = fk - fk.floor();
    let sat = rad.min(1.0);
    let mut out = [0u8; 3];
    for ch in 0..3 {
        let hue = (1.0 - f) * wheel[k0][ch] + f * wheel[k1][ch];
        let mut col = MID_GREY + sat * (hue - MID_GREY);
        if rad > 1.0 {
            col *= 0.75;
        }
        out[ch] = to_u8(col);
    }
    out
}

/// Largest valid 2D flow magnitude.
pub fn max_flow_magnitude(flow: &FlowField3) -> f64 {
    flow.values
        .iter()
        .zip(flow.valid.iter())
        .filter(|(_, &ok)| ok)
        .map(|(f, _)| f.xy().norm())
        .fold(0.0, f64::max)
}

/// Renders 2D flow; invalid pixels are black. `max_flow` defaults to the
/// largest valid magnitude.
pub fn flow_to_rgb(flow: &FlowField3, max_flow: Option<f64>) -> Grid<Rgb> {
    let wheel = color_wheel();
    let scale = match max_flow {
        Some(s) if s > 0.0 => s,
        Some(_) => 1.0,
        None => max_flow_magnitude(flow).max(MIN_AUTO_SCALE),
    };
    let (h, w) = flow.shape();
    Grid::from_fn(h, w, |r, c| {
        if !*flow.valid.get(r, c) {
            return [0, 0, 0];
        }
        let f = flow.values.get(r, c);
        flow_color(&wheel, f.x / scale, f.y / scale)
    })
}

fn channel_map(values: &Grid<[f64; 3]>, scale: Option<f64>) -> Grid<Rgb> {
    let scale = match scale {
        Some(s) if s > 0.0 => s,
        Some(_) => 1.0,
        None => values
            .iter()
            .flat_map(|v| v.iter().map(|x| x.abs()))
            .fold(MIN_AUTO_SCALE, f64::max),
    };
    values.map(|v| v.map(|x| to_u8(MID_GREY + 127.0 * (x / scale).clamp(-1.0, 1.0))))
}

/// Translational (`τ`) and rotational (`φ`) twist components of
/// `log(T)` as two RGB images.
pub fn twist_to_rgb(field: &Se3Field, scale: Option<f64>) -> (Grid<Rgb>, Grid<Rgb>) {
    let twists = twist_field(field);
    let tau = twists.map(|t| [t.tau.x, t.tau.y, t.tau.z]);
    let phi = twists.map(|t| [t.phi.x, t.phi.y, t.phi.z]);
    (channel_map(&tau, scale), channel_map(&phi, scale))
}
