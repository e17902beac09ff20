//! Synthetic layered rigid scenes with exact ground truth, plus oracles that
//! play the role of the learned update operator.
//!
//! A scene is a stack of planar layers: one background plane spanning the
//! whole image and `num_objects − 1` bounded foreground patches. Every layer
//! moves with its own rigid transform. Frame-1 inverse depth is a z-buffer
//! over the layers; frame 2 is rendered by casting each frame-2 pixel ray
//! against every moved layer, so both depth maps are exact and piecewise
//! affine in pixel coordinates.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bilap::EdgeWeights;
use crate::camera::{backproject, map_pixel, project, InverseDepthMap, PinholeIntrinsics, MIN_DEPTH};
use crate::dense_se3::{EmbeddingField, RevisionBundle};
use crate::error::{Error, Result};
use crate::fieldops::{FlowField3, IterationAccuracy, MotionOracle, Se3Field};
use crate::grid::Grid;
use crate::metrics;
use crate::rng::{KeyedRng, Purpose};
use crate::se3::{Se3Transform, Twist};

/// Every rigid segment must cover at least this many frame-1 pixels.
pub const MIN_OBJECT_PIXELS: usize = 16;
const MAX_ATTEMPTS: u64 = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Rigid segments including the background.
    pub num_objects: usize,
    /// `[near, far]` depth bounds.
    pub depth_range: [f64; 2],
    /// Upper bound on the norm of each segment's twist.
    pub motion_scale: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<PinholeIntrinsics>,
}

impl SceneSpec {
    /// 96×128 desk-scale scene.
    pub fn standard(num_objects: usize, seed: u64) -> Self {
        Self {
            height: 96,
            width: 128,
            num_objects,
            depth_range: [2.0, 8.0],
            motion_scale: 0.1,
            seed,
            intrinsics: None,
        }
    }

    /// Explicit intrinsics, or `f = 0.8·width` centred on the image.
    pub fn intrinsics(&self) -> PinholeIntrinsics {
        self.intrinsics.unwrap_or(PinholeIntrinsics {
            fx: 0.8 * self.width as f64,
            fy: 0.8 * self.width as f64,
            cx: (self.width as f64 - 1.0) / 2.0,
            cy: (self.height as f64 - 1.0) / 2.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 2 || self.width < 2 {
            return Err(Error::InvalidParameter("scene must be at least 2x2".into()));
        }
        if self.num_objects < 1 || self.num_objects > 255 {
            return Err(Error::InvalidParameter("num_objects must lie in 1..=255".into()));
        }
        let [near, far] = self.depth_range;
        if !(near > 0.0 && far > near && far.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "depth range {:?} must satisfy 0 < near < far",
                self.depth_range
            )));
        }
        if !(self.motion_scale >= 0.0 && self.motion_scale.is_finite()) {
            return Err(Error::InvalidParameter("motion_scale must be >= 0".into()));
        }
        self.intrinsics().validate()
    }
}

/// Footprint of a layer in frame-1 pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Footprint {
    Everywhere,
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
}

impl Footprint {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Footprint::Everywhere => true,
            Footprint::Rect { x0, y0, x1, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
            Footprint::Ellipse { cx, cy, rx, ry } => {
                let (u, v) = ((x - cx) / rx, (y - cy) / ry);
                u * u + v * v <= 1.0
            }
        }
    }
}

/// Planar surface patch with inverse depth `a + b·u + c·v` at normalized
/// image coordinates `(u, v)` of frame 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub plane: [f64; 3],
    pub footprint: Footprint,
    pub motion: Se3Transform,
}

impl Layer {
    /// Frame-1 inverse depth at pixel `(x, y)` if the layer covers it.
    fn inverse_depth_at(&self, x: f64, y: f64, k: &PinholeIntrinsics) -> Option<f64> {
        if !self.footprint.contains(x, y) {
            return None;
        }
        let (u, v) = ((x - k.cx) / k.fx, (y - k.cy) / k.fy);
        let d = self.plane[0] + self.plane[1] * u + self.plane[2] * v;
        (d > 0.0).then_some(d)
    }

    /// Frame-2 inverse depth where the ray through pixel `(x, y)` meets the
    /// moved layer.
    fn moved_inverse_depth_at(&self, x: f64, y: f64, k: &PinholeIntrinsics) -> Option<f64> {
        // plane nᵀX = 1 with n = (b, c, a) in frame 1; moved plane (R n)ᵀ(X − t) = 1
        let n = Vector3::new(self.plane[1], self.plane[2], self.plane[0]);
        let m = self.motion.rotation() * n;
        let t = self.motion.translation();
        let ray = Vector3::new((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
        let denom = m.dot(&ray);
        let s = (1.0 + m.dot(t)) / denom;
        if !(s > MIN_DEPTH) || !s.is_finite() {
            return None;
        }
        let back = self.motion.inverse().act(&(ray * s));
        let p = project(&back, k).ok()?;
        self.footprint.contains(p.x, p.y).then_some(1.0 / s)
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub intrinsics: PinholeIntrinsics,
    /// Index 0 is the background.
    pub layers: Vec<Layer>,
    pub z1: InverseDepthMap,
    pub z2: InverseDepthMap,
    /// Frame-1 layer index per pixel.
    pub labels: Grid<u8>,
    pub t_gt: Se3Field,
    pub flow_gt: FlowField3,
    /// Correspondence out of frame, behind the camera, covered by a nearer
    /// surface, or bilinearly blended with a different surface in frame 2.
    pub occlusion: Grid<bool>,
}

fn sample_ball6(rng: &mut impl Rng, radius: f64) -> Twist {
    let g: [f64; 6] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    let r = radius * rng.random::<f64>().powf(1.0 / 6.0);
    let v: [f64; 6] = std::array::from_fn(|i| g[i] / norm * r);
    Twist::from_slice(&v)
}

fn sample_layers(spec: &SceneSpec, attempt: u64) -> Vec<Layer> {
    let mut rng = KeyedRng::new(spec.seed, Purpose::SceneLayout, attempt).sequential();
    let (w, h) = (spec.width as f64, spec.height as f64);
    let [near, far] = spec.depth_range;
    let tilted_plane = |rng: &mut rand_chacha::ChaCha8Rng, depth: f64| {
        let a = 1.0 / depth;
        [a, a * rng.random_range(-0.1..0.1), a * rng.random_range(-0.1..0.1)]
    };
    let motion = |rng: &mut rand_chacha::ChaCha8Rng| {
        if spec.motion_scale == 0.0 {
            Se3Transform::identity()
        } else {
            Se3Transform::exp(&sample_ball6(rng, spec.motion_scale))
        }
    };

    let mut layers = Vec::with_capacity(spec.num_objects);
    let bg_depth = rng.random_range(far * 0.85..far);
    layers.push(Layer {
        plane: tilted_plane(&mut rng, bg_depth),
        footprint: Footprint::Everywhere,
        motion: motion(&mut rng),
    });
    for _ in 1..spec.num_objects {
        let depth = rng.random_range(near..near + 0.6 * (far - near));
        let plane = tilted_plane(&mut rng, depth);
        let cx = rng.random_range(0.15 * w..0.85 * w);
        let cy = rng.random_range(0.15 * h..0.85 * h);
        let rx = rng.random_range(0.12 * w..0.3 * w);
        let ry = rng.random_range(0.12 * h..0.3 * h);
        let footprint = if rng.random_bool(0.5) {
            Footprint::Rect {
                x0: cx - rx,
                y0: cy - ry,
                x1: cx + rx,
                y1: cy + ry,
            }
        } else {
            Footprint::Ellipse { cx, cy, rx, ry }
        };
        layers.push(Layer {
            plane,
            footprint,
            motion: motion(&mut rng),
        });
    }
    layers
}

/// Nearest covering layer and its inverse depth.
fn zbuffer(
    layers: &[Layer],
    mut depth_of: impl FnMut(&Layer) -> Option<f64>,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (idx, layer) in layers.iter().enumerate() {
        if let Some(d) = depth_of(layer) {
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((idx, d));
            }
        }
    }
    best
}

/// Ground-truth flow computed from rotation matrices, independently of
/// [`crate::fieldops::induced_flow`].
fn direct_flow(z1: &InverseDepthMap, t_gt: &Se3Field, k: &PinholeIntrinsics) -> FlowField3 {
    let (h, w) = z1.shape();
    let mut flow = FlowField3::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let d = z1.at(r, c);
            if !InverseDepthMap::is_valid_value(d) {
                flow.valid[i] = false;
                continue;
            }
            let z = 1.0 / d;
            let x = [(c as f64 - k.cx) * z / k.fx, (r as f64 - k.cy) * z / k.fy, z];
            let rot = t_gt[i].rotation_matrix();
            let t = t_gt[i].translation();
            let mut xp = [0.0; 3];
            for a in 0..3 {
                xp[a] = rot[(a, 0)] * x[0] + rot[(a, 1)] * x[1] + rot[(a, 2)] * x[2] + t[a];
            }
            if !(xp[2] > MIN_DEPTH) {
                flow.valid[i] = false;
                continue;
            }
            flow.values[i] = Vector3::new(
                k.fx * xp[0] / xp[2] + k.cx - c as f64,
                k.fy * xp[1] / xp[2] + k.cy - r as f64,
                1.0 / xp[2] - d,
            );
        }
    }
    flow
}

/// Integer corners of the bilinear footprint at `(x, y)`, matching
/// [`InverseDepthMap::sample_bilinear`].
/// Positions within `EDGE_SLACK` of the border count as inside, so rounding
/// in the flow does not mark border pixels of a static scene as occluded.
fn footprint_corners(x: f64, y: f64, h: usize, w: usize) -> Option<[(usize, usize); 4]> {
    const EDGE_SLACK: f64 = 1e-9;
    let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);
    if !(x >= -EDGE_SLACK && y >= -EDGE_SLACK && x <= xmax + EDGE_SLACK && y <= ymax + EDGE_SLACK) {
        return None;
    }
    let (x, y) = (x.clamp(0.0, xmax), y.clamp(0.0, ymax));
    let x0 = (x.floor() as usize).min(w - 2);
    let y0 = (y.floor() as usize).min(h - 2);
    Some([(y0, x0), (y0, x0 + 1), (y0 + 1, x0), (y0 + 1, x0 + 1)])
}

fn render(spec: &SceneSpec, layers: Vec<Layer>) -> Result<SyntheticScene> {
    let k = spec.intrinsics();
    let (h, w) = (spec.height, spec.width);

    let mut labels = Grid::filled(h, w, 0u8);
    let mut z1 = Grid::filled(h, w, 0.0);
    for r in 0..h {
        for c in 0..w {
            if let Some((idx, d)) = zbuffer(&layers, |l| l.inverse_depth_at(c as f64, r as f64, &k)) {
                *labels.get_mut(r, c) = idx as u8;
                *z1.get_mut(r, c) = d;
            }
        }
    }
    let mut counts = vec![0usize; layers.len()];
    for &l in labels.iter() {
        counts[l as usize] += 1;
    }
    if let Some((idx, &n)) = counts.iter().enumerate().find(|(_, &n)| n < MIN_OBJECT_PIXELS) {
        return Err(Error::DegenerateScene(format!(
            "segment {idx} covers only {n} pixels"
        )));
    }

    let mut labels2 = Grid::filled(h, w, u8::MAX);
    let mut z2 = Grid::filled(h, w, 0.0);
    for r in 0..h {
        for c in 0..w {
            if let Some((idx, d)) =
                zbuffer(&layers, |l| l.moved_inverse_depth_at(c as f64, r as f64, &k))
            {
                *labels2.get_mut(r, c) = idx as u8;
                *z2.get_mut(r, c) = d;
            }
        }
    }

    let z1 = InverseDepthMap::new(z1);
    let z2 = InverseDepthMap::new(z2);
    let t_gt = Se3Field::from_grid(labels.map(|&l| layers[l as usize].motion));
    let flow_gt = direct_flow(&z1, &t_gt, &k);

    let occlusion = Grid::from_fn(h, w, |r, c| {
        let i = r * w + c;
        if !flow_gt.valid[i] {
            return true;
        }
        let f = flow_gt.values[i];
        let (x, y) = (c as f64 + f.x, r as f64 + f.y);
        match footprint_corners(x, y, h, w) {
            None => true,
            Some(corners) => corners
                .iter()
                .any(|&(rr, cc)| *labels2.get(rr, cc) != labels[i]),
        }
    });

    Ok(SyntheticScene {
        spec: spec.clone(),
        intrinsics: k,
        layers,
        z1,
        z2,
        labels,
        t_gt,
        flow_gt,
        occlusion,
    })
}

/// Renders the scene described by `spec`, resampling the layout up to ten
/// times if a segment ends up smaller than [`MIN_OBJECT_PIXELS`].
pub fn generate(spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut last = None;
    for attempt in 0..MAX_ATTEMPTS {
        match render(spec, sample_layers(spec, attempt)) {
            Ok(scene) => return Ok(scene),
            Err(e @ Error::DegenerateScene(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::DegenerateScene("no attempt succeeded".into())))
}

impl SyntheticScene {
    pub fn shape(&self) -> (usize, usize) {
        self.z1.shape()
    }

    pub fn num_segments(&self) -> usize {
        self.layers.len()
    }

    /// Valid depth, valid ground-truth flow and not occluded.
    pub fn eval_mask(&self) -> Grid<bool> {
        Grid::from_fn(self.z1.height(), self.z1.width(), |r, c| {
            let i = r * self.z1.width() + c;
            self.z1.is_valid(i) && self.flow_gt.valid[i] && !*self.occlusion.get(r, c)
        })
    }

    /// Mean frame-1 depth over valid pixels.
    pub fn mean_depth(&self) -> f64 {
        let (sum, n) = self
            .z1
            .values()
            .iter()
            .filter(|d| InverseDepthMap::is_valid_value(**d))
            .fold((0.0, 0usize), |(s, n), d| (s + 1.0 / d, n + 1));
        sum / n as f64
    }

    /// FNV-1a over the bit patterns of the ground-truth flow.
    pub fn flow_checksum(&self) -> u64 {
        let mut hash: u64 = 0xcbf29ce484222325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                hash ^= b as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        };
        for (v, &ok) in self.flow_gt.values.iter().zip(self.flow_gt.valid.iter()) {
            feed(&[ok as u8]);
            for x in v.iter() {
                feed(&x.to_bits().to_le_bytes());
            }
        }
        hash
    }

    /// Rebuilds a scene from stored maps. Layer geometry is not needed after
    /// rendering and is left empty; segment motions are recovered from the
    /// ground-truth field.
    pub fn from_parts(
        spec: SceneSpec,
        z1: InverseDepthMap,
        z2: InverseDepthMap,
        labels: Grid<u8>,
        t_gt: Se3Field,
        flow_gt: FlowField3,
        occlusion: Grid<bool>,
    ) -> Result<Self> {
        let shape = z1.shape();
        for (what, s) in [
            ("z2", z2.shape()),
            ("labels", labels.shape()),
            ("t_gt", t_gt.shape()),
            ("flow_gt", flow_gt.shape()),
            ("occlusion", occlusion.shape()),
        ] {
            if s != shape {
                return Err(Error::ShapeMismatch(format!("{what} {s:?} vs z1 {shape:?}")));
            }
        }
        let segments = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
        let mut layers: Vec<Layer> = (0..segments)
            .map(|_| Layer {
                plane: [0.0; 3],
                footprint: Footprint::Everywhere,
                motion: Se3Transform::identity(),
            })
            .collect();
        for (i, &l) in labels.iter().enumerate() {
            layers[l as usize].motion = t_gt[i];
        }
        Ok(Self {
            intrinsics: spec.intrinsics(),
            spec,
            layers,
            z1,
            z2,
            labels,
            t_gt,
            flow_gt,
            occlusion,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ConfidencePolicy {
    /// Confidence 1 at non-occluded pixels, 0 elsewhere.
    #[default]
    GtOcclusion,
    /// Confidence 1 at every pixel with a valid correspondence.
    Blind,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Std-dev of the noise on `(r_x, r_y)`, pixels.
    pub flow_noise_sigma: f64,
    /// Std-dev of the noise on `r_z`, inverse depth units.
    pub depth_noise_sigma: f64,
    pub embedding_dim: usize,
    pub embedding_noise_sigma: f64,
    /// Minimum distance between segment anchor embeddings.
    pub anchor_gap: f64,
    /// Edge weight inside segments; boundary edges get 0.
    pub edge_weight: f64,
    pub confidence_policy: ConfidencePolicy,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            flow_noise_sigma: 0.0,
            depth_noise_sigma: 0.0,
            embedding_dim: 8,
            embedding_noise_sigma: 0.0,
            anchor_gap: 6.0,
            edge_weight: 10.0,
            confidence_policy: ConfidencePolicy::GtOcclusion,
            seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            self.flow_noise_sigma,
            self.depth_noise_sigma,
            self.embedding_noise_sigma,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter("noise sigmas must be >= 0".into()));
        }
        if self.embedding_dim < 2 {
            return Err(Error::InvalidParameter("embedding_dim must be >= 2".into()));
        }
        if !(self.anchor_gap > 0.0) || !(self.edge_weight >= 0.0) {
            return Err(Error::InvalidParameter(
                "anchor_gap must be > 0 and edge_weight >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Ground-truth frame-2 correspondence of every frame-1 pixel.
pub fn gt_correspondences(scene: &SyntheticScene) -> Vec<Option<Vector3<f64>>> {
    let (h, w) = scene.shape();
    (0..h * w)
        .map(|i| {
            let p = scene.z1.pixel(i / w, i % w)?;
            map_pixel(&p, &scene.t_gt[i], &scene.intrinsics)
                .ok()
                .map(|m| m.to_vector())
        })
        .collect()
}

fn revisions_from(
    scene: &SyntheticScene,
    gt: &[Option<Vector3<f64>>],
    current: &Se3Field,
    cfg: &OracleConfig,
    round: u64,
) -> Result<RevisionBundle> {
    if current.shape() != scene.shape() {
        return Err(Error::ShapeMismatch(format!(
            "current field {:?} vs scene {:?}",
            current.shape(),
            scene.shape()
        )));
    }
    let (h, w) = scene.shape();
    let k = &scene.intrinsics;
    let flow_rng = KeyedRng::new(cfg.seed, Purpose::FlowNoise, round);
    let depth_rng = KeyedRng::new(cfg.seed, Purpose::DepthNoise, round);
    let mut bundle = RevisionBundle::zeros(h, w);
    for i in 0..h * w {
        let Some(target) = gt[i] else { continue };
        let Some(p) = scene.z1.pixel(i / w, i % w) else {
            continue;
        };
        let Ok(x) = backproject(&p, k) else { continue };
        let Ok(now) = project(&current[i].act(&x), k) else {
            continue;
        };
        let mut r = target - now.to_vector();
        if cfg.flow_noise_sigma > 0.0 {
            let [nx, ny] = flow_rng.normals::<2>(i);
            r.x += cfg.flow_noise_sigma * nx;
            r.y += cfg.flow_noise_sigma * ny;
        }
        if cfg.depth_noise_sigma > 0.0 {
            let [nz] = depth_rng.normals::<1>(i);
            r.z += cfg.depth_noise_sigma * nz;
        }
        let confident = match cfg.confidence_policy {
            ConfidencePolicy::GtOcclusion => !scene.occlusion[i],
            ConfidencePolicy::Blind => true,
        };
        bundle.revision[i] = r;
        if confident {
            bundle.confidence[i] = Vector3::new(1.0, 1.0, 1.0);
        }
    }
    Ok(bundle)
}

/// `r = x_gt − π(T_current·X) + noise`, with noise drawn for `round`.
pub fn oracle_revisions(
    scene: &SyntheticScene,
    current: &Se3Field,
    cfg: &OracleConfig,
    round: u64,
) -> Result<RevisionBundle> {
    cfg.validate()?;
    revisions_from(scene, &gt_correspondences(scene), current, cfg, round)
}

/// Anchor of segment `label`: a point of the `m^C` lattice with spacing
/// `gap`, `m` the smallest base giving every segment a distinct point.
fn anchor(label: usize, segments: usize, dim: usize, gap: f64) -> Vec<f64> {
    let mut base = 2usize;
    while (base as f64).powi(dim as i32) < segments as f64 {
        base += 1;
    }
    let mut rest = label;
    (0..dim)
        .map(|_| {
            let digit = rest % base;
            rest /= base;
            digit as f64 * gap
        })
        .collect()
}

/// Per-segment anchor vectors plus per-pixel Gaussian noise.
pub fn oracle_embeddings(scene: &SyntheticScene, cfg: &OracleConfig) -> Result<EmbeddingField> {
    cfg.validate()?;
    let (h, w) = scene.shape();
    let dim = cfg.embedding_dim;
    let segments = scene.num_segments();
    let anchors: Vec<Vec<f64>> = (0..segments)
        .map(|l| anchor(l, segments, dim, cfg.anchor_gap))
        .collect();
    let noise = KeyedRng::new(cfg.seed, Purpose::EmbeddingNoise, 0);
    let mut emb = EmbeddingField::zeros(h, w, dim);
    for i in 0..h * w {
        let a = &anchors[scene.labels[i] as usize];
        let v = emb.vector_mut(i);
        v.copy_from_slice(a);
        if cfg.embedding_noise_sigma > 0.0 {
            let mut rng = noise.stream(i);
            for x in v.iter_mut() {
                let n: f64 = StandardNormal.sample(&mut rng);
                *x += cfg.embedding_noise_sigma * n;
            }
        }
    }
    Ok(emb)
}

/// `edge_weight` between pixels of the same segment, 0 across boundaries.
pub fn oracle_edge_weights(scene: &SyntheticScene, cfg: &OracleConfig) -> Result<EdgeWeights> {
    cfg.validate()?;
    let (h, w) = scene.shape();
    let labels = &scene.labels;
    let wx = Grid::from_fn(h, w, |r, c| {
        if c + 1 < w && labels.get(r, c) == labels.get(r, c + 1) {
            cfg.edge_weight
        } else {
            0.0
        }
    });
    let wy = Grid::from_fn(h, w, |r, c| {
        if r + 1 < h && labels.get(r, c) == labels.get(r + 1, c) {
            cfg.edge_weight
        } else {
            0.0
        }
    });
    Ok(EdgeWeights { wx, wy })
}

/// [`MotionOracle`] backed by a synthetic scene. Noise is redrawn every
/// iteration.
pub struct SceneOracle<'a> {
    scene: &'a SyntheticScene,
    cfg: OracleConfig,
    gt: Vec<Option<Vector3<f64>>>,
    embeddings: EmbeddingField,
    edge_weights: EdgeWeights,
    mask: Grid<bool>,
}

impl<'a> SceneOracle<'a> {
    pub fn new(scene: &'a SyntheticScene, cfg: OracleConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            gt: gt_correspondences(scene),
            embeddings: oracle_embeddings(scene, &cfg)?,
            edge_weights: oracle_edge_weights(scene, &cfg)?,
            mask: scene.eval_mask(),
            scene,
            cfg,
        })
    }
}

impl MotionOracle for SceneOracle<'_> {
    fn revisions(&mut self, iteration: usize, field: &Se3Field) -> Result<RevisionBundle> {
        revisions_from(self.scene, &self.gt, field, &self.cfg, iteration as u64)
    }

    fn embeddings(&mut self, _iteration: usize, _field: &Se3Field) -> Result<EmbeddingField> {
        Ok(self.embeddings.clone())
    }

    fn edge_weights(&mut self, _iteration: usize) -> Result<EdgeWeights> {
        Ok(self.edge_weights.clone())
    }

    fn evaluate(&self, field: &Se3Field) -> Option<IterationAccuracy> {
        let flow = crate::fieldops::induced_flow(field, &self.scene.z1, &self.scene.intrinsics)
            .ok()?;
        Some(IterationAccuracy {
            epe2d: metrics::epe2d(&flow, &self.scene.flow_gt, &self.mask).ok()?,
            epe3d: metrics::epe3d_masked(field, self.scene, &self.mask).ok()?,
        })
    }
}
